import logging

import numpy as np
import pytest
from scipy.integrate import trapezoid

from segfake.features import FeatureToken
from segfake.report import chi2_2dof, ellipse_from_points, emit_ellipses, emit_fbank_profile, emit_ltfd_density


def mf(points, phoneme="i", condition="real"):
    # points are (F2, F1); tokens store [F1, F2, F3]
    return [FeatureToken([f1, f2, 2500.0], "MF", "s", condition, phoneme) for f2, f1 in points]


def test_chi2_scale_at_75_percent():
    assert np.sqrt(chi2_2dof(0.75)) == pytest.approx(1.6651, abs=1e-4)
    assert chi2_2dof(0.75) == pytest.approx(-2 * np.log(0.25))


def test_isotropic_unit_covariance_gives_circle():
    pts = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=float) * np.sqrt(3 / 2)  # unit sample covariance
    (e,) = emit_ellipses(mf(pts), 0.75)
    np.testing.assert_allclose(e.covariance, np.eye(2), atol=1e-12)
    assert e.major == pytest.approx(1.6651, abs=1e-4) and e.minor == pytest.approx(1.6651, abs=1e-4)


def test_axes_follow_eigendecomposition():
    rng = np.random.default_rng(0)
    C = np.array([[400.0, 150.0], [150.0, 100.0]])
    pts = rng.multivariate_normal([1500, 500], C, size=400)
    e = ellipse_from_points(pts, 0.75)
    vals, vecs = np.linalg.eigh(np.cov(pts.T))
    s = np.sqrt(-2 * np.log(0.25))
    assert e.major == pytest.approx(s * np.sqrt(vals[1]))
    assert e.minor == pytest.approx(s * np.sqrt(vals[0]))
    assert abs(np.cos(e.angle_rad) * vecs[1, 1] - np.sin(e.angle_rad) * vecs[0, 1]) < 1e-9
    assert np.allclose(e.covariance, e.covariance.T) and np.all(np.linalg.eigvalsh(e.covariance) >= 0)


def test_identical_tokens_degenerate():
    (e,) = emit_ellipses(mf([(1000, 300)] * 5), 0.75)
    assert e.degenerate and e.minor == 0.0


def test_collinear_tokens_degenerate_with_major_axis():
    (e,) = emit_ellipses(mf([(1000 + i, 300 + 2 * i) for i in range(6)]))
    assert e.degenerate and e.minor == 0.0 and e.major > 0


def test_small_groups_skipped(caplog):
    toks = mf([(1, 2), (3, 4)], "u") + mf([(1, 2), (3, 5), (2, 7)], "i")
    with caplog.at_level(logging.WARNING):
        out = emit_ellipses(toks)
    assert [e.phoneme for e in out] == ["i"]
    assert any("[u]" in r.message for r in caplog.records)


def ltfd(values, index=0):
    return [FeatureToken(np.roll([v, 1500.0, 2500.0], index), "LTFD", "s", "real") for v in values]


def test_density_normalised_and_peaked():
    vals = np.random.default_rng(1).normal(700, 40, 500)
    hz, d = emit_ltfd_density(ltfd(vals), 1)
    assert len(hz) == 512 and hz[0] == 0 and hz[-1] == 5500
    assert trapezoid(d, hz) == pytest.approx(1.0, abs=1e-3)
    assert hz[np.argmax(d)] == pytest.approx(700, abs=30)


def test_density_explicit_bandwidth_and_errors():
    hz, d = emit_ltfd_density(ltfd([1000.0] * 10), 1, bandwidth=50.0)
    assert trapezoid(d, hz) == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(ValueError, match="no tokens"):
        emit_ltfd_density([], 1)
    with pytest.raises(ValueError):
        emit_ltfd_density(ltfd([1.0]), 4)


def fbank(X, condition, speaker="s"):
    return [FeatureToken(x, "FBANK", speaker, condition) for x in X]


def test_fbank_self_normalisation():
    X = np.random.default_rng(0).normal(size=(200, 26))
    (p,) = emit_fbank_profile(fbank(X, "real"))
    np.testing.assert_allclose(p.mean, 0.0, atol=1e-12)


def test_fbank_ci_halves_with_4x_duplication():
    rng = np.random.default_rng(0)
    real, fake = rng.normal(size=(50, 26)), rng.normal(size=(50, 26))
    a = {p.condition: p for p in emit_fbank_profile(fbank(real, "real") + fbank(fake, "fake"))}
    b = {p.condition: p for p in emit_fbank_profile(fbank(np.tile(real, (4, 1)), "real") + fbank(np.tile(fake, (4, 1)), "fake"))}
    for c in ("real", "fake"):
        np.testing.assert_allclose(b[c].ci_hi - b[c].ci_lo, (a[c].ci_hi - a[c].ci_lo) / 2, rtol=1e-9)


def test_fbank_offset_only_in_band_5():
    rng = np.random.default_rng(3)
    base = rng.normal(size=(300, 26))
    shifted = base.copy()
    shifted[:, 4] += 1.0
    prof = {p.condition: p for p in emit_fbank_profile(fbank(base, "real") + fbank(shifted, "fake"))}
    gap = prof["fake"].mean - prof["real"].mean
    assert abs(gap[4]) > 0.5
    np.testing.assert_allclose(np.delete(gap, 4), 0.0, atol=1e-12)


def test_fbank_tiny_group_skipped():
    X = np.random.default_rng(0).normal(size=(10, 26))
    out = emit_fbank_profile(fbank(X, "real") + fbank(X[:1], "fake"))
    assert [p.condition for p in out] == ["real"]
