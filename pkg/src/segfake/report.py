"""Numeric plot data: vowel ellipses, LTFD densities and FBank profiles.

Nothing here draws.  Each emitter returns plain records that the CLI writes
as CSV.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .features import FeatureToken

log = logging.getLogger(__name__)

ELLIPSE_COLUMNS = ["phoneme", "condition", "mean_f2", "mean_f1", "major", "minor", "angle_rad"]
DENSITY_COLUMNS = ["hz", "density"]
FBANK_COLUMNS = ["band", "mean", "ci_lo", "ci_hi"]


def chi2_2dof(confidence: float) -> float:
    """Quantile of a 2-dof chi-square: -2 ln(1 - p)."""
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    return -2.0 * np.log1p(-confidence)


@dataclass(frozen=True)
class EllipseSpec:
    phoneme: str
    condition: str
    mean: tuple[float, float]  # (F2, F1)
    covariance: np.ndarray
    confidence: float
    major: float
    minor: float
    angle_rad: float  # of the major axis, from the F2 axis
    degenerate: bool = False

    def row(self) -> list:
        return [self.phoneme, self.condition, self.mean[0], self.mean[1], self.major, self.minor, self.angle_rad]


def ellipse_from_points(points: np.ndarray, confidence: float = 0.75, phoneme: str = "", condition: str = "") -> EllipseSpec:
    pts = np.asarray(points, dtype=np.float64)
    mean = pts.mean(axis=0)
    cov = np.cov(pts.T, ddof=1)
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, 0.0)
    scale = np.sqrt(chi2_2dof(confidence))
    major_vec = vecs[:, 1]
    if major_vec[0] < 0 or (major_vec[0] == 0 and major_vec[1] < 0):
        major_vec = -major_vec  # fixed sign keeps the angle in (-pi/2, pi/2]
    angle = float(np.arctan2(major_vec[1], major_vec[0]))
    tol = 1e-12 * max(vals[1], 1e-300)
    degenerate = bool(vals[0] <= tol)
    minor = 0.0 if degenerate else float(scale * np.sqrt(vals[0]))
    return EllipseSpec(
        phoneme, condition, (float(mean[0]), float(mean[1])), cov, confidence,
        float(scale * np.sqrt(vals[1])), minor, angle if vals[1] > 0 else 0.0, degenerate,
    )


def emit_ellipses(tokens: list[FeatureToken], confidence: float = 0.75, min_tokens: int = 3) -> list[EllipseSpec]:
    """Confidence ellipses of (F2, F1) per (phoneme, condition) group of MF tokens.

    Groups with fewer than ``min_tokens`` tokens are skipped with a warning.
    """
    groups = defaultdict(list)
    for t in tokens:
        if t.family != "MF":
            raise ValueError(f"ellipses need MF tokens, got {t.family}")
        groups[(t.phoneme, t.condition)].append((t.vector[1], t.vector[0]))
    out = []
    for (ph, cond) in sorted(groups):
        pts = groups[(ph, cond)]
        if len(pts) < min_tokens:
            log.warning("skipping ellipse for [%s]/%s: %d tokens (need %d)", ph, cond, len(pts), min_tokens)
            continue
        out.append(ellipse_from_points(np.array(pts), confidence, ph, cond))
    return out


def silverman_bandwidth(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    sd = x.std(ddof=1) if len(x) > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return float(0.9 * spread * len(x) ** -0.2)


def emit_ltfd_density(
    tokens: list[FeatureToken],
    formant_index: int,
    bandwidth: float | None = None,
    ceiling: float = 5500.0,
    n_points: int = 512,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian KDE of one formant over a 0..ceiling grid.

    Returns ``(hz, density)``.  The default bandwidth is Silverman's rule of
    thumb; a degenerate sample falls back to 1 Hz.
    """
    if not 1 <= formant_index <= 3:
        raise ValueError("formant_index must be 1, 2 or 3")
    x = np.array([t.vector[formant_index - 1] for t in tokens], dtype=np.float64)
    if x.size == 0:
        raise ValueError("no tokens")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        h = 1.0
    grid = np.linspace(0.0, ceiling, n_points)
    z = (grid[:, None] - x[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (len(x) * h * np.sqrt(2 * np.pi))
    return grid, dens


@dataclass(frozen=True)
class FbankProfile:
    speaker: str
    condition: str
    mean: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n_frames: int

    def rows(self) -> list[list]:
        return [[b + 1, float(m), float(lo), float(hi)] for b, (m, lo, hi) in enumerate(zip(self.mean, self.ci_lo, self.ci_hi))]


def emit_fbank_profile(tokens: list[FeatureToken], z: float = 1.96) -> list[FbankProfile]:
    """Per-band z-scored FBank means with a normal 95 % interval per (speaker, condition).

    Each frame is standardised per band by its speaker's statistics pooled
    over every condition.  Groups with fewer than 2 frames are skipped.
    """
    by_speaker = defaultdict(list)
    for t in tokens:
        if t.family != "FBANK":
            raise ValueError(f"profiles need FBANK tokens, got {t.family}")
        by_speaker[t.speaker].append(t)
    out = []
    for spk in sorted(by_speaker):
        toks = by_speaker[spk]
        X = np.vstack([t.vector for t in toks])
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        Z = (X - mu) / np.where(sd > 0, sd, 1.0)
        conds = np.array([t.condition for t in toks])
        for cond in sorted(set(conds)):
            G = Z[conds == cond]
            if len(G) < 2:
                log.warning("skipping fbank profile %s/%s: %d frame(s)", spk, cond, len(G))
                continue
            m = G.mean(axis=0)
            # ddof=0 keeps the interval width exactly proportional to 1/sqrt(n)
            se = G.std(axis=0) / np.sqrt(len(G))
            out.append(FbankProfile(spk, cond, m, m - z * se, m + z * se, len(G)))
    return out
