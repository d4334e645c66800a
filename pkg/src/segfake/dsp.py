"""Signal-processing primitives for formant, f0 and cepstral analysis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft
from scipy import signal

from .audio_io import AudioBuffer, resample

WINDOW_SHAPES = ("gaussian", "hamming", "hann")


class DegenerateInputError(ValueError):
    pass


class FormantRootError(ArithmeticError):
    """Root finding failed; ``polynomial`` holds the offending coefficients."""

    def __init__(self, polynomial, message: str = "root finder did not converge"):
        self.polynomial = np.asarray(polynomial)
        super().__init__(f"{message}: {self.polynomial.tolist()}")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class FrameSpec:
    window_length_s: float
    hop_s: float
    window_shape: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop_s <= self.window_length_s:
            raise ValueError(f"need 0 < hop ({self.hop_s}) <= window length ({self.window_length_s})")
        if self.window_shape not in WINDOW_SHAPES:
            raise ValueError(f"window_shape must be one of {WINDOW_SHAPES}")


@dataclass(frozen=True)
class LpcModel:
    """All-pole model with error filter A(z) = 1 + sum_i a_i z^-i."""

    order: int
    coefficients: np.ndarray
    gain: float
    reflection: np.ndarray = field(default=None, repr=False)

    @property
    def polynomial(self) -> np.ndarray:
        return np.concatenate(([1.0], self.coefficients))


@dataclass
class FormantFrame:
    time_s: float
    formants: list[tuple[float, float]]  # (frequency Hz, bandwidth Hz), ascending


@dataclass
class FormantTrack:
    times: np.ndarray
    frequencies: np.ndarray  # (n_frames, max_formants), NaN where absent
    bandwidths: np.ndarray

    @property
    def hop_s(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0


@dataclass
class F0Track:
    times: np.ndarray
    f0: np.ndarray  # NaN where unvoiced
    strength: np.ndarray

    def as_pairs(self) -> list[tuple[float, float | None]]:
        return [(float(t), None if np.isnan(v) else float(v)) for t, v in zip(self.times, self.f0)]


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def make_window(shape: str, n: int) -> np.ndarray:
    if shape == "hann":
        return signal.get_window("hann", n, fftbins=True)
    if shape == "hamming":
        return signal.get_window("hamming", n, fftbins=True)
    if shape == "gaussian":
        # Praat-style Gaussian, exp(-12 x^2) on [-1, 1], lifted to zero at the edges
        if n == 1:
            return np.ones(1)
        x = (np.arange(n) - (n - 1) / 2) / ((n - 1) / 2)
        edge = np.exp(-12.0)
        return (np.exp(-12.0 * x * x) - edge) / (1.0 - edge)
    raise ValueError(f"unknown window shape {shape!r}")


def _frame_centers(n_samples: int, rate: int, hop_s: float) -> np.ndarray:
    hop = hop_s * rate
    n_frames = int(np.floor((n_samples - 1) / hop + 1e-9)) + 1
    return np.arange(n_frames)


def extract_segments(x: np.ndarray, centers: np.ndarray, length: int, offset: int) -> np.ndarray:
    """Rows ``x[c - offset : c - offset + length]`` for each centre, zero padded."""
    pad = length + offset
    xp = np.concatenate((np.zeros(pad), x, np.zeros(pad)))
    idx = centers[:, None] - offset + pad + np.arange(length)[None, :]
    return xp[idx]


def frame_signal(buf: AudioBuffer, spec: FrameSpec) -> tuple[np.ndarray, np.ndarray]:
    """Windowed frames centred at ``k * hop_s`` and their centre times.

    Returns an empty ``(0, L)`` array when the buffer is shorter than one window.
    """
    rate = buf.sample_rate
    length = int(round(spec.window_length_s * rate))
    if len(buf.samples) < length or length == 0:
        return np.zeros((0, length)), np.zeros(0)
    k = _frame_centers(len(buf.samples), rate, spec.hop_s)
    times = k * spec.hop_s
    centers = np.round(times * rate).astype(np.int64)
    frames = extract_segments(buf.samples, centers, length, length // 2)
    return frames * make_window(spec.window_shape, length)[None, :], times


def burg_lpc(frame, order: int) -> LpcModel:
    """Burg's method: reflection coefficients minimising forward+backward error."""
    x = np.asarray(frame, dtype=np.float64)
    n = len(x)
    if not n > order >= 2:
        raise ValueError(f"need frame length ({n}) > order ({order}) >= 2")
    if not np.any(x):
        raise DegenerateInputError("all-zero frame has no LPC model")

    f = x.copy()
    b = x.copy()
    a = np.zeros(order + 1)
    a[0] = 1.0
    ks = np.zeros(order)
    err = float(np.dot(x, x)) / n
    for m in range(order):
        ef = f[m + 1:].copy()
        eb = b[m:n - 1].copy()
        den = float(np.dot(ef, ef) + np.dot(eb, eb))
        if den <= 1e-300 * n:
            break
        k = -2.0 * float(np.dot(ef, eb)) / den
        f[m + 1:] = ef + k * eb
        b[m + 1:] = eb + k * ef
        a[1:m + 2] = a[1:m + 2] + k * a[m::-1][: m + 1]
        ks[m] = k
        err *= 1.0 - k * k

    if np.any(np.abs(ks) >= 1.0):
        raise FormantRootError(a, "reflection coefficient outside (-1, 1)")
    if not np.all(np.isfinite(a)):
        raise FormantRootError(a, "non-finite LPC coefficients")
    roots = np.roots(a)
    if roots.size and np.max(np.abs(roots)) >= 1.0:
        raise FormantRootError(a, "Burg model is not minimum phase")
    return LpcModel(order, a[1:].copy(), max(err, 0.0), ks)


def lpc_to_formants(
    model: LpcModel,
    sample_rate: float,
    ceiling: float | None = None,
    floor: float = 50.0,
    max_bandwidth: float = 700.0,
    time_s: float = 0.0,
) -> FormantFrame:
    """Formant candidates from the upper-half-plane roots of the predictor.

    ``ceiling`` defaults to 50 Hz below Nyquist.
    """
    if ceiling is None:
        ceiling = sample_rate / 2.0 - 50.0
    poly = model.polynomial
    try:
        roots = np.roots(poly)
    except np.linalg.LinAlgError:
        raise FormantRootError(poly) from None
    if not np.all(np.isfinite(roots)):
        raise FormantRootError(poly, "non-finite roots")
    roots = roots[roots.imag > 0]
    freqs = np.angle(roots) * sample_rate / (2 * np.pi)
    with np.errstate(divide="ignore"):
        bws = -np.log(np.abs(roots)) * sample_rate / np.pi
    keep = (freqs > floor) & (freqs < ceiling) & (bws > 0) & (bws < max_bandwidth)
    order = np.argsort(freqs[keep], kind="stable")
    formants = [(float(f), float(bw)) for f, bw in zip(freqs[keep][order], bws[keep][order])]
    return FormantFrame(time_s, formants)


def pre_emphasis(x: np.ndarray, rate: int, from_hz: float = 50.0) -> np.ndarray:
    """First-order +6 dB/octave lift above ``from_hz``."""
    alpha = np.exp(-2 * np.pi * from_hz / rate)
    return signal.lfilter([1.0, -alpha], [1.0], x)


def track_formants(
    buf: AudioBuffer,
    ceiling: float = 5500.0,
    n_formants: int = 5,
    window_length_s: float = 0.025,
    hop_s: float = 0.010,
    pre_emphasis_from: float = 50.0,
    max_bandwidth: float = 700.0,
) -> FormantTrack:
    """Burg formant tracking with Praat-equivalent defaults.

    The signal is resampled to twice ``ceiling`` and pre-emphasised; each frame
    gets a Gaussian window whose physical span is ``2 * window_length_s`` (so
    its effective duration is ``window_length_s``) and an LPC of order
    ``2 * n_formants``.
    """
    rate = int(round(2 * ceiling))
    work = resample(buf, rate)
    x = pre_emphasis(work.samples, rate, pre_emphasis_from)
    spec = FrameSpec(2 * window_length_s, hop_s, "gaussian")
    frames, times = frame_signal(AudioBuffer(x, rate), spec)
    order = 2 * n_formants
    freqs = np.full((len(times), n_formants), np.nan)
    bws = np.full((len(times), n_formants), np.nan)
    for i, fr in enumerate(frames):
        if not np.any(fr):
            continue
        try:
            model = burg_lpc(fr, order)
            cand = lpc_to_formants(model, rate, ceiling=ceiling - 50.0, max_bandwidth=max_bandwidth).formants
        except (DegenerateInputError, FormantRootError):
            continue
        for j, (f, bw) in enumerate(cand[:n_formants]):
            freqs[i, j] = f
            bws[i, j] = bw
    return FormantTrack(times, freqs, bws)


def _parabolic(r_m: np.ndarray, r_0: np.ndarray, r_p: np.ndarray):
    den = r_m - 2 * r_0 + r_p
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(den < 0, 0.5 * (r_m - r_p) / den, 0.0)
    delta = np.clip(delta, -0.5, 0.5)
    peak = r_0 - 0.25 * (r_m - r_p) * delta
    return delta, peak


def estimate_f0(
    buf: AudioBuffer,
    spec: FrameSpec = FrameSpec(0.04, 0.01, "hann"),
    floor_hz: float = 75.0,
    ceiling_hz: float = 600.0,
    voicing_threshold: float = 0.45,
    silence_db: float = 60.0,
    octave_cost: float = 0.01,
    reference_rms: float | None = None,
) -> F0Track:
    """Autocorrelation pitch estimate, one candidate per frame.

    Per frame the normalised cross-correlation between the analysis window
    and its lagged copy is evaluated for lags ``rate/ceiling .. rate/floor``;
    the winning peak (with a small per-octave preference for shorter lags) is
    refined by parabolic interpolation.  A frame is voiced iff the peak value
    exceeds ``voicing_threshold`` and its RMS lies within ``silence_db`` of
    ``reference_rms`` (default: loudest frame of ``buf``).  The normalisation
    makes the window shape irrelevant, so ``spec.window_shape`` is unused.
    """
    rate = buf.sample_rate
    if not 0 < floor_hz < ceiling_hz < rate / 2:
        raise ValueError(f"need 0 < floor ({floor_hz}) < ceiling ({ceiling_hz}) < nyquist ({rate / 2})")
    n_win = int(round(spec.window_length_s * rate))
    lag_lo = max(2, int(np.floor(rate / ceiling_hz)))
    lag_hi = int(np.ceil(rate / floor_hz))
    lags = np.arange(lag_lo - 1, lag_hi + 2)
    if len(buf.samples) < n_win:
        return F0Track(np.zeros(0), np.zeros(0), np.zeros(0))

    k = _frame_centers(len(buf.samples), rate, spec.hop_s)
    times = k * spec.hop_s
    centers = np.round(times * rate).astype(np.int64)
    seg_len = n_win + lags[-1]
    segs = extract_segments(buf.samples, centers, seg_len, seg_len // 2)
    head = segs[:, :n_win]
    e0 = np.einsum("ij,ij->i", head, head)
    sq = np.concatenate((np.zeros((len(segs), 1)), np.cumsum(segs * segs, axis=1)), axis=1)

    r = np.zeros((len(segs), len(lags)))
    for j, lag in enumerate(lags):
        num = np.einsum("ij,ij->i", head, segs[:, lag:lag + n_win])
        el = sq[:, lag + n_win] - sq[:, lag]
        den = np.sqrt(np.maximum(e0 * el, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            r[:, j] = np.where(den > 0, num / den, 0.0)

    rms = np.sqrt(e0 / n_win)
    ref = float(np.max(rms)) if reference_rms is None else float(reference_rms)
    loud_enough = (rms > 0) & (rms > ref * 10 ** (-silence_db / 20.0))

    inner = r[:, 1:-1]
    is_peak = (inner >= r[:, :-2]) & (inner > r[:, 2:])
    lag_s = lags[1:-1] / rate
    bonus = -octave_cost * np.log2(floor_hz * lag_s)
    score = np.where(is_peak, inner + bonus[None, :], -np.inf)
    best = np.argmax(score, axis=1)
    rows = np.arange(len(segs))
    has_peak = np.isfinite(score[rows, best])
    delta, peak = _parabolic(r[rows, best], r[rows, best + 1], r[rows, best + 2])
    f0 = rate / (lags[best + 1] + delta)
    f0 = np.clip(f0, floor_hz, ceiling_hz)
    voiced = has_peak & loud_enough & (peak > voicing_threshold)
    return F0Track(times, np.where(voiced, f0, np.nan), np.where(has_peak, peak, 0.0))


def hz_to_mel(f, scale: str = "slaney"):
    f = np.asarray(f, dtype=np.float64)
    if scale == "htk":
        return 2595.0 * np.log10(1.0 + f / 700.0)
    if scale != "slaney":
        raise ValueError(f"unknown mel scale {scale!r}")
    # linear below 1 kHz at 200/3 Hz per mel (written as *3/200 so mel(1000) is exactly 15)
    min_log_mel = 15.0
    logstep = np.log(6.4) / 27.0
    return np.where(f < 1000.0, f * 3.0 / 200.0, min_log_mel + np.log(np.maximum(f, 1e-300) / 1000.0) / logstep)


def mel_to_hz(m, scale: str = "slaney"):
    m = np.asarray(m, dtype=np.float64)
    if scale == "htk":
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    if scale != "slaney":
        raise ValueError(f"unknown mel scale {scale!r}")
    min_log_mel = 15.0
    logstep = np.log(6.4) / 27.0
    return np.where(m < min_log_mel, m * 200.0 / 3.0, 1000.0 * np.exp(logstep * (m - min_log_mel)))


def mel_filterbank(
    n_filters: int,
    fft_size: int,
    rate: float,
    fmin: float = 0.0,
    fmax: float | None = None,
    scale: str = "slaney",
) -> np.ndarray:
    """Triangular mel filters, shape ``(n_filters, fft_size // 2 + 1)``.

    The slaney variant is area-normalised (each triangle scaled by
    ``2 / bandwidth``); htk filters have unit peak.
    """
    if fmax is None:
        fmax = rate / 2.0
    if not 0 <= fmin < fmax <= rate / 2.0:
        raise ConfigurationError(f"need 0 <= fmin ({fmin}) < fmax ({fmax}) <= rate/2 ({rate / 2})")
    bin_hz = np.arange(fft_size // 2 + 1) * rate / fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin, scale), hz_to_mel(fmax, scale), n_filters + 2), scale)
    # Pin the outer edges so rounding in the mel round trip cannot leak support.
    edges[0], edges[-1] = fmin, fmax
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (bin_hz[None, :] - lo) / (mid - lo)
    fall = (hi - bin_hz[None, :]) / (hi - mid)
    w = np.maximum(0.0, np.minimum(rise, fall))
    if scale == "slaney":
        w *= 2.0 / (hi - lo)
    empty = np.flatnonzero(~np.any(w > 0, axis=1))
    if empty.size:
        raise ConfigurationError(
            f"{n_filters} mel filters are too many for fft_size {fft_size}: filters {empty.tolist()} cover no FFT bin"
        )
    return w


def dct_ii(log_energies, n_out: int | None = None) -> np.ndarray:
    """Orthonormal DCT-II along the last axis, truncated to ``n_out`` terms."""
    x = np.asarray(log_energies, dtype=np.float64)
    n = x.shape[-1]
    if n_out is None:
        n_out = n
    if n_out > n:
        raise ValueError(f"n_out ({n_out}) exceeds input length ({n})")
    return sp_fft.dct(x, type=2, norm="ortho", axis=-1)[..., :n_out]


def idct_ii(coeffs) -> np.ndarray:
    return sp_fft.idct(np.asarray(coeffs, dtype=np.float64), type=2, norm="ortho", axis=-1)
