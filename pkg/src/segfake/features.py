"""Token-level feature families: MF, LTFD, LTF0, MFCC and FBank.

Every token carries the speaker and condition of the manifest entry it came
from; nothing about the source is inferred from the audio.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer, read_wav, resample
from .dsp import (
    ConfigurationError,
    F0Track,
    FormantTrack,
    FrameSpec,
    dct_ii,
    estimate_f0,
    frame_signal,
    mel_filterbank,
    next_pow2,
    track_formants,
)
from .textgrid import ARPABET_VOWELS, PhoneInterval, SegmentInventory, parse_textgrid, to_ipa, vocalic_segments

log = logging.getLogger(__name__)

FAMILIES = ("MF", "LTFD", "LTF0", "MFCC", "FBANK")
CONDITIONS = ("real", "fake", "s1", "s2")
TOKEN_CSV_DIMS = 39
LOG_FLOOR = 1e-10


@dataclass
class ExtractionConfig:
    n_points: int = 15
    formant_ceiling: float = 5500.0
    n_formants: int = 5
    formant_window_s: float = 0.025
    hop_s: float = 0.010
    max_bandwidth: float = 700.0
    pitch_floor: float = 75.0
    pitch_ceiling: float = 600.0
    pitch_window_s: float = 0.040
    voicing_threshold: float = 0.45
    silence_db: float = 60.0
    mfcc_rate: int = 16000
    mfcc_window_s: float = 0.020
    mfcc_hop_s: float = 0.010
    mfcc_window: str = "hann"
    n_mels: int = 26
    n_mfcc: int = 13
    fmin: float = 0.0
    fmax: float = 8000.0
    mel_scale: str = "slaney"
    delta_width: int = 2
    include_nonspeech: bool = False
    vowel_set: frozenset = ARPABET_VOWELS
    ipa_map: dict | None = None
    speaker_ceilings: dict = field(default_factory=dict)

    def ceiling_for(self, speaker: str) -> float:
        return float(self.speaker_ceilings.get(speaker, self.formant_ceiling))


@dataclass
class FeatureToken:
    vector: np.ndarray
    family: str
    speaker: str
    condition: str
    phoneme: str | None = None
    time_s: float = 0.0

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).ravel()
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("token vector must be finite")
        expected = {"MF": 3, "LTFD": 3, "LTF0": 1, "MFCC": 39}.get(self.family)
        if expected is not None and self.vector.size != expected:
            raise ValueError(f"{self.family} token needs {expected} dims, got {self.vector.size}")
        if (self.phoneme is not None) != (self.family == "MF"):
            raise ValueError("phoneme is set exactly for MF tokens")


@dataclass
class ExtractionResult:
    tokens: list[FeatureToken]
    dropped: int = 0
    intervals: list[tuple[float, float]] | None = None


class TokenStore:
    """Feature tokens with per-token provenance ``(file, interval or None)``."""

    def __init__(self):
        self.tokens: list[FeatureToken] = []
        self.provenance: list[tuple[str, tuple[float, float] | None]] = []

    def __len__(self) -> int:
        return len(self.tokens)

    def add(self, tokens, source: str = "", intervals=None) -> None:
        tokens = list(tokens)
        if intervals is None:
            intervals = [None] * len(tokens)
        self.tokens.extend(tokens)
        self.provenance.extend((source, iv) for iv in intervals)

    def extend(self, other: "TokenStore") -> None:
        self.tokens.extend(other.tokens)
        self.provenance.extend(other.provenance)

    def sort(self) -> None:
        """Deterministic order on (file, family, time), for concurrent producers."""
        order = sorted(
            range(len(self.tokens)),
            key=lambda i: (self.provenance[i][0], FAMILIES.index(self.tokens[i].family), self.tokens[i].time_s, i),
        )
        self.tokens = [self.tokens[i] for i in order]
        self.provenance = [self.provenance[i] for i in order]

    def select(self, speaker=None, family=None, condition=None, phoneme=None) -> list[FeatureToken]:
        if isinstance(condition, str):
            condition = {condition}
        out = []
        for t in self.tokens:
            if speaker is not None and t.speaker != speaker:
                continue
            if family is not None and t.family != family:
                continue
            if condition is not None and t.condition not in condition:
                continue
            if phoneme is not None and t.phoneme != phoneme:
                continue
            out.append(t)
        return out

    def matrix(self, **selector) -> np.ndarray:
        toks = self.select(**selector)
        if not toks:
            return np.zeros((0, 0))
        return np.vstack([t.vector for t in toks])

    def speakers(self) -> list[str]:
        return sorted({t.speaker for t in self.tokens})

    def phonemes(self, speaker: str | None = None) -> list[str]:
        return sorted({t.phoneme for t in self.tokens if t.family == "MF" and (speaker is None or t.speaker == speaker)})

    def counts(self) -> Counter:
        return Counter((t.speaker, t.family, t.condition, t.phoneme) for t in self.tokens)


def sample_times(interval: PhoneInterval, n_points: int) -> np.ndarray:
    dur = interval.end_s - interval.start_s
    return interval.start_s + (np.arange(n_points) + 0.5) * (dur / n_points)


def sample_track(times, values, interval: PhoneInterval, n_points: int = 15) -> np.ndarray:
    """Values of a frame track at ``n_points`` equidistant points in ``interval``.

    Point ``i`` sits at ``start + (i + 0.5) * duration / n_points`` and takes
    the value of the nearest analysis frame; points more than half a hop from
    every frame are NaN, as are NaN frames.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    ts = sample_times(interval, n_points)
    shape = (n_points,) + values.shape[1:]
    if len(times) == 0:
        return np.full(shape, np.nan)
    hop = float(np.median(np.diff(times))) if len(times) > 1 else np.inf
    j = np.clip(np.searchsorted(times, ts), 1, max(len(times) - 1, 1))
    left = np.clip(j - 1, 0, len(times) - 1)
    right = np.clip(j, 0, len(times) - 1)
    nearest = np.where(np.abs(times[left] - ts) <= np.abs(times[right] - ts), left, right)
    out = values[nearest].astype(np.float64, copy=True)
    outside = np.abs(times[nearest] - ts) > hop / 2 + 1e-9
    out[outside] = np.nan
    return out


def analyze_formants(audio: AudioBuffer, config: ExtractionConfig, speaker: str = "") -> FormantTrack:
    return track_formants(
        audio,
        ceiling=config.ceiling_for(speaker),
        n_formants=config.n_formants,
        window_length_s=config.formant_window_s,
        hop_s=config.hop_s,
        max_bandwidth=config.max_bandwidth,
    )


def analyze_f0(audio: AudioBuffer, config: ExtractionConfig) -> F0Track:
    return estimate_f0(
        audio,
        FrameSpec(config.pitch_window_s, config.hop_s),
        config.pitch_floor,
        config.pitch_ceiling,
        voicing_threshold=config.voicing_threshold,
        silence_db=config.silence_db,
    )


def _vowel_grids(track: FormantTrack, inventory, vowel_set, n_points):
    for iv in vocalic_segments(inventory, vowel_set):
        grid = sample_track(track.times, track.frequencies[:, :3], iv, n_points)
        yield iv, grid


def extract_mf(
    audio: AudioBuffer,
    inventory: SegmentInventory,
    vowel_set=None,
    speaker: str = "",
    condition: str = "real",
    config: ExtractionConfig | None = None,
    track: FormantTrack | None = None,
) -> ExtractionResult:
    """One [F1, F2, F3] token per vowel, read at the centre of the sampling grid.

    Vowels whose centre point lacks any of F1-F3 are dropped and counted.
    """
    config = config or ExtractionConfig()
    vowel_set = config.vowel_set if vowel_set is None else vowel_set
    track = track if track is not None else analyze_formants(audio, config, speaker)
    mid = (config.n_points - 1) // 2
    tokens, dropped, spans = [], 0, []
    for iv, grid in _vowel_grids(track, inventory, vowel_set, config.n_points):
        v = grid[mid]
        if np.any(np.isnan(v)):
            dropped += 1
            continue
        t = float(sample_times(iv, config.n_points)[mid])
        tokens.append(FeatureToken(v, "MF", speaker, condition, to_ipa(iv.label, config.ipa_map), t))
        spans.append((iv.start_s, iv.end_s))
    return ExtractionResult(tokens, dropped, spans)


def extract_ltfd(
    audio: AudioBuffer,
    inventory: SegmentInventory,
    vowel_set=None,
    speaker: str = "",
    condition: str = "real",
    config: ExtractionConfig | None = None,
    track: FormantTrack | None = None,
) -> ExtractionResult:
    """Phoneme-blind [F1, F2, F3] tokens from every grid point of every vowel."""
    config = config or ExtractionConfig()
    vowel_set = config.vowel_set if vowel_set is None else vowel_set
    track = track if track is not None else analyze_formants(audio, config, speaker)
    tokens, dropped, spans = [], 0, []
    for iv, grid in _vowel_grids(track, inventory, vowel_set, config.n_points):
        ts = sample_times(iv, config.n_points)
        for t, v in zip(ts, grid):
            if np.any(np.isnan(v)):
                dropped += 1
                continue
            tokens.append(FeatureToken(v, "LTFD", speaker, condition, None, float(t)))
            spans.append((iv.start_s, iv.end_s))
    return ExtractionResult(tokens, dropped, spans)


def extract_ltf0(
    audio: AudioBuffer,
    inventory: SegmentInventory,
    vowel_set=None,
    speaker: str = "",
    condition: str = "real",
    config: ExtractionConfig | None = None,
    track: F0Track | None = None,
) -> ExtractionResult:
    config = config or ExtractionConfig()
    vowel_set = config.vowel_set if vowel_set is None else vowel_set
    track = track if track is not None else analyze_f0(audio, config)
    tokens, dropped, spans = [], 0, []
    for iv in vocalic_segments(inventory, vowel_set):
        grid = sample_track(track.times, track.f0, iv, config.n_points)
        for t, v in zip(sample_times(iv, config.n_points), grid):
            if np.isnan(v):
                dropped += 1
                continue
            tokens.append(FeatureToken([v], "LTF0", speaker, condition, None, float(t)))
            spans.append((iv.start_s, iv.end_s))
    return ExtractionResult(tokens, dropped, spans)


def deltas(features: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas over +-``width`` frames, edges replicated."""
    x = np.asarray(features, dtype=np.float64)
    if len(x) == 0:
        return x.copy()
    padded = np.concatenate([np.repeat(x[:1], width, axis=0), x, np.repeat(x[-1:], width, axis=0)])
    n = len(x)
    num = np.zeros_like(x)
    for k in range(1, width + 1):
        num += k * (padded[width + k:width + k + n] - padded[width - k:width - k + n])
    return num / (2 * sum(k * k for k in range(1, width + 1)))


def _prepare_mfcc_audio(audio: AudioBuffer, config: ExtractionConfig) -> AudioBuffer:
    if audio.sample_rate / 2 < config.fmax:
        raise ConfigurationError(
            f"{audio.source_path or 'audio'}: sample rate {audio.sample_rate} Hz cannot carry the "
            f"0-{config.fmax:g} Hz band; resample to at least {int(2 * config.fmax)} Hz first"
        )
    if audio.sample_rate > config.mfcc_rate:
        audio = resample(audio, config.mfcc_rate)
    return audio


def log_mel_frames(audio: AudioBuffer, config: ExtractionConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Frame times and log mel-filterbank energies over the whole utterance."""
    config = config or ExtractionConfig()
    audio = _prepare_mfcc_audio(audio, config)
    spec = FrameSpec(config.mfcc_window_s, config.mfcc_hop_s, config.mfcc_window)
    frames, times = frame_signal(audio, spec)
    n_fft = next_pow2(frames.shape[1]) if frames.size else next_pow2(int(round(spec.window_length_s * audio.sample_rate)))
    fb = mel_filterbank(config.n_mels, n_fft, audio.sample_rate, config.fmin, config.fmax, config.mel_scale)
    if len(frames) == 0:
        return times, np.zeros((0, config.n_mels))
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    energies = power @ fb.T
    return times, np.log(np.maximum(energies, LOG_FLOOR))


def mfcc_from_log_mel(log_mel: np.ndarray, config: ExtractionConfig | None = None) -> np.ndarray:
    config = config or ExtractionConfig()
    static = dct_ii(log_mel, config.n_mfcc)
    d1 = deltas(static, config.delta_width)
    d2 = deltas(d1, config.delta_width)
    return np.hstack([static, d1, d2])


def speech_mask(times: np.ndarray, inventory: SegmentInventory | None) -> np.ndarray:
    """Frames whose centre lies inside a non-silent word (or phone) interval."""
    if inventory is None:
        return np.ones(len(times), dtype=bool)
    spans = [iv for iv in (inventory.words or inventory.phones) if not iv.is_silence]
    mask = np.zeros(len(times), dtype=bool)
    for iv in spans:
        mask |= (times >= iv.start_s) & (times < iv.end_s)
    return mask


def extract_mfcc(
    audio: AudioBuffer,
    inventory: SegmentInventory | None = None,
    speaker: str = "",
    condition: str = "real",
    config: ExtractionConfig | None = None,
) -> ExtractionResult:
    """39-dim MFCC tokens (13 statics incl. c0, deltas, delta-deltas), one per hop.

    Deltas are computed over the full frame sequence; frames outside speech are
    then removed unless ``config.include_nonspeech`` is set.
    """
    config = config or ExtractionConfig()
    times, log_mel = log_mel_frames(audio, config)
    feats = mfcc_from_log_mel(log_mel, config)
    keep = np.ones(len(times), dtype=bool) if config.include_nonspeech else speech_mask(times, inventory)
    tokens = [FeatureToken(v, "MFCC", speaker, condition, None, float(t)) for t, v in zip(times[keep], feats[keep])]
    return ExtractionResult(tokens, int(np.count_nonzero(~keep)))


def extract_fbank(
    audio: AudioBuffer,
    inventory: SegmentInventory | None = None,
    speaker: str = "",
    condition: str = "real",
    config: ExtractionConfig | None = None,
) -> ExtractionResult:
    config = config or ExtractionConfig()
    times, log_mel = log_mel_frames(audio, config)
    keep = np.ones(len(times), dtype=bool) if config.include_nonspeech else speech_mask(times, inventory)
    tokens = [FeatureToken(v, "FBANK", speaker, condition, None, float(t)) for t, v in zip(times[keep], log_mel[keep])]
    return ExtractionResult(tokens, int(np.count_nonzero(~keep)))


# --- corpus level ------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    file_path: str
    textgrid_path: str
    speaker: str
    condition: str


MANIFEST_COLUMNS = ("file_path", "textgrid_path", "speaker", "condition")


def read_manifest(path) -> list[ManifestEntry]:
    """Corpus manifest CSV; relative paths resolve against the manifest's folder."""
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: manifest lacks columns {sorted(missing)}")
        for lineno, row in enumerate(reader, 2):
            cond = row["condition"].strip().lower()
            if cond not in CONDITIONS:
                raise ValueError(f"{path}:{lineno}: condition {cond!r} not in {CONDITIONS}")
            wav = Path(row["file_path"].strip())
            tg = Path(row["textgrid_path"].strip())
            entries.append(
                ManifestEntry(
                    str(wav if wav.is_absolute() else base / wav),
                    str(tg if tg.is_absolute() else base / tg),
                    row["speaker"].strip(),
                    cond,
                )
            )
    return entries


def write_manifest(path, entries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for e in entries:
            w.writerow([e.file_path, e.textgrid_path, e.speaker, e.condition])


def extract_file(entry: ManifestEntry, config: ExtractionConfig, families=FAMILIES) -> tuple[TokenStore, dict]:
    audio = read_wav(entry.file_path)
    inventory = parse_textgrid(entry.textgrid_path)
    store = TokenStore()
    info = {"file": entry.file_path, "speaker": entry.speaker, "condition": entry.condition}
    vowels = vocalic_segments(inventory, config.vowel_set)
    info["vowels"] = len(vowels)
    kw = dict(speaker=entry.speaker, condition=entry.condition, config=config)

    def add(name, result):
        store.add(result.tokens, entry.file_path, result.intervals)
        info[f"{name}_tokens"] = len(result.tokens)
        info[f"{name}_dropped"] = result.dropped

    if "MF" in families or "LTFD" in families:
        track = analyze_formants(audio, config, entry.speaker)
        if "MF" in families:
            add("MF", extract_mf(audio, inventory, None, track=track, **kw))
        if "LTFD" in families:
            add("LTFD", extract_ltfd(audio, inventory, None, track=track, **kw))
    if "LTF0" in families:
        f0 = analyze_f0(audio, config)
        res = extract_ltf0(audio, inventory, None, track=f0, **kw)
        add("LTF0", res)
        n_grid = len(vowels) * config.n_points
        info["voicing_rate"] = len(res.tokens) / n_grid if n_grid else None
    if "MFCC" in families:
        add("MFCC", extract_mfcc(audio, inventory, **kw))
    if "FBANK" in families:
        add("FBANK", extract_fbank(audio, inventory, **kw))
    return store, info


# --- token CSV ---------------------------------------------------------------

TOKEN_COLUMNS = ["speaker", "family", "phoneme", "condition", "time_s"] + [f"v{i}" for i in range(1, TOKEN_CSV_DIMS + 1)]


def token_rows(store: TokenStore):
    yield TOKEN_COLUMNS
    for t in store.tokens:
        if t.vector.size > TOKEN_CSV_DIMS:
            raise ValueError(f"{t.family} token has {t.vector.size} dims; the token CSV holds at most {TOKEN_CSV_DIMS}")
        vals = [repr(float(v)) for v in t.vector] + [""] * (TOKEN_CSV_DIMS - t.vector.size)
        yield [t.speaker, t.family, t.phoneme or "", t.condition, repr(float(t.time_s))] + vals


def read_tokens(path) -> TokenStore:
    store = TokenStore()
    with open(path, newline="", encoding="utf-8") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.DictReader(lines)
        for row in reader:
            vec = [float(row[f"v{i}"]) for i in range(1, TOKEN_CSV_DIMS + 1) if row[f"v{i}"] != ""]
            fam = row["family"]
            store.add(
                [FeatureToken(vec, fam, row["speaker"], row["condition"], row["phoneme"] or None, float(row["time_s"]))],
                str(path),
            )
    return store
