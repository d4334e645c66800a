"""Synthetic vowel corpora with declared formant and f0 targets.

Each file is a run of steady all-pole vowels excited by a smoothed pulse
train, separated by silence, with a matching two-tier TextGrid.  The
``fake`` condition moves selected vowels by a multiple of the token spread
and ``s2`` drifts every vowel by a smaller multiple, so downstream results
can be checked against known ground truth.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioBuffer, write_wav
from .features import ManifestEntry, write_manifest
from .textgrid import PhoneInterval, SegmentInventory, write_textgrid

UPPER_FORMANTS = ((3500.0, 200.0), (4500.0, 250.0))
BANDWIDTHS = (80.0, 90.0, 120.0)


@dataclass
class SpeakerSpec:
    name: str
    f0_hz: float
    vowels: dict  # label -> [F1, F2, F3]
    f0_sd: float = 4.0


def default_speakers() -> list[SpeakerSpec]:
    return [
        SpeakerSpec("spk_a", 110.0, {"UH": [450.0, 1100.0, 2400.0], "IY": [300.0, 2200.0, 2900.0],
                                     "AE": [700.0, 1700.0, 2500.0], "AA": [720.0, 1150.0, 2550.0]}),
        SpeakerSpec("spk_b", 130.0, {"UH": [480.0, 1200.0, 2550.0], "IY": [330.0, 2350.0, 3000.0],
                                     "AE": [760.0, 1800.0, 2650.0], "AA": [780.0, 1250.0, 2700.0]}),
    ]


@dataclass
class CorpusSpec:
    speakers: list[SpeakerSpec] = field(default_factory=default_speakers)
    tokens_per_vowel: int = 40  # per speaker and condition
    conditions: tuple = ("s1", "s2", "fake")
    formant_sd: tuple = (30.0, 70.0, 90.0)
    fake_shift_sd: float = 1.5
    fake_vowels: tuple = ("UH",)
    s2_drift_sd: float = 0.5
    vowel_s: float = 0.15
    gap_s: float = 0.08
    sample_rate: int = 16000
    noise_db: float = -60.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conditions"] = list(self.conditions)
        d["formant_sd"] = list(self.formant_sd)
        d["fake_vowels"] = list(self.fake_vowels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        d = dict(d)
        if "speakers" in d:
            d["speakers"] = [SpeakerSpec(**s) for s in d["speakers"]]
        for key in ("conditions", "formant_sd", "fake_vowels"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def target(self, speaker: SpeakerSpec, vowel: str, condition: str) -> np.ndarray:
        """Declared mean [F1, F2, F3] of a vowel under a condition."""
        base = np.asarray(speaker.vowels[vowel], dtype=np.float64)
        sd = np.asarray(self.formant_sd)
        if condition == "fake" and vowel in self.fake_vowels:
            return base + self.fake_shift_sd * sd
        if condition == "s2":
            return base + self.s2_drift_sd * sd
        return base


def glottal_source(f0: float, n: int, rate: int, rng: np.random.Generator) -> np.ndarray:
    pulses = np.zeros(n)
    t = rng.uniform(0, rate / f0)
    while t < n:
        pulses[int(t)] = 1.0
        t += rate / (f0 * (1.0 + 0.005 * rng.standard_normal()))
    # two leaky integrators give a roughly -12 dB/oct spectrum; differencing
    # restores the +6 dB/oct lip radiation
    return lfilter([1.0, -1.0], np.convolve([1.0, -0.97], [1.0, -0.97]), pulses)


def all_pole_vowel(source: np.ndarray, formants, bandwidths, rate: int) -> np.ndarray:
    y = source
    for f, b in zip(formants, bandwidths):
        r = np.exp(-np.pi * b / rate)
        a = [1.0, -2 * r * np.cos(2 * np.pi * f / rate), r * r]
        y = lfilter([sum(a)], a, y)  # unit gain at DC
    return y


def _ramp(n: int, rate: int, ramp_s: float = 0.01) -> np.ndarray:
    m = min(int(ramp_s * rate), n // 2)
    env = np.ones(n)
    if m > 0:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(m) / m)
        env[:m] = r
        env[n - m:] = r[::-1]
    return env


def synth_file(spec: CorpusSpec, speaker: SpeakerSpec, condition: str, rng: np.random.Generator):
    """Audio, inventory and the per-token truth for one speaker and condition."""
    rate = spec.sample_rate
    order = [v for v in sorted(speaker.vowels) for _ in range(spec.tokens_per_vowel)]
    order = [order[i] for i in rng.permutation(len(order))] if order else []
    gap = int(round(spec.gap_s * rate))
    n_vowel = int(round(spec.vowel_s * rate))
    pieces = [np.zeros(gap)]
    phones, words, truth = [], [], []
    t = gap / rate
    sd = np.asarray(spec.formant_sd)
    for label in order:
        mean = spec.target(speaker, label, condition)
        fmt = mean + sd * rng.standard_normal(3)
        f0 = speaker.f0_hz + speaker.f0_sd * rng.standard_normal()
        src = glottal_source(f0, n_vowel, rate, rng)
        freqs = list(fmt) + [f for f, _ in UPPER_FORMANTS]
        bws = list(BANDWIDTHS) + [b for _, b in UPPER_FORMANTS]
        y = all_pole_vowel(src, freqs, bws, rate) * _ramp(n_vowel, rate)
        y /= np.max(np.abs(y)) or 1.0
        pieces += [y, np.zeros(gap)]
        t0, t1 = t, t + n_vowel / rate
        phones.append(PhoneInterval(label + "1", t0, t1))
        words.append(PhoneInterval(label.lower(), t0, t1))
        truth.append({"label": label, "start_s": t0, "end_s": t1, "formants": fmt.tolist(), "f0": f0})
        t = t1 + gap / rate
    x = np.concatenate(pieces)
    x = 0.5 * x + 10 ** (spec.noise_db / 20) * rng.standard_normal(len(x))
    total = len(x) / rate
    inv = SegmentInventory(_fill(phones, total), _fill(words, total), total)
    return AudioBuffer(np.clip(x, -1, 1), rate), inv, truth


def _fill(intervals: list[PhoneInterval], total: float) -> list[PhoneInterval]:
    """Pad with silent intervals so the tier covers [0, total] without gaps."""
    out, t = [], 0.0
    for iv in intervals:
        if iv.start_s > t:
            out.append(PhoneInterval("", t, iv.start_s))
        out.append(iv)
        t = iv.end_s
    if total > t:
        out.append(PhoneInterval("", t, total))
    return out


def generate_corpus(out_dir, spec: CorpusSpec | None = None, seed: int = 0) -> dict:
    """Write WAV + TextGrid pairs, ``manifest.csv`` and ``ground_truth.json``.

    Returns the ground-truth document.  Equal seeds give byte-identical files.
    """
    spec = spec or CorpusSpec()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(spec.speakers) * len(spec.conditions))
    entries, files = [], []
    i = 0
    for spk in spec.speakers:
        for cond in spec.conditions:
            rng = np.random.default_rng(children[i])
            i += 1
            audio, inv, truth = synth_file(spec, spk, cond, rng)
            stem = f"{spk.name}_{cond}"
            write_wav(out / f"{stem}.wav", audio)
            write_textgrid(out / f"{stem}.TextGrid", inv)
            entries.append(ManifestEntry(f"{stem}.wav", f"{stem}.TextGrid", spk.name, cond))
            counts = {v: sum(1 for tr in truth if tr["label"] == v) for v in sorted(spk.vowels)}
            files.append({
                "file": f"{stem}.wav", "speaker": spk.name, "condition": cond,
                "vowel_counts": counts,
                "declared_means": {v: spec.target(spk, v, cond).tolist() for v in sorted(spk.vowels)},
                "tokens": truth,
            })
    write_manifest(out / "manifest.csv", entries)
    doc = {"seed": seed, "spec": spec.to_dict(), "files": files}
    (out / "ground_truth.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return doc
