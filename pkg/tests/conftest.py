import sys
import wave

import numpy as np
import pytest
from scipy.signal import lfilter


def write_pcm16(path, frames, rate):
    """Fixture writer built on the stdlib, independent of segfake's own writer."""
    frames = np.asarray(frames, dtype=np.int16)
    if frames.ndim == 1:
        frames = frames[:, None]
    with wave.open(str(path), "wb") as w:
        w.setnchannels(frames.shape[1])
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(frames.astype("<i2").tobytes())


def resonators(x, formants, bandwidths, rate):
    y = x
    for f, b in zip(formants, bandwidths):
        r = np.exp(-np.pi * b / rate)
        a = [1.0, -2 * r * np.cos(2 * np.pi * f / rate), r * r]
        y = lfilter([1.0], a, y)
    return y


def vowel(formants, f0=100.0, rate=16000, dur=0.5, bandwidths=(80, 90, 120), glottal=True):
    """Pulse-train-excited all-pole vowel with peak 0.5."""
    n = int(dur * rate)
    src = np.zeros(n)
    src[:: int(round(rate / f0))] = 1.0
    if glottal:
        src = lfilter([1.0, -1.0], np.convolve([1, -0.97], [1, -0.97]), src)
    y = resonators(src, formants, bandwidths, rate)
    return 0.5 * y / np.max(np.abs(y))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
