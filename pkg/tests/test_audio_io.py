import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segfake.audio_io import AudioBuffer, UnsupportedWavError, WavFormatError, read_wav, resample, write_wav

from conftest import write_pcm16


def test_pcm16_scaling(tmp_path):
    p = tmp_path / "a.wav"
    write_pcm16(p, [0, 16384, -16384], 16000)
    buf = read_wav(p)
    assert buf.sample_rate == 16000
    np.testing.assert_array_equal(buf.samples, [0.0, 0.5, -0.5])
    assert buf.source_path == str(p)


def test_stereo_mean_mixdown(tmp_path):
    p = tmp_path / "s.wav"
    write_pcm16(p, [[32767, 0], [16384, -16384]], 8000)
    buf = read_wav(p)
    np.testing.assert_allclose(buf.samples, [32767 / 2 / 32768, 0.0])


def test_sample_count_long_fixture(tmp_path):
    p = tmp_path / "long.wav"
    write_pcm16(p, np.zeros(441000, dtype=np.int16), 44100)
    buf = read_wav(p)
    assert len(buf) == 441000
    assert buf.duration_seconds == pytest.approx(10.0)


@pytest.mark.parametrize("bits,fmt", [(16, False), (24, False), (32, False), (32, True), (64, True)])
def test_round_trip_within_one_lsb(tmp_path, rng, bits, fmt):
    x = rng.uniform(-0.99, 0.99, 500)
    p = tmp_path / f"r{bits}{fmt}.wav"
    write_wav(p, AudioBuffer(x, 22050), bits=bits, float_format=fmt)
    y = read_wav(p).samples
    lsb = 2.0 ** -(bits - 1) if not fmt else (1e-7 if bits == 32 else 1e-15)
    assert np.max(np.abs(x - y)) <= lsb


def test_wave_format_extensible(tmp_path):
    samples = np.array([0, 8192, -8192], dtype="<i2")
    fmt = struct.pack("<HHIIHHHHIH14s", 0xFFFE, 1, 16000, 32000, 2, 16, 22, 16, 4, 1,
                      b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71")
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", 6) + samples.tobytes()
    p = tmp_path / "ext.wav"
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    np.testing.assert_array_equal(read_wav(p).samples, [0, 0.25, -0.25])


def test_bad_magic_names_riff_chunk(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"RIFX" + b"\x00" * 40)
    with pytest.raises(WavFormatError) as e:
        read_wav(p)
    assert e.value.chunk == "RIFF"


def test_truncated_data_chunk(tmp_path):
    p = tmp_path / "t.wav"
    write_pcm16(p, np.arange(100), 8000)
    p.write_bytes(p.read_bytes()[:-50])
    with pytest.raises(WavFormatError) as e:
        read_wav(p)
    assert e.value.chunk == "data"


def test_unsupported_encoding_lists_tag(tmp_path):
    fmt = struct.pack("<HHIIHH", 0x0006, 1, 8000, 8000, 1, 8)  # A-law
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", 2) + b"\x00\x00"
    p = tmp_path / "alaw.wav"
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(UnsupportedWavError, match="0x0006"):
        read_wav(p)


def test_resample_identity_returns_same_samples(rng):
    buf = AudioBuffer(rng.uniform(-1, 1, 1000), 16000)
    out = resample(buf, 16000)
    assert out.samples.tobytes() == buf.samples.tobytes()


def test_resample_sine_peak_stays_at_1khz():
    rate = 44100
    t = np.arange(rate) / rate
    out = resample(AudioBuffer(0.5 * np.sin(2 * np.pi * 1000 * t), rate), 16000)
    n = len(out.samples)
    spec = np.abs(np.fft.rfft(out.samples * np.hanning(n), n=16 * n))
    k = np.argmax(spec)
    # parabolic refinement of the FFT peak
    a, b, c = np.log(spec[k - 1 : k + 2])
    peak_bin = k + 0.5 * (a - c) / (a - 2 * b + c)
    assert peak_bin * 16000 / (16 * n) == pytest.approx(1000.0, abs=1.0)


def test_resample_length_48k_to_11k():
    out = resample(AudioBuffer(np.zeros(48000), 48000), 11000)
    assert abs(len(out) - 11000) <= 1


@settings(max_examples=25, deadline=None)
@given(
    f=st.floats(100, 3500),
    pair=st.sampled_from([(16000, 11025), (44100, 16000), (8000, 16000), (22050, 48000), (16000, 11000)]),
)
def test_resample_preserves_rms_of_bandlimited_tone(f, pair):
    src, dst = pair
    if f >= 0.4 * min(src, dst):
        f = 0.3 * min(src, dst)
    t = np.arange(src) / src
    x = 0.5 * np.sin(2 * np.pi * f * t)
    y = resample(AudioBuffer(x, src), dst).samples
    # ignore filter edge transients
    ex, ey = int(0.05 * src), int(0.05 * dst)
    rms_x = np.sqrt(np.mean(x[ex:-ex] ** 2))
    rms_y = np.sqrt(np.mean(y[ey:-ey] ** 2))
    assert rms_y == pytest.approx(rms_x, rel=0.01)
    assert abs(len(y) / dst - len(x) / src) <= 1.0 / dst + 1e-12


def test_samples_bounded_after_resample(rng):
    x = np.sign(rng.standard_normal(4000)) * 0.999
    y = resample(AudioBuffer(x, 16000), 11025).samples
    assert np.all(np.abs(y) <= 1.000001) and np.all(np.isfinite(y))
