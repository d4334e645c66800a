"""RIFF/WAVE ingestion, writing and band-limited resampling."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from math import gcd
from pathlib import Path

import numpy as np
from scipy import signal

log = logging.getLogger(__name__)

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

# Resampler design: Kaiser-windowed sinc, 64 taps per polyphase branch.
KAISER_BETA = 8.6
TAPS_PER_PHASE = 64


class WavFormatError(ValueError):
    """Malformed RIFF/WAVE structure; ``chunk`` names the offending chunk."""

    def __init__(self, chunk: str, message: str):
        self.chunk = chunk
        super().__init__(f"malformed WAV ({chunk!r} chunk): {message}")


class UnsupportedWavError(ValueError):
    """Well-formed WAV whose sample encoding this reader does not handle."""

    def __init__(self, format_tag: int, bits: int):
        self.format_tag = format_tag
        self.bits = bits
        super().__init__(
            f"unsupported WAV encoding: format tag 0x{format_tag:04X}, {bits} bits per sample "
            "(supported: PCM 16/24/32-bit, IEEE float 32/64-bit)"
        )


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int
    source_path: str = ""

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioBuffer holds mono samples only")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4].decode("latin-1")
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        yield chunk_id, size, body
        pos += 8 + size + (size & 1)


def _decode_pcm(raw: bytes, bits: int, n_channels: int, block_align: int) -> np.ndarray:
    if bits == 16:
        x = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    elif bits == 32:
        x = np.frombuffer(raw, dtype="<i4").astype(np.float64)
    elif bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v.astype(np.float64)
    else:
        raise AssertionError(bits)
    return x / float(1 << (bits - 1))


def read_wav(path) -> AudioBuffer:
    """Read a RIFF/WAVE file into a mono buffer normalised to [-1, 1].

    Integer PCM is scaled by ``1 / 2**(bits - 1)``; channels are mixed down by
    arithmetic mean.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12:
        raise WavFormatError("RIFF", "file shorter than the 12-byte RIFF header")
    if data[:4] != b"RIFF":
        raise WavFormatError("RIFF", f"expected 'RIFF' magic, found {data[:4]!r}")
    if data[8:12] != b"WAVE":
        raise WavFormatError("RIFF", f"expected 'WAVE' form type, found {data[8:12]!r}")

    fmt = None
    raw = None
    for chunk_id, size, body in _iter_chunks(data):
        if len(body) < size:
            raise WavFormatError(chunk_id, f"declared size {size} but only {len(body)} bytes present")
        if chunk_id == "fmt ":
            if size < 16:
                raise WavFormatError("fmt ", f"chunk too short ({size} bytes, need 16)")
            fmt = struct.unpack("<HHIIHH", body[:16])
            format_tag = fmt[0]
            if format_tag == WAVE_FORMAT_EXTENSIBLE:
                if size < 40:
                    raise WavFormatError("fmt ", "WAVE_FORMAT_EXTENSIBLE without subformat GUID")
                (sub,) = struct.unpack("<H", body[24:26])
                fmt = (sub,) + fmt[1:]
        elif chunk_id == "data":
            raw = body
    if fmt is None:
        raise WavFormatError("fmt ", "no fmt chunk found")
    if raw is None:
        raise WavFormatError("data", "no data chunk found")

    format_tag, n_channels, rate, _byte_rate, block_align, bits = fmt
    if n_channels < 1:
        raise WavFormatError("fmt ", f"channel count {n_channels}")
    if rate <= 0:
        raise WavFormatError("fmt ", f"sample rate {rate}")
    if format_tag == WAVE_FORMAT_PCM and bits in (16, 24, 32):
        pass
    elif format_tag == WAVE_FORMAT_IEEE_FLOAT and bits in (32, 64):
        pass
    else:
        raise UnsupportedWavError(format_tag, bits)
    if block_align != n_channels * bits // 8:
        raise WavFormatError("fmt ", f"block align {block_align} inconsistent with {n_channels}x{bits} bits")

    usable = len(raw) - len(raw) % block_align
    if usable != len(raw):
        log.warning("%s: dropping %d trailing bytes of a partial frame", path, len(raw) - usable)
    raw = raw[:usable]

    if format_tag == WAVE_FORMAT_PCM:
        x = _decode_pcm(raw, bits, n_channels, block_align)
    else:
        x = np.frombuffer(raw, dtype="<f4" if bits == 32 else "<f8").astype(np.float64)
        if not np.all(np.isfinite(x)):
            raise WavFormatError("data", "non-finite float samples")
        if np.any(np.abs(x) > 1.0):
            log.warning("%s: float samples outside [-1, 1] clipped", path)
            x = np.clip(x, -1.0, 1.0)

    x = x.reshape(-1, n_channels)
    mono = x[:, 0] if n_channels == 1 else x.mean(axis=1)
    return AudioBuffer(np.ascontiguousarray(mono), rate, str(path))


def write_wav(path, buf: AudioBuffer, bits: int = 16, float_format: bool = False) -> None:
    """Write a mono buffer as PCM (16/24/32-bit) or IEEE float (32/64-bit)."""
    x = np.asarray(buf.samples, dtype=np.float64)
    if float_format:
        if bits not in (32, 64):
            raise ValueError("float WAV needs 32 or 64 bits")
        payload = x.astype("<f4" if bits == 32 else "<f8").tobytes()
        tag = WAVE_FORMAT_IEEE_FLOAT
    else:
        if bits not in (16, 24, 32):
            raise ValueError("PCM WAV needs 16, 24 or 32 bits")
        full = float(1 << (bits - 1))
        q = np.clip(np.round(x * full), -full, full - 1).astype(np.int64)
        if bits == 16:
            payload = q.astype("<i2").tobytes()
        elif bits == 32:
            payload = q.astype("<i4").tobytes()
        else:
            u = (q & 0xFFFFFF).astype(np.uint32)
            payload = np.stack([u & 0xFF, (u >> 8) & 0xFF, (u >> 16) & 0xFF], axis=1).astype(np.uint8).tobytes()
        tag = WAVE_FORMAT_PCM
    block_align = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, buf.sample_rate, buf.sample_rate * block_align, block_align, bits)
    pad = b"\x00" if len(payload) & 1 else b""
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload + pad
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def _design_filter(up: int, down: int) -> np.ndarray:
    # Lowpass at the narrower of the two Nyquist bands, evaluated at rate*up.
    n_phase = max(up, down)
    n_taps = TAPS_PER_PHASE * n_phase + 1
    # resample_poly applies the ``up`` gain itself
    return signal.firwin(n_taps, 1.0 / n_phase, window=("kaiser", KAISER_BETA))


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Resample with a Kaiser-windowed sinc polyphase filter.

    Returns ``buf`` itself when the rates already match.
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buf.sample_rate:
        return buf
    g = gcd(target_rate, buf.sample_rate)
    up, down = target_rate // g, buf.sample_rate // g
    h = _design_filter(up, down)
    y = signal.resample_poly(buf.samples, up, down, window=h)
    # keep the invariant that samples stay within [-1, 1] after ringing
    np.clip(y, -1.0, 1.0, out=y)
    return AudioBuffer(y, target_rate, buf.source_path)
