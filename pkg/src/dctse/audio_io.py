"""PCM16 WAV input/output, resampling and peak normalisation."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import firwin, kaiserord, resample_poly

from .errors import (
    EmptyDataError,
    InvalidArgumentError,
    MalformedHeaderError,
    UnsupportedCodecError,
)
from .spectral import Waveform

__all__ = ["WavDescriptor", "read_wav", "write_wav", "describe_wav", "resample", "normalize_amplitude"]

PCM = 1
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class WavDescriptor:
    sample_rate: int
    channels: int
    bits_per_sample: int
    frames: int


def _parse(data: bytes):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeaderError("not a RIFF/WAVE file")
    pos, fmt, payload = 12, None, None
    while pos + 8 <= len(data):
        cid, size = struct.unpack("<4sI", data[pos : pos + 8])
        body = data[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise MalformedHeaderError("fmt chunk too short")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE and len(body) >= 26:
                fmt = (struct.unpack("<H", body[24:26])[0],) + fmt[1:]
        elif cid == b"data":
            if len(body) < size:
                raise MalformedHeaderError(f"data chunk truncated: header says {size} bytes, file has {len(body)}")
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise MalformedHeaderError("missing fmt chunk")
    if payload is None:
        raise MalformedHeaderError("missing data chunk")
    tag, channels, rate, _, block_align, bits = fmt
    if tag != PCM or bits != 16:
        raise UnsupportedCodecError(f"only 16-bit PCM is supported (format tag {tag}, {bits} bits)")
    if channels < 1 or block_align != 2 * channels:
        raise MalformedHeaderError(f"inconsistent fmt chunk: {channels} channels, block align {block_align}")
    if len(payload) == 0:
        raise EmptyDataError("data chunk is empty")
    return WavDescriptor(rate, channels, bits, len(payload) // block_align), payload


def describe_wav(path) -> WavDescriptor:
    return _parse(Path(path).read_bytes())[0]


def read_wav(path) -> Waveform:
    """Read a PCM16 WAV as floats in [-1, 1); stereo is averaged to mono."""
    desc, payload = _parse(Path(path).read_bytes())
    n = desc.frames * desc.channels
    pcm = np.frombuffer(payload[: 2 * n], dtype="<i2").reshape(desc.frames, desc.channels)
    samples = pcm.astype(np.float64) / 32768.0
    return Waveform(samples.mean(axis=1), desc.sample_rate)


def write_wav(path, x: Waveform) -> None:
    """Write mono PCM16; samples are clipped to the representable range."""
    pcm = np.clip(np.round(x.samples * 32768.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(data), b"WAVE",
        b"fmt ", 16, PCM, 1, x.sample_rate, 2 * x.sample_rate, 2, 16,
        b"data", len(data),
    )
    Path(path).write_bytes(header + data)


def resample(x: Waveform, target: int) -> Waveform:
    """Polyphase windowed-sinc resampling to ``target`` Hz."""
    if target <= 0 or x.sample_rate <= 0:
        raise InvalidArgumentError("sample rates must be positive")
    if target == x.sample_rate:
        return x
    ratio = Fraction(int(target), int(x.sample_rate))
    up, down = ratio.numerator, ratio.denominator
    y = resample_poly(x.samples, up, down, window=_lowpass(up, down))
    return Waveform(y, int(target))


def _lowpass(up: int, down: int) -> np.ndarray:
    # 80 dB stop band; flat to 90% of the lower Nyquist, cut off at 95%
    M = max(up, down)
    numtaps, beta = kaiserord(80.0, 0.1 / M)
    return firwin(numtaps | 1, 0.95 / M, window=("kaiser", beta))


def normalize_amplitude(x: Waveform, peak: float = 0.5) -> Waveform:
    """Scale so that ``max |x| == peak``."""
    top = float(np.max(np.abs(x.samples)))
    if top == 0:
        raise InvalidArgumentError("cannot normalise an all-zero signal")
    if top == peak:
        return x
    # divide first so the peak sample becomes exactly +-1 before scaling
    return Waveform(x.samples / top * peak, x.sample_rate)
