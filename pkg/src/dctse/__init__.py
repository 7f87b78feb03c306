"""Speech enhancement on real DCT spectrograms with a masking U-net."""
from .dct import build_dct_plan, dct_forward, dct_inverse
from .errors import (
    AbortStepError,
    DctseError,
    EmptyDataError,
    InvalidArgumentError,
    InvalidStateError,
    MalformedHeaderError,
    UnsupportedCodecError,
    WavError,
)
from .spectral import FrameConfig, RealSpectrogram, Waveform, analyze, synthesize

__version__ = "0.1.0"

__all__ = [
    "build_dct_plan",
    "dct_forward",
    "dct_inverse",
    "FrameConfig",
    "RealSpectrogram",
    "Waveform",
    "analyze",
    "synthesize",
    "DctseError",
    "InvalidArgumentError",
    "InvalidStateError",
    "AbortStepError",
    "WavError",
    "MalformedHeaderError",
    "UnsupportedCodecError",
    "EmptyDataError",
    "__version__",
]
