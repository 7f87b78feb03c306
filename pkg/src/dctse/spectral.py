"""Short-time DCT analysis and weighted overlap-add resynthesis."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dct import build_dct_plan, dct_forward, dct_inverse
from .errors import InvalidArgumentError

__all__ = [
    "FrameConfig",
    "Waveform",
    "RealSpectrogram",
    "hamming_window",
    "frame_count",
    "wola_normalizer",
    "analyze",
    "synthesize",
]

NORMALIZER_FLOOR = 1e-8


@dataclass(frozen=True)
class FrameConfig:
    window_len: int = 1024
    hop: int = 64
    window: str = "hamming"
    sample_rate: int = 16000

    def __post_init__(self):
        if not (0 < self.hop <= self.window_len):
            raise InvalidArgumentError(
                f"need 0 < hop <= window_len, got hop={self.hop}, window_len={self.window_len}"
            )
        if self.window != "hamming":
            raise InvalidArgumentError(f"unsupported window {self.window!r}")
        if self.sample_rate <= 0:
            raise InvalidArgumentError("sample_rate must be positive")

    @property
    def pad(self) -> int:
        """Reflect padding applied to each side before framing."""
        return self.window_len - self.hop


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidArgumentError("waveform must be a nonempty 1-D signal")
        if not np.all(np.isfinite(samples)):
            raise InvalidArgumentError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True, eq=False)
class RealSpectrogram:
    """DCT coefficients, one column per frame (``F x T``).

    ``length`` is the number of signal samples the frames were cut from and
    ``pad`` the reflect padding added on each side; synthesis uses both to
    return a waveform of the original length.
    """

    values: np.ndarray
    config: FrameConfig
    length: int
    pad: int = 0

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != self.config.window_len:
            raise InvalidArgumentError(
                f"spectrogram must have {self.config.window_len} rows, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("spectrogram contains non-finite values")

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    def with_values(self, values) -> "RealSpectrogram":
        return RealSpectrogram(np.asarray(values, dtype=np.float64), self.config, self.length, self.pad)


def hamming_window(N: int) -> np.ndarray:
    """Periodic Hamming window ``0.54 - 0.46 cos(2 pi n / N)``."""
    if N < 2:
        raise InvalidArgumentError(f"window length must be >= 2, got {N}")
    n = np.arange(N)
    return 0.54 - 0.46 * np.cos(2 * np.pi * n / N)


def frame_count(padded_length: int, cfg: FrameConfig) -> int:
    if padded_length < cfg.window_len:
        return 0
    return 1 + (padded_length - cfg.window_len) // cfg.hop


def wola_normalizer(n_frames: int, cfg: FrameConfig) -> np.ndarray:
    """Sum of squared, hop-shifted synthesis windows, floored at 1e-8."""
    w2 = hamming_window(cfg.window_len) ** 2
    total = np.zeros(cfg.window_len + (n_frames - 1) * cfg.hop)
    _overlap_add(np.repeat(w2[:, None], n_frames, axis=1), cfg.hop, total)
    return np.maximum(total, NORMALIZER_FLOOR)


def _overlap_add(frames: np.ndarray, hop: int, out: np.ndarray) -> np.ndarray:
    # frames: (window_len, T); adds frame t at offset t * hop into `out`
    W, T = frames.shape
    if W % hop == 0:
        r = W // hop
        blocks = out[: (T - 1 + r) * hop].reshape(-1, hop)
        chunks = frames.T.reshape(T, r, hop)
        for i in range(r):
            blocks[i : i + T] += chunks[:, i, :]
    else:
        for t in range(T):
            out[t * hop : t * hop + W] += frames[:, t]
    return out


def analyze(x: Waveform, cfg: FrameConfig = FrameConfig(), pad: bool = True) -> RealSpectrogram:
    """Window each frame and take its DCT.

    With ``pad`` (the default) the signal is reflect-padded by
    ``window_len - hop`` samples on both sides, so every original sample sees
    the full overlap of frames.
    """
    if x.sample_rate != cfg.sample_rate:
        raise InvalidArgumentError(
            f"sample rate {x.sample_rate} does not match frame config {cfg.sample_rate}"
        )
    signal = x.samples
    p = cfg.pad if pad else 0
    if p:
        signal = np.pad(signal, p, mode="reflect")
    T = frame_count(signal.size, cfg)
    if T == 0:
        raise InvalidArgumentError(
            f"signal of {x.samples.size} samples is shorter than one {cfg.window_len}-sample frame"
        )
    frames = np.lib.stride_tricks.sliding_window_view(signal, cfg.window_len)[:: cfg.hop][:T].T
    frames = frames * hamming_window(cfg.window_len)[:, None]
    values = dct_forward(build_dct_plan(cfg.window_len), frames)
    return RealSpectrogram(values, cfg, length=x.samples.size, pad=p)


def synthesize(S: RealSpectrogram) -> Waveform:
    """Inverse DCT per column, synthesis window, overlap-add, divide by the
    squared-window sum; trimmed back to the analysed signal length."""
    cfg = S.config
    frames = dct_inverse(build_dct_plan(cfg.window_len), S.values)
    frames *= hamming_window(cfg.window_len)[:, None]
    out = np.zeros(cfg.window_len + (S.n_frames - 1) * cfg.hop)
    _overlap_add(frames, cfg.hop, out)
    out /= wola_normalizer(S.n_frames, cfg)
    total = S.length + 2 * S.pad
    if out.size < total:
        out = np.concatenate([out, np.zeros(total - out.size)])
    return Waveform(out[S.pad : S.pad + S.length], cfg.sample_rate)
