"""Real-valued ratio masks on DCT spectrograms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .spectral import FrameConfig, RealSpectrogram, Waveform, analyze, synthesize

__all__ = ["MaskSpectrogram", "oracle_rirm", "oracle_enhance", "scaled_tanh", "apply_mask", "DEFAULT_K", "DEFAULT_C"]

DEFAULT_K = 2.0
DEFAULT_C = 0.5


@dataclass(frozen=True, eq=False)
class MaskSpectrogram:
    values: np.ndarray
    bound: float = DEFAULT_K
    steepness: float = DEFAULT_C

    def __post_init__(self):
        if np.any(np.abs(self.values) > self.bound):
            raise InvalidArgumentError(f"mask values exceed the bound {self.bound}")

    @property
    def shape(self):
        return self.values.shape


def _same_shape(a, b):
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")


def oracle_rirm(
    S_clean: RealSpectrogram,
    Y_noisy: RealSpectrogram,
    eps: float = 1e-8,
    K: float = DEFAULT_K,
) -> MaskSpectrogram:
    """Clean-to-noisy coefficient ratio, regularised as ``S Y / (Y^2 + eps)``
    and clipped to ``[-K, K]``."""
    _same_shape(S_clean, Y_noisy)
    if eps <= 0:
        raise InvalidArgumentError("eps must be positive")
    S, Y = S_clean.values, Y_noisy.values
    M = np.clip(S * Y / (Y * Y + eps), -K, K)
    return MaskSpectrogram(M, bound=K)


def scaled_tanh(z, K: float = DEFAULT_K, C: float = DEFAULT_C):
    """``K (1 - exp(-C z)) / (1 + exp(-C z))``, evaluated as ``K tanh(C z / 2)``.

    The tanh form saturates to +-K instead of overflowing. Accepts numpy
    arrays or torch tensors.
    """
    if K <= 0 or C <= 0:
        raise InvalidArgumentError("K and C must be positive")
    if isinstance(z, np.ndarray) or np.isscalar(z):
        return K * np.tanh(0.5 * C * np.asarray(z, dtype=np.float64))
    return K * (0.5 * C * z).tanh()


def apply_mask(Y: RealSpectrogram, M: MaskSpectrogram) -> RealSpectrogram:
    _same_shape(Y, M)
    return Y.with_values(M.values * Y.values)


def oracle_enhance(
    clean: Waveform,
    noisy: Waveform,
    cfg: FrameConfig = FrameConfig(),
    eps: float = 1e-8,
    K: float = DEFAULT_K,
) -> Waveform:
    """Upper-bound enhancement: mask the noisy spectrogram with the oracle
    ratio mask computed from ``clean`` and resynthesise."""
    if clean.samples.shape != noisy.samples.shape or clean.sample_rate != noisy.sample_rate:
        raise InvalidArgumentError("clean and noisy signals must have equal length and rate")
    S, Y = analyze(clean, cfg), analyze(noisy, cfg)
    return synthesize(apply_mask(Y, oracle_rirm(S, Y, eps, K)))
