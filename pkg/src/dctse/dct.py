"""Orthonormal DCT-II / DCT-III and the symmetry identities around them.

All transforms act along axis 0, so a ``(N, T)`` array is treated as ``T``
independent frames stored column-wise (the spectrogram layout).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "DctPlan",
    "build_dct_plan",
    "dct_forward",
    "dct_inverse",
    "even_symmetric_extend",
    "verify_dft_dct_relation",
    "conjugate_symmetric_part",
    "beta",
]

# Above this size the FFT route is used by default.
MATRIX_PATH_MAX = 64


def beta(N: int) -> np.ndarray:
    """Per-row scale: 1/sqrt(2) for the DC row, 1 elsewhere."""
    b = np.ones(N)
    b[0] = 1.0 / np.sqrt(2.0)
    return b


@dataclass(frozen=True, eq=False)
class DctPlan:
    """Precomputed N-point orthonormal cosine basis.

    Row ``k`` of ``basis`` is the cosine sequence ``c_k``; the matrix is
    orthogonal, so the forward transform is ``basis @ x`` and the inverse is
    ``basis.T @ X``.
    """

    size: int
    basis: np.ndarray

    def __post_init__(self):
        self.basis.setflags(write=False)


def build_dct_plan(N: int) -> DctPlan:
    if not isinstance(N, (int, np.integer)) or N < 1:
        raise InvalidArgumentError(f"DCT size must be a positive integer, got {N!r}")
    return _cached_plan(int(N))


@lru_cache(maxsize=16)
def _cached_plan(N: int) -> DctPlan:
    n = np.arange(N)
    k = n[:, None]
    basis = np.sqrt(2.0 / N) * beta(N)[:, None] * np.cos(np.pi * k * (2 * n + 1) / (2 * N))
    return DctPlan(size=N, basis=basis)


def _check_length(plan: DctPlan, x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[0] != plan.size:
        raise InvalidArgumentError(
            f"{what} length {x.shape[0] if x.ndim else 0} does not match plan size {plan.size}"
        )
    return x


def _dct_fft(x: np.ndarray) -> np.ndarray:
    # DCT-II through the 2N-point DFT of the mirror extension:
    # X_c(k) = beta(k) / sqrt(2N) * Re(exp(-j*pi*k/2N) * X_es(k))
    N = x.shape[0]
    spectrum = np.fft.rfft(even_symmetric_extend(x), axis=0)[:N]
    k = np.arange(N)
    twiddle = np.exp(-1j * np.pi * k / (2 * N)) * beta(N) / np.sqrt(2 * N)
    shape = (N,) + (1,) * (x.ndim - 1)
    # copy out of the complex buffer: a strided real view defeats BLAS downstream
    return np.ascontiguousarray(np.real(spectrum * twiddle.reshape(shape)))


def dct_forward(plan: DctPlan, x, method: str = "auto") -> np.ndarray:
    """Forward DCT-II, ``X_c = W x``.

    ``method`` selects ``"matrix"``, ``"fft"`` or ``"auto"`` (matrix product up
    to N=64, FFT route beyond). Both agree to ~1e-13.
    """
    x = _check_length(plan, x, "input")
    if method == "auto":
        method = "matrix" if plan.size <= MATRIX_PATH_MAX else "fft"
    if method == "matrix":
        return plan.basis @ x
    if method == "fft":
        return _dct_fft(x)
    raise InvalidArgumentError(f"unknown DCT method {method!r}")


def dct_inverse(plan: DctPlan, X) -> np.ndarray:
    """Inverse transform (DCT-III), ``x = W^T X``."""
    X = np.ascontiguousarray(_check_length(plan, X, "coefficient"))
    return plan.basis.T @ X


def even_symmetric_extend(x) -> np.ndarray:
    """Mirror ``x`` into a 2N-point sequence: ``[x0 .. x_{N-1}, x_{N-1} .. x0]``.

    This is ``x((n))_2N + x((-n-1))_2N`` with ``x`` zero-padded to 2N points.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[0] == 0:
        raise InvalidArgumentError("cannot extend an empty sequence")
    return np.concatenate([x, x[::-1]], axis=0)


@lru_cache(maxsize=8)
def _dft_rows(M: int, rows: int) -> np.ndarray:
    # Direct DFT matrix (first `rows` bins); the reference is independent of np.fft.
    k = np.arange(rows)[:, None]
    n = np.arange(M)[None, :]
    return np.exp(-2j * np.pi * ((k * n) % M) / M)


def verify_dft_dct_relation(x, tol: float = 0.0) -> float:
    """Max deviation between the 2N-point DFT of the mirror extension and the
    phase-rotated, rescaled DCT coefficients over bins ``0 .. N-1``.

    With the DFT kernel ``exp(-2j*pi*k*n/2N)`` the identity reads
    ``X_es(k) = sqrt(2N) / beta(k) * exp(+j*pi*k/2N) * X_c(k)``.

    The DCT side uses the explicit basis matrix and the DFT side a direct
    summation, so neither touches the FFT route. Raises ``AssertionError`` when
    ``tol > 0`` and the error exceeds it.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidArgumentError("expected a nonempty 1-D vector")
    N = x.size
    plan = build_dct_plan(N)
    X_c = dct_forward(plan, x, method="matrix")
    X_es = _dft_rows(2 * N, N) @ even_symmetric_extend(x)
    k = np.arange(N)
    predicted = np.sqrt(2 * N) / beta(N) * np.exp(1j * np.pi * k / (2 * N)) * X_c
    err = float(np.max(np.abs(X_es - predicted)))
    if tol > 0 and err > tol:
        raise AssertionError(f"DFT/DCT relation error {err:.3e} exceeds {tol:.3e}")
    return err


def conjugate_symmetric_part(x) -> np.ndarray:
    """``x_e(n) = (x(n) + x((-n) mod N)) / 2`` for a real sequence.

    Its DFT equals the real part of the DFT of ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[0] == 0:
        raise InvalidArgumentError("cannot symmetrize an empty sequence")
    mirrored = np.roll(x[::-1], 1, axis=0)
    return 0.5 * (x + mirrored)
