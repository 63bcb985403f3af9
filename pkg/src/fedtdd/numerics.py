"""Numerical kernels: radix-2 real FFT, Gaussian moments, PSD square root."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class ContractError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


def next_pow2(n: int) -> int:
    if n < 1:
        raise ValueError("length must be >= 1")
    return 1 << (n - 1).bit_length()


@lru_cache(maxsize=None)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    rev.setflags(write=False)
    return rev


@lru_cache(maxsize=None)
def _twiddles(size: int) -> np.ndarray:
    tw = np.exp(-2j * np.pi * np.arange(size // 2) / size)
    tw.setflags(write=False)
    return tw


def fft_pow2(z: np.ndarray) -> np.ndarray:
    """Iterative decimation-in-time FFT along the last axis (length 2**k)."""
    z = np.asarray(z, dtype=complex)
    n = z.shape[-1]
    if n & (n - 1):
        raise ValueError(f"length {n} is not a power of two")
    lead = z.shape[:-1]
    a = z[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        a = a.reshape(*lead, n // size, size)
        even = a[..., :half]
        odd = a[..., half:] * _twiddles(size)
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return a


def rfft(x: np.ndarray) -> np.ndarray:
    """Half spectrum of real input along the last axis.

    The input is zero-padded to the next power of two ``n``; the result has
    ``n//2 + 1`` coefficients matching ``sum_j x_j exp(-2i pi jk/n)``.
    """
    x = np.asarray(x, dtype=float)
    n = next_pow2(x.shape[-1])
    pad = [(0, 0)] * (x.ndim - 1) + [(0, n - x.shape[-1])]
    full = fft_pow2(np.pad(x, pad))
    return full[..., : n // 2 + 1]


def rfft_adjoint(spec: np.ndarray, length: int) -> np.ndarray:
    """Adjoint of :func:`rfft` under the real inner product ``Re<Y, rfft(x)>``.

    Returns ``Re(F^H Y)`` truncated to the original (unpadded) ``length``,
    which is what reverse-mode needs to push a spectrum gradient back onto
    the time samples.
    """
    n = next_pow2(length)
    full = np.zeros(spec.shape[:-1] + (n,), dtype=complex)
    full[..., : n // 2 + 1] = spec
    back = np.conj(fft_pow2(np.conj(full)))
    return back.real[..., :length]


def naive_dft(x: np.ndarray) -> np.ndarray:
    """O(n^2) DFT of a real vector on its power-of-two zero-padded length."""
    x = np.asarray(x, dtype=float)
    n = next_pow2(len(x))
    xp = np.concatenate([x, np.zeros(n - len(x))])
    out = []
    for k in range(n // 2 + 1):
        acc = 0j
        for j in range(n):
            acc += xp[j] * complex(np.cos(2 * np.pi * j * k / n), -np.sin(2 * np.pi * j * k / n))
        out.append(acc)
    return np.array(out)


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.mean)


def gaussian_moments(samples: np.ndarray) -> GaussianMoments:
    """Sample mean and unbiased covariance of rows of ``samples``."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 samples, got {x.shape[0]}")
    mean = x.mean(axis=0)
    d = x - mean
    cov = d.T @ d / (x.shape[0] - 1)
    return GaussianMoments(mean, 0.5 * (cov + cov.T))


def spd_sqrt(m: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Symmetric square root with negative eigenvalues clipped to zero."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractError("matrix must be square")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if np.abs(m - m.T).max(initial=0.0) > tol * scale:
        raise ContractError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    root = np.sqrt(np.clip(vals, 0.0, None))
    return (vecs * root) @ vecs.T


def frechet_distance(a: GaussianMoments, b: GaussianMoments) -> float:
    if a.dim != b.dim:
        raise ContractError(f"dimension mismatch: {a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    ra = spd_sqrt(a.cov)
    inner = ra @ b.cov @ ra
    cross = spd_sqrt(0.5 * (inner + inner.T))
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
    return max(value, 0.0)
