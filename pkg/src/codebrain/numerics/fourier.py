"""Discrete Fourier transforms and FFT-based convolution.

The transform core is self-contained: power-of-two lengths go through an
iterative radix-2 decimation-in-time FFT vectorized over leading axes, and
other lengths fall back to a cached transform-matrix product. Everything
accumulates in complex128 regardless of the storage dtype handed in.

Conventions: forward transform X[k] = sum_n x[n] * exp(-2j*pi*k*n/N) with no
scaling; the inverse divides by N. `fft_convolve` is *causal linear*
convolution of two equal-length sequences, truncated back to the input
length, i.e. y[t] = sum_{s<=t} u[s] * k[t-s].
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "ComplexSpectrum",
    "dft",
    "idft",
    "dft_many",
    "idft_many",
    "fft_convolve_arrays",
    "next_pow2",
]


def next_pow2(n: int) -> int:
    """Smallest power of two >= n (n must be positive)."""
    if n < 1:
        raise ValueError(f"next_pow2 needs a positive length, got {n}")
    p = 1
    while p < n:
        p <<= 1
    return p


@lru_cache(maxsize=64)
def _bit_reversal(n: int) -> np.ndarray:
    # permutation that orders indices by reversed bit patterns; n a power of two
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _fft_pow2(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Radix-2 FFT along the last axis. Last-axis length must be a power of two."""
    n = x.shape[-1]
    if n & (n - 1):
        raise ValueError(f"radix-2 transform needs a power-of-two length, got {n}")
    out = np.ascontiguousarray(x, dtype=np.complex128)[..., _bit_reversal(n)]
    if n == 1:
        return out
    sign = 1.0 if inverse else -1.0
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / m)
        v = out.reshape(out.shape[:-1] + (n // m, m))
        odd = v[..., half:] * tw
        even = v[..., :half]
        # write the odd half first: it does not alias the `even` view
        v[..., half:] = even - odd
        v[..., :half] = even + odd
        m *= 2
    if inverse:
        out /= n
    return out


@lru_cache(maxsize=32)
def _dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def dft_many(x: np.ndarray) -> np.ndarray:
    """Forward transform along the last axis of a real/complex array.

    Returns complex128. Arbitrary lengths are supported; power-of-two
    lengths use the fast path.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if n == 0:
        raise ValueError("cannot transform an empty signal")
    if n & (n - 1) == 0:
        return _fft_pow2(x.astype(np.complex128, copy=False))
    # exact non-power-of-two path: one cached matrix product
    return x.astype(np.complex128, copy=False) @ _dft_matrix(n).T


def idft_many(spec: np.ndarray) -> np.ndarray:
    """Inverse transform along the last axis. Returns complex128."""
    spec = np.asarray(spec, dtype=np.complex128)
    n = spec.shape[-1]
    if n == 0:
        raise ValueError("cannot invert an empty spectrum")
    if n & (n - 1) == 0:
        return _fft_pow2(spec, inverse=True)
    return (spec @ np.conj(_dft_matrix(n)).T) / n


@dataclass(frozen=True)
class ComplexSpectrum:
    """Real/imaginary parts of a transform, stored as float32 pairs."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self) -> None:
        if self.re.shape != self.im.shape:
            raise ValueError("re/im shape mismatch")

    @property
    def length(self) -> int:
        return self.re.shape[-1]

    def amplitude(self) -> np.ndarray:
        re = self.re.astype(np.float64)
        im = self.im.astype(np.float64)
        return np.sqrt(re * re + im * im)

    def phase(self) -> np.ndarray:
        return np.arctan2(self.im.astype(np.float64), self.re.astype(np.float64))

    def as_complex(self) -> np.ndarray:
        return self.re.astype(np.float64) + 1j * self.im.astype(np.float64)


def dft(signal: np.ndarray) -> ComplexSpectrum:
    """Transform a real signal (1-D, any positive length) to a ComplexSpectrum."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"dft expects a 1-D signal, got shape {x.shape}")
    spec = dft_many(x)
    return ComplexSpectrum(
        re=spec.real.astype(np.float32), im=spec.imag.astype(np.float32)
    )


def idft(spectrum: ComplexSpectrum) -> np.ndarray:
    """Invert a real-signal spectrum back to float32 samples.

    The input is assumed to come from a real signal (conjugate-symmetric),
    so only the real part of the inverse is returned.
    """
    rec = idft_many(spectrum.as_complex())
    return rec.real.astype(np.float32)


def fft_convolve_arrays(u: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Causal linear convolution along the last axis via spectral product.

    `u` and `k` must share their last-axis length N; leading axes broadcast.
    Both are zero-padded to the next power of two >= 2N-1 so the circular
    product realizes linear convolution, then the result is truncated back
    to N. Output dtype follows numpy promotion of the inputs.
    """
    u = np.asarray(u)
    k = np.asarray(k)
    n = u.shape[-1]
    if n == 0:
        raise ValueError("cannot convolve empty sequences")
    if k.shape[-1] != n:
        raise ValueError(
            f"sequence lengths differ: {n} vs {k.shape[-1]}; "
            "pad or truncate the kernel to the signal length first"
        )
    out_dtype = np.result_type(u.dtype, k.dtype)
    m = next_pow2(2 * n - 1) if n > 1 else 1
    pad_u = np.zeros(u.shape[:-1] + (m,), dtype=np.complex128)
    pad_k = np.zeros(k.shape[:-1] + (m,), dtype=np.complex128)
    pad_u[..., :n] = u
    pad_k[..., :n] = k
    prod = _fft_pow2(pad_u) * _fft_pow2(pad_k)
    full = _fft_pow2(prod, inverse=True).real
    return full[..., :n].astype(out_dtype)
