"""Discrete Fourier transforms along the last axis.

Power-of-two lengths use an iterative radix-2 decimation-in-time kernel that
is vectorized over all leading axes. Other lengths go through Bluestein's
chirp-z reformulation, which turns the DFT into a power-of-two circular
convolution.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@lru_cache(maxsize=64)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def _twiddles(n: int) -> tuple:
    out = []
    h = 1
    while h < n:
        out.append(np.exp(-1j * np.pi * np.arange(h) / h))
        h *= 2
    return tuple(out)


def _radix2(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    lead = x.shape[:-1]
    y = x[..., _bitrev(n)]
    h = 1
    for w in _twiddles(n):
        y = y.reshape(*lead, n // (2 * h), 2, h)
        even = y[..., 0, :]
        odd = y[..., 1, :] * w
        y = np.concatenate([even + odd, even - odd], axis=-1)
        h *= 2
    return y.reshape(*lead, n)


@lru_cache(maxsize=64)
def _chirp(n: int) -> tuple:
    k = np.arange(n)
    # reduce k^2 mod 2n before scaling to keep the phase exact for large n
    w = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    m = 1 << (2 * n - 1).bit_length()
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(w)
    b[m - n + 1:] = np.conj(w[1:])[::-1]
    return w, m, _radix2(b)


def _bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    w, m, fb = _chirp(n)
    a = np.zeros(x.shape[:-1] + (m,), dtype=complex)
    a[..., :n] = x * w
    conv = _inverse_pow2(_radix2(a) * fb)
    return conv[..., :n] * w


def _inverse_pow2(x: np.ndarray) -> np.ndarray:
    return np.conj(_radix2(np.conj(x))) / x.shape[-1]


def _check(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 0 or x.shape[-1] < 2:
        raise ValueError(f"transform length must be >= 2, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in FFT input")
    return x.astype(complex, copy=False)


def fft(x) -> np.ndarray:
    """Forward DFT, X_k = sum_j x_j exp(-2 pi i jk/N), over the last axis."""
    x = _check(x)
    if _is_pow2(x.shape[-1]):
        return _radix2(x)
    return _bluestein(x)


def ifft(x) -> np.ndarray:
    x = _check(x)
    return np.conj(fft(np.conj(x))) / x.shape[-1]


def rfft(x, modes: int | None = None) -> np.ndarray:
    """Nonnegative-frequency half of the DFT of a real signal.

    With ``modes`` the output is truncated to the lowest ``modes`` frequencies.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1] if x.ndim else 0
    full = n // 2 + 1
    modes = full if modes is None else modes
    if modes > full:
        raise ValueError(f"{modes} modes requested but length {n} supports at most {full}")
    return fft(x)[..., :modes]


def hermitian_weights(modes: int, n: int) -> np.ndarray:
    """Multiplicity of each retained mode in the real inverse transform."""
    c = np.full(modes, 2.0)
    c[0] = 1.0
    if n % 2 == 0 and modes > n // 2:
        c[n // 2] = 1.0
    return c


def irfft(spec, n: int) -> np.ndarray:
    """Real inverse of a (possibly truncated) half spectrum onto ``n`` points.

    Missing modes are treated as zero; imaginary parts of the DC and Nyquist
    bins are ignored, as for any real-valued inverse.
    """
    spec = np.asarray(spec, dtype=complex)
    modes = spec.shape[-1]
    if modes > n // 2 + 1:
        raise ValueError(f"{modes} modes do not fit a grid of {n} points")
    padded = np.zeros(spec.shape[:-1] + (n,), dtype=complex)
    padded[..., :modes] = spec * hermitian_weights(modes, n)
    return ifft(padded).real


# Public names used by the rest of the package.
fft_forward = fft
fft_inverse = ifft
