"""Arithmetic in GF(2^w) for 1 <= w <= 32, scalar and numpy-vectorized.

Elements are integers whose bits are polynomial coefficients over GF(2).
Each width uses the lowest-weight irreducible modulus (first trinomial
x^w + x^a + 1 with the smallest a, otherwise the smallest pentanomial).
"""

from __future__ import annotations

import numpy as np

MAX_WIDTH = 32

# Modulus per width, including the leading x^w term.
IRREDUCIBLE: dict[int, int] = {
    1: 0x3, 2: 0x7, 3: 0xB, 4: 0x13, 5: 0x25, 6: 0x43, 7: 0x83, 8: 0x11B,
    9: 0x203, 10: 0x409, 11: 0x805, 12: 0x1009, 13: 0x201B, 14: 0x4021,
    15: 0x8003, 16: 0x1002B, 17: 0x20009, 18: 0x40009, 19: 0x80027,
    20: 0x100009, 21: 0x200005, 22: 0x400003, 23: 0x800021, 24: 0x100001B,
    25: 0x2000009, 26: 0x400001B, 27: 0x8000027, 28: 0x10000003,
    29: 0x20000005, 30: 0x40000003, 31: 0x80000009, 32: 0x10000008D,
}


def _check_width(w: int) -> None:
    if not 1 <= w <= MAX_WIDTH:
        raise ValueError(f"field width must be in [1, {MAX_WIDTH}], got {w}")


def gf_mul(a: int, b: int, w: int) -> int:
    """Product of two field elements (shift-and-add with reduction)."""
    _check_width(w)
    mod = IRREDUCIBLE[w]
    top = 1 << w
    acc = 0
    while b:
        if b & 1:
            acc ^= a
        b >>= 1
        a <<= 1
        if a & top:
            a ^= mod
    return acc


def gf_pow(a: int, e: int, w: int) -> int:
    result = 1
    while e:
        if e & 1:
            result = gf_mul(result, a, w)
        a = gf_mul(a, a, w)
        e >>= 1
    return result


def gf_mul_vec(a: np.ndarray, b: np.ndarray, w: int) -> np.ndarray:
    """Elementwise product of broadcastable uint64 arrays."""
    _check_width(w)
    mod = np.uint64(IRREDUCIBLE[w])
    top = np.uint64(1 << w)
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.uint64), np.asarray(b, dtype=np.uint64))
    a = a.copy()
    acc = np.zeros(a.shape, dtype=np.uint64)
    one = np.uint64(1)
    for i in range(w):
        bit = (b >> np.uint64(i)) & one
        acc ^= a * bit
        a <<= one
        a ^= mod * ((a & top) >> np.uint64(w))
    return acc


def poly_eval_vec(coeffs: np.ndarray, x: np.ndarray, w: int) -> np.ndarray:
    """Evaluate sum_i coeffs[..., i] * x^i by Horner's rule.

    ``coeffs`` has shape (S, k); ``x`` has shape (N,). Result has shape (S, N).
    """
    coeffs = np.asarray(coeffs, dtype=np.uint64)
    x = np.asarray(x, dtype=np.uint64)
    k = coeffs.shape[-1]
    acc = np.broadcast_to(coeffs[:, k - 1 : k], (coeffs.shape[0], x.shape[0])).copy()
    for i in range(k - 2, -1, -1):
        acc = gf_mul_vec(acc, x[None, :], w) ^ coeffs[:, i : i + 1]
    return acc


def mul_tables(c: np.ndarray, w: int) -> np.ndarray:
    """Byte tables for multiplying by each constant in ``c``.

    Returns T with shape (len(c), ceil(w/8), 256) where
    T[s, j, y] = c[s] * (y << 8j), so c[s] * x is the XOR over j of
    T[s, j, byte_j(x)].
    """
    c = np.asarray(c, dtype=np.uint64)
    nbytes = (w + 7) // 8
    bytes_ = np.arange(256, dtype=np.uint64)
    shifted = np.stack([bytes_ << np.uint64(8 * j) for j in range(nbytes)])
    shifted &= np.uint64((1 << w) - 1) if w < 64 else np.uint64(-1)
    return gf_mul_vec(c[:, None, None], shifted[None, :, :], w)


def table_mul(tables: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Products c[s] * x[i] for all s, i, using tables from ``mul_tables``."""
    x = np.asarray(x, dtype=np.uint64)
    out = np.zeros((tables.shape[0], x.shape[0]), dtype=np.uint64)
    for j in range(tables.shape[1]):
        byte = ((x >> np.uint64(8 * j)) & np.uint64(0xFF)).astype(np.intp)
        out ^= tables[:, j, :][:, byte]
    return out


def poly_eval_tables(coeffs: np.ndarray, x: np.ndarray, w: int) -> np.ndarray:
    """Same result as ``poly_eval_vec``, via powers of x and byte tables.

    Faster when many seeds share the same inputs.
    """
    coeffs = np.asarray(coeffs, dtype=np.uint64)
    x = np.asarray(x, dtype=np.uint64)
    k = coeffs.shape[-1]
    out = np.broadcast_to(coeffs[:, 0:1], (coeffs.shape[0], x.shape[0])).copy()
    power = x.copy()
    for i in range(1, k):
        out ^= table_mul(mul_tables(coeffs[:, i], w), power)
        if i + 1 < k:
            power = gf_mul_vec(power, x, w)
    return out
