"""Dense real/complex array core: elementwise algebra, unitary power-of-two FFT,
pooling/upsampling, padding, and the ".cvt" binary tensor format.

Complex tensors are numpy arrays of dtype complex64 (training) or complex128
(verification mode); numpy's complex layout is exactly the row-major interleaved
(re, im) pair storage the file format uses. Real tensors are float32/float64.
All functions are pure and never mutate their inputs.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DimensionError, FormatError, UnsupportedSizeError

CVT_MAGIC = b"CVT1"


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _check_same_shape(a, b, op):
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"{op}: shape mismatch {np.shape(a)} vs {np.shape(b)}")


# ---------------------------------------------------------------------------
# elementwise complex algebra


def c_add(a, b):
    """Elementwise complex sum; b may be a scalar."""
    if np.ndim(b) != 0:
        _check_same_shape(a, b, "c_add")
    return np.add(a, b)


def c_sub(a, b):
    if np.ndim(b) != 0:
        _check_same_shape(a, b, "c_sub")
    return np.subtract(a, b)


def c_mul(a, b):
    """Elementwise complex product (a_R b_R - a_I b_I) + i(a_R b_I + a_I b_R)."""
    if np.ndim(b) != 0:
        _check_same_shape(a, b, "c_mul")
    return np.multiply(a, b)


def c_scale(a, s):
    """Scale by a real or complex scalar."""
    return np.multiply(a, s)


def magnitude(a) -> np.ndarray:
    """|a| = sqrt(a_R^2 + a_I^2) as a real tensor."""
    return np.abs(a).astype(_real_dtype_of(a), copy=False)


def phase(a) -> np.ndarray:
    """Angle of a in (-pi, pi]; phase(0) is 0 by convention."""
    p = np.angle(a)
    # atan2 returns -pi for (re<0, im=-0.0); fold onto the (-pi, pi] contract
    return np.where(p == -np.pi, np.pi, p).astype(_real_dtype_of(a), copy=False)


def conj(a) -> np.ndarray:
    return np.conjugate(a)


def _real_dtype_of(a):
    dt = np.asarray(a).dtype
    if dt == np.complex64 or dt == np.float32:
        return np.float32
    return np.float64


def _complex_dtype_of(a):
    dt = np.asarray(a).dtype
    if dt == np.complex64 or dt == np.float32:
        return np.complex64
    return np.complex128


# ---------------------------------------------------------------------------
# radix-2 unitary FFT

_bitrev_cache: dict[int, np.ndarray] = {}
_twiddle_cache: dict[tuple, np.ndarray] = {}


def _bitrev(n: int) -> np.ndarray:
    perm = _bitrev_cache.get(n)
    if perm is None:
        bits = n.bit_length() - 1
        perm = np.zeros(n, dtype=np.intp)
        for i in range(n):
            r = 0
            for b in range(bits):
                r = (r << 1) | ((i >> b) & 1)
            perm[i] = r
        _bitrev_cache[n] = perm
    return perm


def _twiddles(m: int, sign: int, dtype) -> np.ndarray:
    key = (m, sign, np.dtype(dtype).str)
    tw = _twiddle_cache.get(key)
    if tw is None:
        k = np.arange(m // 2)
        tw = np.exp(sign * 2j * np.pi * k / m).astype(dtype)
        _twiddle_cache[key] = tw
    return tw


def _fft_last_axis(x: np.ndarray, sign: int) -> np.ndarray:
    """Iterative radix-2 DIT transform along the last axis, scaled by 1/sqrt(n)."""
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise UnsupportedSizeError(f"fft requires power-of-two length, got {n}")
    cdt = _complex_dtype_of(x)
    y = np.ascontiguousarray(x[..., _bitrev(n)]).astype(cdt, copy=False)
    m = 2
    while m <= n:
        half = m // 2
        tw = _twiddles(m, sign, cdt)
        z = y.reshape(y.shape[:-1] + (n // m, m))
        even = z[..., :half]
        odd = z[..., half:] * tw
        y = np.concatenate([even + odd, even - odd], axis=-1).reshape(y.shape)
        m *= 2
    return y * np.asarray(1.0 / np.sqrt(n), dtype=_real_dtype_of(y))


def fft2(a: np.ndarray) -> np.ndarray:
    """Unitary 2-D DFT over the last two axes (1/sqrt(N) scaling each way)."""
    y = _fft_last_axis(np.asarray(a), -1)
    y = _fft_last_axis(y.swapaxes(-1, -2), -1)
    return y.swapaxes(-1, -2)


def ifft2(a: np.ndarray) -> np.ndarray:
    """Inverse of fft2; exact adjoint because both directions are unitary."""
    y = _fft_last_axis(np.asarray(a), +1)
    y = _fft_last_axis(y.swapaxes(-1, -2), +1)
    return y.swapaxes(-1, -2)


# ---------------------------------------------------------------------------
# resampling as row/column matrices (shared with the autodiff primitives,
# which need the exact transpose for the backward pass)

_matrix_cache: dict[tuple, np.ndarray] = {}


def pool_matrix(n: int, factor: int) -> np.ndarray:
    """(n/factor, n) block-mean matrix, float64."""
    key = ("pool", n, factor)
    m = _matrix_cache.get(key)
    if m is None:
        m = np.zeros((n // factor, n))
        for i in range(n // factor):
            m[i, i * factor:(i + 1) * factor] = 1.0 / factor
        _matrix_cache[key] = m
    return m


def bilinear_matrix(n: int, factor: int) -> np.ndarray:
    """(n*factor, n) bilinear interpolation matrix, half-pixel centers,
    edge-clamped; rows sum to 1 so constants are preserved."""
    key = ("bilin", n, factor)
    m = _matrix_cache.get(key)
    if m is None:
        m = np.zeros((n * factor, n))
        for i in range(n * factor):
            src = (i + 0.5) / factor - 0.5
            i0 = int(np.floor(src))
            w = src - i0
            a = min(max(i0, 0), n - 1)
            b = min(max(i0 + 1, 0), n - 1)
            m[i, a] += 1.0 - w
            m[i, b] += w
        _matrix_cache[key] = m
    return m


def apply_rowcol(x: np.ndarray, mr: np.ndarray, mc: np.ndarray) -> np.ndarray:
    """y[..., a, b] = sum_ij mr[a, i] x[..., i, j] mc[b, j] over the last two axes."""
    rdt = _real_dtype_of(x)
    return np.matmul(np.matmul(mr.astype(rdt), x), mc.T.astype(rdt))


def avg_pool2(a: np.ndarray, factor: int) -> np.ndarray:
    """Block mean over factor x factor tiles, real/imag parts independently."""
    a = np.asarray(a)
    if not is_power_of_two(factor):
        raise DimensionError(f"avg_pool2: factor must be a power of two, got {factor}")
    h, w = a.shape[-2], a.shape[-1]
    if h % factor or w % factor:
        raise DimensionError(f"avg_pool2: dims {(h, w)} not divisible by {factor}")
    return apply_rowcol(a, pool_matrix(h, factor), pool_matrix(w, factor))


def upsample_bilinear(a: np.ndarray, factor: int) -> np.ndarray:
    """Bilinear upsampling by an integer factor, real/imag parts independently."""
    a = np.asarray(a)
    if factor < 1 or int(factor) != factor:
        raise DimensionError(f"upsample_bilinear: bad factor {factor}")
    h, w = a.shape[-2], a.shape[-1]
    return apply_rowcol(a, bilinear_matrix(h, factor), bilinear_matrix(w, factor))


def pad_zero(a: np.ndarray, top: int, bottom: int, left: int, right: int) -> np.ndarray:
    """Zero-pad the last two axes."""
    a = np.asarray(a)
    pads = [(0, 0)] * (a.ndim - 2) + [(top, bottom), (left, right)]
    return np.pad(a, pads)


def crop(a: np.ndarray, top: int, left: int, height: int, width: int) -> np.ndarray:
    """Crop a height x width window from the last two axes."""
    a = np.asarray(a)
    if top < 0 or left < 0 or top + height > a.shape[-2] or left + width > a.shape[-1]:
        raise DimensionError(
            f"crop: window {(top, left, height, width)} outside shape {a.shape[-2:]}")
    return a[..., top:top + height, left:left + width].copy()


# ---------------------------------------------------------------------------
# .cvt binary tensor file: magic "CVT1", dtype byte (0 real f32 / 1 complex f32
# interleaved), ndim byte, ndim little-endian u32 dims, row-major f32 payload.


def save_cvt(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        dtype_code, payload = 1, arr.astype("<c8").tobytes()
    else:
        dtype_code, payload = 0, arr.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(CVT_MAGIC)
        f.write(struct.pack("<BB", dtype_code, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(payload)


def load_cvt(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CVT_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    dtype_code, ndim = struct.unpack_from("<BB", data, 4)
    if dtype_code not in (0, 1):
        raise FormatError(f"{path}: unknown dtype code {dtype_code}")
    dims = struct.unpack_from(f"<{ndim}I", data, 6)
    offset = 6 + 4 * ndim
    count = int(np.prod(dims)) if ndim else 1
    itemsize = 8 if dtype_code == 1 else 4
    if len(data) - offset != count * itemsize:
        raise FormatError(f"{path}: payload size mismatch")
    dt = "<c8" if dtype_code == 1 else "<f4"
    arr = np.frombuffer(data, dtype=dt, count=count, offset=offset)
    return arr.reshape(dims).copy()
