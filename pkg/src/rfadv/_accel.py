"""Hot inner kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``RFADV_NUMBA`` is not set to ``0``.  Both paths are kept
numerically interchangeable; ``tests/test_accel.py`` checks that they agree.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _flag_enabled() -> bool:
    return os.environ.get("RFADV_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


USE_NUMBA = NUMBA_AVAILABLE and _flag_enabled()


def tune_allocator() -> bool:
    """Keep large temporaries on the glibc heap instead of fresh mmaps; the
    im2col buffers otherwise pay a page fault per 4 KiB on every call."""
    if os.environ.get("RFADV_TUNE_MALLOC", "1") == "0":
        return False
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return False
    m_trim, m_top_pad, m_mmap = -1, -2, -3
    return bool(libc.mallopt(m_mmap, 32 << 20) and libc.mallopt(m_trim, 1 << 30) and libc.mallopt(m_top_pad, 256 << 20))


tune_allocator()

__all__ = [
    "USE_NUMBA",
    "NUMBA_AVAILABLE",
    "backend",
    "im2col",
    "col2im",
    "maxpool2x2_forward",
    "maxpool2x2_backward",
]


# ---------------------------------------------------------------- numpy path


def im2col_numpy(x, k):
    """Patches of a zero "same"-padded NHWC batch, shape (B*H*W, k*k*C)."""
    b, h, w, c = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, k - 1 - p), (p, k - 1 - p), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    # win: (B, H, W, C, k, k) -> (B, H, W, k, k, C)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b * h * w, k * k * c)


def col2im_numpy(cols, shape, k):
    b, h, w, c = shape
    p = k // 2
    cols = cols.reshape(b, h, w, k, k, c)
    out = np.zeros((b, h + k - 1, w + k - 1, c), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, i : i + h, j : j + w, :] += cols[:, :, :, i, j, :]
    return out[:, p : p + h, p : p + w, :]


def maxpool2x2_forward_numpy(x):
    b, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    xs = x[:, : 2 * ho, : 2 * wo, :].reshape(b, ho, 2, wo, 2, c)
    xs = xs.transpose(0, 1, 3, 5, 2, 4).reshape(b, ho, wo, c, 4)
    # argmax returns the first maximum: ties go to the lowest (row-major) index
    idx = np.argmax(xs, axis=-1)
    out = np.take_along_axis(xs, idx[..., None], axis=-1)[..., 0]
    return out, idx.astype(np.int8)


def maxpool2x2_backward_numpy(dout, idx, in_shape):
    b, h, w, c = in_shape
    ho, wo = dout.shape[1], dout.shape[2]
    g = np.zeros((b, ho, wo, c, 4), dtype=dout.dtype)
    np.put_along_axis(g, idx[..., None].astype(np.intp), dout[..., None], axis=-1)
    g = g.reshape(b, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, 2 * ho, 2 * wo, c)
    dx = np.zeros(in_shape, dtype=dout.dtype)
    dx[:, : 2 * ho, : 2 * wo, :] = g
    return dx


# ---------------------------------------------------------------- numba path


@njit(cache=True)
def _im2col_nb(xp, h, w, k):
    # xp is the zero-padded input; each (row, di) block of k*c values is a
    # contiguous run of the padded image
    b, hp, wp, c = xp.shape
    kc = k * c
    src = xp.reshape(b * hp * wp * c)
    out = np.empty((b * h * w, k * kc), dtype=xp.dtype)
    for n in range(b):
        for i in range(h):
            for j in range(w):
                row = (n * h + i) * w + j
                for di in range(k):
                    base = ((n * hp + i + di) * wp + j) * c
                    o = di * kc
                    for m in range(kc):
                        out[row, o + m] = src[base + m]
    return out


@njit(cache=True)
def _col2im_nb(cols, b, h, w, c, k):
    p = k // 2
    hp, wp = h + k - 1, w + k - 1
    kc = k * c
    acc = np.zeros(b * hp * wp * c, dtype=cols.dtype)
    for n in range(b):
        for i in range(h):
            for j in range(w):
                row = (n * h + i) * w + j
                for di in range(k):
                    base = ((n * hp + i + di) * wp + j) * c
                    o = di * kc
                    for m in range(kc):
                        acc[base + m] += cols[row, o + m]
    return acc.reshape(b, hp, wp, c)[:, p : p + h, p : p + w, :].copy()


@njit(cache=True)
def _maxpool_fwd_nb(x):
    b, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    out = np.empty((b, ho, wo, c), dtype=x.dtype)
    idx = np.empty((b, ho, wo, c), dtype=np.int8)
    for n in range(b):
        for i in range(ho):
            for j in range(wo):
                for ch in range(c):
                    best = x[n, 2 * i, 2 * j, ch]
                    bi = 0
                    for q in range(1, 4):
                        v = x[n, 2 * i + q // 2, 2 * j + q % 2, ch]
                        if v > best:
                            best = v
                            bi = q
                    out[n, i, j, ch] = best
                    idx[n, i, j, ch] = bi
    return out, idx


@njit(cache=True)
def _maxpool_bwd_nb(dout, idx, b, h, w, c):
    ho, wo = dout.shape[1], dout.shape[2]
    dx = np.zeros((b, h, w, c), dtype=dout.dtype)
    for n in range(b):
        for i in range(ho):
            for j in range(wo):
                for ch in range(c):
                    q = idx[n, i, j, ch]
                    dx[n, 2 * i + q // 2, 2 * j + q % 2, ch] = dout[n, i, j, ch]
    return dx


# ---------------------------------------------------------------- dispatch


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def im2col(x, k):
    if USE_NUMBA:
        p = k // 2
        xp = np.ascontiguousarray(np.pad(x, ((0, 0), (p, k - 1 - p), (p, k - 1 - p), (0, 0))))
        return _im2col_nb(xp, x.shape[1], x.shape[2], k)
    return im2col_numpy(x, k)


def col2im(cols, shape, k):
    if USE_NUMBA:
        b, h, w, c = shape
        return _col2im_nb(np.ascontiguousarray(cols), b, h, w, c, k)
    return col2im_numpy(cols, shape, k)


def maxpool2x2_forward(x):
    if USE_NUMBA:
        return _maxpool_fwd_nb(np.ascontiguousarray(x))
    return maxpool2x2_forward_numpy(x)


def maxpool2x2_backward(dout, idx, in_shape):
    if USE_NUMBA:
        b, h, w, c = in_shape
        return _maxpool_bwd_nb(np.ascontiguousarray(dout), np.ascontiguousarray(idx), b, h, w, c)
    return maxpool2x2_backward_numpy(dout, idx, in_shape)
