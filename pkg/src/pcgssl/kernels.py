"""Numeric hot loops: 1-D convolution, max pooling, second-order-section IIR.

Each kernel exists as ``*_nb`` (numba) and ``*_np`` (numpy/scipy).  The
public names dispatch on ``_backend.USE_NUMBA``.  Both variants are always
importable so tests can compare them directly.

Conventions: signals are ``[batch, channels, time]``; convolution is
cross-correlation with zero "same" padding, ``pad_left = (k - 1) // 2``.
"""
import numpy as np
import scipy.signal
from numpy.lib.stride_tricks import sliding_window_view

from . import _backend
from ._backend import njit

# below this many taps x input channels the direct loop beats im2col + BLAS
DIRECT_CONV_MAX_TAPS = 64


def same_padding(k):
    left = (k - 1) // 2
    return left, k - 1 - left


def _pad(x, k, left=None):
    if left is None:
        left, right = same_padding(k)
    else:
        right = k - 1 - left
    return np.pad(x, ((0, 0), (0, 0), (left, right)))


# -- convolution: numpy ------------------------------------------------------

def _im2col(xp, k, length):
    """``[b, c * k, length]``; row ``c * k + j`` is channel ``c`` shifted by tap ``j``."""
    b, c, _ = xp.shape
    cols = sliding_window_view(xp, length, axis=2)[:, :, :k, :]
    return cols.reshape(b, c * k, length)


def _correlate_np(xp, w, length):
    o, c, k = w.shape
    return np.matmul(w.reshape(o, c * k), _im2col(xp, k, length))


def conv1d_forward_np(x, w, b):
    y = _correlate_np(_pad(x, w.shape[2]), w, x.shape[2])
    y += b[None, :, None]
    return y


def conv1d_backward_np(x, w, gy, need_gx=True):
    o, c, k = w.shape
    length = x.shape[2]
    cols = _im2col(_pad(x, k), k, length)
    gw = np.matmul(gy, cols.transpose(0, 2, 1)).sum(axis=0).reshape(o, c, k)
    gb = gy.sum(axis=(0, 2))
    gx = None
    if need_gx:
        # adjoint of same-padded correlation: correlate with the flipped,
        # channel-transposed kernel, padding mirrored
        w_adj = np.ascontiguousarray(w[:, :, ::-1].transpose(1, 0, 2))
        gx = _correlate_np(_pad(gy, k, left=k - 1 - same_padding(k)[0]), w_adj, length)
    return gx, gw.astype(w.dtype, copy=False), gb.astype(w.dtype, copy=False)


# -- convolution: numba ------------------------------------------------------

@njit
def _conv_direct_nb(xp, w, b, length):
    bsz, c_in, _ = xp.shape
    c_out, _, k = w.shape
    y = np.empty((bsz, c_out, length), dtype=xp.dtype)
    for bi in range(bsz):
        for o in range(c_out):
            for t in range(length):
                y[bi, o, t] = b[o]
            for c in range(c_in):
                for j in range(k):
                    wv = w[o, c, j]
                    for t in range(length):
                        y[bi, o, t] += wv * xp[bi, c, t + j]
    return y


@njit
def _conv_direct_backward_nb(xp, w, gy, need_gx):
    bsz, c_in, padded = xp.shape
    c_out, _, k = w.shape
    length = gy.shape[2]
    gw = np.zeros(w.shape, dtype=w.dtype)
    gb = np.zeros(c_out, dtype=w.dtype)
    gxp = np.zeros((bsz, c_in, padded), dtype=xp.dtype)
    for bi in range(bsz):
        for o in range(c_out):
            acc = 0.0
            for t in range(length):
                acc += gy[bi, o, t]
            gb[o] += acc
            for c in range(c_in):
                for j in range(k):
                    s = 0.0
                    for t in range(length):
                        s += gy[bi, o, t] * xp[bi, c, t + j]
                    gw[o, c, j] += s
                    if need_gx:
                        wv = w[o, c, j]
                        for t in range(length):
                            gxp[bi, c, t + j] += wv * gy[bi, o, t]
    return gxp, gw, gb


def conv1d_forward_nb(x, w, b):
    o, c, k = w.shape
    if c * k > DIRECT_CONV_MAX_TAPS:
        return conv1d_forward_np(x, w, b)
    return _conv_direct_nb(np.ascontiguousarray(_pad(x, k)), np.ascontiguousarray(w),
                           np.ascontiguousarray(b), x.shape[2])


def conv1d_backward_nb(x, w, gy, need_gx=True):
    o, c, k = w.shape
    if c * k > DIRECT_CONV_MAX_TAPS:
        return conv1d_backward_np(x, w, gy, need_gx)
    gxp, gw, gb = _conv_direct_backward_nb(np.ascontiguousarray(_pad(x, k)), np.ascontiguousarray(w),
                                           np.ascontiguousarray(gy), need_gx)
    left, _ = same_padding(k)
    gx = gxp[:, :, left:left + x.shape[2]] if need_gx else None
    return gx, gw, gb


# -- max pooling (floor) -----------------------------------------------------

def maxpool1d_forward_np(x, pool):
    bsz, c, length = x.shape
    n = length // pool
    blocks = x[:, :, :n * pool].reshape(bsz, c, n, pool)
    arg = blocks.argmax(axis=3)
    y = np.take_along_axis(blocks, arg[..., None], axis=3)[..., 0]
    return y, arg


def maxpool1d_backward_np(gy, arg, pool, length):
    bsz, c, n = gy.shape
    gx = np.zeros((bsz, c, length), dtype=gy.dtype)
    blocks = gx[:, :, :n * pool].reshape(bsz, c, n, pool)
    np.put_along_axis(blocks, arg[..., None], gy[..., None], axis=3)
    return gx


@njit
def _maxpool_fwd_nb(x, pool):
    bsz, c, length = x.shape
    n = length // pool
    y = np.empty((bsz, c, n), dtype=x.dtype)
    arg = np.empty((bsz, c, n), dtype=np.int64)
    for bi in range(bsz):
        for ci in range(c):
            for i in range(n):
                base = i * pool
                best = x[bi, ci, base]
                bj = 0
                for j in range(1, pool):
                    v = x[bi, ci, base + j]
                    if v > best:
                        best = v
                        bj = j
                y[bi, ci, i] = best
                arg[bi, ci, i] = bj
    return y, arg


@njit
def _maxpool_bwd_nb(gy, arg, pool, length):
    bsz, c, n = gy.shape
    gx = np.zeros((bsz, c, length), dtype=gy.dtype)
    for bi in range(bsz):
        for ci in range(c):
            for i in range(n):
                gx[bi, ci, i * pool + arg[bi, ci, i]] = gy[bi, ci, i]
    return gx


def maxpool1d_forward_nb(x, pool):
    return _maxpool_fwd_nb(np.ascontiguousarray(x), pool)


def maxpool1d_backward_nb(gy, arg, pool, length):
    return _maxpool_bwd_nb(np.ascontiguousarray(gy), np.ascontiguousarray(arg), pool, length)


# -- IIR filtering with second-order sections --------------------------------

def sosfilt_np(sos, x):
    return scipy.signal.sosfilt(sos, x, axis=-1)


@njit
def _sosfilt_nb(sos, x2d):
    # transposed direct form II, zero initial state
    out = x2d.copy()
    n_sec = sos.shape[0]
    rows, n = out.shape
    for r in range(rows):
        for s in range(n_sec):
            b0, b1, b2 = sos[s, 0], sos[s, 1], sos[s, 2]
            a1, a2 = sos[s, 4], sos[s, 5]
            z1 = 0.0
            z2 = 0.0
            for i in range(n):
                xi = out[r, i]
                yi = b0 * xi + z1
                z1 = b1 * xi - a1 * yi + z2
                z2 = b2 * xi - a2 * yi
                out[r, i] = yi
    return out


def sosfilt_nb(sos, x):
    x = np.asarray(x, dtype=np.float64)
    flat = np.ascontiguousarray(x.reshape(-1, x.shape[-1]))
    return _sosfilt_nb(np.ascontiguousarray(sos, dtype=np.float64), flat).reshape(x.shape)


if _backend.USE_NUMBA:
    conv1d_forward = conv1d_forward_nb
    conv1d_backward = conv1d_backward_nb
    maxpool1d_forward = maxpool1d_forward_nb
    maxpool1d_backward = maxpool1d_backward_nb
    sosfilt = sosfilt_nb
else:
    conv1d_forward = conv1d_forward_np
    conv1d_backward = conv1d_backward_np
    maxpool1d_forward = maxpool1d_forward_np
    maxpool1d_backward = maxpool1d_backward_np
    sosfilt = sosfilt_np
