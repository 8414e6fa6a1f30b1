"""Convolution kernels, the hot inner loops of the package.

Two interchangeable backends:

* ``numba``  -- @njit loop kernels with a hand-unrolled 3x3/stride-1 fast
  path (the case every residual block hits).  Default when numba imports.
* ``numpy``  -- sliding-window views contracted with einsum (BLAS).

Set ``RTDA_NO_NUMBA=1`` to force the numpy path.  ``benchmarks/kernel_bench.py``
compares the two.  Both backends agree to float64 round-off; results are
deterministic within a backend.

All arrays are float64.  Layout: images ``[B, C, H, W]``, kernels
``[F, C, KH, KW]``.  Cross-correlation (no kernel flip), zero padding.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_FORCED_OFF = os.environ.get("RTDA_NO_NUMBA", "").lower() in ("1", "true", "yes")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via RTDA_NO_NUMBA instead
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _FORCED_OFF


def backend():
    return "numba" if USE_NUMBA else "numpy"


def _pad2d(x, pad):
    if pad == 0:
        return np.ascontiguousarray(x)
    b, c, h, w = x.shape
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    out[:, :, pad : pad + h, pad : pad + w] = x
    return out


def _dilate2d(g, stride):
    """Insert stride-1 zeros between entries along both spatial axes."""
    if stride == 1:
        return g
    b, f, h, w = g.shape
    out = np.zeros((b, f, (h - 1) * stride + 1, (w - 1) * stride + 1))
    out[:, :, ::stride, ::stride] = g
    return out


# ---------------------------------------------------------------------------
# numpy backend


def conv2d_forward_numpy(x, k, stride=1, pad=0):
    xp = _pad2d(x, pad)
    kh, kw = k.shape[2], k.shape[3]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("bchwij,fcij->bfhw", win, k, optimize=True)


def conv2d_backward_input_numpy(gout, k, stride, pad, in_h, in_w):
    kh, kw = k.shape[2], k.shape[3]
    gd = _dilate2d(gout, stride)
    # full correlation with the spatially flipped, (F,C)-transposed kernel
    gfull = np.zeros(
        (gd.shape[0], gd.shape[1], gd.shape[2] + 2 * (kh - 1), gd.shape[3] + 2 * (kw - 1))
    )
    gfull[:, :, kh - 1 : kh - 1 + gd.shape[2], kw - 1 : kw - 1 + gd.shape[3]] = gd
    kt = np.ascontiguousarray(k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    win = sliding_window_view(gfull, (kh, kw), axis=(2, 3))
    dxp = np.einsum("bfhwij,cfij->bchw", win, kt, optimize=True)
    return np.ascontiguousarray(dxp[:, :, pad : pad + in_h, pad : pad + in_w])


def conv2d_backward_kernel_numpy(gout, x, stride, pad, kh, kw):
    xp = _pad2d(x, pad)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("bchwij,bfhw->fcij", win, gout, optimize=True)


# ---------------------------------------------------------------------------
# numba backend

if HAS_NUMBA:

    @numba.njit(cache=True, nogil=True, fastmath=True)
    def _conv3x3_s1(xp, k):
        b_n, c_n, hp, wp = xp.shape
        f_n = k.shape[0]
        ho = hp - 2
        wo = wp - 2
        out = np.zeros((b_n, f_n, ho, wo))
        for b in range(b_n):
            for f in range(f_n):
                for c in range(c_n):
                    k00 = k[f, c, 0, 0]
                    k01 = k[f, c, 0, 1]
                    k02 = k[f, c, 0, 2]
                    k10 = k[f, c, 1, 0]
                    k11 = k[f, c, 1, 1]
                    k12 = k[f, c, 1, 2]
                    k20 = k[f, c, 2, 0]
                    k21 = k[f, c, 2, 1]
                    k22 = k[f, c, 2, 2]
                    for oy in range(ho):
                        r0 = xp[b, c, oy]
                        r1 = xp[b, c, oy + 1]
                        r2 = xp[b, c, oy + 2]
                        o = out[b, f, oy]
                        for ox in range(wo):
                            o[ox] += (
                                k00 * r0[ox]
                                + k01 * r0[ox + 1]
                                + k02 * r0[ox + 2]
                                + k10 * r1[ox]
                                + k11 * r1[ox + 1]
                                + k12 * r1[ox + 2]
                                + k20 * r2[ox]
                                + k21 * r2[ox + 1]
                                + k22 * r2[ox + 2]
                            )
        return out

    @numba.njit(cache=True, nogil=True, fastmath=True)
    def _conv_generic(xp, k, stride):
        b_n, c_n, hp, wp = xp.shape
        f_n, _, kh, kw = k.shape
        ho = (hp - kh) // stride + 1
        wo = (wp - kw) // stride + 1
        out = np.zeros((b_n, f_n, ho, wo))
        for b in range(b_n):
            for f in range(f_n):
                for c in range(c_n):
                    for iy in range(kh):
                        for ix in range(kw):
                            kv = k[f, c, iy, ix]
                            for oy in range(ho):
                                y = oy * stride + iy
                                o = out[b, f, oy]
                                r = xp[b, c, y]
                                for ox in range(wo):
                                    o[ox] += kv * r[ox * stride + ix]
        return out

    @numba.njit(cache=True, nogil=True, fastmath=True)
    def _bk3x3_s1(xp, gout):
        b_n, c_n = xp.shape[0], xp.shape[1]
        f_n, ho, wo = gout.shape[1], gout.shape[2], gout.shape[3]
        dk = np.zeros((f_n, c_n, 3, 3))
        for b in range(b_n):
            for f in range(f_n):
                g = gout[b, f]
                for c in range(c_n):
                    s00 = s01 = s02 = 0.0
                    s10 = s11 = s12 = 0.0
                    s20 = s21 = s22 = 0.0
                    for oy in range(ho):
                        grow = g[oy]
                        r0 = xp[b, c, oy]
                        r1 = xp[b, c, oy + 1]
                        r2 = xp[b, c, oy + 2]
                        for ox in range(wo):
                            gv = grow[ox]
                            s00 += gv * r0[ox]
                            s01 += gv * r0[ox + 1]
                            s02 += gv * r0[ox + 2]
                            s10 += gv * r1[ox]
                            s11 += gv * r1[ox + 1]
                            s12 += gv * r1[ox + 2]
                            s20 += gv * r2[ox]
                            s21 += gv * r2[ox + 1]
                            s22 += gv * r2[ox + 2]
                    dk[f, c, 0, 0] += s00
                    dk[f, c, 0, 1] += s01
                    dk[f, c, 0, 2] += s02
                    dk[f, c, 1, 0] += s10
                    dk[f, c, 1, 1] += s11
                    dk[f, c, 1, 2] += s12
                    dk[f, c, 2, 0] += s20
                    dk[f, c, 2, 1] += s21
                    dk[f, c, 2, 2] += s22
        return dk

    @numba.njit(cache=True, nogil=True, fastmath=True)
    def _bk_generic(xp, gout, stride, kh, kw):
        b_n, c_n = xp.shape[0], xp.shape[1]
        f_n, ho, wo = gout.shape[1], gout.shape[2], gout.shape[3]
        dk = np.zeros((f_n, c_n, kh, kw))
        for b in range(b_n):
            for f in range(f_n):
                g = gout[b, f]
                for c in range(c_n):
                    for iy in range(kh):
                        for ix in range(kw):
                            s = 0.0
                            for oy in range(ho):
                                grow = g[oy]
                                r = xp[b, c, oy * stride + iy]
                                for ox in range(wo):
                                    s += grow[ox] * r[ox * stride + ix]
                            dk[f, c, iy, ix] += s
        return dk

    def conv2d_forward_numba(x, k, stride=1, pad=0):
        xp = _pad2d(x, pad)
        kc = np.ascontiguousarray(k)
        if k.shape[2] == 3 and k.shape[3] == 3 and stride == 1:
            return _conv3x3_s1(xp, kc)
        return _conv_generic(xp, kc, stride)

    def conv2d_backward_input_numba(gout, k, stride, pad, in_h, in_w):
        kh, kw = k.shape[2], k.shape[3]
        gd = _dilate2d(np.ascontiguousarray(gout), stride)
        gfull = np.zeros(
            (gd.shape[0], gd.shape[1], gd.shape[2] + 2 * (kh - 1), gd.shape[3] + 2 * (kw - 1))
        )
        gfull[:, :, kh - 1 : kh - 1 + gd.shape[2], kw - 1 : kw - 1 + gd.shape[3]] = gd
        kt = np.ascontiguousarray(k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        if kh == 3 and kw == 3:
            dxp = _conv3x3_s1(gfull, kt)
        else:
            dxp = _conv_generic(gfull, kt, 1)
        return np.ascontiguousarray(dxp[:, :, pad : pad + in_h, pad : pad + in_w])

    def conv2d_backward_kernel_numba(gout, x, stride, pad, kh, kw):
        xp = _pad2d(x, pad)
        gc = np.ascontiguousarray(gout)
        if kh == 3 and kw == 3 and stride == 1:
            return _bk3x3_s1(xp, gc)
        return _bk_generic(xp, gc, stride, kh, kw)


if USE_NUMBA:
    conv2d_forward = conv2d_forward_numba
    conv2d_backward_input = conv2d_backward_input_numba
    conv2d_backward_kernel = conv2d_backward_kernel_numba
else:
    conv2d_forward = conv2d_forward_numpy
    conv2d_backward_input = conv2d_backward_input_numpy
    conv2d_backward_kernel = conv2d_backward_kernel_numpy
