"""Hot inner-loop kernels, numba-jitted with a pure-numpy fallback.

The active backend is picked once at import time from the ``STRUCTDROP_BACKEND``
environment variable ("numba" or "numpy"). When unset, numba is used if it
imports cleanly. Both paths implement identical semantics: block expansion is
bit-exact between them, convolution kernels agree to floating-point roundoff
(summation order differs). ``benchmarks/bench_backends.py`` times the two
paths on the same inputs.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = "STRUCTDROP_BACKEND"


def _numpy_expand_blocks(mask, seed_rows, seed_cols, beta_lb, beta_ub):
    h, w = mask.shape
    for n in range(seed_rows.shape[0]):
        i = seed_rows[n]
        j = seed_cols[n]
        mask[max(i - beta_lb, 0):min(i + beta_ub + 1, h),
             max(j - beta_lb, 0):min(j + beta_ub + 1, w)] = 0


def _windows(x, kh, kw):
    # (n, c, oh, ow, kh, kw) view, no copy
    return np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))


def _numpy_conv2d(x, k):
    win = _windows(x, k.shape[2], k.shape[3])
    out = np.tensordot(win, k, axes=([1, 4, 5], [1, 2, 3]))  # (n, oh, ow, o)
    return np.ascontiguousarray(np.moveaxis(out, 3, 1))


def _numpy_conv2d_grad_input(dy, k):
    kh, kw = k.shape[2], k.shape[3]
    pad = np.pad(dy, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    win = _windows(pad, kh, kw)
    kf = np.ascontiguousarray(k[:, :, ::-1, ::-1])
    out = np.tensordot(win, kf, axes=([1, 4, 5], [0, 2, 3]))  # (n, h, w, c)
    return np.ascontiguousarray(np.moveaxis(out, 3, 1))


def _numpy_conv2d_grad_kernel(dy, x):
    oh, ow = dy.shape[2], dy.shape[3]
    win = _windows(x, oh, ow)  # (n, c, kh, kw, oh, ow)
    out = np.tensordot(dy, win, axes=([0, 2, 3], [0, 4, 5]))  # (o, c, kh, kw)
    return np.ascontiguousarray(out)


def _load_numba_kernels():
    from numba import njit

    @njit(cache=True)
    def expand_blocks(mask, seed_rows, seed_cols, beta_lb, beta_ub):
        h, w = mask.shape
        for n in range(seed_rows.shape[0]):
            i0 = max(seed_rows[n] - beta_lb, 0)
            i1 = min(seed_rows[n] + beta_ub + 1, h)
            j0 = max(seed_cols[n] - beta_lb, 0)
            j1 = min(seed_cols[n] + beta_ub + 1, w)
            for i in range(i0, i1):
                for j in range(j0, j1):
                    mask[i, j] = 0

    @njit(cache=True)
    def conv2d(x, k):
        n, c, h, w = x.shape
        o, _, kh, kw = k.shape
        oh = h - kh + 1
        ow = w - kw + 1
        out = np.zeros((n, o, oh, ow))
        for ni in range(n):
            for oi in range(o):
                for yi in range(oh):
                    for xi in range(ow):
                        acc = 0.0
                        for ci in range(c):
                            for a in range(kh):
                                for b in range(kw):
                                    acc += x[ni, ci, yi + a, xi + b] * k[oi, ci, a, b]
                        out[ni, oi, yi, xi] = acc
        return out

    @njit(cache=True)
    def conv2d_grad_input(dy, k):
        n, o, oh, ow = dy.shape
        _, c, kh, kw = k.shape
        h = oh + kh - 1
        w = ow + kw - 1
        dx = np.zeros((n, c, h, w))
        for ni in range(n):
            for oi in range(o):
                for yi in range(oh):
                    for xi in range(ow):
                        g = dy[ni, oi, yi, xi]
                        for ci in range(c):
                            for a in range(kh):
                                for b in range(kw):
                                    dx[ni, ci, yi + a, xi + b] += g * k[oi, ci, a, b]
        return dx

    @njit(cache=True)
    def conv2d_grad_kernel(dy, x):
        n, o, oh, ow = dy.shape
        _, c, h, w = x.shape
        kh = h - oh + 1
        kw = w - ow + 1
        dk = np.zeros((o, c, kh, kw))
        for ni in range(n):
            for oi in range(o):
                for yi in range(oh):
                    for xi in range(ow):
                        g = dy[ni, oi, yi, xi]
                        for ci in range(c):
                            for a in range(kh):
                                for b in range(kw):
                                    dk[oi, ci, a, b] += g * x[ni, ci, yi + a, xi + b]
        return dk

    return {
        "expand_blocks_inplace": expand_blocks,
        "conv2d": conv2d,
        "conv2d_grad_input": conv2d_grad_input,
        "conv2d_grad_kernel": conv2d_grad_kernel,
    }


_NUMPY_KERNELS = {
    "expand_blocks_inplace": _numpy_expand_blocks,
    "conv2d": _numpy_conv2d,
    "conv2d_grad_input": _numpy_conv2d_grad_input,
    "conv2d_grad_kernel": _numpy_conv2d_grad_kernel,
}


def available_backends():
    names = ["numpy"]
    try:
        import numba  # noqa: F401

        names.insert(0, "numba")
    except ImportError:
        pass
    return names


def load_kernels(name):
    """Kernel table for an explicit backend name, bypassing the env flag."""
    if name == "numpy":
        return dict(_NUMPY_KERNELS)
    if name == "numba":
        return _load_numba_kernels()
    raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")


def _select_backend():
    flag = os.environ.get(_ENV_FLAG, "").strip().lower()
    if flag in ("numba", "numpy"):
        return flag
    if flag:
        raise ValueError(
            f"{_ENV_FLAG}={flag!r} not understood; expected 'numba' or 'numpy'"
        )
    return "numba" if "numba" in available_backends() else "numpy"


ACTIVE_BACKEND = _select_backend()
_ACTIVE = load_kernels(ACTIVE_BACKEND)

expand_blocks_inplace = _ACTIVE["expand_blocks_inplace"]
conv2d = _ACTIVE["conv2d"]
conv2d_grad_input = _ACTIVE["conv2d_grad_input"]
conv2d_grad_kernel = _ACTIVE["conv2d_grad_kernel"]
