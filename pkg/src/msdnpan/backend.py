"""Convolution kernels: numba-compiled fast path with a pure-numpy fallback.

All convolutions in this package are stride-1, same-padded (pad = k // 2)
cross-correlations over NCHW arrays. The three entry points here are the
only compute-heavy loops; everything else stays in plain numpy.

Backend selection: the environment variable ``MSDN_BACKEND`` may be set to
``numpy`` or ``numba`` before import. Default is numba when importable,
numpy otherwise. ``set_backend`` switches at runtime (used by tests and the
benchmark script).
"""

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    HAS_NUMBA = False

    def njit(*a, **k):
        def wrap(f):
            return f

        return wrap


BACKENDS = ("numpy", "numba")


def _resolve(name):
    name = name.strip().lower()
    if name in ("", "auto"):
        return "numba" if HAS_NUMBA else "numpy"
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}, expected one of {BACKENDS}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    return name


_active = _resolve(os.environ.get("MSDN_BACKEND", "auto"))


def active_backend():
    """Name of the backend currently in use."""
    return _active


def set_backend(name):
    """Select the kernel implementation; returns the previous name."""
    global _active
    previous = _active
    _active = _resolve(name)
    return previous


@njit(cache=True)
def _forward_nb(xp, w, out):
    n, co, h, wd = out.shape
    ci = w.shape[1]
    k = w.shape[2]
    for b in range(n):
        for o in range(co):
            for c in range(ci):
                for u in range(k):
                    for v in range(k):
                        wv = w[o, c, u, v]
                        for i in range(h):
                            for j in range(wd):
                                out[b, o, i, j] += wv * xp[b, c, i + u, j + v]


@njit(cache=True)
def _grad_weight_nb(xp, gy, dw):
    n, co, h, wd = gy.shape
    ci = dw.shape[1]
    k = dw.shape[2]
    for o in range(co):
        for c in range(ci):
            for u in range(k):
                for v in range(k):
                    acc = 0.0
                    for b in range(n):
                        for i in range(h):
                            for j in range(wd):
                                acc += gy[b, o, i, j] * xp[b, c, i + u, j + v]
                    dw[o, c, u, v] = acc


def _windows(xp, k):
    n, c, hp, wp = xp.shape
    h, w = hp - k + 1, wp - k + 1
    sn, sc, sh, sw = xp.strides
    shape = (n, c, h, w, k, k)
    strides = (sn, sc, sh, sw, sh, sw)
    return np.lib.stride_tricks.as_strided(xp, shape, strides, writeable=False)

def _forward_np(xp, w, h, wd):
    n = xp.shape[0]
    co, ci, k, _ = w.shape
    win = _windows(xp, k)
    mat = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, ci * k * k)
    out = mat @ w.reshape(co, ci * k * k).T
    return np.ascontiguousarray(out.reshape(n, h, wd, co).transpose(0, 3, 1, 2))


def _grad_weight_np(xp, gy, k):
    n, co, h, wd = gy.shape
    ci = xp.shape[1]
    win = _windows(xp, k)
    lhs = gy.transpose(1, 0, 2, 3).reshape(co, n * h * wd)
    rhs = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, ci * k * k)
    return (lhs @ rhs).reshape(co, ci, k, k)


def _pad_same(x, k):
    p = k // 2
    if p == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d_forward(x, w):
    """Same-padded stride-1 cross-correlation of x (n,ci,h,w) with w (co,ci,k,k)."""
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    k = w.shape[2]
    xp = _pad_same(x, k)
    if _active == "numba":
        out = np.zeros((x.shape[0], w.shape[0], x.shape[2], x.shape[3]), dtype=x.dtype)
        _forward_nb(xp, w.astype(x.dtype, copy=False), out)
        return out
    return _forward_np(xp, w.astype(x.dtype, copy=False), x.shape[2], x.shape[3])


def conv2d_grad_weight(x, gy, k):
    """Weight gradient for conv2d_forward; x is the unpadded input."""
    x = np.ascontiguousarray(x)
    gy = np.ascontiguousarray(gy)
    xp = _pad_same(x, k)
    if _active == "numba":
        dw = np.zeros((gy.shape[1], x.shape[1], k, k), dtype=x.dtype)
        _grad_weight_nb(xp, gy.astype(x.dtype, copy=False), dw)
        return dw
    return _grad_weight_np(xp, gy.astype(x.dtype, copy=False), k)


def conv2d_grad_input(gy, w):
    """Input gradient: forward kernel applied to gy with w rotated 180 degrees
    and in/out channels swapped. Valid for odd k with same padding."""
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d_forward(gy, wt)
