"""Hot numeric kernels: valid 5x5 convolution and 2x2 max-pool.

Each kernel has a numba @njit implementation and a vectorized numpy
fallback; `backend.ACTIVE` picks which one the public names dispatch to.
Both variants are kept importable so tests can assert parity and the
benchmark can time them against each other.

Conventions: activations are (N, C, H, W), kernel banks are (K, C, 5, 5),
convolution is valid (no padding) cross-correlation, pool windows are
non-overlapping 2x2 with the argmax recorded as a row-major position
index 0..3 (ties resolved to the lowest index).
"""

import numpy as np

from . import backend

# ---------------------------------------------------------------------------
# numpy implementations


def conv5x5_forward_np(x, kern, bias):
    win = np.lib.stride_tricks.sliding_window_view(x, (5, 5), axis=(2, 3))
    out = np.einsum("nchwij,kcij->nkhw", win, kern, optimize=True)
    return out + bias[None, :, None, None]


def conv5x5_backward_kernel_np(g, x):
    win = np.lib.stride_tricks.sliding_window_view(x, (5, 5), axis=(2, 3))
    return np.einsum("nkhw,nchwij->kcij", g, win, optimize=True)


def conv5x5_backward_input_np(g, kern):
    gp = np.pad(g, ((0, 0), (0, 0), (4, 4), (4, 4)))
    win = np.lib.stride_tricks.sliding_window_view(gp, (5, 5), axis=(2, 3))
    kflip = kern[:, :, ::-1, ::-1]
    return np.einsum("nkhwij,kcij->nchw", win, kflip, optimize=True)


def maxpool2x2_forward_np(x):
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = win.reshape(n, c, h // 2, w // 2, 4)
    idx = flat.argmax(axis=-1).astype(np.uint8)  # first max = lowest row-major
    out = np.take_along_axis(flat, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward_np(g, idx):
    n, c, ho, wo = g.shape
    flat = np.zeros((n, c, ho, wo, 4), g.dtype)
    np.put_along_axis(flat, idx[..., None].astype(np.intp), g[..., None], axis=-1)
    win = flat.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return win.reshape(n, c, ho * 2, wo * 2)


# ---------------------------------------------------------------------------
# numba implementations

if backend.numba_available():
    from numba import njit

    @njit(cache=True)
    def conv5x5_forward_nb(x, kern, bias):
        # innermost loop is unit-stride over output columns so it vectorizes
        n, c, h, w = x.shape
        k = kern.shape[0]
        ho, wo = h - 4, w - 4
        out = np.empty((n, k, ho, wo), x.dtype)
        for ni in range(n):
            for ki in range(k):
                out[ni, ki, :, :] = bias[ki]
            for ci in range(c):
                for ki in range(k):
                    for di in range(5):
                        for dj in range(5):
                            coef = kern[ki, ci, di, dj]
                            for i in range(ho):
                                xrow = x[ni, ci, i + di]
                                orow = out[ni, ki, i]
                                for j in range(wo):
                                    orow[j] += coef * xrow[j + dj]
        return out

    @njit(cache=True)
    def conv5x5_backward_kernel_nb(g, x):
        n, k, ho, wo = g.shape
        c = x.shape[1]
        dk = np.zeros((k, c, 5, 5), g.dtype)
        for ni in range(n):
            for ki in range(k):
                for ci in range(c):
                    for di in range(5):
                        for dj in range(5):
                            acc = 0.0
                            for i in range(ho):
                                grow = g[ni, ki, i]
                                xrow = x[ni, ci, i + di]
                                for j in range(wo):
                                    acc += grow[j] * xrow[j + dj]
                            dk[ki, ci, di, dj] += acc
        return dk

    @njit(cache=True)
    def conv5x5_backward_input_nb(g, kern):
        n, k, ho, wo = g.shape
        c = kern.shape[1]
        h, w = ho + 4, wo + 4
        dx = np.zeros((n, c, h, w), g.dtype)
        for ni in range(n):
            for ki in range(k):
                for ci in range(c):
                    for di in range(5):
                        for dj in range(5):
                            coef = kern[ki, ci, di, dj]
                            for i in range(ho):
                                grow = g[ni, ki, i]
                                drow = dx[ni, ci, i + di]
                                for j in range(wo):
                                    drow[j + dj] += coef * grow[j]
        return dx

    @njit(cache=True)
    def maxpool2x2_forward_nb(x):
        n, c, h, w = x.shape
        ho, wo = h // 2, w // 2
        out = np.empty((n, c, ho, wo), x.dtype)
        idx = np.empty((n, c, ho, wo), np.uint8)
        for ni in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        best = x[ni, ci, 2 * i, 2 * j]
                        pos = 0
                        p = 0
                        for di in range(2):
                            for dj in range(2):
                                v = x[ni, ci, 2 * i + di, 2 * j + dj]
                                if v > best:  # strict: first max wins
                                    best = v
                                    pos = p
                                p += 1
                        out[ni, ci, i, j] = best
                        idx[ni, ci, i, j] = pos
        return out, idx

    @njit(cache=True)
    def maxpool2x2_backward_nb(g, idx):
        n, c, ho, wo = g.shape
        dx = np.zeros((n, c, ho * 2, wo * 2), g.dtype)
        for ni in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        p = idx[ni, ci, i, j]
                        dx[ni, ci, 2 * i + p // 2, 2 * j + p % 2] = g[ni, ci, i, j]
        return dx
else:  # pragma: no cover - exercised only when numba is missing
    conv5x5_forward_nb = None
    conv5x5_backward_kernel_nb = None
    conv5x5_backward_input_nb = None
    maxpool2x2_forward_nb = None
    maxpool2x2_backward_nb = None


# ---------------------------------------------------------------------------
# dispatch
#
# Measured on the 28x28 training shapes: the loop kernels win big on pooling
# and single-input-channel convolution, but multi-channel convolutions are
# matmul-shaped contractions where the einsum/BLAS path is several times
# faster than scalar loops. The numba backend therefore dispatches conv calls
# on channel count; SPIKEBP_BACKEND=numpy still forces the fallback
# everywhere. benchmarks/bench_kernels.py reproduces the numbers.

if backend.ACTIVE == "numba":

    def conv5x5_forward(x, kern, bias):
        if x.shape[1] == 1:
            return conv5x5_forward_nb(x, kern, bias)
        return conv5x5_forward_np(x, kern, bias)

    def conv5x5_backward_kernel(g, x):
        if x.shape[1] == 1:
            return conv5x5_backward_kernel_nb(g, x)
        return conv5x5_backward_kernel_np(g, x)

    def conv5x5_backward_input(g, kern):
        if kern.shape[1] == 1:
            return conv5x5_backward_input_nb(g, kern)
        return conv5x5_backward_input_np(g, kern)

    maxpool2x2_forward = maxpool2x2_forward_nb
    maxpool2x2_backward = maxpool2x2_backward_nb
else:
    conv5x5_forward = conv5x5_forward_np
    conv5x5_backward_kernel = conv5x5_backward_kernel_np
    conv5x5_backward_input = conv5x5_backward_input_np
    maxpool2x2_forward = maxpool2x2_forward_np
    maxpool2x2_backward = maxpool2x2_backward_np


def variants(name):
    """Return {"numpy": fn, "numba": fn} for a kernel, for parity tests/benchmarks."""
    table = {"numpy": globals()[name + "_np"]}
    if backend.numba_available():
        table["numba"] = globals()[name + "_nb"]
    return table
