"""Pure-numpy fallback kernels.

All kernels take float32 arrays, accumulate in float64 and round the result
back to float32 once, matching the compiled versions to within rounding of
the final float32 cast.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "python"


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(N,K) @ (K,M) with float64 accumulation."""
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)


def _window_cols(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, C, Ho, Wo, kh, kw) view over the padded input
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return cols[:, :, ::stride, ::stride]


def conv2d_fwd(x: np.ndarray, w: np.ndarray, stride: int,
               pt: int, pb: int, pl: int, pr: int) -> np.ndarray:
    """Cross-correlation of NCHW input with OCkhkw weights."""
    n, c, _, _ = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = _window_cols(xp, kh, kw, stride)
    _, _, ho, wo, _, _ = cols.shape
    flat = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    y = flat.astype(np.float64) @ w.reshape(o, -1).T.astype(np.float64)
    return y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2).astype(np.float32)


def conv2d_bwd_input(gy: np.ndarray, w: np.ndarray, stride: int,
                     pt: int, pb: int, pl: int, pr: int,
                     h: int, wdt: int) -> np.ndarray:
    """Gradient w.r.t. the (unpadded) input, shape (N,C,h,wdt)."""
    n, o, ho, wo = gy.shape
    _, c, kh, kw = w.shape
    gxp = np.zeros((n, c, h + pt + pb, wdt + pl + pr), dtype=np.float64)
    gy64 = gy.astype(np.float64)
    w64 = w.astype(np.float64)
    for u in range(kh):
        for v in range(kw):
            # each output (i,j) read xp[i*stride+u, j*stride+v]
            contrib = np.einsum("nohw,oc->nchw", gy64, w64[:, :, u, v])
            gxp[:, :, u:u + ho * stride:stride, v:v + wo * stride:stride] += contrib
    return gxp[:, :, pt:pt + h, pl:pl + wdt].astype(np.float32)


def conv2d_bwd_weight(gy: np.ndarray, x: np.ndarray, stride: int,
                      pt: int, pb: int, pl: int, pr: int,
                      kh: int, kw: int) -> np.ndarray:
    """Gradient w.r.t. the weights, shape (O,C,kh,kw)."""
    n, o, ho, wo = gy.shape
    _, c, _, _ = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))).astype(np.float64)
    gy64 = gy.astype(np.float64)
    gw = np.empty((o, c, kh, kw), dtype=np.float64)
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, :, u:u + ho * stride:stride, v:v + wo * stride:stride]
            gw[:, :, u, v] = np.tensordot(gy64, patch, axes=([0, 2, 3], [0, 2, 3]))
    return gw.astype(np.float32)
