"""Pure-numpy kernel lane.

Convolutions run as per-image im2col + BLAS matmul; Gamma sampling is a
vectorized Marsaglia-Tsang rejection loop over per-pixel splitmix64
substreams (same algorithm and stream consumption as the numba lane, see
``specklelab.rng``).
"""

from __future__ import annotations

import math

import numpy as np

from .rng import GOLDEN, TWO_NEG53, TWO_PI, mix64_vec

_GOLDEN = np.uint64(GOLDEN)
_S11 = np.uint64(11)


def _im2col(img: np.ndarray, K: int, pad: int) -> np.ndarray:
    """(C, H, W) image -> (C*K*K, H*W) patch matrix with zero padding."""
    C, H, W = img.shape
    xp = np.pad(img, ((0, 0), (pad, pad), (pad, pad)))
    s = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (C, K, K, H, W), (s[0], s[1], s[2], s[1], s[2]), writeable=False
    )
    return view.reshape(C * K * K, H * W)


def conv2d_fwd(x: np.ndarray, w: np.ndarray, pad: int) -> np.ndarray:
    """Same-padding correlation: (B,N,H,W) x (M,N,K,K) -> (B,M,H,W)."""
    B, N, H, W = x.shape
    M, _, K, _ = w.shape
    wm = w.reshape(M, N * K * K)
    out = np.empty((B, M, H * W))
    for b in range(B):
        np.matmul(wm, _im2col(x[b], K, pad), out=out[b])
    return out.reshape(B, M, H, W)


def conv2d_grad_kernel(x: np.ndarray, go: np.ndarray, K: int, pad: int) -> np.ndarray:
    """Kernel gradient: sum_b go_b @ cols_b^T, reshaped to (M,N,K,K)."""
    B, N, H, W = x.shape
    M = go.shape[1]
    gw = np.zeros((M, N * K * K))
    for b in range(B):
        gw += go[b].reshape(M, H * W) @ _im2col(x[b], K, pad).T
    return gw.reshape(M, N, K, K)


def gamma_field(key: int, n: int, shape: float) -> np.ndarray:
    """n unit-mean Gamma(shape, rate=shape) draws from substreams of `key`."""
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    inv = 1.0 / shape
    idx = np.arange(1, n + 1, dtype=np.uint64)
    states = mix64_vec(np.uint64(key) + idx * _GOLDEN)
    out = np.empty(n)
    active = np.arange(n)
    while active.size:
        s = states[active]
        s += _GOLDEN
        u1 = ((mix64_vec(s) >> _S11).astype(np.float64) + 1.0) * TWO_NEG53
        s += _GOLDEN
        u2 = ((mix64_vec(s) >> _S11).astype(np.float64) + 1.0) * TWO_NEG53
        x = np.sqrt(-2.0 * np.log(u1)) * np.cos(TWO_PI * u2)
        t = 1.0 + c * x
        ok = t > 0.0
        # lanes with t <= 0 retry without consuming the acceptance uniform
        v = np.where(ok, t, 1.0) ** 3
        u = np.ones_like(u1)
        s_ok = s[ok] + _GOLDEN
        u[ok] = ((mix64_vec(s_ok) >> _S11).astype(np.float64) + 1.0) * TWO_NEG53
        s[ok] = s_ok
        states[active] = s
        x2 = x * x
        accept = ok & (
            (u < 1.0 - 0.0331 * x2 * x2)
            | (np.log(u) < 0.5 * x2 + d * (1.0 - v + np.log(v)))
        )
        out[active[accept]] = d * v[accept] * inv
        active = active[~accept]
    return out
