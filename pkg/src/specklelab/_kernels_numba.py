"""Numba kernel lane.

Hand-written loops compiled with ``@njit``; a 3x3 stencil fast path covers
the architecture's kernel size, a generic path handles other odd K.  The
conv kernels allow FP contraction/reassociation for SIMD (results stay
deterministic run to run); the Gamma sampler keeps strict FP semantics to
match the numpy lane to the last ulp.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .rng import GOLDEN as _GOLDEN_INT, MIX_A as _MIX_A_INT, MIX_B as _MIX_B_INT
from .rng import TWO_NEG53, TWO_PI

GOLDEN = np.uint64(_GOLDEN_INT)
MIX_A = np.uint64(_MIX_A_INT)
MIX_B = np.uint64(_MIX_B_INT)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)

_FAST = {"contract", "reassoc", "nsz", "arcp"}


@njit(cache=True, fastmath=_FAST)
def _conv2d_fwd(x, w, pad):
    B, N, H, W = x.shape
    M = w.shape[0]
    K = w.shape[2]
    xp = np.zeros((B, N, H + 2 * pad, W + 2 * pad))
    xp[:, :, pad:pad + H, pad:pad + W] = x
    out = np.zeros((B, M, H, W))
    for b in range(B):
        for m in range(M):
            o = out[b, m]
            for n in range(N):
                xpl = xp[b, n]
                if K == 3:
                    w00 = w[m, n, 0, 0]; w01 = w[m, n, 0, 1]; w02 = w[m, n, 0, 2]
                    w10 = w[m, n, 1, 0]; w11 = w[m, n, 1, 1]; w12 = w[m, n, 1, 2]
                    w20 = w[m, n, 2, 0]; w21 = w[m, n, 2, 1]; w22 = w[m, n, 2, 2]
                    for i in range(H):
                        r0 = xpl[i]; r1 = xpl[i + 1]; r2 = xpl[i + 2]
                        orow = o[i]
                        for j in range(W):
                            orow[j] += (w00 * r0[j] + w01 * r0[j + 1] + w02 * r0[j + 2]
                                        + w10 * r1[j] + w11 * r1[j + 1] + w12 * r1[j + 2]
                                        + w20 * r2[j] + w21 * r2[j + 1] + w22 * r2[j + 2])
                else:
                    for p in range(K):
                        for q in range(K):
                            wv = w[m, n, p, q]
                            for i in range(H):
                                xr = xpl[i + p]
                                orow = o[i]
                                for j in range(W):
                                    orow[j] += wv * xr[j + q]
    return out


@njit(cache=True, fastmath=_FAST)
def _conv2d_grad_kernel(x, go, K, pad):
    B, N, H, W = x.shape
    M = go.shape[1]
    xp = np.zeros((B, N, H + 2 * pad, W + 2 * pad))
    xp[:, :, pad:pad + H, pad:pad + W] = x
    gw = np.zeros((M, N, K, K))
    for b in range(B):
        for m in range(M):
            g = go[b, m]
            for n in range(N):
                xpl = xp[b, n]
                if K == 3:
                    for p in range(3):
                        a0 = 0.0; a1 = 0.0; a2 = 0.0
                        for i in range(H):
                            xr = xpl[i + p]
                            gr = g[i]
                            for j in range(W):
                                gv = gr[j]
                                a0 += gv * xr[j]
                                a1 += gv * xr[j + 1]
                                a2 += gv * xr[j + 2]
                        gw[m, n, p, 0] += a0
                        gw[m, n, p, 1] += a1
                        gw[m, n, p, 2] += a2
                else:
                    for p in range(K):
                        for q in range(K):
                            acc = 0.0
                            for i in range(H):
                                xr = xpl[i + p]
                                gr = g[i]
                                for j in range(W):
                                    acc += gr[j] * xr[j + q]
                            gw[m, n, p, q] += acc
    return gw


@njit(cache=True)
def _gamma_field(key, n, shape):
    out = np.empty(n)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    inv = 1.0 / shape
    for i in range(n):
        s = key + np.uint64(i + 1) * GOLDEN
        s = (s ^ (s >> S30)) * MIX_A
        s = (s ^ (s >> S27)) * MIX_B
        s = s ^ (s >> S31)
        while True:
            s += GOLDEN
            z = s
            z = (z ^ (z >> S30)) * MIX_A
            z = (z ^ (z >> S27)) * MIX_B
            z = z ^ (z >> S31)
            u1 = (np.float64(z >> S11) + 1.0) * TWO_NEG53
            s += GOLDEN
            z = s
            z = (z ^ (z >> S30)) * MIX_A
            z = (z ^ (z >> S27)) * MIX_B
            z = z ^ (z >> S31)
            u2 = (np.float64(z >> S11) + 1.0) * TWO_NEG53
            x = math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)
            t = 1.0 + c * x
            if t <= 0.0:
                continue
            v = t * t * t
            s += GOLDEN
            z = s
            z = (z ^ (z >> S30)) * MIX_A
            z = (z ^ (z >> S27)) * MIX_B
            z = z ^ (z >> S31)
            u = (np.float64(z >> S11) + 1.0) * TWO_NEG53
            x2 = x * x
            if u < 1.0 - 0.0331 * x2 * x2:
                out[i] = d * v * inv
                break
            if math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
                out[i] = d * v * inv
                break
    return out


def conv2d_fwd(x: np.ndarray, w: np.ndarray, pad: int) -> np.ndarray:
    """Same-padding correlation: (B,N,H,W) x (M,N,K,K) -> (B,M,H,W)."""
    return _conv2d_fwd(x, w, pad)


def conv2d_grad_kernel(x: np.ndarray, go: np.ndarray, K: int, pad: int) -> np.ndarray:
    """Kernel gradient of the same-padding correlation."""
    return _conv2d_grad_kernel(x, go, K, pad)


def gamma_field(key: int, n: int, shape: float) -> np.ndarray:
    """n unit-mean Gamma(shape, rate=shape) draws from substreams of `key`."""
    return _gamma_field(np.uint64(key), n, shape)
