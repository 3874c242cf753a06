"""Differentiable numeric primitives for the despeckling network.

Rank-4 tensors are plain C-contiguous float64 ``numpy`` arrays laid out
(batch, channel, row, col).  Every operation here is a pure function: batch
normalization returns an updated state instead of mutating, and the SGD step
returns fresh parameter arrays.  Backward passes are exact adjoints,
verified against central finite differences by ``finite_diff_check``.

Convolution is implemented as correlation (no kernel flip) with zero
padding of (K-1)/2 so spatial dimensions are preserved; the kernels are
learned, so the flip convention is unobservable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .backend import kernels
from .errors import ConfigError, DegenerateBatchError, NumericError, ShapeError


def as_tensor4(x, name: str = "input") -> np.ndarray:
    """Validate/coerce to a C-contiguous float64 rank-4 array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (batch, channel, row, col), got rank {arr.ndim}")
    if min(arr.shape) < 1:
        raise ShapeError(f"{name} has a zero-length dimension: {arr.shape}")
    return arr


@dataclass
class BatchNormState:
    """Per-channel batch normalization parameters and running statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum_bn: float = 0.1

    @classmethod
    def identity(cls, channels: int, epsilon: float = 1e-5, momentum_bn: float = 0.1):
        return cls(
            gamma=np.ones(channels),
            beta=np.zeros(channels),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
            epsilon=epsilon,
            momentum_bn=momentum_bn,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def validate(self) -> None:
        c = self.gamma.shape[0]
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != (c,):
                raise ShapeError(f"batch-norm vector {name} does not match gamma length {c}")
        if np.any(self.running_var < 0):
            raise ConfigError("running_var entries must be >= 0")
        if not self.epsilon > 0:
            raise ConfigError("batch-norm epsilon must be positive")


@dataclass
class ConvLayerParams:
    """One convolutional layer: (M,N,K,K) kernels, optional bias, optional BN.

    Layers followed by batch normalization carry no bias; BN's beta absorbs it.
    """

    kernels: np.ndarray
    bias: np.ndarray | None = None
    bn: BatchNormState | None = None

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[2]

    def validate(self) -> None:
        if self.kernels.ndim != 4 or self.kernels.shape[2] != self.kernels.shape[3]:
            raise ShapeError("kernels must have shape (out_channels, in_channels, K, K)")
        K = self.kernels.shape[2]
        if K % 2 == 0:
            raise ConfigError(f"kernel size must be odd for same-padding, got {K}")
        if self.bias is not None and self.bias.shape != (self.out_channels,):
            raise ShapeError("bias length must equal out_channels")
        if self.bn is not None:
            self.bn.validate()
            if self.bn.channels != self.out_channels:
                raise ShapeError("batch-norm channel count must equal out_channels")


@dataclass
class OptimizerState:
    """SGD momentum buffers: one velocity array per parameter array."""

    velocity: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]):
        return cls([np.zeros_like(p) for p in params])


def conv2d_forward(x: np.ndarray, layer: ConvLayerParams, padding: int) -> np.ndarray:
    """Same-size correlation of a (B,N,H,W) batch with the layer's kernels.

    Out-of-bounds taps read zero.  `padding` must equal (K-1)/2.
    """
    x = as_tensor4(x)
    layer.validate()
    K = layer.kernel_size
    if x.shape[1] != layer.in_channels:
        raise ShapeError(
            f"input has {x.shape[1]} channels, layer expects {layer.in_channels}"
        )
    if padding != (K - 1) // 2:
        raise ConfigError(f"padding must be (K-1)/2 = {(K - 1) // 2}, got {padding}")
    w = np.ascontiguousarray(layer.kernels, dtype=np.float64)
    out = kernels().conv2d_fwd(x, w, padding)
    if layer.bias is not None:
        out += layer.bias.reshape(1, -1, 1, 1)
    return out


def _adjoint_kernels(w: np.ndarray) -> np.ndarray:
    """Swap in/out channels and flip spatially: the input-gradient kernel."""
    return np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])


def conv2d_backward(
    x: np.ndarray, layer: ConvLayerParams, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact adjoints of conv2d_forward: (grad_input, grad_kernels, grad_bias)."""
    x = as_tensor4(x)
    grad_out = as_tensor4(grad_out, "grad_out")
    K = layer.kernel_size
    pad = (K - 1) // 2
    expected = (x.shape[0], layer.out_channels, x.shape[2], x.shape[3])
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match output {expected}")
    w = np.ascontiguousarray(layer.kernels, dtype=np.float64)
    grad_input = kernels().conv2d_fwd(grad_out, _adjoint_kernels(w), pad)
    grad_kernels = kernels().conv2d_grad_kernel(x, grad_out, K, pad)
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    return grad_input, grad_kernels, grad_bias


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Pass grad where x > 0, zero elsewhere (subgradient 0 at exactly 0)."""
    if x.shape != grad_out.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match input {x.shape}")
    return np.where(x > 0.0, grad_out, 0.0)


def _batch_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    mu = x.mean(axis=(0, 2, 3))
    var = ((x - mu.reshape(1, -1, 1, 1)) ** 2).mean(axis=(0, 2, 3))
    count = x.shape[0] * x.shape[2] * x.shape[3]
    return mu, var, count


def batchnorm_forward(
    x: np.ndarray, state: BatchNormState, mode: str
) -> tuple[np.ndarray, BatchNormState]:
    """Normalize per channel; returns (output, updated state).

    Train mode uses batch statistics over (batch, row, col) and advances the
    running statistics by exponential moving average (new = (1-m)*old +
    m*batch; the running variance uses the unbiased estimate).  Infer mode
    applies the running statistics and returns the state unchanged.
    """
    x = as_tensor4(x)
    state.validate()
    if x.shape[1] != state.channels:
        raise ShapeError(f"input has {x.shape[1]} channels, state has {state.channels}")
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
    g = state.gamma.reshape(1, -1, 1, 1)
    b = state.beta.reshape(1, -1, 1, 1)
    if mode == "infer":
        inv = 1.0 / np.sqrt(state.running_var + state.epsilon)
        out = g * ((x - state.running_mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)) + b
        return out, state
    mu, var, count = _batch_stats(x)
    if count < 2:
        raise DegenerateBatchError(
            f"train-mode batch norm needs batch*rows*cols >= 2, got {count}"
        )
    inv = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (x - mu.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
    out = g * xhat + b
    m = state.momentum_bn
    unbiased = var * (count / (count - 1))
    new_state = replace(
        state,
        running_mean=(1.0 - m) * state.running_mean + m * mu,
        running_var=(1.0 - m) * state.running_var + m * unbiased,
    )
    return out, new_state


def batchnorm_backward(
    x: np.ndarray, state: BatchNormState, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adjoint of train-mode normalization, including the mean/variance terms.

    Batch statistics are recomputed from `x`, so this must see the same batch
    the forward pass saw.
    """
    x = as_tensor4(x)
    grad_out = as_tensor4(grad_out, "grad_out")
    if x.shape != grad_out.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match input {x.shape}")
    mu, var, count = _batch_stats(x)
    inv = (1.0 / np.sqrt(var + state.epsilon)).reshape(1, -1, 1, 1)
    xhat = (x - mu.reshape(1, -1, 1, 1)) * inv
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    dxhat = grad_out * state.gamma.reshape(1, -1, 1, 1)
    sum_dxhat = dxhat.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
    grad_input = (inv / count) * (count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return grad_input, grad_gamma, grad_beta


def sgd_momentum_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    opt: OptimizerState,
    eta: float,
    mu: float,
) -> tuple[list[np.ndarray], OptimizerState]:
    """Momentum update v <- mu*v - eta*g; p <- p + v for every array.

    With mu = 0 this reproduces plain gradient descent p - eta*g bitwise.
    """
    if not eta > 0:
        raise ConfigError("learning rate eta must be positive")
    if not 0.0 <= mu < 1.0:
        raise ConfigError("momentum mu must be in [0, 1)")
    if len(params) != len(grads) or len(params) != len(opt.velocity):
        raise ShapeError("params, grads and velocity must have the same length")
    new_params = []
    new_velocity = []
    for p, g, v in zip(params, grads, opt.velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeError(
                f"parameter/gradient/velocity shapes disagree: {p.shape}, {g.shape}, {v.shape}"
            )
        v_next = mu * v - eta * g
        new_params.append(p + v_next)
        new_velocity.append(v_next)
    return new_params, OptimizerState(new_velocity)


def finite_diff_check(loss_fn, point: np.ndarray, step: float) -> float:
    """Max relative error between analytic gradient and central differences.

    `loss_fn(x)` must return ``(value, grad)`` with grad shaped like x.
    Relative error per coordinate uses a max(|analytic|, |numeric|, 1e-8)
    denominator.
    """
    if not step > 0:
        raise ConfigError("step must be positive")
    point = np.asarray(point, dtype=np.float64)
    value, grad = loss_fn(point)
    if not np.isfinite(value):
        raise NumericError(f"loss is not finite at the evaluation point: {value}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != point.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match point {point.shape}")
    flat = point.ravel()
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up, _ = loss_fn(point)
        flat[i] = orig - step
        down, _ = loss_fn(point)
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"loss is not finite near coordinate {i}")
        numeric[i] = (up - down) / (2.0 * step)
    a = grad.ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(a - numeric) / denom))
