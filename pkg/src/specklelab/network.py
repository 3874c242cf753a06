"""The despeckling network: architecture, training loop, whole-image inference.

The default architecture is a 10-layer chain of 3x3 convolutions: layer 1
maps the single input band to 64 feature maps (no normalization, no
activation), layers 2-9 are 64-map conv + batch norm + ReLU blocks, and
layer 10 projects back to one band.  The network predicts the clean image
directly; the cost's divergence term supervises the implied speckle
estimate through the ratio y/xhat.

Training is plain SGD with momentum over patch datasets.  Everything is
deterministic given the config seed: batch order comes from a dedicated
stream, parameter initialization from the build stream, and the kernel
backends are deterministic, so repeated runs produce byte-identical
checkpoints.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .loss import DIV_EPS, FLOOR_EPS, composite_cost
from .rng import Rng
from .speckle import PatchDataset, as_image
from .tensor_ops import (
    BatchNormState,
    ConvLayerParams,
    OptimizerState,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    relu,
    relu_backward,
    sgd_momentum_step,
)


@dataclass(frozen=True)
class LayerSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    has_bn: bool = False
    has_relu: bool = False


@dataclass
class ArchitectureSpec:
    """Ordered layer descriptors; channel counts must chain."""

    layers: list[LayerSpec]

    def validate(self) -> None:
        if not self.layers:
            raise ConfigError("architecture must have at least one layer")
        if self.layers[0].in_channels != 1:
            raise ConfigError("first layer must take 1 input channel")
        if self.layers[-1].out_channels != 1:
            raise ConfigError("last layer must produce 1 output channel")
        prev = None
        for i, spec in enumerate(self.layers):
            if spec.kernel < 1 or spec.kernel % 2 == 0:
                raise ConfigError(f"layer {i}: kernel size must be odd, got {spec.kernel}")
            if spec.in_channels < 1 or spec.out_channels < 1:
                raise ConfigError(f"layer {i}: channel counts must be >= 1")
            if prev is not None and spec.in_channels != prev:
                raise ConfigError(
                    f"layer {i} expects {spec.in_channels} channels but layer {i - 1} "
                    f"produces {prev}"
                )
            prev = spec.out_channels

    def __len__(self) -> int:
        return len(self.layers)


def make_architecture(depth: int = 10, features: int = 64, kernel: int = 3) -> ArchitectureSpec:
    """First and last layers plain conv; all middle layers conv + BN + ReLU."""
    if depth < 2:
        raise ConfigError("architecture depth must be >= 2")
    layers = [LayerSpec(1, features, kernel)]
    for _ in range(depth - 2):
        layers.append(LayerSpec(features, features, kernel, has_bn=True, has_relu=True))
    layers.append(LayerSpec(features, 1, kernel))
    return ArchitectureSpec(layers)


def default_architecture() -> ArchitectureSpec:
    return make_architecture(10, 64, 3)


@dataclass
class NetworkParams:
    arch: ArchitectureSpec
    layers: list[ConvLayerParams]

    def validate(self) -> None:
        self.arch.validate()
        if len(self.layers) != len(self.arch.layers):
            raise ShapeError("parameter list does not match architecture depth")
        for i, (lp, spec) in enumerate(zip(self.layers, self.arch.layers)):
            lp.validate()
            if (lp.out_channels, lp.in_channels, lp.kernel_size) != (
                spec.out_channels, spec.in_channels, spec.kernel,
            ):
                raise ShapeError(f"layer {i} parameters do not match its descriptor")
            if spec.has_bn != (lp.bn is not None):
                raise ShapeError(f"layer {i} batch-norm presence does not match descriptor")
            if spec.has_bn == (lp.bias is not None):
                raise ShapeError(f"layer {i}: bias must be present exactly when BN is absent")
        for arr in params_to_arrays(self):
            if not np.all(np.isfinite(arr)):
                raise NumericError("network parameters contain non-finite values")


@dataclass
class TrainConfig:
    epochs: int
    lam: float = 1.0
    eta: float = 2e-6
    momentum: float = 0.9
    batch_size: int = 64
    looks: float = 1.0
    seed: int = 0
    val_every: int = 100
    early_stop_patience: int | None = None
    eps_pair: tuple[float, float] = (FLOOR_EPS, DIV_EPS)

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.val_every < 1:
            raise ConfigError("val_every must be >= 1")


@dataclass
class TrainHistory:
    """(step, train_total, train_c1, train_c2, val_total, val_c1, val_c2) rows."""

    records: list[tuple] = field(default_factory=list)

    def add(self, row: tuple) -> None:
        if self.records and row[0] <= self.records[-1][0]:
            raise ValueError("history steps must be strictly increasing")
        self.records.append(row)

    def lines(self) -> list[str]:
        return [
            "%d %.12g %.12g %.12g %.12g %.12g %.12g" % row for row in self.records
        ]


def parameter_counts(arch: ArchitectureSpec) -> dict:
    """Closed-form parameter tally for an architecture.

    weights_biases counts kernels plus conv biases (layers without BN only);
    bn_affine counts gamma and beta; bn_running counts the running mean and
    variance vectors.
    """
    wb = affine = running = 0
    for spec in arch.layers:
        wb += spec.out_channels * spec.in_channels * spec.kernel ** 2
        if spec.has_bn:
            affine += 2 * spec.out_channels
            running += 2 * spec.out_channels
        else:
            wb += spec.out_channels
    return {"weights_biases": wb, "bn_affine": affine, "bn_running": running}


def build_network(arch: ArchitectureSpec, rng: Rng) -> NetworkParams:
    """He-initialized parameters: kernels ~ N(0, 2/fan_in), biases zero.

    Layers followed by batch norm carry no conv bias (beta plays that role);
    BN starts as the identity transform with zero-mean/unit-variance running
    statistics.  Deterministic given the rng seed.
    """
    arch.validate()
    layers = []
    for spec in arch.layers:
        fan_in = spec.in_channels * spec.kernel ** 2
        std = np.sqrt(2.0 / fan_in)
        n_weights = spec.out_channels * fan_in
        kern = (std * rng.normals(n_weights)).reshape(
            spec.out_channels, spec.in_channels, spec.kernel, spec.kernel
        )
        if spec.has_bn:
            layers.append(ConvLayerParams(
                kernels=kern, bias=None, bn=BatchNormState.identity(spec.out_channels),
            ))
        else:
            layers.append(ConvLayerParams(
                kernels=kern, bias=np.zeros(spec.out_channels), bn=None,
            ))
    params = NetworkParams(arch=arch, layers=layers)
    params.validate()
    return params


def params_to_arrays(params: NetworkParams) -> list[np.ndarray]:
    """Learnable arrays in checkpoint order: kernels, bias, gamma, beta."""
    out = []
    for lp in params.layers:
        out.append(lp.kernels)
        if lp.bias is not None:
            out.append(lp.bias)
        if lp.bn is not None:
            out.append(lp.bn.gamma)
            out.append(lp.bn.beta)
    return out


def _arrays_to_params(params: NetworkParams, arrays: list[np.ndarray]) -> None:
    """Write a flat array list (params_to_arrays order) back into `params`."""
    it = iter(arrays)
    for lp in params.layers:
        lp.kernels = next(it)
        if lp.bias is not None:
            lp.bias = next(it)
        if lp.bn is not None:
            lp.bn.gamma = next(it)
            lp.bn.beta = next(it)


def forward(params: NetworkParams, batch: np.ndarray, mode: str = "infer") -> np.ndarray:
    """Run the chain conv -> (BN) -> (ReLU) per layer; same spatial size out.

    Train mode normalizes by batch statistics but does not advance running
    statistics; that is the training loop's job.
    """
    out, _, _ = _forward_cached(params, batch, mode, keep=False)
    return out


def _forward_cached(params: NetworkParams, batch: np.ndarray, mode: str, keep: bool):
    a = np.ascontiguousarray(batch, dtype=np.float64)
    if a.ndim != 4 or a.shape[1] != 1:
        raise ShapeError(f"network input must be (batch, 1, rows, cols), got {a.shape}")
    caches = []
    new_states = []
    for lp, spec in zip(params.layers, params.arch.layers):
        pad = (spec.kernel - 1) // 2
        x_in = a
        z = conv2d_forward(a, lp, pad)
        if lp.bn is not None:
            zbn, new_state = batchnorm_forward(z, lp.bn, mode)
        else:
            zbn, new_state = z, None
        a = relu(zbn) if spec.has_relu else zbn
        new_states.append(new_state)
        if keep:
            caches.append((x_in, z, zbn))
    return a, caches, new_states


def _backward(params: NetworkParams, caches, grad_out: np.ndarray) -> list[np.ndarray]:
    """Gradients for every learnable array, in params_to_arrays order."""
    per_layer = []
    g = grad_out
    for lp, spec, (x_in, z, zbn) in zip(
        reversed(params.layers), reversed(params.arch.layers), reversed(caches)
    ):
        if spec.has_relu:
            g = relu_backward(zbn, g)
        if lp.bn is not None:
            g, g_gamma, g_beta = batchnorm_backward(z, lp.bn, g)
        else:
            g_gamma = g_beta = None
        g, g_kern, g_bias = conv2d_backward(x_in, lp, g)
        entry = [g_kern]
        if lp.bias is not None:
            entry.append(g_bias)
        if lp.bn is not None:
            entry.extend([g_gamma, g_beta])
        per_layer.append(entry)
    grads = []
    for entry in reversed(per_layer):
        grads.extend(entry)
    return grads


def _batch_cost(outputs, noisy, clean, speckle, lam, eps_pair):
    """Mean composite cost over a batch and the mean gradient tensor."""
    B = outputs.shape[0]
    grad = np.empty_like(outputs)
    tot = c1 = c2 = 0.0
    for k in range(B):
        bd, g = composite_cost(
            noisy[k], outputs[k, 0], clean[k], speckle[k], lam, eps_pair
        )
        grad[k, 0] = g
        tot += bd.total
        c1 += bd.c1_sid
        c2 += bd.c2_mse
    return tot / B, c1 / B, c2 / B, grad / B


def evaluate_cost(
    params: NetworkParams,
    dataset: PatchDataset,
    lam: float,
    batch_size: int = 64,
    eps_pair: tuple[float, float] = (FLOOR_EPS, DIV_EPS),
) -> tuple[float, float, float]:
    """Mean (total, c1, c2) over a dataset using infer-mode forwards."""
    n = len(dataset)
    if n == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    tot = c1 = c2 = 0.0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        batch = dataset.noisy[start:stop][:, None, :, :]
        out = forward(params, batch, "infer")
        for k in range(stop - start):
            bd, _ = composite_cost(
                dataset.noisy[start + k], out[k, 0],
                dataset.clean[start + k], dataset.speckle[start + k],
                lam, eps_pair,
            )
            tot += bd.total
            c1 += bd.c1_sid
            c2 += bd.c2_mse
    return tot / n, c1 / n, c2 / n


def _diagnose(params: NetworkParams, step: int) -> str:
    norms = ", ".join(
        f"L{i}={float(np.max(np.abs(lp.kernels))):.3g}"
        for i, lp in enumerate(params.layers, 1)
    )
    return f"non-finite loss at step {step}; max |kernel| per layer: {norms}"


def train(
    params: NetworkParams,
    dataset: PatchDataset,
    val: PatchDataset,
    cfg: TrainConfig,
) -> tuple[NetworkParams, TrainHistory]:
    """SGD-with-momentum training over the patch dataset.

    Runs epochs * ceil(count / batch_size) steps; each step shuffles into
    batches, forwards in train mode, averages the composite cost over the
    batch, backpropagates and applies one momentum update.  Batch-norm
    running statistics advance with every train-mode forward.  Validation
    costs are recorded at step 0, every `val_every` steps, and at the end.
    The input `params` object is not modified.
    """
    trained, history, _ = train_with_state(params, dataset, val, cfg)
    return trained, history


def train_with_state(
    params: NetworkParams,
    dataset: PatchDataset,
    val: PatchDataset,
    cfg: TrainConfig,
    opt: OptimizerState | None = None,
) -> tuple[NetworkParams, TrainHistory, OptimizerState | None]:
    """`train` plus optimizer-state threading, for resumable checkpoints."""
    cfg.validate()
    params.validate()
    if len(dataset) == 0:
        raise ConfigError("training dataset is empty")
    if len(val) == 0:
        raise ConfigError("validation dataset is empty")

    params = copy.deepcopy(params)
    history = TrainHistory()
    if cfg.epochs == 0:
        return params, history, opt

    order_rng = Rng(cfg.seed)
    if opt is None:
        opt = OptimizerState.zeros_like(params_to_arrays(params))
    else:
        opt = copy.deepcopy(opt)
    n = len(dataset)
    step = 0
    best_val = np.inf
    stale = 0

    def record(train_row):
        v_tot, v_c1, v_c2 = evaluate_cost(params, val, cfg.lam, cfg.batch_size, cfg.eps_pair)
        if not (np.isfinite(train_row[0]) and np.isfinite(v_tot)):
            err = NumericError(_diagnose(params, step))
            err.params = params
            raise err
        history.add((step, *train_row, v_tot, v_c1, v_c2))
        return v_tot

    stop = False
    for _ in range(cfg.epochs):
        if stop:
            break
        indices = list(range(n))
        order_rng.shuffle(indices)
        for start in range(0, n, cfg.batch_size):
            chosen = indices[start:start + cfg.batch_size]
            noisy = dataset.noisy[chosen]
            clean = dataset.clean[chosen]
            speckle = dataset.speckle[chosen]
            batch = noisy[:, None, :, :]

            out, caches, new_states = _forward_cached(params, batch, "train", keep=True)
            for lp, st in zip(params.layers, new_states):
                if st is not None:
                    lp.bn = st
            tot, c1, c2, grad_out = _batch_cost(
                out, noisy, clean, speckle, cfg.lam, cfg.eps_pair
            )
            if not np.isfinite(tot):
                err = NumericError(_diagnose(params, step))
                err.params = params
                raise err
            if step == 0:
                record((tot, c1, c2))

            grads = _backward(params, caches, grad_out)
            arrays, opt = sgd_momentum_step(
                params_to_arrays(params), grads, opt, cfg.eta, cfg.momentum
            )
            _arrays_to_params(params, arrays)
            step += 1

            if step % cfg.val_every == 0:
                v = record((tot, c1, c2))
                if cfg.early_stop_patience is not None:
                    if v < best_val:
                        best_val, stale = v, 0
                    else:
                        stale += 1
                        if stale >= cfg.early_stop_patience:
                            stop = True
                            break
        last_row = (tot, c1, c2)
    if not history.records or history.records[-1][0] != step:
        record(last_row)
    return params, history, opt


def despeckle_image(
    params: NetworkParams, image: np.ndarray, tile: int = 256, overlap: int = 16
) -> np.ndarray:
    """Filter a whole image with overlapped tiling and infer-mode forwards.

    Tiles step by tile - 2*overlap; each tile contributes its output minus
    an `overlap` margin on sides interior to the image, and overlapping
    contributions are averaged uniformly.  With overlap at least the
    network's receptive radius, interior pixels match an untiled forward
    pass.  Output is clamped to >= 0.
    """
    if tile <= 2 * overlap:
        raise ConfigError(f"tile ({tile}) must exceed twice the overlap ({overlap})")
    image = as_image(image)
    H, W = image.shape
    if H <= tile and W <= tile:
        out = forward(params, image[None, None], "infer")[0, 0]
        return np.maximum(out, 0.0)

    def starts(size):
        if size <= tile:
            return [0]
        step = tile - 2 * overlap
        pos = list(range(0, size - tile + 1, step))
        if pos[-1] != size - tile:
            pos.append(size - tile)
        return pos

    acc = np.zeros((H, W))
    cnt = np.zeros((H, W))
    for r0 in starts(H):
        th = min(tile, H)
        for c0 in starts(W):
            tw = min(tile, W)
            patch = image[r0:r0 + th, c0:c0 + tw]
            out = forward(params, patch[None, None], "infer")[0, 0]
            ra = overlap if r0 > 0 else 0
            rb = overlap if r0 + th < H else 0
            ca = overlap if c0 > 0 else 0
            cb = overlap if c0 + tw < W else 0
            acc[r0 + ra:r0 + th - rb, c0 + ca:c0 + tw - cb] += out[ra:th - rb, ca:tw - cb]
            cnt[r0 + ra:r0 + th - rb, c0 + ca:c0 + tw - cb] += 1.0
    return np.maximum(acc / cnt, 0.0)
