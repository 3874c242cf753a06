"""Binary network checkpoints (DSPKNET1, optional DSPKOPT1 trailer).

Layout, all multi-byte integers little-endian, all floats IEEE-754 32-bit
little-endian:

    magic "DSPKNET1" (8) | version u16 | layer count u16
    per layer:
        in_channels u32 | out_channels u32 | K u32 | has_bn u8 | has_relu u8
        | 2 pad bytes (4-byte alignment)
        kernel weights, row-major (out, in, row, col)
        bias (length out_channels)            -- present iff has_bn == 0
        gamma, beta, running_mean, running_var -- present iff has_bn == 1
    optional trailer:
        sub-magic "DSPKOPT1" (8)
        velocity arrays in the same order as the learnable parameters
        (kernels, bias, gamma, beta per layer; running statistics have no
        velocity)

Batch-norm epsilon and EMA momentum are repository constants and are not
stored.  Parameters live in float64 in memory, so a save/load round trip
quantizes once to float32 and is bit-exact thereafter.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError, FormatError
from .network import ArchitectureSpec, LayerSpec, NetworkParams, params_to_arrays
from .tensor_ops import BatchNormState, ConvLayerParams, OptimizerState

CHECKPOINT_MAGIC = b"DSPKNET1"
OPTIMIZER_MAGIC = b"DSPKOPT1"
VERSION = 1


def expected_checkpoint_size(arch: ArchitectureSpec, with_optimizer: bool = False) -> int:
    """Exact file size in bytes for a checkpoint of this architecture."""
    size = 12
    vel = 0
    for spec in arch.layers:
        n_kern = spec.out_channels * spec.in_channels * spec.kernel ** 2
        n_layer = n_kern + (4 * spec.out_channels if spec.has_bn else spec.out_channels)
        size += 16 + 4 * n_layer
        vel += n_kern + (2 * spec.out_channels if spec.has_bn else spec.out_channels)
    if with_optimizer:
        size += 8 + 4 * vel
    return size


def save_checkpoint(params: NetworkParams, opt: OptimizerState | None, path) -> None:
    """Write params (and optionally the optimizer velocity) to `path`."""
    params.validate()
    chunks = [CHECKPOINT_MAGIC, struct.pack("<HH", VERSION, len(params.layers))]
    for lp, spec in zip(params.layers, params.arch.layers):
        chunks.append(struct.pack(
            "<IIIBBxx",
            spec.in_channels, spec.out_channels, spec.kernel,
            1 if spec.has_bn else 0, 1 if spec.has_relu else 0,
        ))
        chunks.append(lp.kernels.astype("<f4").tobytes())
        if lp.bn is None:
            chunks.append(lp.bias.astype("<f4").tobytes())
        else:
            for arr in (lp.bn.gamma, lp.bn.beta, lp.bn.running_mean, lp.bn.running_var):
                chunks.append(arr.astype("<f4").tobytes())
    if opt is not None:
        expected = params_to_arrays(params)
        if len(opt.velocity) != len(expected) or any(
            v.shape != p.shape for v, p in zip(opt.velocity, expected)
        ):
            raise ConfigError("optimizer velocity does not mirror the network parameters")
        chunks.append(OPTIMIZER_MAGIC)
        for v in opt.velocity:
            chunks.append(v.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.blob):
            raise FormatError(
                f"checkpoint truncated at offset {self.offset} while reading {what} "
                f"({n} bytes needed, {len(self.blob) - self.offset} left)"
            )
        out = self.blob[self.offset:self.offset + n]
        self.offset += n
        return out

    def floats(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def load_checkpoint(path) -> tuple[NetworkParams, OptimizerState | None]:
    """Read a DSPKNET1 file; returns (params, optimizer state or None)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic = r.take(8, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic at offset 0: {magic!r}")
    version, n_layers = struct.unpack("<HH", r.take(4, "version/layer count"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at offset 8")
    specs = []
    layers = []
    for i in range(n_layers):
        header_off = r.offset
        cin, cout, K, has_bn, has_relu = struct.unpack(
            "<IIIBBxx", r.take(16, f"layer {i} header")
        )
        if K < 1 or K % 2 == 0 or cin < 1 or cout < 1:
            raise FormatError(f"invalid layer {i} header at offset {header_off}")
        specs.append(LayerSpec(cin, cout, K, bool(has_bn), bool(has_relu)))
        kern = r.floats(cout * cin * K * K, f"layer {i} kernels").reshape(cout, cin, K, K)
        if has_bn:
            gamma = r.floats(cout, f"layer {i} gamma")
            beta = r.floats(cout, f"layer {i} beta")
            rm = r.floats(cout, f"layer {i} running mean")
            rv = r.floats(cout, f"layer {i} running var")
            bn = BatchNormState(gamma=gamma, beta=beta, running_mean=rm, running_var=rv)
            layers.append(ConvLayerParams(kernels=kern, bias=None, bn=bn))
        else:
            bias = r.floats(cout, f"layer {i} bias")
            layers.append(ConvLayerParams(kernels=kern, bias=bias, bn=None))
    params = NetworkParams(arch=ArchitectureSpec(specs), layers=layers)
    params.validate()

    opt = None
    if r.offset < len(blob):
        sub_off = r.offset
        sub = r.take(8, "optimizer sub-magic")
        if sub != OPTIMIZER_MAGIC:
            raise FormatError(f"unexpected trailing data at offset {sub_off}: {sub!r}")
        velocity = [
            r.floats(p.size, "optimizer velocity").reshape(p.shape)
            for p in params_to_arrays(params)
        ]
        opt = OptimizerState(velocity)
    if r.offset != len(blob):
        raise FormatError(f"unexpected trailing data at offset {r.offset}")
    return params, opt
