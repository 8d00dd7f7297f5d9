"""MLP layers, initialization, Adam and the tensor checkpoint format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, ShapeError, check_finite

FINAL_ACTIVATIONS = ("none", "leaky-relu", "sigmoid")


@dataclass
class LinearLayer:
    weight: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"inconsistent layer: weight {self.weight.shape}, bias {self.bias.shape}")


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    slope: float = 0.02
    final: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or any(w <= 0 for w in self.widths):
            raise ValueError(f"MlpSpec needs at least two positive widths, got {self.widths}")
        if not 0.0 < self.slope < 1.0:
            raise ValueError(f"leaky-relu slope must lie in (0, 1), got {self.slope}")
        if self.final not in FINAL_ACTIVATIONS:
            raise ValueError(f"unknown final activation {self.final!r}")


def init_params(spec: MlpSpec, seed, dtype=np.float64) -> list[LinearLayer]:
    """He-style init: N(0, 2/fan_in) weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        layers.append(LinearLayer(w.astype(dtype), np.zeros(fan_out, dtype=dtype)))
    return layers


def bind_layers(graph: Graph, layers, prefix: str, trainable: bool = True) -> list[tuple[int, int]]:
    """Place layer parameters on ``graph``; returns ``(weight, bias)`` node ids."""
    make = graph.leaf if trainable else graph.const
    return [(make(l.weight, f"{prefix}.{i}.weight"), make(l.bias, f"{prefix}.{i}.bias"))
            for i, l in enumerate(layers)]


def linear(graph: Graph, x: int, w: int, b: int) -> int:
    n = graph.shape(x)[0]
    return graph.add(graph.matmul(x, graph.transpose(w)), graph.broadcast_row(b, n))


def mlp_forward(graph: Graph, nodes, x: int, spec: MlpSpec) -> int:
    """Run bound layers ``nodes`` on input node ``x`` ([batch, in])."""
    if graph.shape(x)[-1] != spec.widths[0]:
        raise ShapeError(f"mlp input width {graph.shape(x)[-1]} != {spec.widths[0]}")
    h = x
    last = len(nodes) - 1
    for i, (w, b) in enumerate(nodes):
        h = linear(graph, h, w, b)
        if i < last:
            h = graph.leaky_relu(h, spec.slope)
        elif spec.final == "leaky-relu":
            h = graph.leaky_relu(h, spec.slope)
        elif spec.final == "sigmoid":
            h = graph.sigmoid(h)
    return h


def layer_params(layers, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for i, l in enumerate(layers):
        out[f"{prefix}.{i}.weight"] = l.weight
        out[f"{prefix}.{i}.bias"] = l.bias
    return out


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not check_finite(g):
            raise NonFiniteGradient(name)
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {params[name].shape}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype, copy=False)


# -- checkpoint ------------------------------------------------------------

CKPT_MAGIC = b"GZB1"
CKPT_TAG = b"CKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named tensors as little-endian float32 under the CKPT section tag."""
    parts = [CKPT_MAGIC, CKPT_TAG, struct.pack("<II", CKPT_VERSION, len(tensors))]
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        t = np.asarray(t)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CKPT_MAGIC or buf[4:8] != CKPT_TAG:
        raise CheckpointError(f"{path}: not a CKPT container")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = buf[pos:pos + n]
        pos += n
        return out

    version, count = struct.unpack("<II", take(8))
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).copy()
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return tensors
