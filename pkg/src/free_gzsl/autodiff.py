"""Reverse-mode autodiff over dense numpy arrays.

Nodes live in an append-only :class:`Graph` and are addressed by integer id.
Every backward rule is written in terms of graph construction, so a gradient
is itself a node and can be differentiated again (needed for the WGAN
gradient penalty).

Tensors are plain ``numpy.ndarray`` values.  Broadcasting is never implicit:
``broadcast_row`` lifts a ``[d]`` vector onto ``[n, d]`` rows and ``expand``
stretches extent-1 axes (produced by keepdims reductions); every other shape
mismatch raises :class:`ShapeError`.
"""

from __future__ import annotations

import enum
from collections.abc import Callable, Iterable

import numpy as np


class OpKind(enum.Enum):
    LEAF = "leaf"
    CONST = "const"
    MATMUL = "matmul"
    TRANSPOSE = "transpose"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    SCALAR_MUL = "scalar-mul"
    LEAKY_RELU = "leaky-relu"
    SIGMOID = "sigmoid"
    EXP = "exp"
    LOG = "log"
    POW = "pow"
    CONCAT = "concat-last-axis"
    SLICE = "slice-last-axis"
    REDUCE_MEAN = "reduce-mean"
    REDUCE_SUM = "reduce-sum"
    SQUARE = "square"
    SQRT = "sqrt"
    ABS = "abs"
    L2_NORM_ROWS = "l2-norm-rows"
    BROADCAST_ROW = "broadcast-row"
    EXPAND = "expand"
    RESHAPE = "reshape"
    # piecewise-constant helpers used by backward rules; zero derivative
    LEAKY_SLOPE = "leaky-slope"
    SIGN = "sign"


class GraphError(ValueError):
    """Raised for malformed graph requests (unknown node, non-scalar output)."""


class ShapeError(GraphError):
    """Op inputs have incompatible shapes."""


def check_finite(t) -> bool:
    return bool(np.all(np.isfinite(t)))


class Node:
    __slots__ = ("op", "inputs", "payload", "value", "name")

    def __init__(self, op, inputs, payload, value, name=None):
        self.op = op
        self.inputs = inputs
        self.payload = payload
        self.value = value
        self.name = name

    def __repr__(self):
        shape = None if self.value is None else self.value.shape
        return f"Node({self.op.value}, inputs={self.inputs}, shape={shape})"


def _reduce_axes(shape, axis):
    if axis is None:
        return tuple(range(len(shape)))
    return (axis % len(shape),)


def _safe_pow(x, p, safe):
    if not safe:
        return np.power(x, p)
    out = np.zeros_like(x)
    nz = x != 0
    out[nz] = np.power(x[nz], p)
    return out


def _fwd_matmul(v, _):
    return v[0] @ v[1]


def _fwd_concat(v, _):
    return np.concatenate(v, axis=-1)


def _fwd_slice(v, p):
    return v[0][..., p[0]:p[1]]


def _fwd_l2(v, _):
    return np.sqrt(np.sum(v[0] * v[0], axis=1, keepdims=True))


def _fwd_sigmoid(v, _):
    x = v[0]
    # split by sign to keep exp() in range
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _fwd_leaky_slope(v, p):
    mask = (v[0] > 0).astype(v[0].dtype)
    if p:
        mask += v[0].dtype.type(p) * (1 - mask)
    return mask


_FORWARD: dict[OpKind, Callable] = {
    OpKind.MATMUL: _fwd_matmul,
    OpKind.TRANSPOSE: lambda v, p: v[0].T,
    OpKind.ADD: lambda v, p: v[0] + v[1],
    OpKind.SUB: lambda v, p: v[0] - v[1],
    OpKind.MUL: lambda v, p: v[0] * v[1],
    OpKind.SCALAR_MUL: lambda v, p: v[0] * v[0].dtype.type(p),
    OpKind.LEAKY_RELU: lambda v, p: np.maximum(v[0], v[0] * v[0].dtype.type(p)),
    OpKind.SIGMOID: _fwd_sigmoid,
    OpKind.EXP: lambda v, p: np.exp(v[0]),
    OpKind.LOG: lambda v, p: np.log(v[0]),
    OpKind.POW: lambda v, p: _safe_pow(v[0], p[0], p[1]),
    OpKind.CONCAT: _fwd_concat,
    OpKind.SLICE: _fwd_slice,
    OpKind.REDUCE_MEAN: lambda v, p: np.mean(v[0], axis=_reduce_axes(v[0].shape, p), keepdims=True),
    OpKind.REDUCE_SUM: lambda v, p: np.sum(v[0], axis=_reduce_axes(v[0].shape, p), keepdims=True),
    OpKind.SQUARE: lambda v, p: v[0] * v[0],
    OpKind.SQRT: lambda v, p: np.sqrt(v[0]),
    OpKind.ABS: lambda v, p: np.abs(v[0]),
    OpKind.L2_NORM_ROWS: _fwd_l2,
    OpKind.BROADCAST_ROW: lambda v, p: np.broadcast_to(v[0], (p, v[0].shape[0])).copy(),
    OpKind.EXPAND: lambda v, p: np.broadcast_to(v[0], p).copy(),
    OpKind.RESHAPE: lambda v, p: v[0].reshape(p),
    OpKind.LEAKY_SLOPE: _fwd_leaky_slope,
    OpKind.SIGN: lambda v, p: np.sign(v[0]),
}


class Graph:
    """Append-only expression graph with eagerly cached forward values.

    Leaves are created with :meth:`leaf` (differentiable inputs such as
    parameters) or :meth:`const` (data, masks, noise).  Op methods return the
    new node id.  ``assign`` replaces a leaf value; the next ``eval`` re-runs
    the affected suffix of the graph.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self._stale_from: int | None = None

    def __len__(self):
        return len(self.nodes)

    # -- leaves ---------------------------------------------------------

    def _as_array(self, value):
        arr = np.array(value, dtype=self.dtype)
        return arr

    def leaf(self, value, name=None) -> int:
        return self._push(OpKind.LEAF, (), None, self._as_array(value), name)

    def const(self, value, name=None) -> int:
        return self._push(OpKind.CONST, (), None, self._as_array(value), name)

    def assign(self, node: int, value) -> None:
        n = self._node(node)
        if n.op not in (OpKind.LEAF, OpKind.CONST):
            raise GraphError(f"node {node} ({n.op.value}) is not a leaf")
        arr = self._as_array(value)
        if arr.shape != n.value.shape:
            raise ShapeError(f"assign to node {node}: shape {arr.shape} != {n.value.shape}")
        n.value = arr
        if self._stale_from is None or node + 1 < self._stale_from:
            self._stale_from = node + 1

    def value(self, node: int) -> np.ndarray:
        return self.eval(node)

    def eval(self, node: int) -> np.ndarray:
        self._node(node)
        if self._stale_from is not None and self._stale_from <= node:
            for k in range(self._stale_from, node + 1):
                self._recompute(k)
            self._stale_from = node + 1 if node + 1 < len(self.nodes) else None
        return self.nodes[node].value

    def reevaluate(self) -> list[np.ndarray]:
        """Recompute every non-leaf node from the current leaves."""
        for k in range(len(self.nodes)):
            self._recompute(k)
        self._stale_from = None
        return [n.value for n in self.nodes]

    def _recompute(self, k):
        n = self.nodes[k]
        if n.op in (OpKind.LEAF, OpKind.CONST):
            return
        n.value = _FORWARD[n.op]([self.nodes[i].value for i in n.inputs], n.payload)

    def _node(self, node) -> Node:
        if not isinstance(node, (int, np.integer)) or not 0 <= node < len(self.nodes):
            raise GraphError(f"unknown node id {node!r}")
        return self.nodes[node]

    def shape(self, node: int) -> tuple:
        return self._node(node).value.shape

    def _push(self, op, inputs, payload, value, name=None) -> int:
        self.nodes.append(Node(op, inputs, payload, value, name))
        return len(self.nodes) - 1

    def _apply(self, op, inputs, payload=None) -> int:
        n = len(self.nodes)
        for i in inputs:
            if i.__class__ is not int or not 0 <= i < n:
                self._node(i)
        if self._stale_from is not None:
            self.eval(max(inputs))
        vals = [self.nodes[i].value for i in inputs]
        return self._push(op, tuple(inputs), payload, _FORWARD[op](vals, payload))

    def _shape_error(self, op, inputs, detail=""):
        shapes = ", ".join(f"#{i}{self.nodes[i].value.shape}" for i in inputs)
        msg = f"node {len(self.nodes)} ({op.value}): incompatible inputs {shapes}"
        raise ShapeError(msg + (f"; {detail}" if detail else ""))

    # -- ops ------------------------------------------------------------

    def matmul(self, a, b):
        sa, sb = self.shape(a), self.shape(b)
        if len(sa) != 2 or len(sb) != 2 or sa[1] != sb[0]:
            self._shape_error(OpKind.MATMUL, (a, b))
        return self._apply(OpKind.MATMUL, (a, b))

    def transpose(self, a):
        if len(self.shape(a)) != 2:
            self._shape_error(OpKind.TRANSPOSE, (a,), "needs a matrix")
        return self._apply(OpKind.TRANSPOSE, (a,))

    def _same_shape(self, op, a, b):
        if self.shape(a) != self.shape(b):
            self._shape_error(op, (a, b))
        return self._apply(op, (a, b))

    def add(self, a, b):
        return self._same_shape(OpKind.ADD, a, b)

    def sub(self, a, b):
        return self._same_shape(OpKind.SUB, a, b)

    def mul(self, a, b):
        return self._same_shape(OpKind.MUL, a, b)

    def scalar_mul(self, a, c: float):
        return self._apply(OpKind.SCALAR_MUL, (a,), float(c))

    def neg(self, a):
        return self.scalar_mul(a, -1.0)

    def add_scalar(self, a, c: float):
        return self.add(a, self.const(np.full(self.shape(a), c)))

    def leaky_relu(self, a, slope: float = 0.02):
        return self._apply(OpKind.LEAKY_RELU, (a,), float(slope))

    def relu(self, a):
        return self.leaky_relu(a, 0.0)

    def sigmoid(self, a):
        return self._apply(OpKind.SIGMOID, (a,))

    def exp(self, a):
        return self._apply(OpKind.EXP, (a,))

    def log(self, a):
        return self._apply(OpKind.LOG, (a,))

    def pow(self, a, p: float, safe: bool = False):
        """Elementwise ``a**p``; with ``safe`` zero inputs map to zero."""
        return self._apply(OpKind.POW, (a,), (float(p), bool(safe)))

    def concat(self, parts: Iterable[int]):
        parts = tuple(parts)
        if not parts:
            raise GraphError("concat of zero tensors")
        lead = self.shape(parts[0])[:-1]
        if any(len(self.shape(p)) == 0 or self.shape(p)[:-1] != lead for p in parts):
            self._shape_error(OpKind.CONCAT, parts)
        return self._apply(OpKind.CONCAT, parts)

    def slice(self, a, start: int, stop: int):
        width = self.shape(a)[-1]
        if not 0 <= start <= stop <= width:
            self._shape_error(OpKind.SLICE, (a,), f"slice [{start}:{stop}] of width {width}")
        return self._apply(OpKind.SLICE, (a,), (int(start), int(stop)))

    def reduce_sum(self, a, axis: int | None = None):
        return self._apply(OpKind.REDUCE_SUM, (a,), axis)

    def reduce_mean(self, a, axis: int | None = None):
        return self._apply(OpKind.REDUCE_MEAN, (a,), axis)

    def square(self, a):
        return self._apply(OpKind.SQUARE, (a,))

    def sqrt(self, a):
        return self._apply(OpKind.SQRT, (a,))

    def abs(self, a):
        return self._apply(OpKind.ABS, (a,))

    def l2_norm_rows(self, a):
        if len(self.shape(a)) != 2:
            self._shape_error(OpKind.L2_NORM_ROWS, (a,), "needs a matrix")
        return self._apply(OpKind.L2_NORM_ROWS, (a,))

    def broadcast_row(self, a, n: int):
        if len(self.shape(a)) != 1:
            self._shape_error(OpKind.BROADCAST_ROW, (a,), "needs a vector")
        return self._apply(OpKind.BROADCAST_ROW, (a,), int(n))

    def expand(self, a, shape):
        shape = tuple(int(s) for s in shape)
        src = self.shape(a)
        if len(src) != len(shape) or any(s not in (1, t) for s, t in zip(src, shape)):
            self._shape_error(OpKind.EXPAND, (a,), f"cannot expand to {shape}")
        if src == shape:
            return a
        return self._apply(OpKind.EXPAND, (a,), shape)

    def reshape(self, a, shape):
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != self._node(a).value.size:
            self._shape_error(OpKind.RESHAPE, (a,), f"cannot reshape to {shape}")
        return self._apply(OpKind.RESHAPE, (a,), shape)

    def ones_like(self, a):
        return self.const(np.ones(self.shape(a)))

    def zeros_like(self, a):
        return self.const(np.zeros(self.shape(a)))

    # -- differentiation ----------------------------------------------------

    def backward(self, output: int, wrt: Iterable[int]) -> dict[int, int]:
        """Return ``{node: gradient node}`` of scalar ``output`` w.r.t. ``wrt``.

        Gradients are ordinary graph nodes.  Nodes in ``wrt`` that ``output``
        does not depend on get a zero constant of their shape.
        """
        out = self._node(output)
        if out.value.size != 1:
            raise GraphError(f"backward needs a scalar output, node {output} has shape {out.value.shape}")
        wrt = list(dict.fromkeys(wrt))
        for w in wrt:
            self._node(w)
        self.eval(len(self.nodes) - 1)

        targets = set(wrt)
        # nodes whose value depends on some wrt node
        live = np.zeros(output + 1, dtype=bool)
        for k in range(output + 1):
            n = self.nodes[k]
            if k in targets or any(live[i] for i in n.inputs):
                live[k] = True

        grads: dict[int, int] = {}
        if live[output]:
            grads[output] = self.ones_like(output)
        for k in range(output, -1, -1):
            g = grads.get(k)
            n = self.nodes[k]
            if g is None or not n.inputs:
                continue
            for i, gi in zip(n.inputs, _BACKWARD[n.op](self, k, g)):
                if gi is None or not live[i]:
                    continue
                grads[i] = gi if i not in grads else self.add(grads[i], gi)

        result = {}
        for w in wrt:
            result[w] = grads[w] if w in grads else self.zeros_like(w)
        return result

    def grad_of_grad(self, output: int, inner_wrt: int, outer_wrt: Iterable[int],
                     scalarize: Callable[[Graph, int], int] | None = None) -> dict[int, int]:
        """Differentiate a scalar built from ``d output / d inner_wrt``.

        ``scalarize`` maps the first-gradient node to a scalar node (default:
        sum of its entries).  Returns gradients of that scalar w.r.t.
        ``outer_wrt``.
        """
        first = self.backward(output, [inner_wrt])[inner_wrt]
        scalar = scalarize(self, first) if scalarize else self.reduce_sum(first)
        return self.backward(scalar, outer_wrt)


# backward rules: (graph, node id, upstream grad id) -> grad id per input

def _bw_matmul(g, k, up):
    a, b = g.nodes[k].inputs
    return g.matmul(up, g.transpose(b)), g.matmul(g.transpose(a), up)


def _bw_leaky(g, k, up):
    # the mask is a node, so replaying the graph on new leaves stays exact
    (a,) = g.nodes[k].inputs
    return (g.mul(up, g._apply(OpKind.LEAKY_SLOPE, (a,), g.nodes[k].payload)),)


def _bw_sigmoid(g, k, up):
    s = k
    one_minus = g.sub(g.ones_like(s), s)
    return (g.mul(up, g.mul(s, one_minus)),)


def _bw_pow(g, k, up):
    (a,) = g.nodes[k].inputs
    p, safe = g.nodes[k].payload
    if p == 0.0:
        return (None,)
    d = g.scalar_mul(g.pow(a, p - 1.0, safe), p)
    return (g.mul(up, d),)


def _bw_concat(g, k, up):
    out = []
    start = 0
    for i in g.nodes[k].inputs:
        w = g.shape(i)[-1]
        out.append(g.slice(up, start, start + w))
        start += w
    return tuple(out)


def _bw_slice(g, k, up):
    (a,) = g.nodes[k].inputs
    start, stop = g.nodes[k].payload
    shape = g.shape(a)
    parts = []
    if start > 0:
        parts.append(g.const(np.zeros(shape[:-1] + (start,))))
    parts.append(up)
    if stop < shape[-1]:
        parts.append(g.const(np.zeros(shape[:-1] + (shape[-1] - stop,))))
    return (g.concat(parts) if len(parts) > 1 else up,)


def _bw_reduce_sum(g, k, up):
    (a,) = g.nodes[k].inputs
    return (g.expand(up, g.shape(a)),)


def _bw_reduce_mean(g, k, up):
    (a,) = g.nodes[k].inputs
    count = g.nodes[a].value.size // g.nodes[k].value.size
    return (g.scalar_mul(g.expand(up, g.shape(a)), 1.0 / count),)


def _bw_l2(g, k, up):
    (a,) = g.nodes[k].inputs
    shape = g.shape(a)
    inv = g.expand(g.pow(k, -1.0, safe=True), shape)
    return (g.mul(g.expand(up, shape), g.mul(a, inv)),)


def _bw_expand(g, k, up):
    (a,) = g.nodes[k].inputs
    src = g.shape(a)
    r = up
    for ax, (s, t) in enumerate(zip(src, g.nodes[k].payload)):
        if s == 1 and t != 1:
            r = g.reduce_sum(r, axis=ax)
    return (r,)


def _bw_broadcast_row(g, k, up):
    (a,) = g.nodes[k].inputs
    return (g.reshape(g.reduce_sum(up, axis=0), g.shape(a)),)


_BACKWARD: dict[OpKind, Callable] = {
    OpKind.MATMUL: _bw_matmul,
    OpKind.TRANSPOSE: lambda g, k, up: (g.transpose(up),),
    OpKind.ADD: lambda g, k, up: (up, up),
    OpKind.SUB: lambda g, k, up: (up, g.neg(up)),
    OpKind.MUL: lambda g, k, up: (g.mul(up, g.nodes[k].inputs[1]), g.mul(up, g.nodes[k].inputs[0])),
    OpKind.SCALAR_MUL: lambda g, k, up: (g.scalar_mul(up, g.nodes[k].payload),),
    OpKind.LEAKY_RELU: _bw_leaky,
    OpKind.SIGMOID: _bw_sigmoid,
    OpKind.EXP: lambda g, k, up: (g.mul(up, k),),
    OpKind.LOG: lambda g, k, up: (g.mul(up, g.pow(g.nodes[k].inputs[0], -1.0)),),
    OpKind.POW: _bw_pow,
    OpKind.CONCAT: _bw_concat,
    OpKind.SLICE: _bw_slice,
    OpKind.REDUCE_SUM: _bw_reduce_sum,
    OpKind.REDUCE_MEAN: _bw_reduce_mean,
    OpKind.SQUARE: lambda g, k, up: (g.mul(up, g.scalar_mul(g.nodes[k].inputs[0], 2.0)),),
    OpKind.SQRT: lambda g, k, up: (g.mul(up, g.scalar_mul(g.pow(k, -1.0), 0.5)),),
    OpKind.ABS: lambda g, k, up: (g.mul(up, g._apply(OpKind.SIGN, g.nodes[k].inputs)),),
    OpKind.L2_NORM_ROWS: _bw_l2,
    OpKind.BROADCAST_ROW: _bw_broadcast_row,
    OpKind.EXPAND: _bw_expand,
    OpKind.RESHAPE: lambda g, k, up: (g.reshape(up, g.shape(g.nodes[k].inputs[0])),),
    OpKind.LEAKY_SLOPE: lambda g, k, up: (None,),
    OpKind.SIGN: lambda g, k, up: (None,),
}


def eval(graph: Graph, node: int) -> np.ndarray:  # noqa: A001 - mirrors Graph.eval
    return graph.eval(node)


def backward(graph: Graph, output: int, wrt: Iterable[int]) -> dict[int, int]:
    return graph.backward(output, wrt)


def grad_of_grad(graph: Graph, output: int, inner_wrt: int, outer_wrt: Iterable[int],
                 scalarize=None) -> dict[int, int]:
    return graph.grad_of_grad(output, inner_wrt, outer_wrt, scalarize)
