"""Encoder, generator, critic and feature-refinement networks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, ShapeError
from .nn import LinearLayer, MlpSpec, bind_layers, init_params, layer_params, linear, mlp_forward

NETWORKS = ("E", "G", "D", "FR")
H_CHOICES = ("h1", "h2", "mu")


@dataclass(frozen=True)
class ModelDims:
    feat_dim: int
    attr_dim: int
    n_classes: int
    latent_dim: int = 0  # 0: same as attr_dim
    hidden: int = 4096
    fr_hidden: int = 4096
    slope: float = 0.02
    g_final: str = "none"

    def __post_init__(self):
        if self.latent_dim == 0:
            object.__setattr__(self, "latent_dim", self.attr_dim)

    def as_array(self) -> np.ndarray:
        finals = {"none": 0, "leaky-relu": 1, "sigmoid": 2}
        return np.array([self.feat_dim, self.attr_dim, self.n_classes, self.latent_dim, self.hidden,
                         self.fr_hidden, self.slope, finals[self.g_final]], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> ModelDims:
        finals = ["none", "leaky-relu", "sigmoid"]
        # checkpoints store f32; 7 significant digits recover the written slope
        a = [float(v) for v in a]
        return cls(int(a[0]), int(a[1]), int(a[2]), int(a[3]), int(a[4]), int(a[5]),
                   float(f"{a[6]:.7g}"), finals[int(a[7])])


@dataclass
class FreeModel:
    dims: ModelDims
    E: list[LinearLayer]
    G: list[LinearLayer]
    D: list[LinearLayer]
    FR: list[LinearLayer]
    centers: np.ndarray  # [n_classes, attr_dim]

    def specs(self) -> dict[str, MlpSpec]:
        d = self.dims
        return {
            "E": MlpSpec((d.feat_dim + d.attr_dim, d.hidden, 2 * d.latent_dim), d.slope),
            "G": MlpSpec((d.latent_dim + d.attr_dim, d.hidden, d.feat_dim), d.slope, d.g_final),
            "D": MlpSpec((d.feat_dim + d.attr_dim, d.hidden, 1), d.slope),
            "FR": MlpSpec((d.feat_dim, d.fr_hidden, 2 * d.attr_dim, 2 * d.attr_dim), d.slope),
        }

    def params(self, networks=NETWORKS + ("centers",)) -> dict[str, np.ndarray]:
        out = {}
        for net in networks:
            if net == "centers":
                out["centers"] = self.centers
            else:
                out.update(layer_params(getattr(self, net), net))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"meta.dims": self.dims.as_array()}
        out.update(self.params())
        return out

    def copy(self) -> FreeModel:
        cp = lambda ls: [LinearLayer(l.weight.copy(), l.bias.copy()) for l in ls]  # noqa: E731
        return FreeModel(self.dims, cp(self.E), cp(self.G), cp(self.D), cp(self.FR), self.centers.copy())

    def astype(self, dtype) -> FreeModel:
        cast = lambda ls: [LinearLayer(l.weight.astype(dtype), l.bias.astype(dtype)) for l in ls]  # noqa: E731
        return FreeModel(self.dims, cast(self.E), cast(self.G), cast(self.D), cast(self.FR),
                         self.centers.astype(dtype))


def init_model(dims: ModelDims, attributes: np.ndarray, seed, dtype=np.float64,
               center_scale: float | None = None) -> FreeModel:
    """Fresh model; class centers start at the (rescaled) attribute rows.

    ``center_scale`` defaults to 1/RMS of the attribute matrix, so centers
    have unit root-mean-square entries.
    """
    attributes = np.asarray(attributes, dtype=np.float64)
    if attributes.shape != (dims.n_classes, dims.attr_dim):
        raise ShapeError(f"attributes {attributes.shape} do not match dims "
                         f"({dims.n_classes}, {dims.attr_dim})")
    model = FreeModel(dims, [], [], [], [], np.zeros(0))
    specs = model.specs()
    for i, net in enumerate(NETWORKS):
        setattr(model, net, init_params(specs[net], [seed, i], dtype))
    if center_scale is None:
        rms = float(np.sqrt(np.mean(attributes ** 2)))
        center_scale = 1.0 / rms if rms > 0 else 1.0
    model.centers = (attributes * center_scale).astype(dtype)
    return model


def model_from_state(state: dict[str, np.ndarray], dtype=np.float64) -> FreeModel:
    dims = ModelDims.from_array(state["meta.dims"])
    model = FreeModel(dims, [], [], [], [], state["centers"].astype(dtype))
    for net, spec in model.specs().items():
        layers = []
        for i in range(len(spec.widths) - 1):
            layers.append(LinearLayer(state[f"{net}.{i}.weight"].astype(dtype),
                                      state[f"{net}.{i}.bias"].astype(dtype)))
        setattr(model, net, layers)
    return model


class Bound:
    """A model placed on a graph.  Only ``trainable`` networks become leaves."""

    def __init__(self, model: FreeModel, graph: Graph, trainable=()):
        self.model = model
        self.graph = graph
        self.specs = model.specs()
        self.trainable = set(trainable)
        self._nodes: dict[str, list[tuple[int, int]]] = {}
        self._centers: int | None = None
        for net in NETWORKS:
            if net in self.trainable:
                self.layers(net)

    def layers(self, net: str) -> list[tuple[int, int]]:
        """(weight, bias) node ids of ``net``, placed on the graph on first use."""
        if net not in self._nodes:
            self._nodes[net] = bind_layers(self.graph, getattr(self.model, net), net,
                                           net in self.trainable)
        return self._nodes[net]

    @property
    def centers(self) -> int:
        if self._centers is None:
            make = self.graph.leaf if "centers" in self.trainable else self.graph.const
            self._centers = make(self.model.centers, "centers")
        return self._centers

    def param_nodes(self) -> dict[str, int]:
        """Parameter name -> node id for every trainable parameter."""
        out = {}
        for net in NETWORKS:
            if net in self.trainable:
                for i, (w, b) in enumerate(self.layers(net)):
                    out[f"{net}.{i}.weight"] = w
                    out[f"{net}.{i}.bias"] = b
        if "centers" in self.trainable:
            out["centers"] = self.centers
        return out

    def placed_nodes(self) -> dict[str, int]:
        """Parameter name -> node id for everything placed so far, trainable or not."""
        out = {}
        for net, pairs in self._nodes.items():
            for i, (w, b) in enumerate(pairs):
                out[f"{net}.{i}.weight"] = w
                out[f"{net}.{i}.bias"] = b
        if self._centers is not None:
            out["centers"] = self._centers
        return out

    def run(self, net: str, x: int) -> int:
        return mlp_forward(self.graph, self.layers(net), x, self.specs[net])


def _check_batch(g: Graph, *nodes):
    n = g.shape(nodes[0])[0]
    for k in nodes[1:]:
        if g.shape(k)[0] != n:
            raise ShapeError("batch sizes differ: " + ", ".join(str(g.shape(i)) for i in nodes))


def encode(bm: Bound, x: int, a: int, eps: int):
    """Reparametrized latent code; returns ``(z, mu_z, log_var_z)`` node ids."""
    g = bm.graph
    _check_batch(g, x, a, eps)
    k = bm.model.dims.latent_dim
    out = bm.run("E", g.concat([x, a]))
    mu, log_var = g.slice(out, 0, k), g.slice(out, k, 2 * k)
    if g.shape(eps) != g.shape(mu):
        raise ShapeError(f"encoder noise shape {g.shape(eps)} != {g.shape(mu)}")
    z = g.add(mu, g.mul(g.exp(g.scalar_mul(log_var, 0.5)), eps))
    return z, mu, log_var


def generate(bm: Bound, z: int, a: int) -> int:
    _check_batch(bm.graph, z, a)
    return bm.run("G", bm.graph.concat([z, a]))


def discriminate(bm: Bound, x: int, a: int) -> int:
    """Critic score per row, shape [batch, 1]."""
    _check_batch(bm.graph, x, a)
    return bm.run("D", bm.graph.concat([x, a]))


@dataclass
class FrOutput:
    h1: int
    mu: int
    log_var: int
    a_hat: int
    h2: int | None = None  # second hidden layer, 2 * attr_dim wide


def fr_forward(bm: Bound, x: int, eps: int | None = None) -> FrOutput:
    """FR pass: two LeakyReLU layers, a linear (mu, log_var) encoder, and the
    reparametrized attribute ``a_hat``.  ``eps=None`` means zero noise."""
    g = bm.graph
    dims = bm.model.dims
    if g.shape(x)[-1] != dims.feat_dim:
        raise ShapeError(f"FR input width {g.shape(x)[-1]} != feat_dim {dims.feat_dim}")
    (w1, b1), (w2, b2), (w3, b3) = bm.layers("FR")
    h1 = g.leaky_relu(linear(g, x, w1, b1), dims.slope)
    h2 = g.leaky_relu(linear(g, h1, w2, b2), dims.slope)
    enc = linear(g, h2, w3, b3)
    k = dims.attr_dim
    mu, log_var = g.slice(enc, 0, k), g.slice(enc, k, 2 * k)
    if eps is None:
        a_hat = mu
    else:
        if g.shape(eps) != g.shape(mu):
            raise ShapeError(f"FR noise shape {g.shape(eps)} != {g.shape(mu)}")
        a_hat = g.add(mu, g.mul(g.exp(g.scalar_mul(log_var, 0.5)), eps))
    return FrOutput(h1, mu, log_var, a_hat, h2)


FEATURE_VARIANTS = ("x", "x+h", "x+h+a")


def refine(bm: Bound, x: int, fr: FrOutput | None = None, h_choice: str = "h2",
           parts: str = "x+h+a") -> int:
    """Concatenate ``x`` with the chosen FR layer and the mean attribute."""
    if h_choice not in H_CHOICES:
        raise ValueError(f"h_choice must be one of {H_CHOICES}, got {h_choice!r}")
    if parts not in FEATURE_VARIANTS:
        raise ValueError(f"unknown feature variant {parts!r}")
    if parts == "x":
        return x
    g = bm.graph
    if fr is None:
        fr = fr_forward(bm, x)
    _check_batch(g, x, fr.mu)
    h = {"h1": fr.h1, "h2": fr.h2, "mu": fr.mu}[h_choice]
    pieces = [x, h]
    if parts == "x+h+a":
        pieces.append(fr.mu)
    return g.concat(pieces)


def refine_array(model: FreeModel, x: np.ndarray, h_choice="h2", parts="x+h+a",
                 dtype=np.float64, chunk=4096) -> np.ndarray:
    """Numpy convenience wrapper around :func:`refine` with zero FR noise."""
    x = np.asarray(x, dtype=dtype)
    if parts == "x":
        return x
    out = []
    for start in range(0, len(x), chunk):
        g = Graph(dtype)
        bm = Bound(model, g)
        out.append(g.eval(refine(bm, g.const(x[start:start + chunk]), h_choice=h_choice, parts=parts)))
    if not out:
        width = refined_width(model.dims, h_choice, parts)
        return np.zeros((0, width), dtype=dtype)
    return np.concatenate(out)


def refined_width(dims: ModelDims, h_choice="h2", parts="x+h+a") -> int:
    h = {"h1": dims.fr_hidden, "h2": 2 * dims.attr_dim, "mu": dims.attr_dim}[h_choice]
    return dims.feat_dim + {"x": 0, "x+h": h, "x+h+a": h + dims.attr_dim}[parts]
