"""Randomized gradient-check cases for every op and every loss.

Each case is ``(inputs, build)``: ``inputs`` maps names to float64 arrays,
``build(graph, nodes)`` returns a scalar node.  ``check_case`` compares the
graph's gradient with central finite differences.
"""

import numpy as np

from free_gzsl.autodiff import Graph, OpKind
from free_gzsl.losses import (LossWeights, cyc_loss, gradient_penalty, kl_gaussian, recon_loss, samc_loss,
                              total_loss, wgan_d_loss, wgan_g_loss)
from free_gzsl.models import Bound, ModelDims, encode, fr_forward, generate, init_model
from free_gzsl.nn import layer_params

from _oracles import central_diff, max_rel_err, rel_err


def away_from_zero(rng, shape, lo=0.05, hi=2.0):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _dims(rng):
    return int(rng.integers(1, 9)), int(rng.integers(1, 9))


def _scalarize(g, out, weights):
    return g.reduce_sum(g.mul(out, g.const(weights)))


def op_case(op: str, rng):
    n, m = _dims(rng)
    r = lambda *s: rng.standard_normal(s)  # noqa: E731
    pos = lambda *s: rng.uniform(0.5, 3.0, size=s)  # noqa: E731
    if op == "matmul":
        k = int(rng.integers(1, 9))
        inputs, fn = {"a": r(n, k), "b": r(k, m)}, lambda g, v: g.matmul(v["a"], v["b"])
    elif op == "transpose":
        inputs, fn = {"a": r(n, m)}, lambda g, v: g.transpose(v["a"])
    elif op in ("add", "sub", "mul"):
        inputs, fn = {"a": r(n, m), "b": r(n, m)}, lambda g, v: getattr(g, op)(v["a"], v["b"])
    elif op == "scalar-mul":
        c = float(rng.uniform(-3, 3))
        inputs, fn = {"a": r(n, m)}, lambda g, v: g.scalar_mul(v["a"], c)
    elif op == "leaky-relu":
        s = float(rng.uniform(0.01, 0.9))
        inputs, fn = {"a": away_from_zero(rng, (n, m))}, lambda g, v: g.leaky_relu(v["a"], s)
    elif op == "sigmoid":
        inputs, fn = {"a": r(n, m) * 3}, lambda g, v: g.sigmoid(v["a"])
    elif op == "exp":
        inputs, fn = {"a": rng.uniform(-2, 2, (n, m))}, lambda g, v: g.exp(v["a"])
    elif op == "log":
        inputs, fn = {"a": pos(n, m)}, lambda g, v: g.log(v["a"])
    elif op == "pow":
        p = float(rng.uniform(-2, 3))
        inputs, fn = {"a": pos(n, m)}, lambda g, v: g.pow(v["a"], p)
    elif op == "concat-last-axis":
        w2 = int(rng.integers(1, 9))
        inputs, fn = {"a": r(n, m), "b": r(n, w2)}, lambda g, v: g.concat([v["a"], v["b"]])
    elif op == "slice-last-axis":
        lo = int(rng.integers(0, m))
        hi = int(rng.integers(lo + 1, m + 1))
        inputs, fn = {"a": r(n, m)}, lambda g, v: g.slice(v["a"], lo, hi)
    elif op in ("reduce-mean", "reduce-sum"):
        axis = [None, 0, 1][int(rng.integers(0, 3))]
        meth = "reduce_mean" if op == "reduce-mean" else "reduce_sum"
        inputs, fn = {"a": r(n, m)}, lambda g, v: getattr(g, meth)(v["a"], axis)
    elif op == "square":
        inputs, fn = {"a": r(n, m)}, lambda g, v: g.square(v["a"])
    elif op == "sqrt":
        inputs, fn = {"a": pos(n, m)}, lambda g, v: g.sqrt(v["a"])
    elif op == "abs":
        inputs, fn = {"a": away_from_zero(rng, (n, m))}, lambda g, v: g.abs(v["a"])
    elif op == "l2-norm-rows":
        inputs, fn = {"a": r(n, m)}, lambda g, v: g.l2_norm_rows(v["a"])
    elif op == "broadcast-row":
        inputs, fn = {"a": r(m)}, lambda g, v: g.broadcast_row(v["a"], n)
    elif op == "expand":
        if rng.random() < 0.5:
            inputs, fn = {"a": r(1, m)}, lambda g, v: g.expand(v["a"], (n, m))
        else:
            inputs, fn = {"a": r(n, 1)}, lambda g, v: g.expand(v["a"], (n, m))
    elif op == "reshape":
        inputs, fn = {"a": r(n, m)}, lambda g, v: g.reshape(v["a"], (m, n))
    else:
        raise KeyError(op)

    probe = Graph()
    shape = probe.eval(fn(probe, {k: probe.const(x) for k, x in inputs.items()})).shape
    weights = rng.standard_normal(shape)
    return inputs, lambda g, v: _scalarize(g, fn(g, v), weights)


OPS = ("matmul", "transpose", "add", "sub", "mul", "scalar-mul", "leaky-relu", "sigmoid", "exp", "log",
       "pow", "concat-last-axis", "slice-last-axis", "reduce-mean", "reduce-sum", "square", "sqrt", "abs",
       "l2-norm-rows", "broadcast-row", "expand", "reshape")


KINKED = (OpKind.LEAKY_RELU, OpKind.ABS)


def kink_margin(g: Graph) -> float:
    """Smallest |input| reaching a non-smooth op (leaky-relu, hinge, abs)."""
    margin = np.inf
    for n in g.nodes:
        if n.op in KINKED:
            margin = min(margin, float(np.abs(g.nodes[n.inputs[0]].value).min()))
    return margin


def check_case(inputs: dict, build, step=1e-4, max_coords=None, rng=None):
    """Return ``(relative error, kink margin)`` of graph gradient vs central differences."""
    g = Graph()
    nodes = {k: g.leaf(v) for k, v in inputs.items()}
    out = build(g, nodes)
    margin = kink_margin(g)
    gn = g.backward(out, nodes.values())
    ad = {k: g.eval(gn[node]) for k, node in nodes.items()}

    def f(vals):
        h = Graph()
        return h.eval(build(h, {k: h.leaf(v) for k, v in vals.items()})).item()

    if max_coords is None:
        return max_rel_err(ad, central_diff(f, inputs, step)), margin
    coords = [(k, i) for k, v in inputs.items() for i in np.ndindex(np.shape(v))]
    pick = rng.choice(len(coords), size=min(max_coords, len(coords)), replace=False)
    fd, an = [], []
    for j in pick:
        k, i = coords[j]
        plus = {**inputs, k: np.array(inputs[k], dtype=np.float64)}
        minus = {**inputs, k: np.array(inputs[k], dtype=np.float64)}
        plus[k][i] += step
        minus[k][i] -= step
        fd.append((f(plus) - f(minus)) / (2 * step))
        an.append(ad[k][i])
    return rel_err(an, fd), margin


MIN_KINK_MARGIN = 2e-3


def run_cases(make_case, rng, n_cases, **kw) -> list[float]:
    """Errors of ``n_cases`` smooth-neighbourhood cases from ``make_case(rng)``.

    Draws whose non-smooth ops sit within MIN_KINK_MARGIN of a kink are
    redrawn: a finite difference straddling a kink measures nothing.
    """
    errs = []
    while len(errs) < n_cases:
        err, margin = check_case(*make_case(rng), rng=rng, **kw)
        if margin >= MIN_KINK_MARGIN:
            errs.append(err)
    return errs


# -- losses on small models ------------------------------------------------------


def tiny_model(rng, feat=3, attr=2, hidden=4, n_classes=4):
    dims = ModelDims(feat, attr, n_classes, latent_dim=2, hidden=hidden, fr_hidden=hidden)
    attrs = rng.uniform(0, 1, (n_classes, attr))
    return init_model(dims, attrs, int(rng.integers(0, 2**31)))


def model_case(rng, nets, build_loss):
    """Gradient case over the parameters of ``nets`` of a tiny random model.

    ``build_loss(bm) -> scalar`` sees a Bound whose parameter nodes were
    overwritten from the case inputs.
    """
    model = tiny_model(rng)
    params = {k: v.copy() for k, v in model.params(nets).items()}

    def build(g, nodes):
        bm = Bound(model, g, set())
        # swap bound parameters for the case leaves
        bm._nodes = {}
        for net in ("E", "G", "D", "FR"):
            if net in nets:
                bm._nodes[net] = [(nodes[f"{net}.{i}.weight"], nodes[f"{net}.{i}.bias"])
                                  for i in range(len(getattr(model, net)))]
        if "centers" in nets:
            bm._centers = nodes["centers"]
        return build_loss(bm)

    return params, build


def loss_case(name: str, rng):
    b = 5
    w = LossWeights(lambda_gp=10.0, lambda_samc=0.5, lambda_ra=0.1,
                    gamma=float(rng.uniform(0, 1)), delta=float(rng.uniform(0.5, 2)))
    if name == "kl":
        inputs = {"mu": rng.standard_normal((b, 3)), "lv": rng.standard_normal((b, 3))}
        return inputs, lambda g, v: kl_gaussian(g, v["mu"], v["lv"])
    if name == "recon":
        inputs = {"x": rng.standard_normal((b, 4)), "xh": rng.standard_normal((b, 4))}
        return inputs, lambda g, v: recon_loss(g, v["x"], v["xh"])
    if name == "samc":
        # keep each sample's hinge argument away from the kink
        while True:
            mu, c = rng.standard_normal((b, 3)), rng.standard_normal((4, 3))
            y = rng.integers(0, 4, b)
            yp = (y + rng.integers(1, 4, b)) % 4
            pre = (w.delta + w.gamma * ((mu - c[y]) ** 2).sum(1)
                   - (1 - w.gamma) * ((mu - c[yp]) ** 2).sum(1))
            if np.abs(pre).min() > 0.05:
                break
        return {"mu": mu, "c": c}, lambda g, v: samc_loss(g, v["mu"], y, yp, v["c"], w)
    if name == "cyc":
        a = rng.standard_normal((b, 3))
        inputs = {"r": a + away_from_zero(rng, (b, 3)), "s": a + away_from_zero(rng, (b, 3))}
        return inputs, lambda g, v: cyc_loss(g, v["r"], v["s"], g.const(a))
    x, xf, a = rng.standard_normal((b, 3)), rng.standard_normal((b, 3)), rng.uniform(0, 1, (b, 2))
    tau = rng.uniform(size=b)
    if name == "gp":
        return model_case(rng, ("D",), lambda bm: gradient_penalty(
            bm, bm.graph.const(x), bm.graph.const(xf), bm.graph.const(a), tau))
    if name == "wgan_d":
        return model_case(rng, ("D",), lambda bm: wgan_d_loss(
            bm, bm.graph.const(x), bm.graph.const(xf), bm.graph.const(a), w, tau))
    if name == "wgan_g":
        z = rng.standard_normal((b, 2))

        def build(bm):
            g = bm.graph
            return wgan_g_loss(bm, generate(bm, g.const(z), g.const(a)), g.const(a))
        return model_case(rng, ("G", "D"), build)
    if name == "total":
        eps, z = rng.standard_normal((b, 2)), rng.standard_normal((b, 2))
        eps_a = rng.standard_normal((b, 2))
        y = rng.integers(0, 4, b)
        yp = (y + rng.integers(1, 4, b)) % 4

        def build(bm):
            g = bm.graph
            xn, an = g.const(x), g.const(a)
            zz, mu, lv = encode(bm, xn, an, g.const(eps))
            vae = g.add(kl_gaussian(g, mu, lv), recon_loss(g, xn, generate(bm, zz, an)))
            x_gan = generate(bm, g.const(z), an)
            wg = wgan_g_loss(bm, x_gan, an)
            fr_r, fr_s = fr_forward(bm, xn, g.const(eps_a)), fr_forward(bm, x_gan, g.const(eps_a))
            samc = samc_loss(g, fr_r.mu, y, yp, bm.centers, w)
            return total_loss(g, vae, wg, samc, cyc_loss(g, fr_r.a_hat, fr_s.a_hat, an), w)
        return model_case(rng, ("E", "G", "D", "FR", "centers"), build)
    raise KeyError(name)


FIRST_ORDER_LOSSES = ("kl", "recon", "samc", "cyc", "wgan_g", "total")
SECOND_ORDER_LOSSES = ("gp", "wgan_d")


def mlp_case(rng):
    from free_gzsl.nn import MlpSpec, init_params, mlp_forward

    spec = MlpSpec((3, 5, 2), slope=0.2, final=["none", "leaky-relu", "sigmoid"][int(rng.integers(0, 3))])
    layers = init_params(spec, int(rng.integers(0, 2**31)))
    x = rng.standard_normal((4, 3))
    params = layer_params(layers, "m")

    def build(g, nodes):
        bound = [(nodes[f"m.{i}.weight"], nodes[f"m.{i}.bias"]) for i in range(len(layers))]
        return g.reduce_mean(mlp_forward(g, bound, g.const(x), spec))

    return params, build
