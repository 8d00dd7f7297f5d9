"""Two-stage training, GZSL evaluation and the ablation runner."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph
from .data import AccessLog, DatasetBundle, read_features
from .losses import (LossWeights, cyc_loss, kl_gaussian, l1_term, one_hot, penalty_at_mix, recon_loss,
                     samc_from_one_hot, total_loss, wgan_g_loss)
from .models import (FEATURE_VARIANTS, H_CHOICES, Bound, FreeModel, ModelDims, discriminate, encode,
                     fr_forward, generate, init_model, refine_array)
from .nn import AdamState, adam_step

log = logging.getLogger(__name__)

# N_syn per benchmark; anything else falls back to TrainConfig.n_syn
N_SYN_DEFAULTS = {"CUB": 700, "SUN": 300, "FLO": 2400, "AWA1": 4600, "AWA2": 4600}

# named RNG sub-streams derived from the run seed
STREAM_INIT, STREAM_BATCH, STREAM_NOISE, STREAM_YPRIME, STREAM_FR, STREAM_SYN, STREAM_CLS = range(1, 8)

CURVE_FIELDS = ("iteration", "loss_D", "loss_EG", "loss_FR", "samc", "cyc", "kl", "recon")


def default_n_syn(dataset_name: str, fallback: int) -> int:
    key = dataset_name.upper().split("-")[0] if dataset_name else ""
    return N_SYN_DEFAULTS.get(key, fallback)


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *keys])


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 64
    n_critic: int = 5
    lr: float = 1e-4
    cls_lr: float = 1e-3
    cls_epochs: int = 25
    cls_batch_size: int = 64
    beta1: float = 0.5
    beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    n_syn: int = 100
    seed: int = 0
    h_choice: str = "h2"
    features: str = "x+h+a"
    precision: str = "float32"
    hidden: int = 256
    fr_hidden: int = 256
    latent_dim: int = 0
    slope: float = 0.02
    g_final: str = "none"
    fr_enabled: bool = True
    samc_on_syn: bool = True

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")
        if self.n_syn < 1:
            raise ValueError("n_syn must be >= 1")
        if self.batch_size < 1 or self.cls_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.h_choice not in H_CHOICES:
            raise ValueError(f"h_choice must be one of {H_CHOICES}")
        if self.features not in FEATURE_VARIANTS:
            raise ValueError(f"features must be one of {FEATURE_VARIANTS}")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> TrainConfig:
        weight_keys = {f.name for f in dataclasses.fields(LossWeights)}
        w = {k: changes.pop(k) for k in list(changes) if k in weight_keys}
        if w:
            changes["weights"] = dataclasses.replace(self.weights, **w)
        return dataclasses.replace(self, **changes)


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration: int, what: str):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


class InductiveViolation(RuntimeError):
    pass


def model_dims(bundle: DatasetBundle, config: TrainConfig) -> ModelDims:
    return ModelDims(bundle.feat_dim, bundle.attr_dim, bundle.n_classes, config.latent_dim,
                     config.hidden, config.fr_hidden, config.slope, config.g_final)


def initial_model(bundle: DatasetBundle, config: TrainConfig) -> FreeModel:
    return init_model(model_dims(bundle, config), bundle.attributes, [config.seed, STREAM_INIT],
                      config.dtype)


def _grads(g: Graph, loss: int, nodes: dict[str, int]) -> dict[str, np.ndarray]:
    gn = g.backward(loss, nodes.values())
    return {name: g.eval(gn[node]) for name, node in nodes.items()}


def _scalar(g: Graph, node: int) -> float:
    return float(g.eval(node).reshape(-1)[0])


def sample_negatives(y: np.ndarray, classes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform class from ``classes`` other than y, per sample."""
    classes = np.asarray(classes)
    pos = np.searchsorted(classes, y)
    draw = rng.integers(0, len(classes) - 1, size=len(y))
    draw = draw + (draw >= pos)
    return classes[draw]


def stage1_train(bundle: DatasetBundle, config: TrainConfig, audit: AccessLog | None = None,
                 curves: list | None = None, model: FreeModel | None = None) -> FreeModel:
    """Jointly train E, G, D and FR on seen-class training data.

    Each iteration runs ``n_critic`` critic steps, one E/G step and (when
    ``fr_enabled``) one FR + centers step.  Per-iteration losses are appended
    to ``curves`` as dicts keyed by ``CURVE_FIELDS``.
    """
    dtype = config.dtype
    w = config.weights
    model = initial_model(bundle, config) if model is None else model
    if config.iterations == 0:
        return model

    seen = np.sort(bundle.seen_classes)
    if len(seen) < 2 and config.fr_enabled and w.lambda_samc > 0:
        raise ValueError("SAMC needs at least two seen classes")
    train_idx = bundle.train_idx
    y_all = bundle.labels[train_idx]
    if not np.isin(y_all, seen).all():
        raise InductiveViolation("training split contains unseen-class samples")
    x_all = read_features(bundle, train_idx, "stage1", audit).astype(dtype)
    attrs = bundle.attributes.astype(dtype)
    n = len(train_idx)
    bs = config.batch_size
    if bs > n:
        raise ValueError(f"batch size {bs} exceeds training set size {n}")
    k = model.dims.latent_dim
    opt = {net: AdamState(config.lr, config.beta1, config.beta2) for net in ("D", "EG", "FR")}
    r_batch = stream(config.seed, STREAM_BATCH)
    r_noise = stream(config.seed, STREAM_NOISE)
    r_fr = stream(config.seed, STREAM_FR)
    r_neg = stream(config.seed, STREAM_YPRIME)
    use_fr_in_g = config.fr_enabled and w.lambda_ra > 0
    n_cls, f_dim, a_dim = bundle.n_classes, bundle.feat_dim, bundle.attr_dim

    def batch():
        sel = r_batch.choice(n, size=bs, replace=False)
        y = y_all[sel]
        if not np.isin(y, seen).all():
            raise InductiveViolation("unseen-class sample in a training batch")
        return x_all[sel], y, attrs[y]

    # critic step: E[D(x_hat)] - E[D(x)] + lambda * GP
    d_step = _StepGraph(model, dtype, {"D"}, {"x": (bs, f_dim), "a": (bs, a_dim), "z": (bs, k), "tau": (bs, 1)})
    g, bm, f = d_step.g, d_step.bm, d_step.feeds
    x_fake = generate(bm, f["z"], f["a"])
    fake = g.reduce_mean(discriminate(bm, x_fake, f["a"]))
    real = g.reduce_mean(discriminate(bm, f["x"], f["a"]))
    gp = penalty_at_mix(bm, f["x"], x_fake, f["a"], f["tau"])
    d_step.finish(g.add(g.sub(fake, real), g.scalar_mul(gp, w.lambda_gp)), {})

    # encoder + generator step
    eg_step = _StepGraph(model, dtype, {"E", "G"}, {"x": (bs, f_dim), "a": (bs, a_dim), "eps": (bs, k),
                                                   "z": (bs, k), "eps_a": (bs, a_dim)})
    g, bm, f = eg_step.g, eg_step.bm, eg_step.feeds
    z, mu_z, lv_z = encode(bm, f["x"], f["a"], f["eps"])
    kl = kl_gaussian(g, mu_z, lv_z)
    rec = recon_loss(g, f["x"], generate(bm, z, f["a"]))
    x_gan = generate(bm, f["z"], f["a"])
    adv = wgan_g_loss(bm, x_gan, f["a"])
    # FR is frozen here; only its cycle term on the synthetic branch reaches G
    zero = g.const(np.zeros((1, 1)))
    ra = l1_term(g, fr_forward(bm, x_gan, f["eps_a"]).a_hat, f["a"]) if use_fr_in_g else zero
    eg_step.finish(total_loss(g, g.add(kl, rec), adv, zero, ra, w), {"kl": kl, "recon": rec})

    # feature refinement + centers step
    if config.fr_enabled:
        fr_step = _StepGraph(model, dtype, {"FR", "centers"},
                             {"x": (bs, f_dim), "a": (bs, a_dim), "z": (bs, k), "eps_r": (bs, a_dim),
                              "eps_s": (bs, a_dim), "pos": (bs, n_cls), "neg": (bs, n_cls)})
        g, bm, f = fr_step.g, fr_step.bm, fr_step.feeds
        x_syn = generate(bm, f["z"], f["a"])
        fr_real = fr_forward(bm, f["x"], f["eps_r"])
        fr_syn = fr_forward(bm, x_syn, f["eps_s"])
        samc = samc_from_one_hot(g, fr_real.mu, f["pos"], f["neg"], bm.centers, w)
        if config.samc_on_syn:
            samc = g.add(samc, samc_from_one_hot(g, fr_syn.mu, f["pos"], f["neg"], bm.centers, w))
        cyc = cyc_loss(g, fr_real.a_hat, fr_syn.a_hat, f["a"])
        fr_step.finish(g.add(g.scalar_mul(samc, w.lambda_samc), g.scalar_mul(cyc, w.lambda_ra)),
                       {"samc": samc, "cyc": cyc})

    for it in range(config.iterations):
        for _ in range(config.n_critic):
            x, y, a = batch()
            z_d = r_noise.standard_normal((bs, k))
            tau = r_noise.uniform(size=bs).reshape(-1, 1)
            loss_d, _ = d_step.run(opt["D"], {"x": x, "a": a, "z": z_d, "tau": tau}, it, "loss_D")
        row = {"iteration": it, "loss_D": loss_d}

        feeds = {"x": x, "a": a, "eps": r_noise.standard_normal((bs, k)), "z": r_noise.standard_normal((bs, k))}
        feeds["eps_a"] = r_fr.standard_normal((bs, a_dim)) if use_fr_in_g else np.zeros((bs, a_dim))
        loss_eg, extra = eg_step.run(opt["EG"], feeds, it, "loss_EG")
        row.update(loss_EG=loss_eg, **extra)

        if config.fr_enabled:
            feeds = {"x": x, "a": a, "z": r_fr.standard_normal((bs, k)),
                     "eps_r": r_fr.standard_normal((bs, a_dim)), "eps_s": r_fr.standard_normal((bs, a_dim))}
            y_neg = sample_negatives(y, seen, r_neg)
            feeds["pos"], feeds["neg"] = one_hot(y, n_cls), one_hot(y_neg, n_cls)
            loss_fr, extra = fr_step.run(opt["FR"], feeds, it, "loss_FR")
            row.update(loss_FR=loss_fr, **extra)
        else:
            row.update(loss_FR=0.0, samc=0.0, cyc=0.0)

        for key, val in row.items():
            if key != "iteration" and not math.isfinite(val):
                raise TrainingDiverged(it, key)
        if curves is not None:
            curves.append(row)
        if it % 500 == 0:
            log.debug("iter %d  D %.4f  EG %.4f  FR %.4f", it, row["loss_D"], row["loss_EG"], row["loss_FR"])
    return model


class _StepGraph:
    """One optimizer step's loss and gradient graph, built once and replayed.

    Every iteration assigns fresh batch data and current parameter values to
    the graph's leaves and re-evaluates it, which skips graph construction.
    """

    def __init__(self, model: FreeModel, dtype, trainable, feed_shapes: dict[str, tuple]):
        self.model = model
        self.trainable = sorted(trainable)
        self.g = Graph(dtype)
        self.bm = Bound(model, self.g, set(trainable))
        self.feeds = {name: self.g.const(np.zeros(shape)) for name, shape in feed_shapes.items()}

    def finish(self, loss: int, extras: dict[str, int]) -> None:
        self.loss, self.extras = loss, extras
        self.params = self.bm.param_nodes()
        self.placed = self.bm.placed_nodes()
        self.grad_nodes = self.g.backward(loss, self.params.values())

    def run(self, opt: AdamState, feeds: dict[str, np.ndarray], it: int,
            what: str) -> tuple[float, dict[str, float]]:
        g = self.g
        for name, node in self.feeds.items():
            g.assign(node, feeds[name])
        current = self.model.params()
        for name, node in self.placed.items():
            g.assign(node, current[name])
        g.eval(len(g) - 1)
        grads = {name: g.eval(self.grad_nodes[node]) for name, node in self.params.items()}
        loss = _scalar(g, self.loss)
        extras = {name: _scalar(g, node) for name, node in self.extras.items()}
        for key, val in [(what, loss), *extras.items()]:
            if not math.isfinite(val):
                raise TrainingDiverged(it, key)
        adam_step(opt, self.model.params(self.trainable), grads)
        return loss, extras


def synthesize_unseen(model: FreeModel, bundle: DatasetBundle, n_syn: int, seed: int,
                      classes=None, dtype=np.float64):
    """``n_syn`` generated features per unseen class; per-class RNG streams."""
    classes = bundle.unseen_classes if classes is None else np.asarray(classes)
    unseen = set(bundle.unseen_classes.tolist())
    k = model.dims.latent_dim
    feats, labels = [], []
    for c in classes:
        c = int(c)
        if c not in unseen:
            raise KeyError(f"class {c} is not an unseen class of bundle {bundle.name!r}")
        rng = stream(seed, STREAM_SYN, c)
        g = Graph(dtype)
        bm = Bound(model, g)
        a = np.repeat(bundle.attributes[c][None, :], n_syn, axis=0)
        x = generate(bm, g.const(rng.standard_normal((n_syn, k))), g.const(a))
        feats.append(g.eval(x))
        labels.append(np.full(n_syn, c, dtype=np.int64))
    if not feats:
        return np.zeros((0, model.dims.feat_dim), dtype=dtype), np.zeros(0, dtype=np.int64)
    return np.concatenate(feats), np.concatenate(labels)


@dataclass
class Classifier:
    weight: np.ndarray  # [n_classes, width]
    bias: np.ndarray
    h_choice: str = "h2"
    features: str = "x+h+a"

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight.T + self.bias

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        z = self.logits(x)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)


def softmax_xent(g: Graph, logits: int, y: np.ndarray) -> int:
    """Mean cross-entropy; the row max is a constant shift (exact for logsumexp)."""
    n, c = g.shape(logits)
    shift = g.const(g.eval(logits).max(axis=1, keepdims=True))
    centered = g.sub(logits, g.expand(shift, (n, c)))
    lse = g.log(g.reduce_sum(g.exp(centered), axis=1))
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0
    picked = g.reduce_sum(g.mul(centered, g.const(onehot)), axis=1)
    return g.reduce_mean(g.sub(lse, picked))


def train_softmax(x: np.ndarray, y: np.ndarray, n_classes: int, config: TrainConfig,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    dtype = config.dtype
    x = np.asarray(x, dtype=dtype)
    weight = np.zeros((n_classes, x.shape[1]), dtype=dtype)
    bias = np.zeros(n_classes, dtype=dtype)
    params = {"weight": weight, "bias": bias}
    opt = AdamState(config.cls_lr, config.beta1, config.beta2)
    bs = min(config.cls_batch_size, len(x))
    for _ in range(config.cls_epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), bs):
            sel = order[start:start + bs]
            g = Graph(dtype)
            wn, bn = g.leaf(weight), g.leaf(bias)
            logits = g.add(g.matmul(g.const(x[sel]), g.transpose(wn)), g.broadcast_row(bn, len(sel)))
            loss = softmax_xent(g, logits, y[sel])
            grads = g.backward(loss, [wn, bn])
            adam_step(opt, params, {"weight": g.eval(grads[wn]), "bias": g.eval(grads[bn])})
    return weight, bias


def stage2_train_classifier(model: FreeModel, bundle: DatasetBundle, synth, config: TrainConfig,
                            audit: AccessLog | None = None) -> Classifier:
    """Softmax over all classes on refined real-seen and refined synthetic-unseen features."""
    x_syn, y_syn = synth
    missing = sorted(set(bundle.unseen_classes.tolist()) - set(np.asarray(y_syn).tolist()))
    if missing:
        raise ValueError(f"synthetic set lacks unseen classes {missing}")
    y_seen = bundle.labels[bundle.train_idx]
    missing = sorted(set(bundle.seen_classes.tolist()) - set(y_seen.tolist()))
    if missing:
        raise ValueError(f"training split lacks seen classes {missing}")
    if not np.isin(y_seen, bundle.seen_classes).all():
        raise InductiveViolation("training split contains unseen-class samples")
    x_seen = read_features(bundle, bundle.train_idx, "stage2", audit)
    dtype = config.dtype
    feats = np.concatenate([
        refine_array(model, x_seen, config.h_choice, config.features, dtype),
        refine_array(model, x_syn, config.h_choice, config.features, dtype),
    ])
    labels = np.concatenate([y_seen, np.asarray(y_syn, dtype=np.int64)])
    w, b = train_softmax(feats, labels, bundle.n_classes, config, stream(config.seed, STREAM_CLS))
    return Classifier(w, b, config.h_choice, config.features)


def per_class_top1(predictions, labels, classes) -> dict[int, float]:
    """Top-1 accuracy of each class in ``classes`` over its own test samples."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    out = {}
    for c in classes:
        mask = labels == c
        count = int(mask.sum())
        if count == 0:
            raise ValueError(f"class {int(c)} has no test samples")
        out[int(c)] = int((predictions[mask] == c).sum()) / count
    return out


def mean_accuracy(per_class: dict[int, float]) -> float:
    return float(np.mean(list(per_class.values()))) if per_class else 0.0


def harmonic_mean(s: float, u: float) -> float:
    if s < 0 or u < 0:
        raise ValueError(f"accuracies must be non-negative, got S={s}, U={u}")
    return 0.0 if s + u == 0 else 2.0 * s * u / (s + u)


@dataclass
class GzslReport:
    S: float
    U: float
    H: float
    per_class: dict[int, float]
    seed: int
    config: dict

    def to_dict(self) -> dict:
        return {"S": self.S, "U": self.U, "H": self.H,
                "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
                "seed": self.seed, "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate_gzsl(model: FreeModel, classifier, bundle: DatasetBundle, config: TrainConfig | None = None,
                  audit: AccessLog | None = None, extra_config: dict | None = None) -> GzslReport:
    """Classify refined real test features over the joint label space.

    ``classifier`` needs ``predict(refined) -> labels`` plus ``h_choice`` and
    ``features`` attributes.
    """
    dtype = config.dtype if config is not None else np.float64
    preds, labels = {}, {}
    for split, idx in (("seen", bundle.test_seen_idx), ("unseen", bundle.test_unseen_idx)):
        x = read_features(bundle, idx, f"eval.{split}", audit)
        refined = refine_array(model, x, classifier.h_choice, classifier.features, dtype)
        preds[split] = np.asarray(classifier.predict(refined))
        labels[split] = bundle.labels[idx]
    seen_acc = per_class_top1(preds["seen"], labels["seen"], bundle.seen_classes)
    unseen_acc = per_class_top1(preds["unseen"], labels["unseen"], bundle.unseen_classes)
    s, u = mean_accuracy(seen_acc), mean_accuracy(unseen_acc)
    echo = config.to_dict() if config is not None else {}
    echo.update(extra_config or {})
    return GzslReport(s, u, harmonic_mean(s, u), {**seen_acc, **unseen_acc},
                      config.seed if config is not None else 0, echo)


class ConstantClassifier:
    """Always predicts one class; the degenerate always-seen baseline."""

    def __init__(self, label: int, h_choice="h2", features="x"):
        self.label = int(label)
        self.h_choice = h_choice
        self.features = features

    def predict(self, x):
        return np.full(len(x), self.label, dtype=np.int64)


def run_stage2(model: FreeModel, bundle: DatasetBundle, config: TrainConfig,
               audit: AccessLog | None = None, extra_config: dict | None = None):
    synth = synthesize_unseen(model, bundle, config.n_syn, config.seed, dtype=config.dtype)
    clf = stage2_train_classifier(model, bundle, synth, config, audit)
    return evaluate_gzsl(model, clf, bundle, config, audit, extra_config), clf


def train_and_evaluate(bundle: DatasetBundle, config: TrainConfig, audit: AccessLog | None = None,
                       curves: list | None = None) -> GzslReport:
    model = stage1_train(bundle, config, audit, curves)
    report, _ = run_stage2(model, bundle, config, audit)
    return report


# -- ablation ---------------------------------------------------------------------

LOSS_VARIANTS = ("baseline", "fr-cyc", "fr-samc", "full")
_ALIASES = {"no-fr": "baseline", "fr-cyc-only": "fr-cyc", "fr-samc-only": "fr-samc"}
_DEFAULT_FEATURES = {"baseline": "x", "fr-cyc": "x+h+a", "fr-samc": "x+h+a", "full": "x+h+a"}


def parse_variant(name: str) -> tuple[str, str]:
    """``"full"`` or ``"full:x+h"`` -> (loss variant, feature variant)."""
    loss, _, feats = name.strip().partition(":")
    loss = _ALIASES.get(loss.lower(), loss.lower())
    if loss not in LOSS_VARIANTS:
        raise ValueError(f"unknown variant {name!r}; loss part must be one of {LOSS_VARIANTS}")
    feats = feats or _DEFAULT_FEATURES[loss]
    if feats not in FEATURE_VARIANTS:
        raise ValueError(f"unknown variant {name!r}; feature part must be one of {FEATURE_VARIANTS}")
    if loss == "baseline" and feats != "x":
        raise ValueError(f"variant {name!r}: the baseline trains no FR, so only ':x' features exist")
    return loss, feats


def variant_config(config: TrainConfig, loss: str, feats: str) -> TrainConfig:
    if loss == "baseline":
        return config.replace(fr_enabled=False, lambda_samc=0.0, lambda_ra=0.0, features=feats)
    if loss == "fr-cyc":
        return config.replace(lambda_samc=0.0, features=feats)
    if loss == "fr-samc":
        return config.replace(lambda_ra=0.0, features=feats)
    return config.replace(features=feats)


@dataclass
class AblationRow:
    variant: str
    seed: int
    report: GzslReport


def ablate(bundle: DatasetBundle, config: TrainConfig, variants, seeds=None,
           audit: AccessLog | None = None) -> list[AblationRow]:
    """One report per (variant, seed).  Stage 1 is shared between variants
    that differ only in their feature composition."""
    parsed = [(v, *parse_variant(v)) for v in variants]
    seeds = [config.seed] if seeds is None else list(seeds)
    rows = []
    for seed in seeds:
        trained = {}
        for name, loss, feats in parsed:
            cfg = variant_config(config.replace(seed=seed), loss, feats)
            if loss not in trained:
                trained[loss] = stage1_train(bundle, cfg, audit)
            report, _ = run_stage2(trained[loss], bundle, cfg, audit, {"variant": name})
            rows.append(AblationRow(name, seed, report))
    return rows


def summarize_ablation(rows: list[AblationRow], reference: str | None = "baseline") -> list[dict]:
    """Seed-averaged S/U/H per variant plus dH against ``reference``."""
    order = list(dict.fromkeys(r.variant for r in rows))
    summary = []
    for v in order:
        rs = [r.report for r in rows if r.variant == v]
        summary.append({"variant": v, "seeds": len(rs), "S": float(np.mean([r.S for r in rs])),
                        "U": float(np.mean([r.U for r in rs])), "H": float(np.mean([r.H for r in rs]))})
    ref = next((s for s in summary if reference and parse_variant(s["variant"])[0] == reference), None)
    for s in summary:
        s["dH"] = s["H"] - ref["H"] if ref is not None else None
    return summary
