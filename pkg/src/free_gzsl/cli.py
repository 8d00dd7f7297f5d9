"""``free-gzsl`` command line: gen-data, train, eval, ablate.

Settings come from three layers: built-in defaults, an optional
``--config`` file of ``key = value`` lines (``#`` starts a comment), then
command-line flags.  Every command echoes the resolved settings into its
outputs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import BundleError, SyntheticSpec, generate_synthetic_bundle, load_bundle, save_bundle
from .losses import LossWeights
from .models import ModelDims, model_from_state
from .nn import CheckpointError, NonFiniteGradient, load_tensors, save_tensors
from .pipeline import (CURVE_FIELDS, ConstantClassifier, TrainConfig, TrainingDiverged, ablate,
                       default_n_syn, evaluate_gzsl, refine_array, run_stage2, stage1_train,
                       summarize_ablation)

log = logging.getLogger("free_gzsl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
N_SYN_FALLBACK = TrainConfig.n_syn


class UsageError(Exception):
    pass


class DataError(Exception):
    """Bad input data; ``details`` is printed as JSON on stderr."""

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}


# -- settings registry ------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Setting:
    name: str
    type: type
    default: object
    help: str
    flags: tuple = ()


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_TRAIN_HELP = {
    "iterations": "stage-1 outer iterations",
    "batch_size": "stage-1 minibatch size",
    "n_critic": "critic steps per generator step",
    "lr": "stage-1 Adam learning rate",
    "cls_lr": "classifier Adam learning rate",
    "cls_epochs": "classifier epochs",
    "cls_batch_size": "classifier minibatch size",
    "beta1": "Adam beta1",
    "beta2": "Adam beta2",
    "n_syn": "synthetic features per unseen class (0: pick from the dataset name)",
    "seed": "run seed; every random stream derives from it",
    "h_choice": "FR layer used as h in the refined features: h1, h2 or mu",
    "features": "refined feature variant: x, x+h or x+h+a",
    "precision": "float32 or float64",
    "hidden": "hidden width of E, G and D",
    "fr_hidden": "first hidden width of FR",
    "latent_dim": "latent width (0: attribute width)",
    "slope": "LeakyReLU negative slope",
    "g_final": "generator output activation: none, leaky-relu or sigmoid",
    "fr_enabled": "train the feature-refinement module",
    "samc_on_syn": "apply the center loss to synthesized seen features too",
}
_WEIGHT_HELP = {
    "lambda_gp": "gradient-penalty weight",
    "lambda_samc": "center-loss weight",
    "lambda_ra": "semantic cycle-consistency weight",
    "gamma": "center-loss balance factor (0.8 fine-grained, 0.1 coarse)",
    "delta": "center-loss margin",
}
_DATA_HELP = {
    "n_seen": "number of seen classes",
    "n_unseen": "number of unseen classes",
    "feat_dim": "visual feature width",
    "attr_dim": "attribute width",
    "samples_per_class": "samples per class",
    "noise": "feature noise scale",
    "mixing_seed": "seed of the attribute-to-feature map",
}
_FLAG_ALIASES = {"n_seen": ("--seen",), "n_unseen": ("--unseen",)}


def _settings() -> dict[str, Setting]:
    out = {}
    train = TrainConfig()
    for f in dataclasses.fields(TrainConfig):
        if f.name == "weights":
            continue
        default = 0 if f.name == "n_syn" else getattr(train, f.name)
        typ = _bool if isinstance(default, bool) else type(default)
        out[f.name] = Setting(f.name, typ, default, _TRAIN_HELP[f.name])
    weights = LossWeights()
    for f in dataclasses.fields(LossWeights):
        out[f.name] = Setting(f.name, float, getattr(weights, f.name), _WEIGHT_HELP[f.name])
    spec = SyntheticSpec()
    for f in dataclasses.fields(SyntheticSpec):
        d = getattr(spec, f.name)
        out[f.name] = Setting(f.name, type(d), d, _DATA_HELP[f.name], _FLAG_ALIASES.get(f.name, ()))
    out["name"] = Setting("name", str, "synthetic", "dataset name stored in generated bundles")
    out["variants"] = Setting("variants", str, "baseline,full", "comma-separated ablation variants")
    out["seeds"] = Setting("seeds", str, "1,2,3", "comma-separated ablation seeds")
    out["always_seen"] = Setting("always_seen", _bool, False,
                                 "evaluate the degenerate classifier that always predicts the first seen class")
    return out


SETTINGS = _settings()
TRAIN_KEYS = [f.name for f in dataclasses.fields(TrainConfig) if f.name != "weights"]
WEIGHT_KEYS = [f.name for f in dataclasses.fields(LossWeights)]
DATA_KEYS = [f.name for f in dataclasses.fields(SyntheticSpec)]


def parse_config_text(text: str, source="config") -> dict[str, object]:
    """Parse ``key = value`` lines; rejects unknown keys and bad values."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise UsageError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        if key not in SETTINGS:
            raise UsageError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value.strip(), f"{source}:{lineno}")
    return out


def _convert(key, value, where):
    try:
        return SETTINGS[key].type(value)
    except ValueError as exc:
        raise UsageError(f"{where}: bad value for {key}: {exc}") from None


def resolve(file_values: dict, flag_values: dict, base: dict | None = None) -> dict[str, object]:
    """Defaults < ``base`` (e.g. settings saved in a checkpoint) < file < flags."""
    merged = {k: s.default for k, s in SETTINGS.items()}
    merged.update(base or {})
    merged.update(file_values)
    merged.update(flag_values)
    return merged


def train_config(values: dict) -> TrainConfig:
    kw = {k: values[k] for k in TRAIN_KEYS}
    kw["n_syn"] = kw["n_syn"] or N_SYN_FALLBACK
    weights = LossWeights(**{k: values[k] for k in WEIGHT_KEYS})
    try:
        return TrainConfig(weights=weights, **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _n_syn_for(values: dict, bundle_name: str) -> int:
    return values["n_syn"] or default_n_syn(bundle_name, N_SYN_FALLBACK)


# -- argument parsing ---------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_settings(p: argparse.ArgumentParser, keys):
    for key in keys:
        s = SETTINGS[key]
        flags = ("--" + key.replace("_", "-"), *s.flags)
        if s.type is _bool:
            p.add_argument(*flags, dest=key, nargs="?", const=True, type=_bool, default=argparse.SUPPRESS,
                           help=f"{s.help} (default {s.default})")
        else:
            p.add_argument(*flags, dest=key, type=str, default=argparse.SUPPRESS,
                           help=f"{s.help} (default {s.default})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="free-gzsl", description="Feature-refining generative GZSL on numpy.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, help="key = value settings file")
        return p

    p = command("gen-data", "write a synthetic benchmark bundle")
    p.add_argument("--out", type=Path, required=True, help="output GZB1 file")
    _add_settings(p, DATA_KEYS + ["seed", "name"])

    p = command("train", "run stage 1 and write a checkpoint plus loss curves")
    p.add_argument("--data", type=Path, required=True, help="input GZB1 bundle")
    p.add_argument("--out", type=Path, required=True, help="output checkpoint")
    p.add_argument("--curves", type=Path, help="loss CSV (default: <out>.losses.csv)")
    _add_settings(p, TRAIN_KEYS + WEIGHT_KEYS)

    p = command("eval", "synthesize, train the classifier and report S/U/H")
    p.add_argument("--data", type=Path, required=True, help="input GZB1 bundle")
    p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint from train")
    p.add_argument("--out", type=Path, required=True, help="output report JSON")
    p.add_argument("--refined-csv", type=Path, help="also dump refined test features here")
    _add_settings(p, TRAIN_KEYS + WEIGHT_KEYS + ["always_seen"])

    p = command("ablate", "compare training variants over several seeds")
    p.add_argument("--data", type=Path, required=True, help="input GZB1 bundle")
    p.add_argument("--out", type=Path, required=True, help="output CSV (a JSON twin is written next to it)")
    _add_settings(p, TRAIN_KEYS + WEIGHT_KEYS + ["variants", "seeds"])
    return parser


def _values(args) -> dict:
    file_values = {}
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
        file_values = parse_config_text(text, str(args.config))
    flags = {k: _convert(k, v, "--" + k.replace("_", "-")) for k, v in vars(args).items()
             if k in SETTINGS and not isinstance(v, bool)}
    flags.update({k: v for k, v in vars(args).items() if k in SETTINGS and isinstance(v, bool)})
    args.layers = (file_values, flags)
    return resolve(file_values, flags)


# -- commands -------------------------------------------------------------------------


def _load(path: Path):
    try:
        return load_bundle(path)
    except FileNotFoundError:
        raise DataError(f"no such bundle file: {path}", {"error": "MISSING_FILE", "path": str(path)}) from None
    except BundleError as exc:
        raise DataError(f"{path}: {exc}", {"error": exc.code, "path": str(path),
                                           "violations": exc.violations}) from None


def cmd_gen_data(args, values) -> int:
    spec_kw = {k: values[k] for k in DATA_KEYS}
    try:
        spec = SyntheticSpec(**spec_kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    bundle = generate_synthetic_bundle(spec, values["seed"], name=values["name"])
    try:
        save_bundle(bundle, args.out)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc.strerror}", {"error": "IO", "path": str(args.out)}) from None
    summary = bundle.summary()
    summary["spec"] = dataclasses.asdict(spec)
    summary["seed"] = values["seed"]
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _config_blob(config: dict) -> np.ndarray:
    # settings travel in the checkpoint as utf-8 bytes (exact in f32)
    return np.frombuffer(json.dumps(config, sort_keys=True).encode("utf-8"), dtype=np.uint8).astype(np.float32)


def _config_from_blob(arr) -> dict:
    return json.loads(bytes(np.asarray(arr).astype(np.uint8)).decode("utf-8"))


def cmd_train(args, values) -> int:
    config = train_config(values)
    bundle = _load(args.data)
    curves = []
    model = stage1_train(bundle, config, curves=curves)
    state = model.state_dict()
    state["meta.config"] = _config_blob({**config.to_dict(), "bundle": bundle.name})
    try:
        save_tensors(args.out, state)
        curve_path = args.curves or args.out.with_name(args.out.name + ".losses.csv")
        with open(curve_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
            w.writeheader()
            for row in curves:
                w.writerow({k: (repr(float(v)) if k != "iteration" else v) for k, v in row.items()})
    except OSError as exc:
        raise DataError(f"cannot write output: {exc}", {"error": "IO"}) from None
    last = curves[-1] if curves else {}
    print(json.dumps({"checkpoint": str(args.out), "iterations": config.iterations,
                      "final": {k: last[k] for k in CURVE_FIELDS[1:]} if last else {}}, sort_keys=True))
    return EXIT_OK


def check_dims(state_dims: ModelDims, bundle) -> None:
    mismatch = {}
    for field_name, have in (("feat_dim", bundle.feat_dim), ("attr_dim", bundle.attr_dim),
                             ("n_classes", bundle.n_classes)):
        want = getattr(state_dims, field_name)
        if want != have:
            mismatch[field_name] = {"checkpoint": want, "bundle": have}
    if mismatch:
        raise DataError("checkpoint does not match bundle: " +
                        ", ".join(f"{k} {v['checkpoint']} vs {v['bundle']}" for k, v in mismatch.items()),
                        {"error": "DIM_MISMATCH", "fields": mismatch})


def cmd_eval(args, values) -> int:
    bundle = _load(args.data)
    try:
        state = load_tensors(args.checkpoint)
        dims = ModelDims.from_array(state["meta.dims"])
    except FileNotFoundError:
        raise DataError(f"no such checkpoint: {args.checkpoint}",
                        {"error": "MISSING_FILE", "path": str(args.checkpoint)}) from None
    except (CheckpointError, KeyError) as exc:
        raise DataError(f"{args.checkpoint}: bad checkpoint ({exc})", {"error": "BAD_CHECKPOINT"}) from None
    check_dims(dims, bundle)
    saved = _config_from_blob(state["meta.config"]) if "meta.config" in state else None
    if saved is not None:
        # the checkpoint's training settings fill in whatever the user left unset
        base = {k: v for k, v in saved.items() if k in TRAIN_KEYS and k != "n_syn"}
        base.update(saved.get("weights", {}))
        values = resolve(*args.layers, base=base)
    values = {**values, "n_syn": _n_syn_for(values, bundle.name)}
    config = train_config(values)
    model = model_from_state(state, config.dtype)
    echo = {"checkpoint_config": saved,
            "bundle": bundle.name, "always_seen": values["always_seen"]}
    if values["always_seen"]:
        clf = ConstantClassifier(int(np.min(bundle.seen_classes)), config.h_choice, "x")
        report = evaluate_gzsl(model, clf, bundle, config, extra_config=echo)
    else:
        report, clf = run_stage2(model, bundle, config, extra_config=echo)
    try:
        args.out.write_text(report.to_json())
        if args.refined_csv is not None:
            _dump_refined(args.refined_csv, model, bundle, config)
    except OSError as exc:
        raise DataError(f"cannot write output: {exc}", {"error": "IO"}) from None
    print(json.dumps({"S": report.S, "U": report.U, "H": report.H, "report": str(args.out)}, sort_keys=True))
    return EXIT_OK


def _dump_refined(path: Path, model, bundle, config: TrainConfig) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header_done = False
        for split, idx in (("test_seen", bundle.test_seen_idx), ("test_unseen", bundle.test_unseen_idx)):
            feats = refine_array(model, bundle.features[idx], config.h_choice, config.features, config.dtype)
            if not header_done:
                w.writerow(["split", "index", "label"] + [f"f{i}" for i in range(feats.shape[1])])
                header_done = True
            for i, row in zip(idx, feats):
                w.writerow([split, int(i), int(bundle.labels[i])] + [repr(float(v)) for v in row])


def _int_list(text: str, what: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated integers, got {text!r}") from None


def cmd_ablate(args, values) -> int:
    bundle = _load(args.data)
    values = {**values, "n_syn": _n_syn_for(values, bundle.name)}
    config = train_config(values)
    variants = [v.strip() for v in values["variants"].split(",") if v.strip()]
    seeds = _int_list(values["seeds"], "seeds")
    if not variants or not seeds:
        raise UsageError("ablate needs at least one variant and one seed")
    try:
        rows = ablate(bundle, config, variants, seeds)
    except ValueError as exc:
        if "variant" in str(exc):
            raise UsageError(str(exc)) from None
        raise
    reference = "baseline" if any(v.split(":")[0] in ("baseline", "no-fr") for v in variants) else None
    summary = summarize_ablation(rows, reference)
    fields = ["variant", "seed", "S", "U", "H", "dH"]
    try:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            for r in rows:
                w.writerow({"variant": r.variant, "seed": r.seed, "S": r.report.S, "U": r.report.U,
                            "H": r.report.H, "dH": ""})
            for s in summary:
                w.writerow({"variant": s["variant"], "seed": "mean", "S": s["S"], "U": s["U"], "H": s["H"],
                            "dH": "" if s["dH"] is None else s["dH"]})
        doc = {"config": config.to_dict(), "bundle": bundle.name, "seeds": seeds, "variants": variants,
               "rows": [{"variant": r.variant, "seed": r.seed, **r.report.to_dict()} for r in rows],
               "summary": summary}
        args.out.with_suffix(".json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write output: {exc}", {"error": "IO"}) from None
    for s in summary:
        print(f"{s['variant']:>16s}  S={s['S']:.4f}  U={s['U']:.4f}  H={s['H']:.4f}"
              + ("" if s["dH"] is None else f"  dH={s['dH']:+.4f}"))
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args, _values(args))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        print(json.dumps(exc.details, sort_keys=True), file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, NonFiniteGradient, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:  # settings the data cannot satisfy, e.g. batch > train set
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
