"""Command-line entry point: ``llpbp <subcommand> [flags]``.

Every subcommand exits 0 after writing its declared outputs. On failure it
prints a single JSON line ``{"error": <kind>, "message": <text>}`` to stderr
and exits 1 (2 for bad flags).
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, bp
from .bagging import generate_bags, read_bags, write_bags
from .data import LabeledDataset, DataSplit, load_csv, make_synthetic, split, write_csv
from .gibbs import build_ising, read_model, write_model
from .knn import KernelSpec, build_graph, subsample_constraints
from .metrics import auroc
from .mlp import MLP, TrainConfig
from .pipeline import PipelineConfig, PipelineError, StageConfig, run, run_dllp
from .pseudo_labels import threshold, write_pseudo_labels

log = logging.getLogger("llpbp")


class UsageError(Exception):
    pass


# Flat config keys. Each maps to (type, default); flags use the same names
# with dashes. ``iter<r>.<key>`` lines set per-iteration overrides.
KEYS = {
    "data": (str, None),
    "labels_col": (str, "y"),
    "standardize": (bool, False),
    "split": (str, "0.8,0.1,0.1"),
    "bag_size": (int, 32),
    "seed": (int, 0),
    "k": (int, 1),
    "delta_d": (float, 1.0),
    "metric": (str, "cosine"),
    "kernel": (str, "matern"),
    "gamma": (float, 1.0),
    "nu": (float, 1.5),
    "length_scale": (float, 1.0),
    "lambda_b": (float, 0.1),
    "lambda_s": (float, 0.1),
    "lambda_a": (float, 1.0),
    "T": (int, 100),
    "damping": (float, 0.0),
    "bp_tol": (float, 1e-8),
    "tau": (float, 0.5),
    "label_mode": (str, "hard"),
    "node_term": (str, "symmetric"),
    "iterations": (int, 2),
    "hidden": (str, "5040,1280,320,128,64"),
    "pooling": (str, "mean"),
    "learning_rate": (float, 1e-3),
    "weight_decay": (float, 0.0),
    "batch_size": (int, 512),
    "max_epochs": (int, 100),
    "patience": (int, 20),
    "knn_fraction": (float, 1.0),
    "dp_epsilon": (float, None),
    "dp_delta": (float, 1e-5),
    "float32": (bool, False),
}
STAGE_KEYS = {"k", "delta_d", "metric", "lambda_b", "lambda_s", "T", "damping", "tau", "label_mode", "node_term", "pooling"}
TRAIN_KEYS = {"learning_rate", "weight_decay", "lambda_a", "batch_size", "max_epochs", "patience"}


def _parse_bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {s!r}")


def _convert(key, raw):
    typ = KEYS[key][0]
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("none", "")):
        return None
    try:
        if typ is bool:
            return _parse_bool(raw)
        if typ is float:
            return float(raw)
        if typ is int:
            return int(raw)
        return str(raw)
    except ValueError:
        raise UsageError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def read_config(path):
    """Flat ``key = value`` file (``#`` comments) or a run manifest JSON."""
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {path}")
    text = p.read_text()
    if p.suffix == ".json":
        cfg = json.loads(text).get("config", {})
        over = cfg.pop("overrides", {})
        for r, d in over.items():
            for k, v in d.items():
                cfg[f"iter{r}.{k}"] = v
        return {k: v for k, v in cfg.items()}
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def resolve(args) -> tuple[dict, dict]:
    """(settings, overrides) from defaults < config file < flags."""
    cfg = {k: d for k, (_, d) in KEYS.items()}
    overrides: dict[int, dict] = {}
    if getattr(args, "config", None):
        for k, v in read_config(args.config).items():
            if k.startswith("iter") and "." in k:
                head, key = k.split(".", 1)
                if key not in KEYS:
                    raise UsageError(f"unknown config key {key!r}")
                overrides.setdefault(int(head[4:]), {})[key] = _convert(key, v)
            elif k in KEYS:
                cfg[k] = _convert(k, v)
            else:
                raise UsageError(f"unknown config key {k!r}")
    for k in KEYS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = _convert(k, v) if isinstance(v, str) else v
    return cfg, overrides


def _ints(s):
    return tuple(int(v) for v in str(s).split(",") if v.strip())


def kernel_from(cfg) -> KernelSpec:
    return KernelSpec(cfg["kernel"], gamma=cfg["gamma"], nu=cfg["nu"], length_scale=cfg["length_scale"])


def train_config(cfg) -> TrainConfig:
    return TrainConfig(**{k: cfg[k] for k in TRAIN_KEYS}, seed=cfg["seed"])


def stage_config(cfg) -> StageConfig:
    return StageConfig(
        **{k: cfg[k] for k in STAGE_KEYS},
        kernel=kernel_from(cfg),
        bp_tol=cfg["bp_tol"],
        hidden=_ints(cfg["hidden"]),
        train=train_config(cfg),
    )


def pipeline_config(cfg, overrides) -> PipelineConfig:
    over = {}
    for r, d in overrides.items():
        bad = set(d) - STAGE_KEYS - TRAIN_KEYS
        if bad:
            raise UsageError(f"iteration {r}: cannot override {sorted(bad)}")
        over[r] = d
    return PipelineConfig(
        iterations=cfg["iterations"],
        stage=stage_config(cfg),
        overrides=over,
        knn_fraction=cfg["knn_fraction"],
        dp_epsilon=cfg["dp_epsilon"],
        dp_delta=cfg["dp_delta"],
        seed=cfg["seed"],
        dtype="float32" if cfg["float32"] else "float64",
    )


# ------------------------------------------------------------------- inputs


def load_dataset(cfg) -> LabeledDataset:
    if not cfg["data"]:
        raise UsageError("--data is required")
    ds = load_csv(cfg["data"], cfg["labels_col"])
    return ds.standardized() if cfg["standardize"] else ds


def split_and_bags(ds, cfg, bags_dir=None):
    fr = tuple(float(v) for v in cfg["split"].split(","))
    if bags_dir:
        d = Path(bags_dir)
        sp = read_split(d / "split.csv", ds.m)
        bags = read_bags(d / "bags.csv", d / "bag_counts.csv", cfg["bag_size"])
    else:
        sp = split(ds, fr, seed=cfg["seed"])
        bags = generate_bags(sp.train, cfg["bag_size"], ds.labels, cfg["seed"])
    return sp, bags


def write_split(sp: DataSplit, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_index", "part"])
        rows = [(int(i), name) for name in ("train", "validation", "test") for i in getattr(sp, name)]
        for i, name in sorted(rows):
            w.writerow([i, name])


def read_split(path, m) -> DataSplit:
    parts = {"train": [], "validation": [], "test": []}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            if row["part"] not in parts:
                raise UsageError(f"{path}: unknown part {row['part']!r}")
            parts[row["part"]].append(int(row["instance_index"]))
    for v in parts.values():
        if v and max(v) >= m:
            raise UsageError(f"{path}: index {max(v)} out of range for {m} rows")
    return DataSplit(*(np.array(sorted(parts[k]), dtype=np.int64) for k in ("train", "validation", "test")))


def write_vector(path, header, values, index=None) -> None:
    idx = range(len(values)) if index is None else index
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_index", header])
        for i, v in zip(idx, values):
            w.writerow([int(i), repr(float(v)) if isinstance(v, (float, np.floating)) else int(v)])


def source_version() -> str:
    try:
        rev = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def write_manifest(out_dir: Path, command, cfg, overrides, extra) -> None:
    man = {
        "command": command,
        "version": source_version(),
        "config": {**cfg, "overrides": {str(r): d for r, d in overrides.items()}},
        "seeds": {"split": cfg["seed"], "bags": cfg["seed"], "model": cfg["seed"], "dp_noise": cfg["seed"] + 7919},
        **extra,
    }
    (out_dir / "manifest.json").write_text(json.dumps(_jsonable(man), indent=2, sort_keys=True) + "\n")


def out_dir_of(args) -> Path:
    if not args.out_dir:
        raise UsageError("--out-dir is required")
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


# ----------------------------------------------------------------- commands


def cmd_synth(args):
    ds = make_synthetic(args.m, args.d, args.separation, args.seed if args.seed is not None else 0)
    write_csv(ds, args.out, label_column="y")
    print(json.dumps({"rows": ds.m, "columns": ds.d, "out": str(args.out)}))


def cmd_bags(args):
    cfg, _ = resolve(args)
    ds = load_dataset(cfg)
    sp, bags = split_and_bags(ds, cfg)
    d = out_dir_of(args)
    write_split(sp, d / "split.csv")
    write_bags(bags, d / "bags.csv", d / "bag_counts.csv")
    print(json.dumps({"bags": bags.n, "bag_size": bags.bag_size, "train": len(sp.train),
                      "unbagged": len(sp.train) - len(bags.members)}))


def _model_from_args(args, cfg):
    """Hand-built model files, or the model built from a dataset's training bags."""
    if args.nodes or args.pairs:
        if not (args.nodes and args.pairs):
            raise UsageError("--nodes and --pairs go together")
        return read_model(args.nodes, args.pairs), None
    ds = load_dataset(cfg)
    sp, bags = split_and_bags(ds, cfg, getattr(args, "bags_dir", None))
    train_idx = np.asarray(sp.train)
    local = bags.remap(train_idx)
    z = ds.features[train_idx]
    graph = build_graph(z, cfg["k"], cfg["delta_d"], cfg["metric"])
    if cfg["knn_fraction"] < 1.0:
        graph = subsample_constraints(graph, cfg["knn_fraction"], cfg["seed"])
    model = build_ising(len(z), local, graph, kernel_from(cfg), cfg["lambda_b"], cfg["lambda_s"], cfg["node_term"])
    return model, (ds.labels[train_idx], local.members, train_idx)


def cmd_bp(args):
    cfg, _ = resolve(args)
    d = out_dir_of(args)
    t0 = time.perf_counter()
    model, truth = _model_from_args(args, cfg)
    t1 = time.perf_counter()
    if args.max_product:
        out, diag = bp.max_product(model, cfg["T"], cfg["damping"], cfg["bp_tol"])
        write_vector(d / "map.csv", "y", out)
    else:
        out, diag = bp.sum_product(model, cfg["T"], cfg["damping"], cfg["bp_tol"])
        write_vector(d / "marginals.csv", "p", out)
    t2 = time.perf_counter()
    metrics = {"num_vars": model.num_vars, "num_pairs": model.num_pairs,
               "mooij_value": bp.mooij_contraction_check(model)[0], **diag.to_dict()}
    if truth is not None:
        y, bagged, train_idx = truth
        if not args.max_product:
            pl = threshold(out, cfg["tau"], cfg["label_mode"])
            write_pseudo_labels(pl, d / "pseudo_labels.csv", index=train_idx)
            if len(np.unique(y[bagged])) == 2:
                metrics["pseudo_label_auroc"] = auroc(out[bagged], y[bagged])
        if args.write_model:
            write_model(model, d / "model_nodes.csv", d / "model_pairs.csv")
    write_manifest(d, "bp", cfg, {}, {"metrics": metrics, "wall_times": {"setup": t1 - t0, "bp": t2 - t1}})
    print(json.dumps(_jsonable({k: metrics[k] for k in metrics if k != "max_message_delta"})))


def _report_rows(reports):
    rows = []
    for rep in reports:
        rows.append({
            "iteration": rep.iteration,
            "pseudo_label_auroc": rep.pseudo_label_auroc,
            "val_auroc": rep.val_auroc,
            "test_auroc": rep.test_auroc,
            "bp_rounds": rep.bp_diagnostics["rounds_run"],
            "bp_converged": rep.bp_diagnostics["converged"],
            "num_pairs": rep.num_pairs,
            "best_epoch": rep.best_epoch,
            **{f"time_{k}": v for k, v in rep.wall_times.items()},
        })
    return rows


def _write_rows(path, rows):
    if not rows:
        return
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def cmd_pipeline(args):
    cfg, overrides = resolve(args)
    pcfg = pipeline_config(cfg, overrides)
    d = out_dir_of(args)
    ds = load_dataset(cfg)
    sp, bags = split_and_bags(ds, cfg, args.bags_dir)
    write_split(sp, d / "split.csv")
    write_bags(bags, d / "bags.csv", d / "bag_counts.csv")
    train_idx = np.asarray(sp.train)

    def save(r, rep, art):
        write_vector(d / f"marginals_iter{r}.csv", "p", art.marginals, index=train_idx)
        write_pseudo_labels(art.pseudo_labels, d / f"pseudo_labels_iter{r}.csv", index=train_idx)
        art.model.save(d / f"model_iter{r}.json")
        art.train_log.write_csv(d / f"train_log_iter{r}.csv")

    t0 = time.perf_counter()
    try:
        _, reports = run(ds, sp, bags, pcfg, on_iteration=save)
        failed = None
    except PipelineError as exc:
        reports, failed = exc.reports, exc
    rows = _report_rows(reports)
    _write_rows(d / "metrics.csv", rows)
    write_manifest(d, "pipeline", cfg, overrides, {
        "iterations": [r.to_dict() for r in reports],
        "total_seconds": time.perf_counter() - t0,
        "failed": None if failed is None else str(failed),
    })
    if failed is not None:
        raise failed
    print(json.dumps(_jsonable(rows[-1])))


def cmd_dllp(args):
    cfg, _ = resolve(args)
    d = out_dir_of(args)
    ds = load_dataset(cfg)
    sp, bags = split_and_bags(ds, cfg, args.bags_dir)
    t0 = time.perf_counter()
    model, tlog, test_auc = run_dllp(ds, sp, bags, _ints(cfg["hidden"]), train_config(cfg), seed=cfg["seed"],
                                     dtype="float32" if cfg["float32"] else "float64")
    model.save(d / "model_dllp.json")
    tlog.write_csv(d / "train_log_dllp.csv")
    row = {"method": "dllp", "val_auroc": tlog.best_val_auroc, "test_auroc": test_auc,
           "best_epoch": tlog.best_epoch, "time_train": time.perf_counter() - t0}
    _write_rows(d / "metrics.csv", [row])
    write_manifest(d, "dllp", cfg, {}, {"metrics": row})
    print(json.dumps(_jsonable(row)))


def cmd_stability(args):
    cfg, _ = resolve(args)
    model, _ = _model_from_args(args, cfg)
    t0 = time.perf_counter()
    norm, beta = bp.linearized_stability(model, args.power_iters, seed=cfg["seed"])
    mooij, holds = bp.mooij_contraction_check(model)
    out = {"spectral_norm": norm, "threshold": beta, "mooij_value": mooij, "mooij_holds": holds,
           "num_pairs": int(len(model.nonzero_pairs())), "seconds": time.perf_counter() - t0}
    if args.out_dir:
        write_manifest(out_dir_of(args), "stability", cfg, {}, {"metrics": out})
    print(json.dumps(_jsonable(out)))


def cmd_eval(args):
    cfg, _ = resolve(args)
    ds = load_dataset(cfg)
    if ds.labels is None:
        raise UsageError("evaluation data needs a label column")
    model = MLP.load(args.model)
    idx = np.arange(ds.m)
    if args.bags_dir:
        idx = read_split(Path(args.bags_dir) / "split.csv", ds.m).test
    scores = model.decision_function(ds.features[idx])
    out = {"auroc": auroc(scores, ds.labels[idx]), "rows": int(len(idx))}
    if args.out_dir:
        write_vector(out_dir_of(args) / "scores.csv", "score", scores, index=idx)
    print(json.dumps(out))


def cmd_grid(args):
    """Cartesian grid over ``--grid key=v1,v2`` axes, one pipeline run per point."""
    base, overrides = resolve(args)
    axes = []
    for spec in args.grid or []:
        if "=" not in spec:
            raise UsageError(f"--grid expects key=v1,v2,..., got {spec!r}")
        k, vals = spec.split("=", 1)
        k = k.strip().replace("-", "_")
        if k not in KEYS:
            raise UsageError(f"unknown grid key {k!r}")
        axes.append((k, [_convert(k, v) for v in vals.split(",")]))
    if not axes:
        raise UsageError("--grid needs at least one axis")
    d = out_dir_of(args)
    ds = load_dataset(base)
    sp, bags = split_and_bags(ds, base, args.bags_dir)
    rows = []
    for combo in itertools.product(*(v for _, v in axes)):
        cfg = {**base, **dict(zip((k for k, _ in axes), combo))}
        pcfg = pipeline_config(cfg, overrides)
        if cfg["bag_size"] != base["bag_size"]:
            bags_p = generate_bags(sp.train, cfg["bag_size"], ds.labels, cfg["seed"])
        else:
            bags_p = bags
        try:
            _, reports = run(ds, sp, bags_p, pcfg)
            err = ""
        except PipelineError as exc:
            reports, err = exc.reports, str(exc)
        last = reports[-1] if reports else None
        rows.append({
            **{k: cfg[k] for k, _ in axes},
            "pseudo_label_auroc": last.pseudo_label_auroc if last else None,
            "val_auroc": last.val_auroc if last else None,
            "test_auroc": last.test_auroc if last else None,
            "error": err,
        })
        log.info("grid point %s", rows[-1])
    _write_rows(d / "grid.csv", rows)
    best = max((r for r in rows if r["val_auroc"] is not None), key=lambda r: r["val_auroc"], default=None)
    write_manifest(d, "grid", base, overrides, {"grid": rows, "best_by_val": best})
    print(json.dumps(_jsonable(best)))


# ------------------------------------------------------------------- parser


def _add_common(p, data=True):
    g = p.add_argument_group("settings (override --config)")
    g.add_argument("--config", help="flat key = value file, or a manifest.json from a previous run")
    if data:
        g.add_argument("--data", help="CSV with a header row")
        g.add_argument("--labels-col", dest="labels_col")
        g.add_argument("--standardize", action="store_const", const=True, default=None,
                       help="z-score every feature column")
        g.add_argument("--split", help="train,validation,test fractions")
        g.add_argument("--bag-size", dest="bag_size", type=int)
        g.add_argument("--bags-dir", dest="bags_dir", help="reuse split.csv/bags.csv/bag_counts.csv")
    g.add_argument("--seed", type=int)
    g.add_argument("--k", type=int)
    g.add_argument("--delta-d", dest="delta_d", type=float)
    g.add_argument("--metric", choices=("cosine", "euclidean"))
    g.add_argument("--kernel", choices=("rbf", "matern"))
    g.add_argument("--gamma", type=float)
    g.add_argument("--nu", type=float)
    g.add_argument("--length-scale", dest="length_scale", type=float)
    g.add_argument("--lambda-b", dest="lambda_b", type=float)
    g.add_argument("--lambda-s", dest="lambda_s", type=float)
    g.add_argument("--lambda-a", dest="lambda_a", type=float)
    g.add_argument("--T", dest="T", type=int)
    g.add_argument("--damping", type=float)
    g.add_argument("--bp-tol", dest="bp_tol", type=float)
    g.add_argument("--tau", type=float)
    g.add_argument("--label-mode", dest="label_mode", choices=("hard", "soft", "soft_weighted"))
    g.add_argument("--node-term", dest="node_term", choices=("symmetric", "outgoing"))
    g.add_argument("--iterations", type=int)
    g.add_argument("--hidden", help="comma-separated hidden widths")
    g.add_argument("--pooling", choices=("mean", "sum", "max"))
    g.add_argument("--learning-rate", dest="learning_rate", type=float)
    g.add_argument("--weight-decay", dest="weight_decay", type=float)
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--max-epochs", dest="max_epochs", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--knn-fraction", dest="knn_fraction", type=float)
    g.add_argument("--dp-epsilon", dest="dp_epsilon", type=float)
    g.add_argument("--dp-delta", dest="dp_delta", type=float)
    g.add_argument("--float32", action="store_const", const=True, default=None)
    p.add_argument("--out-dir", dest="out_dir")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="llpbp", description="Label-proportion learning with belief-propagation pseudo-labels")
    top.add_argument("--version", action="version", version=__version__)
    top.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    top.add_argument("-v", "--verbose", action="count", default=0)
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a two-Gaussian CSV")
    p.add_argument("--m", type=int, default=4000)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("bags", help="split a dataset and sample training bags")
    _add_common(p)
    p.set_defaults(fn=cmd_bags)

    for name, fn, hlp in (("bp", cmd_bp, "run BP on a model file or a dataset"),
                          ("stability", cmd_stability, "BP convergence diagnostics")):
        p = sub.add_parser(name, help=hlp)
        _add_common(p)
        p.add_argument("--nodes", help="CSV instance_index,h")
        p.add_argument("--pairs", help="CSV i,j,J")
        if name == "bp":
            p.add_argument("--max-product", dest="max_product", action="store_true")
            p.add_argument("--write-model", dest="write_model", action="store_true")
        else:
            p.add_argument("--power-iters", dest="power_iters", type=int, default=200)
        p.set_defaults(fn=fn)

    p = sub.add_parser("pipeline", help="iterative BP pseudo-labeling + training")
    _add_common(p)
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("dllp", help="bag-mean proportion-matching baseline")
    _add_common(p)
    p.set_defaults(fn=cmd_dllp)

    p = sub.add_parser("eval", help="AUROC of a saved model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("grid", help="pipeline runs over a hyperparameter grid")
    _add_common(p)
    p.add_argument("--grid", action="append", help="key=v1,v2,... (repeatable)")
    p.set_defaults(fn=cmd_grid)
    return top


def _fail(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": " ".join(str(message).split())}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("UsageError", exc, 2)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            args.fn(args)
    except UsageError as exc:
        return _fail("UsageError", exc, 2)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        return _fail(type(exc).__name__, exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
