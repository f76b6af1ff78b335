"""Command-line driver: ``mixmad synth | train | score | eval``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import baselines
from .data import (
    LABEL_COLUMN,
    DataError,
    Schema,
    SchemaError,
    SynthConfig,
    apply_normalizer,
    fit_normalizer,
    generate_synthetic,
    load_csv,
    save_csv,
)
from .ensemble import aggregate_pnorm, check_schema, fit, format_p, parse_p, score, top_mask
from .metrics import auc, f_score, ndcg_at_t
from .modelfile import ModelFileError, load_model, load_run_info, save_model
from .rbm import TrainConfig, TrainingError


@dataclass
class RunConfig:
    depth: int = 2
    ka: list = field(default_factory=lambda: [50])
    kd: list = field(default_factory=lambda: [10])
    p: list = field(default_factory=lambda: [0.5, 1.0, 2.0, math.inf])
    epochs: int = 50
    lr: float = 0.3
    batch: int = 64
    seed: int = 0
    weight_init_scale: float = 0.01
    contamination: float = 0.1
    ndcg_t: int = 20

    def resolved(self) -> "RunConfig":
        """Broadcast single-entry size lists to the depth and validate."""
        ka, kd = [int(k) for k in self.ka], [int(k) for k in self.kd]
        if self.depth < 1:
            raise ValueError("--depth must be >= 1")
        if self.depth == 1:
            ka = []
        elif len(ka) == 1:
            ka = ka * (self.depth - 1)
        if len(kd) == 1:
            kd = kd * self.depth
        if len(ka) != self.depth - 1 or len(kd) != self.depth:
            raise ValueError(
                f"depth {self.depth} needs {self.depth - 1} --ka and {self.depth} --kd values "
                f"(or one of each), got {len(ka)} and {len(kd)}"
            )
        if not 0 < self.contamination < 1:
            raise ValueError("--contamination must lie in (0, 1)")
        if self.ndcg_t < 1:
            raise ValueError("--ndcg-t must be >= 1")
        p = [parse_p(v) for v in self.p]
        if not p:
            raise ValueError("need at least one --p value")
        return RunConfig(self.depth, ka, kd, p, self.epochs, self.lr, self.batch, self.seed,
                         self.weight_init_scale, self.contamination, self.ndcg_t)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.batch, self.epochs, self.seed, self.weight_init_scale)

    def to_json(self) -> dict:
        d = asdict(self)
        d["p"] = [format_p(v) for v in self.p]
        return d


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _p_list(text: str) -> list:
    try:
        return [parse_p(v.strip()) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def load_run_config(args) -> RunConfig:
    """Defaults, then the optional JSON config file, then explicit flags."""
    cfg = RunConfig()
    names = {f.name for f in fields(RunConfig)}
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text())
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"{args.config}: unknown config keys {sorted(unknown)}")
        for key, value in doc.items():
            if key in ("ka", "kd") and isinstance(value, int):
                value = [value]
            if key == "p":
                value = [parse_p(v) for v in (value if isinstance(value, list) else [value])]
            setattr(cfg, key, value)
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return cfg.resolved()


def _fmt(x: float) -> str:
    return "%.17g" % x


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with run settings; flags override it")
    p.add_argument("--depth", type=int, help="number of levels L (default 2)")
    p.add_argument("--ka", type=_int_list, help="abstraction hidden sizes, comma-separated (default 50)")
    p.add_argument("--kd", type=_int_list, help="detection hidden sizes, comma-separated (default 10)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--weight-init-scale", dest="weight_init_scale", type=float)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--p", type=_p_list, help="aggregation exponents, e.g. 0.5,1,2,inf")
    p.add_argument("--seed", type=int)
    p.add_argument("--contamination", type=float, help="expected anomaly fraction (default 0.1)")
    p.add_argument("--ndcg-t", dest="ndcg_t", type=int, help="NDCG cut-off T (default 20)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixmad", description="Multilevel anomaly detection for mixed data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a labelled synthetic dataset and its schema")
    p.add_argument("--data", required=True, help="output CSV path")
    p.add_argument("--schema", required=True, help="output schema JSON path")
    p.add_argument("--seed", type=int, default=0)
    d = SynthConfig()
    p.add_argument("--inliers", type=int, default=d.n_inliers)
    p.add_argument("--outliers", type=int, default=d.n_outliers)
    p.add_argument("--binary", type=int, default=d.n_binary)
    p.add_argument("--gaussian", type=int, default=d.n_gaussian)
    p.add_argument("--nominal", type=int, default=d.n_nominal)
    p.add_argument("--poisson", type=int, default=d.n_poisson)
    p.add_argument("--cardinality", type=int, default=d.nominal_cardinality)

    p = sub.add_parser("train", help="fit the normalizer and the ensemble, write a model file")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--model", required=True, help="output model JSON path")
    _add_train_flags(p)
    _add_common_flags(p)

    p = sub.add_parser("score", help="score a CSV with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", help="optional schema to check against the model")
    p.add_argument("--out", help="scores CSV path (default: stdout)")
    p.add_argument("--threads", type=int, default=1)
    _add_common_flags(p)

    p = sub.add_parser("eval", help="AUC, NDCG@T and F-score of a scores CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--data", required=True, help="CSV with a label column, rows aligned with the scores")
    p.add_argument("--schema", help="schema of --data; required for --baselines")
    p.add_argument("--train", help="CSV used to fit baselines (default: --data itself)")
    p.add_argument("--baselines", default="", help="comma-separated subset of knn,pca")
    p.add_argument("--knn-k", dest="knn_k", type=int, default=10)
    p.add_argument("--out", help="also write the metrics table as CSV")
    p.add_argument("--config", help="JSON file with run settings")
    _add_common_flags(p)
    return parser


def cmd_synth(args, out) -> None:
    cfg = SynthConfig(
        n_binary=args.binary,
        n_gaussian=args.gaussian,
        n_nominal=args.nominal,
        n_poisson=args.poisson,
        nominal_cardinality=args.cardinality,
        n_inliers=args.inliers,
        n_outliers=args.outliers,
    )
    data = generate_synthetic(cfg, args.seed)
    save_csv(data, args.data)
    data.schema.save(args.schema)
    print(f"wrote {len(data)} rows ({int(data.labels.sum())} anomalies) to {args.data}", file=out)


def cmd_train(args, out) -> None:
    run = load_run_config(args)
    raw = load_csv(args.data, Schema.load(args.schema))
    schema = fit_normalizer(raw)
    data = apply_normalizer(raw, schema)
    history = {}
    model_p = run.p[0] if len(run.p) == 1 else 1.0
    model = fit(data, run.depth, run.ka, run.kd, run.train_config(), model_p, history)
    n_det = sum(1 for kind, _ in history if kind == "detector")
    n_abs = sum(1 for kind, _ in history if kind == "abstraction")
    print(f"trained {n_det} detection and {n_abs} abstraction RBMs on {len(data)} rows", file=out)
    for (kind, level), stats in sorted(history.items(), key=lambda kv: (kv[0][1], kv[0][0] != "detector")):
        rbm = model.detectors[level - 1] if kind == "detector" else model.chain[level - 1]
        last = stats[-1]
        print(
            f"level {level} {kind:<11} K={rbm.n_hidden:<4} epochs={len(stats):<3} "
            f"mean F={last.mean_free_energy:.6g} recon gap={last.free_energy_gap:.6g}",
            file=out,
        )
    save_model(model, args.model, extra=run.to_json())
    print(f"wrote model to {args.model}", file=out)


def _scoring_run(args, model_path) -> RunConfig:
    run = RunConfig(**{k: v for k, v in load_run_info(model_path).items() if k in {f.name for f in fields(RunConfig)}})
    if run.p:
        run.p = [parse_p(v) for v in run.p]
    for name in ("p", "seed", "contamination", "ndcg_t"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(run, name, value)
    return run.resolved()


def score_table(model, data, ps, contamination: float, threads: int = 1) -> str:
    report = score(model, data, ps[0], threads=threads)
    header = ["row_index"]
    header += [f"F_{l + 1}" for l in range(report.depth)]
    header += [f"rank_{l + 1}" for l in range(report.depth)]
    aggs, flags = [], []
    for p in ps:
        agg = np.asarray(aggregate_pnorm(report.ranks, p), dtype=np.float64).reshape(-1)
        aggs.append(agg)
        flags.append(top_mask(agg, contamination) if len(agg) else np.zeros(0, bool))
    header += [f"aggregate_p{format_p(p)}" for p in ps]
    header += [f"flag_p{format_p(p)}" for p in ps]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i in range(len(report)):
        row = [str(i)]
        row += [_fmt(v) for v in report.energies[i]]
        row += [_fmt(v) for v in report.ranks[i]]
        row += [_fmt(a[i]) for a in aggs]
        row += ["1" if f[i] else "0" for f in flags]
        w.writerow(row)
    return buf.getvalue()


def cmd_score(args, out) -> None:
    model = load_model(args.model)
    run = _scoring_run(args, args.model)
    if args.schema:
        check_schema(model, Schema.load(args.schema))
    raw = load_csv(args.data, model.schema)
    data = apply_normalizer(raw, model.schema)
    if args.threads < 1:
        raise ValueError("--threads must be >= 1")
    text = score_table(model, data, run.p, run.contamination, args.threads)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(data)} scores to {args.out}", file=out)
    else:
        out.write(text)


def read_scores(path) -> dict:
    """Aggregate columns of a scores CSV keyed by their p label, plus the depth."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        rows = list(reader)
    agg_cols = [c for c in cols if c.startswith("aggregate_p")]
    if not agg_cols:
        raise DataError(f"{path}: no aggregate_p* columns")
    depth = sum(1 for c in cols if c.startswith("F_"))
    scores = {c[len("aggregate_p"):]: np.array([float(r[c]) for r in rows]) for c in agg_cols}
    return {"depth": depth, "scores": scores, "n": len(rows)}


def read_labels(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if LABEL_COLUMN not in (reader.fieldnames or []):
            raise DataError(f"{path}: no {LABEL_COLUMN!r} column; labels are required for eval")
        labels = []
        for r, rec in enumerate(reader, start=1):
            v = rec[LABEL_COLUMN].strip()
            if v not in ("0", "1"):
                raise DataError(f"row {r}, column {LABEL_COLUMN!r}: expected 0 or 1, got {v!r}")
            labels.append(v == "1")
    return np.array(labels, dtype=bool)


def metric_row(name, scores, labels, contamination, t) -> dict:
    return {
        "method": name,
        "auc": auc(scores, labels),
        "ndcg": ndcg_at_t(scores, labels, t),
        "f": f_score(top_mask(scores, contamination), labels),
    }


def cmd_eval(args, out) -> None:
    run = RunConfig()
    if args.config:
        run = load_run_config(argparse.Namespace(config=args.config))
    for name in ("contamination", "ndcg_t"):
        if getattr(args, name) is not None:
            setattr(run, name, getattr(args, name))
    run = run.resolved()
    table = read_scores(args.scores)
    labels = read_labels(args.data)
    if len(labels) != table["n"]:
        raise DataError(f"{args.scores} has {table['n']} rows but {args.data} has {len(labels)} labels")
    rows = []
    for label, s in table["scores"].items():
        if args.p is not None and parse_p(label) not in args.p:
            continue
        rows.append(metric_row(f"MIXMAD-L{table['depth']}p{label}", s, labels, run.contamination, run.ndcg_t))
    wanted = [b.strip().lower() for b in args.baselines.split(",") if b.strip()]
    unknown = set(wanted) - {"knn", "pca"}
    if unknown:
        raise ValueError(f"unknown baseline(s) {sorted(unknown)}; choose from knn,pca")
    if wanted:
        if not args.schema:
            raise ValueError("--baselines needs --schema to parse the data features")
        schema = Schema.load(args.schema)
        test_raw = load_csv(args.data, schema)
        train_raw = load_csv(args.train, schema) if args.train else test_raw
        fitted = fit_normalizer(train_raw)
        test_x = baselines.numeric_matrix(apply_normalizer(test_raw, fitted))
        train_x = baselines.numeric_matrix(apply_normalizer(train_raw, fitted))
        for name in wanted:
            if name == "knn":
                s = baselines.knn_score(train_x, None if args.train is None else test_x, args.knn_k)
                rows.append(metric_row(f"kNN(k={args.knn_k})", s, labels, run.contamination, run.ndcg_t))
            else:
                s = baselines.pca_score(train_x, test_x, run.contamination)
                rows.append(metric_row("PCA", s, labels, run.contamination, run.ndcg_t))
    t = run.ndcg_t
    print(f"{'method':<20} {'AUC':>8} {f'NDCG@{t}':>9} {'F':>8}", file=out)
    for r in rows:
        print(f"{r['method']:<20} {r['auc']:>8.4f} {r['ndcg']:>9.4f} {r['f']:>8.4f}", file=out)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "auc", f"ndcg_at_{t}", "f_score"])
            for r in rows:
                w.writerow([r["method"], _fmt(r["auc"]), _fmt(r["ndcg"]), _fmt(r["f"])])


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "score": cmd_score, "eval": cmd_eval}


def main(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args, out)
    except (DataError, SchemaError, ModelFileError, TrainingError, ValueError, OSError) as exc:
        print(f"mixmad {args.command}: error: {exc}", file=err)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
