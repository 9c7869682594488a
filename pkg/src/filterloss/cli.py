"""Command-line entry point.

Subcommands: gen, analyze, resample, weights, pretrain, finetune, bench.
Exit codes: 0 success, 1 config/input error, 2 runtime failure, 3 partial
grid failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import model as M
from .analysis import AnalysisError, cross_dataset_report, pairwise_stats
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .dataset import (
    DatasetError,
    Normalizer,
    apply_normalizer,
    class_distribution,
    fit_normalizer,
    imbalance_ratio,
    load_csv,
    save_csv,
)
from .experiment import (
    ReplicateData,
    derive_seed,
    replicate_data,
    results_digest,
    run_grid,
    summary_table,
)
from .resampling import ResamplingError, UndersamplerSpec, resample
from .trainer import StrategyError, TrainingError, accuracy_std, evaluate, run_strategy, train
from .weight_filter import (
    WeightFilterError,
    WeightTable,
    assign_weights,
    default_weight_table,
    save_weights_csv,
    weight_histogram,
)

log = logging.getLogger("filterloss")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3
INPUT_ERRORS = (ConfigError, DatasetError, AnalysisError, FileNotFoundError,
                StrategyError, WeightFilterError, ResamplingError, M.ModelFileError)


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_rows(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def report_doc(results, started: float, command: str) -> dict:
    """Wrap results; timestamps and durations live only under ``meta``."""
    return {
        "schema_version": 1,
        "results": results,
        "meta": {
            "command": command,
            "version": __version__,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
            "duration_s": round(time.time() - started, 3),
            "results_sha256": results_digest(results),
        },
    }


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else parse_config()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = Path(args.out)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _distribution_json(ds):
    rows = class_distribution(ds)
    return {
        "classes": [{"class": n, "count": c, "proportion": p} for n, c, p in rows],
        "imbalance_ratio": imbalance_ratio([c for _, c, _ in rows]),
    }


# -- subcommands ----------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _config(args)
    data = replicate_data(cfg, 0)
    splits = {
        "source_train": data.source_train,
        "source_test": data.source_test,
        "target_train": data.target_train,
        "target_test": data.target_test,
    }
    dist = {}
    for name, ds in splits.items():
        save_csv(ds, cfg.out_dir / f"{name}.csv")
        dist[name] = _distribution_json(ds)
    write_json(cfg.out_dir / "distribution.json", dist)
    for name, d in dist.items():
        print(f"{name}: imbalance ratio {d['imbalance_ratio']:.1f}")
        for row in d["classes"]:
            print(f"  {row['class']:>10s} {row['count']:6d} {row['proportion']:.3f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    out = _out_dir(args)
    sets = [load_csv(p) for p in args.datasets]
    results = {"datasets": []}
    for path, ds in zip(args.datasets, sets):
        rep = pairwise_stats(ds, args.max_pairs, args.seed or 0, args.reference)
        results["datasets"].append({"path": str(path), **rep.to_json()})
        rep.to_csv(out / f"{Path(path).stem}_similarity.csv")
    if len(sets) == 2:
        rows = cross_dataset_report(sets[0], sets[1], args.classes, args.max_pairs,
                                    args.seed or 0, args.reference)
        results["cross"] = [r.to_json() for r in rows]
        write_rows(out / "cross_report.csv", [["class", "euclid_a", "euclid_b", "delta_euclid",
                                                "cosine_a", "cosine_b", "delta_cosine"]] + [
            [r.class_name, r.stat_a.mean_euclid, r.stat_b.mean_euclid, r.delta_euclid,
             r.stat_a.mean_cosine, r.stat_b.mean_cosine, r.delta_cosine] for r in rows])
        for r in rows:
            print(f"{r.class_name:>10s}  d_euclid {r.delta_euclid:+.4f}  d_cosine {r.delta_cosine:+.4f}")
    write_json(out / "analysis.json", results)
    return EXIT_OK


def cmd_resample(args) -> int:
    out = _out_dir(args)
    ds = load_csv(args.dataset)
    res = resample(ds, args.method, k=args.k, beta=args.beta, seed=args.seed or 0)
    save_csv(res.apply(ds), out / f"resampled_{args.method}.csv")
    write_json(out / f"resample_{args.method}.json", res.to_json())
    print(f"{args.method}: kept {len(res.keep_indices)}/{ds.n}, synthetic {res.n_synthetic}")
    return EXIT_OK


def cmd_weights(args) -> int:
    out = _out_dir(args)
    ds = load_csv(args.dataset)
    names = [s for s in args.samplers.replace("&", ",").split(",") if s]
    method = {"rus": "random_under"}
    samplers = [UndersamplerSpec(method.get(s, s), k=args.k, seed=(args.seed or 0) + i)
                for i, s in enumerate(names)]
    if args.table:
        table = WeightTable(tuple(float(v) for v in args.table.split(",")))
    else:
        table = default_weight_table(len(samplers), args.alpha_min)
    omega = assign_weights(ds, samplers, table)
    save_weights_csv(omega, out / "weights.csv")
    hist = weight_histogram(omega, table)
    write_json(out / "weights_summary.json",
               {"samplers": names, "table": list(table.alphas), "histogram": hist, "n": ds.n})
    for h in hist:
        print(f"  weight {h['weight']:.4g}: {h['count']}")
    return EXIT_OK


def _save_preprocessing(norm: Normalizer, class_names, path: Path):
    write_json(path, {"mean": norm.mean.tolist(), "std": norm.std.tolist(),
                      "class_names": list(class_names)})


def _load_preprocessing(path: Path) -> tuple[Normalizer, list[str]]:
    doc = json.loads(path.read_text(encoding="utf-8"))
    return Normalizer(np.array(doc["mean"]), np.array(doc["std"])), doc.get("class_names")


def _data_from_args(cfg, args, side: str):
    """(train, eval) for ``side``, from CSV flags or the replicate-0 synthetic data."""
    if args.train:
        train_ds = load_csv(args.train)
        eval_ds = load_csv(args.eval) if args.eval else None
        if eval_ds is not None:
            eval_ds = eval_ds.with_class_order(train_ds.class_names)
        return train_ds, eval_ds
    data: ReplicateData = replicate_data(cfg, 0)
    if side == "source":
        return data.source_train, data.source_test
    return data.target_train, data.target_test


def cmd_pretrain(args) -> int:
    started = time.time()
    cfg = _config(args)
    train_ds, eval_ds = _data_from_args(cfg, args, "source")
    norm = fit_normalizer(train_ds)
    train_ds = apply_normalizer(norm, train_ds)
    eval_ds = apply_normalizer(norm, eval_ds) if eval_ds is not None else None
    spec = M.ModelSpec(train_ds.d, train_ds.n_classes,
                       init_seed=derive_seed(cfg.seed, "init", 0), **cfg.model)
    config = M.TrainConfig(cfg.pretrain.learning_rate, cfg.pretrain.epochs, cfg.pretrain.batch_size,
                           derive_seed(cfg.seed, "pretrain", 0), cfg.pretrain.full_batch)
    params, history = train(M.init(spec), train_ds, None, cfg.pretrain_loss, config, eval_ds)
    M.save(params, cfg.out_dir / "pretrained.bin")
    _save_preprocessing(norm, train_ds.class_names, cfg.out_dir / "normalizer.json")
    results = {"history": [asdict(r) for r in history],
               "class_names": list(train_ds.class_names)}
    if eval_ds is not None:
        results["eval"] = evaluate(params, eval_ds).to_json()
    write_json(cfg.out_dir / "pretrain_report.json", report_doc(results, started, "pretrain"))
    print(f"pretrained model -> {cfg.out_dir / 'pretrained.bin'}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    started = time.time()
    cfg = _config(args)
    model_path = Path(args.model) if args.model else cfg.out_dir / "pretrained.bin"
    params = M.load(model_path)
    norm_path = Path(args.normalizer) if args.normalizer else model_path.parent / "normalizer.json"
    train_ds, eval_ds = _data_from_args(cfg, args, "target")
    if eval_ds is None:
        raise ConfigError("finetune needs an evaluation set (--eval)")
    if norm_path.is_file():
        norm, names = _load_preprocessing(norm_path)
        train_ds, eval_ds = apply_normalizer(norm, train_ds), apply_normalizer(norm, eval_ds)
        if names and set(train_ds.class_names) <= set(names):
            train_ds, eval_ds = train_ds.with_class_order(names), eval_ds.with_class_order(names)
    strategy = args.strategy or cfg.strategies[0]
    losses = dict(cfg.losses)
    loss_name = args.loss or cfg.losses[0][0]
    if loss_name not in losses:
        raise ConfigError(f"loss {loss_name!r} not in config losses {list(losses)}")
    seed = derive_seed(cfg.seed, strategy, loss_name, 0)
    config = M.TrainConfig(cfg.finetune.learning_rate, cfg.finetune.epochs,
                           cfg.finetune.batch_size, seed, cfg.finetune.full_batch)
    report, history = run_strategy(strategy, params, train_ds, eval_ds, losses[loss_name],
                                   config, seed=seed, options=cfg.options)
    results = {
        "strategy": strategy,
        "loss": loss_name,
        "eval": report.to_json(),
        "history": [asdict(r) for r in history],
        "accuracy_std": accuracy_std(history),
    }
    write_json(cfg.out_dir / "finetune_report.json", report_doc(results, started, "finetune"))
    write_rows(cfg.out_dir / "finetune_history.csv",
               [["epoch", "train_loss", "accuracy", "macro_f1"]]
               + [[r.epoch, r.train_loss, r.accuracy, r.macro_f1] for r in history])
    print(f"{strategy} / {loss_name}: accuracy {report.accuracy:.4f}, macro-F1 {report.macro_f1:.4f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    started = time.time()
    cfg = _config(args)
    results = run_grid(cfg, args.jobs)
    results["config"] = cfg.raw | {"seed": cfg.seed, "out_dir": None}
    doc = report_doc(results, started, "bench")
    write_json(cfg.out_dir / "bench_report.json", doc)
    table = summary_table(cfg, results["summary"])
    write_rows(cfg.out_dir / "bench_table.csv", table)
    write_rows(cfg.out_dir / "bench_epochs.csv",
               [["strategy", "loss", "replicate", "epoch", "train_loss", "accuracy", "macro_f1"]]
               + [[c["strategy"], c["loss"], c["replicate"], h["epoch"], h["train_loss"],
                   h["accuracy"], h["macro_f1"]]
                  for c in results["cells"] if "error" not in c for h in c["history"]])
    widths = [max(len(r[i]) for r in table) for i in range(len(table[0]))]
    for row in table:
        print("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    failed = [c for c in results["cells"] if "error" in c]
    for c in failed:
        print(f"cell failed: {c['strategy']} / {c['loss']} / rep {c['replicate']}: {c['error']}",
              file=sys.stderr)
    return EXIT_PARTIAL if failed else EXIT_OK


# -- argument parsing -----------------------------------------------------


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # Subcommand copies use SUPPRESS so they don't clobber flags given
    # before the subcommand name.
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON", **kw)
    common.add_argument("--out", help="output directory", **kw)
    common.add_argument("--seed", type=int, help="base seed (overrides config)", **kw)
    common.add_argument("--jobs", type=int, help="worker processes for bench", **kw)
    common.add_argument("-v", "--verbose", action="store_true", **kw)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="filterloss", parents=[_global_flags(suppress=False)],
                                     description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen", parents=[common], help="write synthetic source/target CSVs")

    p = sub.add_parser("analyze", parents=[common], help="per-label similarity statistics")
    p.add_argument("datasets", nargs="+", help="one or two dataset CSVs")
    p.add_argument("--max-pairs", type=int, default=5000)
    p.add_argument("--reference", choices=("pairwise", "centroid"), default="pairwise")
    p.add_argument("--classes", nargs="+", help="shared class names to compare")

    p = sub.add_parser("resample", parents=[common], help="run one resampler on a CSV")
    p.add_argument("dataset")
    p.add_argument("--method", required=True,
                   choices=("random_under", "random_over", "smote", "adasyn", "tomek", "enn", "oss"))
    p.add_argument("--k", type=int)
    p.add_argument("--beta", type=float, default=1.0)

    p = sub.add_parser("weights", parents=[common], help="weight-filter a CSV")
    p.add_argument("dataset")
    p.add_argument("--samplers", default="enn,oss", help="e.g. enn,oss")
    p.add_argument("--table", help="comma-separated weights, one more than samplers")
    p.add_argument("--alpha-min", type=float, default=0.1)
    p.add_argument("--k", type=int, default=3, help="ENN neighbor count")

    for name, helptext in (("pretrain", "train a source model"),
                           ("finetune", "fine-tune a saved model with a strategy")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--train", help="training CSV (default: synthetic from config)")
        p.add_argument("--eval", help="evaluation CSV")
        if name == "finetune":
            p.add_argument("--model", help="pretrained model file")
            p.add_argument("--normalizer", help="normalizer JSON (default: next to model)")
            p.add_argument("--strategy")
            p.add_argument("--loss", help="loss name from the config")

    sub.add_parser("bench", parents=[common], help="run the strategy x loss grid")
    return parser


COMMANDS = {
    "gen": cmd_gen,
    "analyze": cmd_analyze,
    "resample": cmd_resample,
    "weights": cmd_weights,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, M.ModelError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
