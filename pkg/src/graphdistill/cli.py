"""Command-line pipeline driver.

Batch commands: preprocess, train-teacher, distill, evaluate, ablate, grid,
dynamic-bench, report. Flags override config-file values, which override
defaults; all randomness funnels through --seed. Exit codes: 0 success,
2 usage error, 3 missing input artifact.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .data import load_tudataset, stratified_kfold, degree_onehot_features
from .dynamic import (
    StudentModel,
    TeacherModel,
    aggregate_metrics,
    make_trace,
    perturb_and_score,
    time_inference,
)
from .errors import ArtifactMissingError, GraphDistillError
from .losses import DistillWeights
from .models import GcnConfig, GinConfig, StudentConfig, init_student_params
from .runio import (
    collect_metrics,
    config_from_dict,
    fold_results_rows,
    format_summary_table,
    load_student_checkpoint,
    load_teacher_checkpoint,
    new_run_dir,
    read_manifest,
    save_student_checkpoint,
    save_teacher_checkpoint,
    summarize_metrics,
    write_fold_results_json,
    write_manifest,
    write_metrics_csv,
)
from .structure import build_struct_caches, load_struct_caches, save_struct_caches
from .synth import sparse_social_dataset
from .training import (
    RunConfig,
    ablate,
    cache_teacher,
    distill_student,
    grid_search_student,
    mean_accuracy,
    std_accuracy,
    train_teacher,
    weight_grid,
)
from . import models

log = logging.getLogger("graphdistill")

DATA_ENV = "GRAPHDISTILL_DATA"


def _ints(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok]


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok]


def _resolve_dataset_dir(data_dir: Path, name: str) -> Path:
    nested = data_dir / name
    if (nested / f"{name}_A.txt").is_file():
        return nested
    if (data_dir / f"{name}_A.txt").is_file():
        return data_dir
    raise ArtifactMissingError(nested / f"{name}_A.txt")


def _sidecar_path(dataset_dir: Path, name: str) -> Path:
    return dataset_dir / f"{name}.structcache.npz"


def load_prepared_dataset(data_dir, name: str):
    """Load a TU directory; social-style sets get degree one-hot features."""
    dataset_dir = _resolve_dataset_dir(Path(data_dir), name)
    dataset = load_tudataset(dataset_dir, name)
    if not (dataset_dir / f"{name}_node_labels.txt").is_file():
        dataset = degree_onehot_features(dataset)
    return dataset, dataset_dir


def _load_caches(dataset_dir: Path, name: str):
    sidecar = _sidecar_path(dataset_dir, name)
    if not sidecar.is_file():
        raise ArtifactMissingError(sidecar)
    caches, meta = load_struct_caches(sidecar)
    return caches, meta, sidecar


def _echo_config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def cmd_preprocess(args) -> int:
    dataset, dataset_dir = load_prepared_dataset(args.data_dir, args.dataset)
    caches = build_struct_caches(dataset, args.seed, args.k_pe, args.walk_length,
                                 args.num_walks)
    sidecar = _sidecar_path(dataset_dir, args.dataset)
    save_struct_caches(sidecar, caches, args.dataset, args.seed)
    run_dir = new_run_dir(args.out_dir, args.dataset, "preprocess", args.seed)
    write_manifest(run_dir, {"command": "preprocess", "config": _echo_config(args),
                             "sidecar": str(sidecar)})
    log.info("wrote struct cache for %d graphs to %s", len(caches), sidecar)
    print(sidecar)
    return 0


def _teacher_grid(args) -> list:
    cls = {"gin": GinConfig, "gcn": GcnConfig}[args.arch]
    grid = []
    for layers in _ints(args.layers):
        for hidden in _ints(args.hidden):
            for dropout in _floats(args.dropout):
                grid.append(cls(num_layers=layers, hidden=hidden, dropout=dropout,
                                readout=args.readout))
    return grid


def cmd_train_teacher(args) -> int:
    dataset, dataset_dir = load_prepared_dataset(args.data_dir, args.dataset)
    folds = stratified_kfold(dataset, args.folds, args.seed)
    run = RunConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                    lr_decay=args.lr_decay, lr_patience=args.lr_patience,
                    seed=args.seed)
    grid = _teacher_grid(args)
    log.info("training %d grid points on %d folds", len(grid), len(folds))
    checkpoints = train_teacher(dataset, folds, grid, run, jobs=args.jobs)
    run_dir = new_run_dir(args.out_dir, args.dataset, "train-teacher", args.seed)
    rows = []
    for ckpt in checkpoints:
        save_teacher_checkpoint(run_dir, ckpt)
        rows.append((args.dataset, f"teacher-{args.arch}", ckpt.fold_index, args.seed,
                     ckpt.best_test_accuracy))
    write_metrics_csv(run_dir / "metrics.csv", rows)
    write_manifest(run_dir, {
        "command": "train-teacher", "config": _echo_config(args),
        "dataset": args.dataset, "arch": args.arch,
        "folds": args.folds, "fold_seed": args.seed,
        "grid": [dataclasses.asdict(g) for g in grid],
        "data_dir": str(dataset_dir),
    })
    mean = float(np.mean([c.best_test_accuracy for c in checkpoints]))
    log.info("teacher mean best fold-test accuracy: %.4f", mean)
    print(run_dir)
    return 0


def _rebuild_from_teacher_run(args):
    manifest = read_manifest(args.teacher_run)
    name = manifest["dataset"]
    dataset, dataset_dir = load_prepared_dataset(args.data_dir, name)
    folds = stratified_kfold(dataset, manifest["folds"], manifest["fold_seed"])
    caches, cache_meta, _ = _load_caches(dataset_dir, name)
    checkpoints = {f.fold_index: load_teacher_checkpoint(args.teacher_run, f.fold_index)
                   for f in folds}
    teacher_caches = {fi: cache_teacher(ckpt, dataset, caches)
                      for fi, ckpt in checkpoints.items()}
    return manifest, name, dataset, folds, caches, checkpoints, teacher_caches


def _student_config(args) -> StudentConfig:
    return StudentConfig(kind=args.student, num_layers=args.student_layers,
                         hidden=args.hidden, dropout=args.dropout,
                         use_lape=args.lape, readout=args.readout)


def _method_name(scfg: StudentConfig, weights: DistillWeights) -> str:
    suffix = scfg.kind + ("+lape" if scfg.use_lape else "")
    if weights.lam == weights.mu == weights.eta == 0.0:
        return ("soft-kd-" if weights.soft > 0 else "plain-") + suffix
    return "multigran-kd-" + suffix


def _run_config(args, weights: DistillWeights) -> RunConfig:
    return RunConfig(weights=weights, epochs=args.epochs, batch_size=args.batch_size,
                     lr=args.lr, lr_decay=args.lr_decay, lr_patience=args.lr_patience,
                     seed=args.seed, student_seeds=tuple(_ints(args.student_seeds)),
                     walks_per_epoch=args.walks_per_epoch,
                     temperature=args.temperature)


def cmd_distill(args) -> int:
    _, name, dataset, folds, caches, _, teacher_caches = _rebuild_from_teacher_run(args)
    weights = DistillWeights(lam=args.lam, mu=args.mu, eta=args.eta, soft=args.soft)
    scfg = _student_config(args)
    run = _run_config(args, weights)
    results = distill_student(dataset, folds, caches, teacher_caches, scfg, run,
                              jobs=args.jobs, capture_params=args.save_students)
    method = _method_name(scfg, weights)
    run_dir = new_run_dir(args.out_dir, name, "distill", args.seed)
    write_fold_results_json(run_dir / "results.json", results)
    write_metrics_csv(run_dir / "metrics.csv", fold_results_rows(name, method, results))
    if args.save_students:
        for r in results:
            save_student_checkpoint(run_dir, scfg, r.params, r.fold_index, r.seed)
    write_manifest(run_dir, {
        "command": "distill", "config": _echo_config(args), "dataset": name,
        "method": method, "weights": dataclasses.asdict(weights),
        "student": dataclasses.asdict(scfg),
    })
    log.info("%s: mean best test accuracy %.4f +- %.4f", method,
             mean_accuracy(results), std_accuracy(results))
    print(run_dir)
    return 0


def cmd_evaluate(args) -> int:
    manifest = read_manifest(args.teacher_run)
    name = manifest["dataset"]
    dataset, dataset_dir = load_prepared_dataset(args.data_dir, name)
    folds = stratified_kfold(dataset, manifest["folds"], manifest["fold_seed"])
    rows = []
    for fold in folds:
        if args.fold is not None and fold.fold_index != args.fold:
            continue
        ckpt = load_teacher_checkpoint(args.teacher_run, fold.fold_index)
        batch = models.make_batch([dataset.graphs[i] for i in fold.test_ids])
        out = models.INFER[ckpt.config.kind](batch, ckpt.config, ckpt.params)
        acc = float((np.argmax(out.logits, axis=1) == batch.labels).mean())
        rows.append((name, f"evaluate-{ckpt.config.kind}", fold.fold_index, args.seed, acc))
        print(f"fold {fold.fold_index}: test accuracy {acc:.4f}")
    run_dir = new_run_dir(args.out_dir, name, "evaluate", args.seed)
    write_metrics_csv(run_dir / "metrics.csv", rows)
    write_manifest(run_dir, {"command": "evaluate", "config": _echo_config(args)})
    return 0


def cmd_ablate(args) -> int:
    _, name, dataset, folds, caches, _, teacher_caches = _rebuild_from_teacher_run(args)
    weights = DistillWeights(lam=args.lam, mu=args.mu, eta=args.eta, soft=args.soft)
    scfg = _student_config(args)
    run = _run_config(args, weights)
    report = ablate(dataset, folds, caches, teacher_caches, scfg, run, jobs=args.jobs)
    run_dir = new_run_dir(args.out_dir, name, "ablate", args.seed)
    rows = []
    summary_lines = []
    for arm, results in report.items():
        rows.extend(fold_results_rows(name, f"arm-{arm}-{scfg.kind}", results))
        summary_lines.append(
            f"{arm:<10} {100 * mean_accuracy(results):6.2f} +- {100 * std_accuracy(results):5.2f}"
        )
        write_fold_results_json(run_dir / f"results_{arm}.json", results)
    write_metrics_csv(run_dir / "metrics.csv", rows)
    write_manifest(run_dir, {"command": "ablate", "config": _echo_config(args),
                             "dataset": name, "arms": list(report)})
    table = "\n".join(summary_lines)
    log.info("ablation summary (accuracy %%):\n%s", table)
    print(table)
    print(run_dir)
    return 0


def cmd_grid(args) -> int:
    _, name, dataset, folds, caches, _, teacher_caches = _rebuild_from_teacher_run(args)
    scfg = _student_config(args)
    run = _run_config(args, DistillWeights())
    grid = weight_grid(_floats(args.lambdas), _floats(args.mus), _floats(args.etas))
    results = grid_search_student(dataset, folds, caches, teacher_caches, scfg, run,
                                  grid=grid, jobs=args.jobs)
    run_dir = new_run_dir(args.out_dir, name, "grid", args.seed)
    rows = []
    best_key, best_acc = None, -1.0
    for key, res in results.items():
        rows.extend(fold_results_rows(name, f"grid[{key}]-{scfg.kind}", res))
        acc = mean_accuracy(res)
        if acc > best_acc:
            best_key, best_acc = key, acc
    write_metrics_csv(run_dir / "metrics.csv", rows)
    write_manifest(run_dir, {"command": "grid", "config": _echo_config(args),
                             "dataset": name, "best": best_key,
                             "best_accuracy": best_acc})
    print(f"best: {best_key} ({100 * best_acc:.2f}%)")
    print(run_dir)
    return 0


def cmd_dynamic_bench(args) -> int:
    if args.synthetic:
        return _dynamic_synthetic(args)
    manifest = read_manifest(args.teacher_run)
    name = manifest["dataset"]
    dataset, dataset_dir = load_prepared_dataset(args.data_dir, name)
    folds = stratified_kfold(dataset, manifest["folds"], manifest["fold_seed"])
    caches, _, _ = _load_caches(dataset_dir, name)
    fold = folds[args.fold]
    t_ckpt = load_teacher_checkpoint(args.teacher_run, fold.fold_index)
    s_cfg, s_params = load_student_checkpoint(args.student_run, fold.fold_index,
                                              args.student_seed)
    teacher = TeacherModel(t_ckpt.config, t_ckpt.params)
    student = StudentModel(s_cfg, s_params)

    usable, metrics = [], []
    for gid in fold.test_ids:
        g = dataset.graphs[int(gid)]
        if g.num_nodes - args.num_remove < 1:
            continue
        if args.num_remove > max(1, int(args.max_fraction * g.num_nodes)):
            continue
        trace = make_trace(g, int(gid), args.num_remove, args.repetitions, args.seed,
                           args.max_fraction)
        usable.append(trace)
        metrics.append(perturb_and_score(g, caches[int(gid)], student, teacher, trace))
    if not metrics:
        log.error("no test graph large enough for %d removals", args.num_remove)
        return 1
    agg = aggregate_metrics(metrics)
    latency = time_inference(dataset.graphs, caches, student, teacher,
                             usable[: args.timing_graphs])

    run_dir = new_run_dir(args.out_dir, name, "dynamic-bench", args.seed)
    _write_dynamic_outputs(run_dir, agg, latency)
    write_manifest(run_dir, {"command": "dynamic-bench", "config": _echo_config(args),
                             "dataset": name, "graphs_scored": len(metrics)})
    print(run_dir)
    return 0


def _write_dynamic_outputs(run_dir, agg, latency) -> None:
    with (run_dir / "perturbation.csv").open("w") as fh:
        fh.write("k,student_error,student_entropy,teacher_error,teacher_entropy\n")
        for k in range(agg.student_error.size):
            fh.write(f"{k},{agg.student_error[k]!r},{agg.student_entropy[k]!r},"
                     f"{agg.teacher_error[k]!r},{agg.teacher_entropy[k]!r}\n")
    summary = latency.summary()
    with (run_dir / "latency.csv").open("w") as fh:
        fh.write("engine,mean_ms,median_ms,steps\n")
        for engine, stats in summary.items():
            fh.write(f"{engine},{stats['mean_ms']!r},{stats['median_ms']!r},{stats['steps']}\n")
    with (run_dir / "latency.json").open("w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")


def _dynamic_synthetic(args) -> int:
    """Latency-only benchmark on synthetic sparse graphs with fresh models."""
    dataset = sparse_social_dataset(num_graphs=args.timing_graphs,
                                    num_nodes=args.synthetic_nodes, seed=args.seed)
    caches = build_struct_caches(dataset, args.seed)
    rng = np.random.default_rng(args.seed)
    t_cfg = GinConfig(num_layers=5, hidden=64)
    t_params = {k: p.values for k, p in
                models.init_gin_params(rng, dataset.feature_dim, t_cfg, 2).items()}
    s_cfg = StudentConfig(kind="ga-mlp", num_layers=3, hidden=64)
    in_dim = models.student_input(dataset.graphs[0], caches[0], s_cfg).shape[1]
    s_params = {k: p.values for k, p in
                init_student_params(rng, in_dim, s_cfg, 2).items()}
    teacher = TeacherModel(t_cfg, t_params)
    student = StudentModel(s_cfg, s_params)
    traces = [
        make_trace(g, i, args.num_remove, 1, args.seed, args.max_fraction)
        for i, g in enumerate(dataset.graphs)
    ]
    latency = time_inference(dataset.graphs, caches, student, teacher, traces)
    summary = latency.summary()
    run_dir = new_run_dir(args.out_dir, dataset.name, "dynamic-bench", args.seed)
    with (run_dir / "latency.csv").open("w") as fh:
        fh.write("engine,mean_ms,median_ms,steps\n")
        for engine, stats in summary.items():
            fh.write(f"{engine},{stats['mean_ms']!r},{stats['median_ms']!r},{stats['steps']}\n")
    write_manifest(run_dir, {"command": "dynamic-bench", "config": _echo_config(args)})
    for engine, stats in summary.items():
        print(f"{engine:<22} mean {stats['mean_ms']:8.3f} ms  median {stats['median_ms']:8.3f} ms")
    speedup = summary["full_teacher"]["mean_ms"] / summary["incremental_student"]["mean_ms"]
    print(f"incremental speedup over full teacher: {speedup:.1f}x")
    print(run_dir)
    return 0


def cmd_report(args) -> int:
    rows = collect_metrics(args.runs)
    summary = summarize_metrics(rows)
    table = format_summary_table(summary)
    print(table)
    run_dir = new_run_dir(args.out_dir, "all", "report", args.seed)
    write_metrics_csv(run_dir / "metrics.csv", rows)
    with (run_dir / "summary.txt").open("w") as fh:
        fh.write(table + "\n")
    write_manifest(run_dir, {"command": "report", "config": _echo_config(args)})
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-dir", default=os.environ.get(DATA_ENV, "data"))
    p.add_argument("--out-dir", default="runs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--config", default=None, help="JSON file with flag defaults")


def _add_student_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--student", choices=["mlp", "ga-mlp"], default="mlp")
    p.add_argument("--lape", action="store_true")
    p.add_argument("--student-layers", type=int, default=3)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--readout", choices=["sum", "attention"], default="sum")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--mu", type=float, default=0.1)
    p.add_argument("--eta", type=float, default=1e-4)
    p.add_argument("--soft", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=350)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=8e-3)
    p.add_argument("--lr-decay", type=float, default=0.6)
    p.add_argument("--lr-patience", type=int, default=30)
    p.add_argument("--student-seeds", default="0,1,2")
    p.add_argument("--walks-per-epoch", type=int, default=None)
    p.add_argument("--temperature", type=float, default=1.0)


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="graphdistill",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}
    _orig_add_parser = sub.add_parser

    def add_parser(name, **kwargs):
        registry[name] = _orig_add_parser(name, **kwargs)
        return registry[name]

    sub.add_parser = add_parser

    p = sub.add_parser("preprocess", help="compute and persist per-graph structure")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--k-pe", type=int, default=8)
    p.add_argument("--walk-length", type=int, default=8)
    p.add_argument("--num-walks", type=int, default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train-teacher", help="train GNN teachers over a config grid")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--arch", choices=["gin", "gcn"], default="gin")
    p.add_argument("--layers", default="3")
    p.add_argument("--hidden", default="64")
    p.add_argument("--dropout", default="0")
    p.add_argument("--readout", choices=["sum", "attention"], default="sum")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--epochs", type=int, default=350)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=8e-3)
    p.add_argument("--lr-decay", type=float, default=0.6)
    p.add_argument("--lr-patience", type=int, default=30)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="distill a teacher run into a student")
    _add_common(p)
    p.add_argument("--teacher-run", required=True)
    _add_student_flags(p)
    p.add_argument("--save-students", action="store_true")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("evaluate", help="re-score saved teacher checkpoints")
    _add_common(p)
    p.add_argument("--teacher-run", required=True)
    p.add_argument("--fold", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the five-arm component ablation")
    _add_common(p)
    p.add_argument("--teacher-run", required=True)
    _add_student_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grid", help="enumerate the loss-weight search space")
    _add_common(p)
    p.add_argument("--teacher-run", required=True)
    _add_student_flags(p)
    p.add_argument("--lambdas", default="1.0,0.1,0.01")
    p.add_argument("--mus", default="1.0,0.1,0.01")
    p.add_argument("--etas", default="1e-4,1e-5")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("dynamic-bench", help="node removal/insertion benchmark")
    _add_common(p)
    p.add_argument("--teacher-run")
    p.add_argument("--student-run")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--student-seed", type=int, default=0)
    p.add_argument("--num-remove", type=int, default=10)
    p.add_argument("--repetitions", type=int, default=20)
    p.add_argument("--max-fraction", type=float, default=0.05)
    p.add_argument("--timing-graphs", type=int, default=10)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--synthetic-nodes", type=int, default=400)
    p.set_defaults(func=cmd_dynamic_bench)

    p = sub.add_parser("report", help="aggregate stored metric CSVs")
    _add_common(p)
    p.add_argument("--runs", nargs="+", required=True)
    p.set_defaults(func=cmd_report)
    return parser, registry


def _apply_config_file(subparser, args, parser, argv) -> argparse.Namespace:
    """Config file sets subcommand defaults; explicit flags still override."""
    if not args.config:
        return args
    path = Path(args.config)
    if not path.is_file():
        raise ArtifactMissingError(path)
    with path.open() as fh:
        overrides = json.load(fh)
    known = {a.dest for a in subparser._actions}
    defaults = {k.replace("-", "_"): v for k, v in overrides.items()}
    unknown = set(defaults) - known
    if unknown:
        log.warning("config keys not used by %s: %s", args.command, sorted(unknown))
    subparser.set_defaults(**{k: v for k, v in defaults.items() if k in known})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, registry = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_file(registry[args.command], args, parser, argv)
        return args.func(args)
    except ArtifactMissingError as exc:
        log.error("%s", exc)
        return 3
    except GraphDistillError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
