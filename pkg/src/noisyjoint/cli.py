"""``noisyjoint`` command line: gen-data, train, eval, ablate, sweep-lambda."""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import shutil
import statistics
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import config as cfgfile
from .datagen import load_dataset, make_dataset, save_dataset
from .lambdastudy import STRATEGIES, run_sweep, select_lambda
from .models import load_checkpoint, save_checkpoint
from .trainer import (ConfigError, ExperimentConfig, TrainingDiverged, build_tasks, evaluate,
                      run_many, train)
from . import kernels

log = logging.getLogger("noisyjoint")

ABLATION_SETTINGS = {
    "noisy_baseline": dict(mode="noisy_baseline"),
    "no_joint": dict(mode="proposed", no_joint=True),
    "no_marginal": dict(mode="proposed", no_marginal=True),
    "no_decoder": dict(mode="proposed", no_decoder=True),
    "proposed": dict(mode="proposed"),
}


class CliError(Exception):
    pass


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _fresh_file(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise CliError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)


def _fresh_dir(path: Path, force: bool) -> None:
    if path.exists():
        if not force:
            raise CliError(f"{path} exists; pass --force to overwrite")
        shutil.rmtree(path) if path.is_dir() else path.unlink()
    path.mkdir(parents=True)


def _load_cfg(args):
    cfg = cfgfile.load(args.config)
    if getattr(args, "dataset", None):
        cfg.dataset_path = Path(args.dataset).resolve()
        cfg.experiment.dataset = str(cfg.dataset_path)
    return cfg


def _dataset_for(cfg):
    if cfg.dataset_path is None:
        raise CliError("config has no dataset.path")
    if not cfg.dataset_path.exists():
        raise CliError(f"dataset {cfg.dataset_path} not found; run gen-data first")
    return load_dataset(cfg.dataset_path)


def _seeds(base: list[int], override: int | None) -> list[int]:
    return base if override is None else [override + i for i in range(len(base))]


def noise_stats_path(dataset_path: Path) -> Path:
    return dataset_path.with_name(dataset_path.name + ".noise.json")


# ----------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    if args.seed is not None:
        cfg.dataset.seed = args.seed
    out = Path(args.out).resolve() if args.out else cfg.dataset_path
    if out is None:
        raise CliError("no output path: give --out or dataset.path")
    _fresh_file(out, args.force)
    ds = make_dataset(cfg.dataset, cfg.noise)
    save_dataset(ds, out)
    _write(noise_stats_path(out), _json(ds.noise_stats()))
    print(f"wrote {out}")
    return 0


def _write_run(run_dir: Path, res, cfg: ExperimentConfig, dataset_path) -> None:
    save_checkpoint(run_dir / "checkpoint.njc", res.models,
                    {"experiment": _cfg_dict(cfg), "iteration": cfg.iterations, "seed": cfg.seed})
    _write(run_dir / "runlog.csv", res.runlog_csv())
    _write(run_dir / "metrics.json", _json(metrics_document(res.metrics)))
    _write(run_dir / "confusion.json", _json(confusion_document(res.metrics)))
    _write(run_dir / "run_meta.json", _json({
        "config": _cfg_dict(cfg),
        "dataset": str(dataset_path),
        "backend": kernels.BACKEND,
        "g_updates": res.g_updates,
        "d_updates": res.d_updates,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }))


def _cfg_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def metrics_document(metrics: dict) -> dict:
    tasks = [{k: v for k, v in t.items() if k != "confusion"} for t in metrics["tasks"]]
    return {"accuracy": metrics["accuracy"], "ccc": metrics["ccc"], "mse": metrics["mse"], "tasks": tasks}


def confusion_document(metrics: dict) -> dict:
    return {"tasks": [{"name": t["name"], "matrix": t["confusion"],
                       "row_sums": [int(sum(r)) for r in t["confusion"]]}
                      for t in metrics["tasks"] if t["kind"] == "discrete"]}


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    exp = cfg.experiment
    if args.seed is not None:
        exp = exp.replace(seed=args.seed)
    ds = _dataset_for(cfg)
    run_dir = Path(args.out)
    _fresh_dir(run_dir, args.force)
    try:
        res = train(exp, ds)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    _write_run(run_dir, res, exp, cfg.dataset_path)
    print(f"{exp.mode}: accuracy={res.metrics['accuracy']} ccc={res.metrics['ccc']} -> {run_dir}")
    return 0


def cmd_eval(args) -> int:
    models, meta = load_checkpoint(args.checkpoint)
    exp = ExperimentConfig(**meta["experiment"])
    ds = load_dataset(args.dataset)
    tasks = build_tasks(exp, ds)
    want = [t.spec for t in tasks]
    if want != models.shapes.tasks or ds.x_test.shape[1] != models.shapes.input_dim:
        raise CliError("checkpoint model shapes do not match the dataset")
    metrics = evaluate(models, ds, tasks)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval"
    _fresh_dir(out, args.force)
    _write(out / "metrics.json", _json(metrics_document(metrics)))
    _write(out / "confusion.json", _json(confusion_document(metrics)))
    print(f"accuracy={metrics['accuracy']} ccc={metrics['ccc']} -> {out}")
    return 0


def ablation_configs(base: ExperimentConfig, seeds: list[int]) -> list[tuple[str, ExperimentConfig]]:
    out = []
    for name, overrides in ABLATION_SETTINGS.items():
        kw = dict(no_joint=False, no_marginal=False, no_decoder=False)
        kw.update(overrides)
        for s in seeds:
            out.append((name, base.replace(seed=s, **kw)))
    return out


def ablation_table(names: list[str], accuracies: list[float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["setting", "median_accuracy", "n_seeds"])
    for name in ABLATION_SETTINGS:
        vals = [a for n, a in zip(names, accuracies) if n == name]
        w.writerow([name, repr(float(statistics.median(vals))), len(vals)])
    return buf.getvalue()


def _per_run_csv(rows: list[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["setting", "seed", "final_accuracy", "peak_accuracy", "final_train_ce"])
    for row in rows:
        w.writerow([row[0], row[1]] + ["" if v is None else repr(float(v)) for v in row[2:]])
    return buf.getvalue()


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    ds = _dataset_for(cfg)
    out = Path(args.out)
    _fresh_dir(out, args.force)
    pairs = ablation_configs(cfg.experiment, _seeds(cfg.ablate_seeds, args.seed))
    try:
        results = run_many([c for _, c in pairs], ds, args.jobs)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    names = [n for n, _ in pairs]
    accs = [r.metrics["accuracy"] for r in results]
    _write(out / "ablation.csv", ablation_table(names, accs))
    _write(out / "runs.csv", _per_run_csv([
        (n, c.seed, r.metrics["accuracy"], float(np.max(r.curve("test_acc"))), r.runlog[-1]["train_ce_mean"])
        for (n, c), r in zip(pairs, results)]))
    print((out / "ablation.csv").read_text(), end="")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    ds = _dataset_for(cfg)
    out = Path(args.out)
    _fresh_dir(out, args.force)
    spec = cfg.sweep_spec()
    spec.seeds = _seeds(spec.seeds, args.seed)
    try:
        report = run_sweep(spec, ds, args.jobs)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    _write(out / "sweep.csv", report.to_csv())
    med = report.median_accuracy()
    _write(out / "selection.json", _json({
        "median_accuracy": [{"lambda": l, "accuracy": a} for l, a in med.items()],
        "median_g_joint_loss": [{"lambda": l, "g_joint_loss": g} for l, g in report.median_g_joint_loss().items()],
        "selected": {s: select_lambda(report, s) for s in STRATEGIES},
    }))
    print(report.to_csv(), end="")
    return 0


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="noisyjoint", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True, with_config=True):
        if with_config:
            sp.add_argument("--config", required=True, help="YAML experiment file")
        sp.add_argument("--out", required=out_required)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    sp = sub.add_parser("gen-data", help="generate a dataset and its noise statistics")
    common(sp, out_required=False)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train one configured run into a run directory")
    common(sp)
    sp.add_argument("--dataset", help="override dataset.path")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="re-evaluate a checkpoint on a dataset")
    common(sp, out_required=False, with_config=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", required=True)
    sp.set_defaults(func=cmd_eval)

    for name, func, helptext in (("ablate", cmd_ablate, "run the ablation matrix"),
                                 ("sweep-lambda", cmd_sweep, "sweep the adversarial weight")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--dataset", help="override dataset.path")
        sp.add_argument("--jobs", type=int, default=1)
        sp.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CliError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
