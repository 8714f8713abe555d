"""Command-line harness.

Subcommands: generate, train, evaluate, ablate, robustness, report.
Exit codes: 0 success, 1 invalid input (bad flags, config, files), 2 runtime
or numerical failure. Outputs default to ``$CODAADAPT_OUT/<command>``
(``runs/<command>`` when the variable is unset).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, resolve_config
from .data import generate_benchmark, load_dataset, save_dataset
from .errors import CodaAdaptError, FormatError, ValidationError
from .evaluation import (
    AblationTable,
    RobustnessSummary,
    ablation_matrix,
    evaluate,
    robustness_study,
    write_json,
)
from .training import Trainer, load_checkpoint, write_manifest

OUT_ENV = "CODAADAPT_OUT"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _out_dir(args, command: str) -> Path:
    out = Path(args.out) if args.out else Path(os.environ.get(OUT_ENV, "runs")) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> RunConfig:
    overrides = {
        "seed": getattr(args, "seed", None),
        "train.method": getattr(args, "method", None),
        "train.epochs": getattr(args, "epochs", None),
        "data.signal_length": getattr(args, "signal_length", None),
        "data.n_source": getattr(args, "n_source", None),
        "data.n_target": getattr(args, "n_target", None),
        "data.shift.shift_intensity": getattr(args, "shift", None),
        "eval.n_runs": getattr(args, "runs", None),
        "eval.n_seeds": getattr(args, "n_seeds", None),
    }
    if getattr(args, "methods", None):
        overrides["eval.methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if getattr(args, "plots", False):
        overrides["report.plots"] = True
    return resolve_config(args.config, overrides)


def _generate(cfg: RunConfig):
    d = cfg.data
    return generate_benchmark(d.n_source, d.n_target, d.signal_length, d.shift, cfg.generation_seed, d.benchmark)


def _datasets(args, cfg: RunConfig):
    """Load ``--source``/``--target`` or, when both are absent, regenerate them from the config."""
    if args.source is None and args.target is None:
        return _generate(cfg), {"source": None, "target": None}
    if args.source is None or args.target is None:
        raise ValidationError("give both --source and --target, or neither to generate from the config")
    for p in (args.source, args.target):
        if not Path(p).is_dir():
            raise ValidationError(f"dataset directory not found: {p}")
    data = (load_dataset(args.source), load_dataset(args.target))
    return data, {"source": str(Path(args.source).resolve()), "target": str(Path(args.target).resolve())}


def _manifest(out: Path, cfg: RunConfig, command: str, **extra) -> Path:
    return write_manifest(out / "manifest.json", cfg.to_dict(), command=command, seed=cfg.seed, **extra)


def _write_confusion_csv(path: Path, counts, class_names) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + list(class_names))
        for name, row in zip(class_names, counts):
            w.writerow([name] + [int(c) for c in row])
    return path


# ---- commands ----------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "generate")
    src, tgt = _generate(cfg)
    save_dataset(src, out / "source")
    save_dataset(tgt, out / "target")
    _manifest(out, cfg, "generate", generation_seed=cfg.generation_seed)
    print(f"wrote {len(src)} source and {len(tgt)} target samples to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "train")
    (src, tgt), paths = _datasets(args, cfg)
    if args.resume:
        trainer = Trainer.from_checkpoint(args.resume, src, tgt)
    else:
        trainer = Trainer(src, tgt, cfg.train, spec=cfg.model)

    def progress(tr, rec):
        if not args.quiet:
            print(f"epoch {rec.epoch:4d}  total {rec.total:.4f}  task {rec.task:.4f}  "
                  f"adv {rec.adv:.4f}  mcc {rec.mcc:.4f}  byol {rec.byol:.4f}  "
                  f"target_acc {rec.target_acc:.4f}", flush=True)

    state, log = trainer.run(cfg.train.epochs, callback=progress)
    trainer.checkpoint(out / "checkpoint.zip")
    log.to_csv(out / "log.csv")
    extra = {}
    if tgt.labels is not None:
        rep = evaluate(state, tgt)
        write_json(rep.to_dict(tgt.class_names), out / "metrics_target.json")
        extra["final_target_accuracy"] = rep.accuracy
        print(f"target accuracy {rep.accuracy:.4f}  macro F1 {rep.macro_f1:.4f}")
    _manifest(out, cfg, "train", data=paths, epochs_completed=trainer.epoch, **extra)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out = _out_dir(args, "evaluate")
    if not Path(args.checkpoint).is_file():
        raise ValidationError(f"checkpoint not found: {args.checkpoint}")
    if not Path(args.data).is_dir():
        raise ValidationError(f"dataset directory not found: {args.data}")
    state, _, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    rep = evaluate(state, ds)
    d = rep.to_dict(ds.class_names)
    d["checkpoint"] = str(args.checkpoint)
    d["dataset"] = str(args.data)
    write_json(d, out / "metrics.json")
    _write_confusion_csv(out / "confusion.csv", rep.confusion.counts, ds.class_names)
    print(f"accuracy {rep.accuracy:.4f}  macro F1 {rep.macro_f1:.4f}  n={rep.confusion.total}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "ablate")
    (src, tgt), paths = _datasets(args, cfg)

    def progress(method, seed, rep):
        print(f"{method:10s} seed {seed}: accuracy {rep.accuracy:.4f}  macro F1 {rep.macro_f1:.4f}", flush=True)

    table = ablation_matrix(src, tgt, cfg.train, cfg.eval.methods, cfg.eval.n_runs, cfg.model, progress)
    write_json(table.to_dict(), out / "ablation.json")
    table.write_csv(out / "ablation.csv")
    table.write_runs_csv(out / "ablation_runs.csv")
    _manifest(out, cfg, "ablate", data=paths)
    return EXIT_OK


def cmd_robustness(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "robustness")
    (src, tgt), paths = _datasets(args, cfg)

    def progress(seed, rep):
        print(f"seed {seed}: accuracy {rep.accuracy:.4f}  macro F1 {rep.macro_f1:.4f}", flush=True)

    summary = robustness_study(src, tgt, cfg.train, cfg.eval.n_seeds, cfg.model, progress=progress)
    _write_robustness(summary, out)
    print(f"{summary.method}: mean {summary.mean:.4f}  std {summary.std:.4f}  over {summary.n_seeds} seeds")
    _manifest(out, cfg, "robustness", data=paths)
    return EXIT_OK


def _write_robustness(summary: RobustnessSummary, out: Path):
    write_json(summary.to_dict(), out / "robustness.json")
    summary.write_csv(out / "robustness_seeds.csv")
    summary.write_histogram_csv(out / "robustness_histogram.csv")


def cmd_report(args) -> int:
    """Rebuild CSV tables (and optional plots) from the stored JSON results of run directories."""
    plots = args.plots
    if args.config:
        plots = plots or resolve_config(args.config).report.plots
    for run in args.runs:
        run = Path(run)
        if not run.is_dir():
            raise ValidationError(f"run directory not found: {run}")
        out = Path(args.out) / run.name if args.out else run
        out.mkdir(parents=True, exist_ok=True)
        wrote = []
        rob = _read_json(run / "robustness.json")
        if rob is not None:
            summary = RobustnessSummary.from_dict(rob)
            summary.write_csv(out / "robustness_seeds.csv")
            summary.write_histogram_csv(out / "robustness_histogram.csv")
            wrote += ["robustness_seeds.csv", "robustness_histogram.csv"]
        abl = _read_json(run / "ablation.json")
        if abl is not None:
            table = AblationTable.from_dict(abl)
            table.write_csv(out / "ablation.csv")
            table.write_runs_csv(out / "ablation_runs.csv")
            wrote += ["ablation.csv", "ablation_runs.csv"]
        met = _read_json(run / "metrics.json")
        if met is not None:
            _write_confusion_csv(out / "confusion.csv", met["confusion"], met["class_names"])
            wrote.append("confusion.csv")
        if plots:
            from .plots import render_run
            wrote += render_run(run, out, args.image_format)
        if not wrote:
            raise ValidationError(f"{run}: no stored results to report")
        print(f"{run}: " + ", ".join(wrote))
    return EXIT_OK


def _read_json(path: Path):
    if not path.is_file():
        return None
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc


# ---- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="codaadapt", description="Domain-adapted damage-stage classification from coda-wave features.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="YAML config file or run manifest")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>)")
        if seed:
            sp.add_argument("--seed", type=int, help="root seed")

    def data_paths(sp):
        sp.add_argument("--source", help="source dataset directory (default: generate from config)")
        sp.add_argument("--target", help="target dataset directory (default: generate from config)")
        sp.add_argument("--signal-length", type=int)
        sp.add_argument("--shift", type=float, help="shift intensity for generated data")

    g = sub.add_parser("generate", help="write synthetic source/target dataset directories")
    common(g)
    g.add_argument("--n-source", type=int)
    g.add_argument("--n-target", type=int)
    g.add_argument("--signal-length", type=int)
    g.add_argument("--shift", type=float, help="shift intensity in [0, 1]")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model and write checkpoint, log and manifest")
    common(t)
    data_paths(t)
    t.add_argument("--method", help="plain, dann, dann_mcc, byol_only or full")
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", help="continue from a training checkpoint")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a labeled dataset")
    common(e, seed=False)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="dataset directory")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="train and score several methods")
    common(a)
    data_paths(a)
    a.add_argument("--methods", help="comma-separated methods (default: all five)")
    a.add_argument("--runs", type=int, help="runs per method")
    a.add_argument("--epochs", type=int)
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("robustness", help="multi-seed study of one method")
    common(r)
    data_paths(r)
    r.add_argument("--method")
    r.add_argument("--n-seeds", type=int)
    r.add_argument("--epochs", type=int)
    r.set_defaults(func=cmd_robustness)

    rp = sub.add_parser("report", help="rebuild tables and plots from run directories")
    rp.add_argument("runs", nargs="+", help="run directories")
    rp.add_argument("--config")
    rp.add_argument("--out", help="write into OUT/<run name> instead of the run directory")
    rp.add_argument("--plots", action="store_true", help="render figures (needs matplotlib)")
    rp.add_argument("--image-format", default="png")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (CodaAdaptError, ArithmeticError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
