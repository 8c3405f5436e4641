"""``python -m promptlab {run,ablate,gradcheck,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .bench.ablation import component_grid, record_row, run_ablation, sweep_grid, write_csv, write_results
from .bench.data import generate_b2n
from .bench.teacher import build_teacher
from .bench.train import run_experiment
from .config import RunConfig, dump_config, load_config, with_overrides
from .encoder import save_checkpoint
from .errors import PromptLabError
from .gradcheck import main_check
from .report import format_table, make_report

log = logging.getLogger("promptlab")

SWEEP_DEFAULTS = {
    "q": [0, 10, 20, 30, 40, 50],
    "lambda": [0, 0.5, 1, 2, 4],
    "gamma": [0, 1, 3, 5, 10],
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with [model] [data] [train] [pretrain] [run] sections")
    p.add_argument("--seed", type=int, help="run this single seed instead of [run] seeds")
    p.add_argument("--mask-threshold", type=float, help="FIF percentile q in [0, 100]")
    p.add_argument("--lambda", dest="lam", type=float, help="weight of the logit-distillation term")
    p.add_argument("--gamma", type=float, help="weight of the topology term")
    p.add_argument("--no-fif", action="store_true", help="disable attention-guided filtering")
    p.add_argument("--no-stp", action="store_true", help="disable the topology loss")
    p.add_argument("--no-hld", action="store_true", help="disable the logit distillation")
    p.add_argument("--out", help="output directory (default: $PROMPTLAB_OUT/run-<hash>)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="promptlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="pretrain or load the teacher, tune prompts, evaluate")
    _common(run)

    ablate = sub.add_parser("ablate", help="run a component or hyperparameter grid")
    _common(ablate)
    ablate.add_argument("--grid", choices=("components", "q", "lambda", "gamma"), default="components")
    ablate.add_argument("--values", help="comma-separated values for a q/lambda/gamma sweep")
    ablate.add_argument("--singles", action="store_true", help="add +HLD and +FIF cells to the component grid")
    ablate.add_argument("--workers", type=int, help="parallel worker processes")

    grad = sub.add_parser("gradcheck", help="finite-difference check of every registered gradient")
    grad.add_argument("--scope", default="all", help="all, a scope (core, cls, stp, hld, total) or a check name")
    grad.add_argument("--seeds", type=int, default=10)
    grad.add_argument("--corrupt", help=argparse.SUPPRESS)  # negative control for the harness

    report = sub.add_parser("report", help="SVG plots, component table and summary from metrics CSVs")
    report.add_argument("csv", nargs="+")
    report.add_argument("--out", help="report directory (default: <first csv dir>/report)")
    return parser


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    return with_overrides(cfg, args.seed, args.mask_threshold, args.lam, args.gamma,
                          args.no_fif, args.no_stp, args.no_hld, args.out)


def _prepare(cfg: RunConfig) -> tuple[Path, object, dict]:
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg))
    teacher, info = build_teacher(cfg.model, cfg.data, cfg.pretrain, cfg.cache_dir())
    (out / "teacher.json").write_text(json.dumps(info, indent=2, sort_keys=True))
    return out, teacher, info


def cmd_run(args) -> int:
    cfg = _resolve(args)
    out, teacher, _ = _prepare(cfg)
    rows = []
    for seed in cfg.run.seeds:
        prompts, record = run_experiment(teacher, generate_b2n(cfg.data, seed), cfg.train, seed, (cfg.data,))
        rows.append(record_row(record, cfg.train))
        save_checkpoint(out / f"prompts-seed{seed}.npz", teacher, prompts, {"seed": seed, "config_hash": record.config_hash})
        (out / f"losses-seed{seed}.json").write_text(json.dumps(record.epoch_losses, indent=1))
        print(f"seed {seed}: base {record.base_acc:.4f} novel {record.novel_acc:.4f} hm {record.hm:.4f}")
    write_csv(out / "metrics.csv", rows)
    print(f"wrote {out / 'metrics.csv'}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve(args)
    if args.workers is not None:
        cfg = replace(cfg, run=replace(cfg.run, workers=args.workers))
    if args.grid == "components":
        cells = component_grid(cfg.train, singles=args.singles)
    else:
        values = [float(v) for v in args.values.split(",")] if args.values else SWEEP_DEFAULTS[args.grid]
        key = {"q": "q", "lambda": "lam", "gamma": "gamma"}[args.grid]
        cells = sweep_grid(cfg.train, **{key: values})
    out, teacher, _ = _prepare(cfg)
    result = run_ablation(teacher, cfg.data, cells, cfg.run.seeds, cfg.run.workers)
    path = write_results(out / "ablation.csv", result)
    summary = result.summary()
    (out / "ablation_summary.json").write_text(json.dumps(summary, indent=2))
    print(format_table([s for s in summary if s["runs"]]))
    for failure in result.failures:
        print(f"cell {failure.cell.name} seed {failure.seed} failed: {failure.error}", file=sys.stderr)
    print(f"wrote {path}")
    return 1 if result.failures else 0


def cmd_gradcheck(args) -> int:
    code, text = main_check(args.scope, args.seeds, args.corrupt)
    print(text)
    return code


def cmd_report(args) -> int:
    paths = [Path(p) for p in args.csv]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise PromptLabError(f"cannot read {', '.join(missing)}")
    out = Path(args.out) if args.out else paths[0].parent / "report"
    report = make_report(paths, out)
    if report.table:
        print(format_table(report.table))
    print(f"wrote {len(report.plots)} plot(s) and {report.summary}")
    return 0


COMMANDS = {"run": cmd_run, "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except PromptLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
