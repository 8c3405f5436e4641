"""Grid runs over loss weights, mask threshold and component switches, plus CSV I/O."""
from __future__ import annotations

import csv
import itertools
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..encoder import DualEncoder
from ..errors import InvalidInputError, InvalidParameterError
from .data import DataConfig, generate_b2n
from .train import MetricsRecord, TrainConfig, harmonic_mean, run_experiment

log = logging.getLogger(__name__)

CSV_COLUMNS = ("config_hash", "seed", "q", "lambda", "gamma", "fif", "stp", "hld",
               "base_acc", "novel_acc", "hm", "epochs", "wall_ms")

# rows of the component table, in the order they are reported
COMPONENT_CELLS = (
    ("baseline", False, False, False),
    ("+STP", False, True, False),
    ("+STP+HLD", False, True, True),
    ("+STP+HLD+FIF", True, True, True),
)
SINGLE_CELLS = (("+HLD", False, False, True), ("+FIF", True, False, False))


@dataclass(frozen=True)
class Cell:
    name: str
    config: TrainConfig


@dataclass
class CellResult:
    cell: Cell
    seed: int
    record: MetricsRecord | None
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.record is not None


@dataclass
class AblationResult:
    results: list[CellResult] = field(default_factory=list)

    @property
    def records(self) -> list[tuple[Cell, MetricsRecord]]:
        return [(r.cell, r.record) for r in self.results if r.ok]

    @property
    def failures(self) -> list[CellResult]:
        return [r for r in self.results if not r.ok]

    def summary(self) -> list[dict]:
        """Mean and std of base, novel and HM per cell, in grid order."""
        rows, seen = [], {}
        for r in self.results:
            seen.setdefault(r.cell.name, []).append(r)
        for name, group in seen.items():
            recs = [g.record for g in group if g.ok]
            row = {"cell": name, "runs": len(recs), "failed": len(group) - len(recs)}
            for key in ("base_acc", "novel_acc", "hm"):
                vals = np.array([getattr(x, key) for x in recs])
                row[key] = float(vals.mean()) if len(vals) else math.nan
                row[key + "_std"] = float(vals.std()) if len(vals) else math.nan
            rows.append(row)
        return rows


def component_grid(config: TrainConfig, singles: bool = False) -> list[Cell]:
    """Baseline, +STP, +STP+HLD, +STP+HLD+FIF (and the single-component cells)."""
    cells = COMPONENT_CELLS + (SINGLE_CELLS if singles else ())
    out = []
    for name, fif, stp, hld in cells:
        cfg = config.with_components(fif, stp, hld)
        if name == "baseline":
            cfg = replace(cfg, lam=0.0, gamma=0.0)
        out.append(Cell(name, cfg))
    return out


def sweep_grid(config: TrainConfig, q=None, lam=None, gamma=None) -> list[Cell]:
    """Cartesian product over the given values; unspecified axes keep ``config``'s value."""
    axes = (q or [config.mask_threshold], lam or [config.lam], gamma or [config.gamma])
    cells = []
    for qv, lv, gv in itertools.product(*axes):
        cfg = replace(config, mask_threshold=float(qv), lam=float(lv), gamma=float(gv))
        cells.append(Cell(f"q={qv:g},lambda={lv:g},gamma={gv:g}", cfg))
    return cells


def _run_one(teacher: DualEncoder, data: DataConfig, cell: Cell, seed: int, extra_hash=()) -> CellResult:
    try:
        _, record = run_experiment(teacher, generate_b2n(data, seed), cell.config, seed, (data, *extra_hash))
        return CellResult(cell, seed, record)
    except Exception as exc:  # a failed cell must not stop the grid
        log.warning("cell %s seed %d failed: %s", cell.name, seed, exc)
        return CellResult(cell, seed, None, f"{type(exc).__name__}: {exc}")


def run_ablation(teacher: DualEncoder, data: DataConfig, cells, seeds, workers: int = 1,
                 extra_hash=()) -> AblationResult:
    """One record per (cell, seed), ordered by cell then seed whatever the worker count."""
    cells, seeds = list(cells), list(seeds)
    if not cells or not seeds:
        raise InvalidParameterError("ablation needs at least one cell and one seed")
    jobs = [(cell, seed) for cell in cells for seed in seeds]
    if workers <= 1:
        return AblationResult([_run_one(teacher, data, c, s, extra_hash) for c, s in jobs])
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_one, teacher, data, c, s, extra_hash) for c, s in jobs]
        return AblationResult([f.result() for f in futures])


# ------------------------------------------------------------------ CSV
def record_row(record: MetricsRecord, config: TrainConfig) -> dict:
    return {
        "config_hash": record.config_hash,
        "seed": record.seed,
        "q": f"{config.mask_threshold:g}",
        "lambda": f"{config.lam:g}",
        "gamma": f"{config.gamma:g}",
        "fif": int(config.fif),
        "stp": int(config.stp),
        "hld": int(config.hld),
        "base_acc": f"{record.base_acc:.6f}",
        "novel_acc": f"{record.novel_acc:.6f}",
        "hm": f"{record.hm:.6f}",
        "epochs": len(record.epoch_losses),
        "wall_ms": f"{record.wall_ms:.1f}",
    }


def write_csv(path, rows, append: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not (append and path.exists())
    with open(path, "a" if not fresh else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        if fresh:
            writer.writeheader()
        writer.writerows(rows)
    return path


def write_results(path, result: AblationResult, append: bool = False) -> Path:
    return write_csv(path, [record_row(rec, cell.config) for cell, rec in result.records], append)


def parse_row(raw: dict) -> dict:
    """Typed copy of one CSV row; raises InvalidInputError when a field is missing or malformed."""
    try:
        row = {
            "config_hash": raw["config_hash"],
            "seed": int(raw["seed"]),
            "q": float(raw["q"]),
            "lambda": float(raw["lambda"]),
            "gamma": float(raw["gamma"]),
            "fif": bool(int(raw["fif"])),
            "stp": bool(int(raw["stp"])),
            "hld": bool(int(raw["hld"])),
            "base_acc": float(raw["base_acc"]),
            "novel_acc": float(raw["novel_acc"]),
            "hm": float(raw["hm"]),
            "epochs": int(raw["epochs"]),
            "wall_ms": float(raw["wall_ms"]),
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed metrics row {raw!r}: {exc}") from None
    if not row["config_hash"]:
        raise InvalidInputError("metrics row without config hash")
    for key in ("base_acc", "novel_acc", "hm"):
        if not 0.0 <= row[key] <= 1.0:
            raise InvalidInputError(f"{key} out of [0, 1] in row {raw!r}")
    return row


def read_csv(*paths) -> tuple[list[dict], int]:
    """Rows from every file; malformed rows are skipped with a warning. Returns (rows, skipped)."""
    rows, skipped = [], 0
    for path in paths:
        with open(path, newline="") as fh:
            for lineno, raw in enumerate(csv.DictReader(fh), start=2):
                try:
                    rows.append(parse_row(raw))
                except InvalidInputError as exc:
                    skipped += 1
                    warnings.warn(f"{path}:{lineno}: skipped ({exc})", stacklevel=2)
    return rows, skipped


def hm_mismatch(rows) -> float:
    """Largest |stored HM - HM recomputed from the accuracy columns|."""
    return max((abs(r["hm"] - harmonic_mean(r["base_acc"], r["novel_acc"])) for r in rows), default=0.0)
