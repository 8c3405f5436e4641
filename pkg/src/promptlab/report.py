"""Turn metrics CSVs into SVG sweep plots, a component table and a summary file."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .bench.ablation import COMPONENT_CELLS, SINGLE_CELLS, hm_mismatch, read_csv

SWEEP_AXES = (("q", "mask threshold q"), ("lambda", "lambda"), ("gamma", "gamma"))


@dataclass
class Report:
    table: list[dict]
    plots: list[Path] = field(default_factory=list)
    summary: Path | None = None
    skipped: int = 0
    hm_error: float = 0.0


def _component_name(row) -> str:
    flags = (row["fif"], row["stp"], row["hld"])
    for name, *cell in COMPONENT_CELLS + SINGLE_CELLS:
        if tuple(cell) == flags:
            return name
    return "fif={:d},stp={:d},hld={:d}".format(*flags)


def _reference(rows) -> dict:
    """Most common value of every swept field; ties go to the smallest value.

    Baseline rows (every component off) carry zero weights, so they only
    vote when nothing else is present.
    """
    rows = [r for r in rows if r["fif"] or r["stp"] or r["hld"]] or rows
    ref = {}
    for key, _ in SWEEP_AXES:
        counts = Counter(r[key] for r in rows)
        ref[key] = min(counts, key=lambda v: (-counts[v], v))
    counts = Counter((r["fif"], r["stp"], r["hld"]) for r in rows)
    ref["flags"] = min(counts, key=lambda v: (-counts[v], v))
    return ref


def sweep_points(rows, axis: str) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    """(x, mean HM, std HM, config hashes) for rows differing from the reference only along ``axis``."""
    ref = _reference(rows)
    others = [k for k, _ in SWEEP_AXES if k != axis]
    keep = [r for r in rows if all(r[k] == ref[k] for k in others) and (r["fif"], r["stp"], r["hld"]) == ref["flags"]]
    xs = sorted({r[axis] for r in keep})
    hm = [np.array([r["hm"] for r in keep if r[axis] == x]) for x in xs]
    hashes = sorted({r["config_hash"] for r in keep})
    return np.array(xs, dtype=float), np.array([h.mean() for h in hm]), np.array([h.std() for h in hm]), hashes


def svg_line_plot(xs, ys, errs, xlabel: str, ylabel: str, title: str, desc: str = "",
                  width: int = 480, height: int = 320) -> str:
    """Minimal standalone SVG: one polyline with markers and error bars."""
    xs, ys, errs = (np.asarray(a, dtype=float) for a in (xs, ys, errs))
    left, right, top, bottom = 60, 20, 36, 48
    pw, ph = width - left - right, height - top - bottom
    x0, x1 = (xs.min(), xs.max()) if len(xs) else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    lo = (ys - errs).min() if len(ys) else 0.0
    hi = (ys + errs).max() if len(ys) else 1.0
    pad = max(hi - lo, 0.02) * 0.15
    y0, y1 = lo - pad, hi + pad

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
           f'<desc>{escape(desc)}</desc>',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for t in np.linspace(x0, x1, 5):
        out.append(f'<text x="{px(t):.1f}" y="{top + ph + 16}" text-anchor="middle">{t:.3g}</text>')
    for t in np.linspace(y0, y1, 5):
        out.append(f'<text x="{left - 6}" y="{py(t) + 4:.1f}" text-anchor="end">{t:.3f}</text>')
        out.append(f'<line x1="{left}" y1="{py(t):.1f}" x2="{left + pw}" y2="{py(t):.1f}" stroke="#ddd"/>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel)}</text>')
    if len(xs) > 1:
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
    for x, y, e in zip(xs, ys, errs):
        if e > 0:
            out.append(f'<line x1="{px(x):.1f}" y1="{py(y - e):.1f}" x2="{px(x):.1f}" y2="{py(y + e):.1f}" stroke="#1f77b4"/>')
        out.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3.5" fill="#1f77b4"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def component_table(rows) -> list[dict]:
    """Mean/std per component setting at the reference (q, lambda, gamma), baseline first, then each added component."""
    ref = _reference(rows)
    groups: dict[str, list] = {}
    for r in rows:
        flags_only = r["fif"] or r["stp"] or r["hld"]
        at_ref = r["q"] == ref["q"] and r["lambda"] == ref["lambda"] and r["gamma"] == ref["gamma"]
        # the baseline is stored with zero weights, so it is matched on flags alone
        if at_ref or not flags_only:
            groups.setdefault(_component_name(r), []).append(r)
    order = [name for name, *_ in COMPONENT_CELLS + SINGLE_CELLS]
    table = []
    for name in sorted(groups, key=lambda n: (order.index(n) if n in order else len(order), n)):
        g = groups[name]
        entry = {"cell": name, "runs": len(g)}
        for key in ("base_acc", "novel_acc", "hm"):
            vals = np.array([r[key] for r in g])
            entry[key], entry[key + "_std"] = float(vals.mean()), float(vals.std())
        table.append(entry)
    return table


def format_table(table) -> str:
    lines = ["| setting | runs | base | novel | HM |", "|---|---|---|---|---|"]
    for t in table:
        cells = " | ".join(f"{100 * t[k]:.2f} ± {100 * t[k + '_std']:.2f}" for k in ("base_acc", "novel_acc", "hm"))
        lines.append(f"| {t['cell']} | {t['runs']} | {cells} |")
    return "\n".join(lines) + "\n"


def make_report(csv_paths, out_dir) -> Report:
    """Write ``hm_vs_<axis>.svg`` per swept axis, ``components.md`` and ``summary.txt``."""
    rows, skipped = read_csv(*csv_paths)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = Report(table=[], skipped=skipped)
    if not rows:
        report.summary = out / "summary.txt"
        report.summary.write_text(f"no usable rows ({skipped} skipped)\n")
        return report
    swept = [(k, label) for k, label in SWEEP_AXES if len({r[k] for r in rows}) > 1] or [SWEEP_AXES[0]]
    for key, label in swept:
        xs, ys, errs, hashes = sweep_points(rows, key)
        path = out / f"hm_vs_{key}.svg"
        desc = "config_hash: " + " ".join(hashes)
        path.write_text(svg_line_plot(xs, ys, errs, label, "harmonic mean", f"HM vs {label}", desc))
        report.plots.append(path)
    report.table = component_table(rows)
    (out / "components.md").write_text(format_table(report.table))
    report.hm_error = hm_mismatch(rows)
    best = max(rows, key=lambda r: r["hm"])
    hashes = sorted({r["config_hash"] for r in rows})
    summary = [
        f"rows: {len(rows)} (skipped {skipped})",
        f"configurations: {len(hashes)}",
        f"seeds: {sorted({r['seed'] for r in rows})}",
        f"best HM: {best['hm']:.4f} (config {best['config_hash']}, seed {best['seed']}, q={best['q']:g}, "
        f"lambda={best['lambda']:g}, gamma={best['gamma']:g})",
        f"max |HM - recomputed HM|: {report.hm_error:.2e}",
        "plots: " + ", ".join(p.name for p in report.plots),
        "",
        format_table(report.table),
    ]
    report.summary = out / "summary.txt"
    report.summary.write_text("\n".join(summary))
    return report
