import csv
import itertools
import xml.etree.ElementTree as ET

import pytest

from promptlab.bench.ablation import CSV_COLUMNS, parse_row
from promptlab.bench.train import harmonic_mean
from promptlab.report import component_table, make_report, svg_line_plot, sweep_points


def make_row(seed=0, q=30, lam=1, gamma=3, flags=(1, 1, 1), base=0.9, novel=0.8, config_hash=None):
    hm = harmonic_mean(base, novel)
    return {
        "config_hash": config_hash or f"h{q}-{lam}-{gamma}-{''.join(map(str, flags))}",
        "seed": seed, "q": f"{q:g}", "lambda": f"{lam:g}", "gamma": f"{gamma:g}",
        "fif": flags[0], "stp": flags[1], "hld": flags[2],
        "base_acc": f"{base:.6f}", "novel_acc": f"{novel:.6f}", "hm": f"{hm:.6f}",
        "epochs": 20, "wall_ms": "12.5",
    }


def write(path, rows, extra_lines=()):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        for line in extra_lines:
            fh.write(line + "\n")
    return path


def test_single_row_gives_single_point_plot(tmp_path):
    report = make_report([write(tmp_path / "one.csv", [make_row()])], tmp_path / "rep")
    assert [p.name for p in report.plots] == ["hm_vs_q.svg"]
    root = ET.parse(report.plots[0]).getroot()
    circles = [el for el in root.iter() if el.tag.endswith("circle")]
    assert len(circles) == 1
    assert report.summary.read_text().startswith("rows: 1")
    assert len(report.table) == 1


def test_one_svg_per_swept_axis(tmp_path):
    rows = [make_row(s, q=q) for q, s in itertools.product((0, 10, 30), range(2))]
    rows += [make_row(s, lam=lam) for lam, s in itertools.product((0, 2), range(2))]
    rows += [make_row(s, gamma=g) for g, s in itertools.product((1, 5), range(2))]
    report = make_report([write(tmp_path / "grid.csv", rows)], tmp_path / "rep")
    assert sorted(p.name for p in report.plots) == ["hm_vs_gamma.svg", "hm_vs_lambda.svg", "hm_vs_q.svg"]
    xs, mean, std, hashes = sweep_points([_typed(r) for r in rows], "q")
    assert xs.tolist() == [0, 10, 30] and len(hashes) == 3
    desc = ET.parse(tmp_path / "rep" / "hm_vs_q.svg").getroot().find("{http://www.w3.org/2000/svg}desc").text
    assert all(h in desc for h in hashes)


def _typed(row):
    return parse_row({k: str(v) for k, v in row.items()})


def test_malformed_row_skipped_with_warning(tmp_path):
    path = write(tmp_path / "m.csv", [make_row(), make_row(1)], extra_lines=["abc,0,30,1,3,1,1,1,oops,0.8,0.8,20,1"])
    with pytest.warns(UserWarning, match="skipped"):
        report = make_report([path], tmp_path / "rep")
    assert report.skipped == 1
    assert "skipped 1" in report.summary.read_text()


def test_hm_recomputation(tmp_path):
    rows = [make_row(s, base=b, novel=n) for s, (b, n) in enumerate([(0.9, 0.8), (0.7, 0.5), (0.61, 0.99)])]
    report = make_report([write(tmp_path / "h.csv", rows)], tmp_path / "rep")
    assert report.hm_error <= 1e-6


def test_component_table_order_and_baseline(tmp_path):
    rows = [make_row(s, flags=f, lam=0 if f == (0, 0, 0) else 1, gamma=0 if f == (0, 0, 0) else 3,
                     novel=0.7 + 0.05 * i)
            for i, f in enumerate([(0, 0, 0), (0, 1, 0), (0, 1, 1), (1, 1, 1)]) for s in range(3)]
    table = component_table([_typed(r) for r in rows])
    assert [t["cell"] for t in table] == ["baseline", "+STP", "+STP+HLD", "+STP+HLD+FIF"]
    assert [t["runs"] for t in table] == [3, 3, 3, 3]
    assert table[0]["novel_acc"] == pytest.approx(0.7)
    report = make_report([write(tmp_path / "c.csv", rows)], tmp_path / "rep")
    assert "| baseline | 3 |" in (tmp_path / "rep" / "components.md").read_text()
    assert report.table == table


def test_report_is_pure(tmp_path):
    path = write(tmp_path / "p.csv", [make_row(s, q=q) for q in (0, 30) for s in range(2)])
    make_report([path], tmp_path / "r1")
    make_report([path], tmp_path / "r2")
    for name in ("hm_vs_q.svg", "components.md", "summary.txt"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_svg_handles_degenerate_input():
    svg = svg_line_plot([], [], [], "x", "y", "empty")
    assert ET.fromstring(svg).tag.endswith("svg")
    svg = svg_line_plot([1, 1], [0.5, 0.5], [0, 0], "x", "y", "<&>")
    assert "&lt;&amp;&gt;" in svg


def test_baseline_does_not_set_reference(tmp_path):
    rows = [make_row(0, lam=0, gamma=0, flags=(0, 0, 0), novel=0.6), make_row(0, novel=0.8)]
    report = make_report([write(tmp_path / "two.csv", rows)], tmp_path / "rep")
    assert [t["cell"] for t in report.table] == ["baseline", "+STP+HLD+FIF"]
