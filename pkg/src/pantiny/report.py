"""Render result CSVs as static SVG charts plus a plain-text ranking."""

from __future__ import annotations

import csv
import math
import re
from collections import defaultdict
from dataclasses import dataclass
from html import escape
from pathlib import Path

HIGHER_IS_BETTER = {"psnr": True, "ssim": True, "qnr": True, "sam": False, "ergas": False,
                    "d_lambda": False, "d_s": False, "loss_total": False}
LOG_TERMS = ("loss_total", "loss_l1", "loss_ssim", "loss_focal")


class EmptyReportError(ValueError):
    pass


@dataclass
class Table:
    kind: str  # sweep | cross | metrics | trainlog
    source: str
    header: list
    rows: list  # list of dicts


def read_table(path) -> Table:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        data = list(csv.reader(fh))
    if not data or not data[0]:
        raise EmptyReportError(f"{path}: empty CSV")
    header, body = data[0], [r for r in data[1:] if r]
    if not body:
        raise EmptyReportError(f"{path}: header only, no rows")
    cols = set(header)
    if {"lambda_l1", "lambda_ssim", "lambda_focal", "dataset"} <= cols:
        kind = "sweep"
    elif {"train_domain", "test_domain"} <= cols:
        kind = "cross"
    elif {"dataset", "model"} <= cols:
        kind = "metrics"
    elif {"step", "loss_total"} <= cols:
        kind = "trainlog"
    else:
        raise ValueError(f"{path}: unrecognised columns {header}")
    rows = []
    for n, r in enumerate(body, 2):
        if len(r) != len(header):
            raise ValueError(f"{path}:{n}: expected {len(header)} fields, got {len(r)}")
        rows.append(dict(zip(header, r)))
    return Table(kind, str(path), header, rows)


def _metric_columns(table: Table) -> list[str]:
    return [c for c in table.header if c in HIGHER_IS_BETTER and c != "loss_total"]


def _series(table: Table):
    """Yield (group, metric, labels, values) for every chart of a table."""
    metrics = _metric_columns(table)
    groups: dict = defaultdict(list)
    for r in table.rows:
        if table.kind == "sweep":
            group = r["dataset"]
            label = f"({r['lambda_l1']}, {r['lambda_ssim']}, {r['lambda_focal']})"
        elif table.kind == "cross":
            group, label = r["test_domain"], f"train {r['train_domain']}"
        else:
            group, label = r["dataset"], r["model"]
        groups[group].append((label, r))
    for group, items in groups.items():
        for m in metrics:
            yield group, m, [lbl for lbl, _ in items], [float(r[m]) for _, r in items]


# -- SVG ----------------------------------------------------------------------------------------

W, H = 640, 360
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 90


def _nice_range(values) -> tuple[float, float]:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    if hi == lo:
        pad = abs(hi) * 0.05 or 1.0
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.08
    return lo - pad, hi + pad


def _frame(title: str, ylabel: str, lo: float, hi: float) -> list[str]:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
        'font-family="sans-serif" font-size="11">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<text x="14" y="{(TOP + H - BOTTOM) / 2}" transform="rotate(-90 14 {(TOP + H - BOTTOM) / 2})" '
        f'text-anchor="middle">{escape(ylabel)}</text>',
    ]
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        y = _y(v, lo, hi)
        parts.append(f'<line x1="{LEFT - 4}" y1="{y:.1f}" x2="{W - RIGHT}" y2="{y:.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{LEFT - 6}" y="{y + 4:.1f}" text-anchor="end">{v:.4g}</text>')
    return parts


def _y(v: float, lo: float, hi: float) -> float:
    return H - BOTTOM - (v - lo) / (hi - lo) * (H - BOTTOM - TOP)


def _x_labels(labels, xs) -> list[str]:
    return [f'<text x="{x:.1f}" y="{H - BOTTOM + 14}" text-anchor="end" '
            f'transform="rotate(-35 {x:.1f} {H - BOTTOM + 14})">{escape(lbl)}</text>'
            for lbl, x in zip(labels, xs)]


def bar_chart(title: str, ylabel: str, labels, values) -> str:
    lo, hi = _nice_range(list(values) + [0.0])
    parts = _frame(title, ylabel, lo, hi)
    slot = (W - LEFT - RIGHT) / max(len(values), 1)
    xs = []
    for i, v in enumerate(values):
        x = LEFT + slot * (i + 0.5)
        xs.append(x)
        if not math.isfinite(v):
            parts.append(f'<text x="{x:.1f}" y="{TOP + 12}" text-anchor="middle">inf</text>')
            continue
        y0, y1 = _y(max(lo, 0.0), lo, hi), _y(v, lo, hi)
        parts.append(f'<rect x="{x - slot * 0.35:.1f}" y="{min(y0, y1):.1f}" width="{slot * 0.7:.1f}" '
                     f'height="{abs(y0 - y1):.1f}" fill="#4a78a8"/>')
    parts += _x_labels(labels, xs)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def line_chart(title: str, ylabel: str, labels, series: dict) -> str:
    """``series`` maps a legend name to values aligned with ``labels``."""
    values = [v for vs in series.values() for v in vs]
    lo, hi = _nice_range(values)
    parts = _frame(title, ylabel, lo, hi)
    n = max(len(labels), 1)
    xs = [LEFT + (W - LEFT - RIGHT) * (i + 0.5) / n for i in range(len(labels))]
    colours = ("#4a78a8", "#d0703c", "#5a9e5a", "#9c5fb5")
    for k, (name, vs) in enumerate(series.items()):
        pts = " ".join(f"{x:.1f},{_y(v, lo, hi):.1f}" for x, v in zip(xs, vs) if math.isfinite(v))
        colour = colours[k % len(colours)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        if len(series) > 1:
            parts.append(f'<text x="{W - RIGHT - 4}" y="{TOP + 14 * k}" text-anchor="end" '
                         f'fill="{colour}">{escape(name)}</text>')
    if len(labels) <= 30:
        parts += _x_labels(labels, xs)
    else:
        stride = math.ceil(len(labels) / 10)
        parts += _x_labels(labels[::stride], xs[::stride])
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text).strip("_")


def render(table: Table, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = _slug(Path(table.source).stem)
    written = []
    if table.kind == "trainlog":
        labels = [r["step"] for r in table.rows]
        series = {t: [float(r[t]) for r in table.rows] for t in LOG_TERMS if t in table.header}
        path = out_dir / f"{stem}_loss.svg"
        path.write_text(line_chart(f"{stem}: training loss", "loss", labels, series), encoding="utf-8")
        return [path]
    for group, metric, labels, values in _series(table):
        title = f"{stem}: {metric} on {group}"
        if table.kind == "sweep":
            svg = line_chart(title, metric, labels, {metric: values})
        else:
            svg = bar_chart(title, metric, labels, values)
        path = out_dir / f"{stem}_{_slug(group)}_{metric}.svg"
        path.write_text(svg, encoding="utf-8")
        written.append(path)
    return written


def ranking(table: Table) -> str:
    """Entries ordered by their mean rank over every (domain, metric) chart."""
    if table.kind == "trainlog":
        first, last = float(table.rows[0]["loss_total"]), float(table.rows[-1]["loss_total"])
        return f"{table.source}: {len(table.rows)} steps, loss {first:.4f} -> {last:.4f}\n"
    ranks: dict = defaultdict(list)
    for _, metric, labels, values in _series(table):
        better = HIGHER_IS_BETTER[metric]
        order = sorted(range(len(values)), key=lambda i: values[i], reverse=better)
        for pos, i in enumerate(order, 1):
            ranks[labels[i]].append(pos)
    lines = [f"{table.source} ({table.kind}): ranking by mean rank over domains and metrics"]
    scored = sorted(ranks.items(), key=lambda kv: (sum(kv[1]) / len(kv[1]), kv[0]))
    for place, (label, rs) in enumerate(scored, 1):
        lines.append(f"{place:3d}. {label:<32} mean rank {sum(rs) / len(rs):.2f}")
    return "\n".join(lines) + "\n"


def build_report(paths, out_dir) -> tuple[list[Path], str]:
    tables = [read_table(p) for p in paths]
    written = []
    for t in tables:
        written += render(t, out_dir)
    summary = "\n".join(ranking(t) for t in tables)
    summary_path = Path(out_dir) / "summary.txt"
    summary_path.write_text(summary, encoding="utf-8")
    return written + [summary_path], summary
