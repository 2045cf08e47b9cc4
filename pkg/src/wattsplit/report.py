"""Deterministic report files from a trial history: summary tables, a CSV
of every trial, and a static SVG bar chart of per-family best MAE."""

from __future__ import annotations

import math
from pathlib import Path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def per_family_best(history) -> list[tuple[str, float, float]]:
    """(family, best val MAE, accuracy of that trial), MAE ascending."""
    best: dict = {}
    for t in history:
        if not t.ok:
            continue
        fam = t.config["family"]
        if fam not in best or t.loss < best[fam].loss:
            best[fam] = t
    rows = [(fam, t.loss, t.metrics.get("accuracy")) for fam, t in best.items()]
    rows.sort(key=lambda r: (r[1], r[0]))
    return rows


def _bar_chart_svg(rows, final_test_mae=None) -> str:
    width, height = 640, 360
    margin_l, margin_b, margin_t = 110, 30, 30
    plot_w = width - margin_l - 20
    plot_h = height - margin_b - margin_t
    top = max((r[1] for r in rows), default=1.0) or 1.0
    bar_h = plot_h / max(len(rows), 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        '<style>text{font-family:monospace;font-size:12px;}</style>',
        f'<text x="{margin_l}" y="18">best validation MAE per family (watts)'
        + (f' - final test MAE {final_test_mae:.3f}' if final_test_mae is not None else '')
        + '</text>',
    ]
    for i, (fam, val, _) in enumerate(rows):
        y = margin_t + i * bar_h
        w = plot_w * (val / top) if math.isfinite(val) else plot_w
        parts.append(f'<rect x="{margin_l}" y="{y + 2:.1f}" width="{w:.2f}" '
                     f'height="{bar_h - 4:.1f}" fill="#4878a8"/>')
        parts.append(f'<text x="4" y="{y + bar_h / 2 + 4:.1f}">{fam}</text>')
        parts.append(f'<text x="{margin_l + w + 4:.2f}" y="{y + bar_h / 2 + 4:.1f}">'
                     f'{val:.3f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(history, out_dir, final_test_mae=None) -> list[Path]:
    """Write the report files; contents depend only on the history."""
    trials = list(history)
    if not trials:
        raise ValueError("empty history")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    rows = per_family_best(trials)
    path = out / "per_family_best.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("family,best_val_mae\n")
        for fam, val, _ in rows:
            fh.write(f"{fam},{_fmt(val)}\n")
    written.append(path)

    path = out / "accuracy_vs_mae.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("family,accuracy,best_val_mae\n")
        for fam, val, acc in rows:
            fh.write(f"{fam},{_fmt(acc)},{_fmt(val)}\n")
    written.append(path)

    path = out / "trials.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id,family,status,val_mae,accuracy\n")
        for t in trials:
            fh.write(f"{t.id},{t.config['family']},{t.status},"
                     f"{_fmt(t.loss if t.ok else None)},"
                     f"{_fmt(t.metrics.get('accuracy'))}\n")
    written.append(path)

    path = out / "best_mae.svg"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_bar_chart_svg(rows, final_test_mae))
    written.append(path)
    return written
