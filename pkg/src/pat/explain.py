"""Attention-based importance maps and heatmap export."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import tensor as T
from .model import AttentionBundle

MINUTES_PER_DAY = 1440


def extract_attention(model, series) -> AttentionBundle:
    """Attention matrices of every layer for one full series, shapes (heads, N, N)."""
    series = model.check_series(series)
    if len(series) != 1:
        raise ValueError("extract_attention takes a single series")
    was = model.training
    model.eval()
    try:
        with T.no_grad():
            _, bundle = model.encode(series, capture=True)
    finally:
        model.train(was)
    return AttentionBundle([np.asarray(a[0], dtype=np.float64) for a in bundle.layers])


def aggregate_importance(bundle, mode="received"):
    """Per-patch importance from the last layer, summing to 1.

    ``mode='received'`` sums each key column over queries (attention a patch
    receives); ``mode='row'`` sums over keys for each query, which for a
    row-stochastic matrix is always 1 and therefore yields the flat vector
    1/N. Per-head vectors are averaged, then normalised.
    """
    layers = bundle.layers if isinstance(bundle, AttentionBundle) else bundle
    if not layers:
        raise ValueError("empty attention bundle")
    last = np.asarray(layers[-1], dtype=np.float64)
    if last.ndim == 2:
        last = last[None]
    if mode == "received":
        per_head = last.sum(axis=-2)
    elif mode == "row":
        per_head = last.sum(axis=-1)
    else:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    scores = per_head.mean(axis=0)
    return scores / scores.sum()


def expand_to_minutes(scores, patch_size):
    return np.repeat(np.asarray(scores, dtype=np.float64), patch_size)


def minmax(x):
    x = np.asarray(x, dtype=np.float64)
    span = x.max() - x.min()
    if span == 0:
        return np.zeros_like(x)
    return (x - x.min()) / span


def day_average(x, minutes_per_day=MINUTES_PER_DAY):
    """Average aligned days: length k*1440 -> 1440."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) % minutes_per_day:
        raise ValueError(f"length {len(x)} is not a whole number of days")
    return x.reshape(-1, minutes_per_day).mean(axis=0)


def _color(v):
    # blue (low) -> red (high)
    r = int(round(255 * v))
    b = int(round(255 * (1 - v)))
    return f"#{r:02x}40{b:02x}"


def _panel(values, colors, x0, y0, width, height, title, bins):
    n = len(values)
    lo, hi = float(np.min(values)), float(np.max(values))
    span = hi - lo or 1.0
    edges = np.linspace(0, n, bins + 1).astype(int)
    out = [f'<text x="{x0}" y="{y0 - 6}" font-size="12">{title}</text>']
    bw = width / bins
    for k in range(bins):
        a, b = edges[k], edges[k + 1]
        out.append(
            f'<rect x="{x0 + k * bw:.2f}" y="{y0}" width="{bw + 0.05:.2f}" '
            f'height="{height}" fill="{_color(float(np.mean(colors[a:b])))}" opacity="0.35"/>'
        )
    step = max(1, n // 2000)
    xs = np.arange(0, n, step)
    pts = " ".join(
        f"{x0 + width * i / n:.2f},{y0 + height - height * (values[i] - lo) / span:.2f}"
        for i in xs
    )
    out.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="0.6"/>')
    return out


def render_svg(series, importance):
    """Week trace and day-averaged trace over importance-coloured bands."""
    series = np.asarray(series, dtype=np.float64)
    colors = minmax(importance)
    width, height = 1000, 120
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="1040" height="340" '
        'font-family="sans-serif">'
    ]
    parts += _panel(series, colors, 20, 30, width, height, "Week (minute level)", 7 * 48)
    if len(series) % MINUTES_PER_DAY == 0:
        parts += _panel(
            day_average(series), minmax(day_average(importance)), 20, 200, width, height,
            "Averaged into one day", 96,
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def export_heatmap(series, importance, path):
    """Write ``<path>.csv`` (minute, activity, importance) and ``<path>.svg``."""
    series = np.asarray(series, dtype=np.float64)
    importance = np.asarray(importance, dtype=np.float64)
    if series.shape != importance.shape:
        raise ValueError(f"series length {len(series)} != importance length {len(importance)}")
    base = Path(path)
    if base.suffix in (".csv", ".svg"):
        base = base.with_suffix("")
    csv_path, svg_path = base.with_suffix(".csv"), base.with_suffix(".svg")
    lines = ["minute,activity,importance"]
    lines += [f"{m},{a:.6g},{v:.6g}" for m, (a, v) in enumerate(zip(series, importance))]
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    svg_path.write_text(render_svg(series, importance), encoding="utf-8")
    return csv_path, svg_path
