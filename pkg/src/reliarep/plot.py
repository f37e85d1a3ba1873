"""Standalone SVG heatmaps over (p, tau) and risk-coverage line charts."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

from .selective import RiskCoverageCurve
from .sweep import METRICS, SweepResult

CELL = 80
MARGIN_L, MARGIN_T, MARGIN_R, MARGIN_B = 90, 60, 40, 110

# light yellow -> dark blue
_LOW = np.array([255, 247, 188])
_HIGH = np.array([37, 52, 148])


def _color(t: float) -> str:
    if math.isnan(t):
        return "#cccccc"
    r, g, b = np.rint(_LOW + (_HIGH - _LOW) * min(max(t, 0.0), 1.0)).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">'
    )
    return "\n".join(['<?xml version="1.0" encoding="UTF-8"?>', head, *body, "</svg>"]) + "\n"


def render_heatmap(result: SweepResult, metric: str, variant: str) -> str:
    """Seed-averaged ``metric`` for ``variant``: p along x, tau along y."""
    if metric not in METRICS:
        raise KeyError(f"unknown metric {metric!r}")
    if variant not in {r["variant"] for r in result.rows.values()}:
        raise KeyError(f"unknown variant {variant!r}")
    taus, ps, grid = result.metric_grid(metric, variant)
    finite = grid[np.isfinite(grid)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (math.nan, math.nan)
    span = hi - lo
    width = MARGIN_L + CELL * len(ps) + MARGIN_R
    height = MARGIN_T + CELL * len(taus) + MARGIN_B
    body = [
        f'<text x="{width / 2:.0f}" y="30" text-anchor="middle" font-size="16">'
        f"{escape(metric)} over (p, tau) ({escape(variant)})</text>"
    ]
    for i, tau in enumerate(taus):
        y = MARGIN_T + CELL * i
        body.append(f'<text x="{MARGIN_L - 8}" y="{y + CELL / 2 + 4:.0f}" text-anchor="end" font-size="12">{tau:g}</text>')
        for j, p in enumerate(ps):
            x = MARGIN_L + CELL * j
            v = grid[i, j]
            t = 0.0 if span == 0 or math.isnan(span) else (v - lo) / span
            body.append(
                f'<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" '
                f'fill="{_color(t)}" stroke="#ffffff"/>'
            )
            ink = "#ffffff" if t > 0.55 else "#000000"
            label = "n/a" if math.isnan(v) else f"{v:.3g}"
            body.append(
                f'<text x="{x + CELL / 2:.0f}" y="{y + CELL / 2 + 4:.0f}" text-anchor="middle" '
                f'font-size="13" fill="{ink}">{label}</text>'
            )
    base_y = MARGIN_T + CELL * len(taus)
    for j, p in enumerate(ps):
        body.append(f'<text x="{MARGIN_L + CELL * j + CELL / 2:.0f}" y="{base_y + 18}" text-anchor="middle" font-size="12">{p:g}</text>')
    body.append(f'<text x="{MARGIN_L + CELL * len(ps) / 2:.0f}" y="{base_y + 40}" text-anchor="middle" font-size="13">p (structural corruption)</text>')
    mid_y = MARGIN_T + CELL * len(taus) / 2
    body.append(
        f'<text x="24" y="{mid_y:.0f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 24 {mid_y:.0f})">tau (input noise)</text>'
    )
    if span == 0:
        scale = f"scale: constant {lo:.4g}"
    elif math.isnan(span):
        scale = "scale: no data"
    else:
        scale = f"scale: min {lo:.4g} to max {hi:.4g}"
    body.append(f'<text x="{MARGIN_L}" y="{base_y + 70}" font-size="12">{scale}</text>')
    return _svg(width, height, body)


def render_risk_coverage(curves: dict[str, RiskCoverageCurve], title: str = "risk-coverage") -> str:
    """Line chart with one polyline per labelled curve."""
    W, H, pad = 520, 380, 60
    palette = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"]
    ymax = max([float(np.max(c.risk)) for c in curves.values()] + [1e-9])
    body = [
        f'<text x="{W / 2:.0f}" y="28" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="#000"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="#000"/>',
        f'<text x="{W / 2:.0f}" y="{H - 20}" text-anchor="middle" font-size="12">coverage</text>',
        f'<text x="18" y="{H / 2:.0f}" text-anchor="middle" font-size="12" transform="rotate(-90 18 {H / 2:.0f})">selective risk</text>',
        f'<text x="{pad - 6}" y="{pad + 4}" text-anchor="end" font-size="11">{ymax:.3g}</text>',
        f'<text x="{pad - 6}" y="{H - pad + 4}" text-anchor="end" font-size="11">0</text>',
    ]
    for k, (label, curve) in enumerate(sorted(curves.items())):
        xs = pad + curve.coverage * (W - 2 * pad)
        ys = (H - pad) - curve.risk / ymax * (H - 2 * pad)
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
        color = palette[k % len(palette)]
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        body.append(f'<text x="{W - pad + 4}" y="{pad + 16 * k}" font-size="11" fill="{color}">{escape(label)}</text>')
    return _svg(W + 120, H, body)
