"""Dependency-free SVG charts for monthly energy and comfort rollups.

Output is deterministic: fixed geometry, fixed number formatting, no ids or
timestamps, so two renders of the same rollup are byte-identical.
"""
from __future__ import annotations

from typing import Mapping, Sequence
from xml.sax.saxutils import escape

from .control import MonthlyRow

WIDTH, HEIGHT = 900, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 170, 40, 50
PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
MONTHS = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"]


def _f(v: float) -> str:
    return f"{v:.2f}"


def _month_keys(rollups: Mapping[str, Sequence[MonthlyRow]]) -> list[tuple[int, int]]:
    keys = sorted({(r.year, r.month) for rows in rollups.values() for r in rows})
    if not keys:
        raise ValueError("cannot render an empty rollup")
    return keys


def _nice_max(v: float) -> float:
    if v <= 0:
        return 1.0
    step = 10 ** len(str(int(v))) / 10
    return max(step, step * int(v / step + 1))


def _frame(title: str, ylabel: str, ymax: float, keys, slot_w: float) -> list[str]:
    plot_h = HEIGHT - MARGIN_T - MARGIN_B
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.2f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="15" y="{MARGIN_T + plot_h / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 15 {MARGIN_T + plot_h / 2:.2f})">{escape(ylabel)}</text>',
    ]
    for i in range(6):
        v = ymax * i / 5
        y = MARGIN_T + plot_h - plot_h * i / 5
        parts.append(f'<line x1="{MARGIN_L}" y1="{_f(y)}" x2="{WIDTH - MARGIN_R}" y2="{_f(y)}" stroke="#dddddd"/>')
        parts.append(f'<text x="{MARGIN_L - 6}" y="{_f(y + 4)}" text-anchor="end">{_f(v)}</text>')
    for i, (year, month) in enumerate(keys):
        x = MARGIN_L + slot_w * (i + 0.5)
        parts.append(f'<text x="{_f(x)}" y="{HEIGHT - MARGIN_B + 16}" text-anchor="middle">'
                     f'{MONTHS[month - 1]} {year}</text>')
    parts.append(f'<line x1="{MARGIN_L}" y1="{HEIGHT - MARGIN_B}" x2="{WIDTH - MARGIN_R}" '
                 f'y2="{HEIGHT - MARGIN_B}" stroke="black"/>')
    return parts


def _legend(entries: Sequence[tuple[str, str]]) -> list[str]:
    parts = []
    x = WIDTH - MARGIN_R + 15
    for i, (label, color) in enumerate(entries):
        y = MARGIN_T + 18 * i
        parts.append(f'<rect x="{x}" y="{y}" width="12" height="12" fill="{color}"/>')
        parts.append(f'<text x="{x + 18}" y="{y + 10}">{escape(label)}</text>')
    return parts


def energy_chart(rollups: Mapping[str, Sequence[MonthlyRow]]) -> str:
    """Grouped bars per month, one bar per scenario, heating stacked under cooling."""
    keys = _month_keys(rollups)
    names = list(rollups)
    table = {name: {(r.year, r.month): r for r in rows} for name, rows in rollups.items()}
    ymax = _nice_max(max((r.e_heat + r.e_cool) for rows in rollups.values() for r in rows))
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B
    slot_w = plot_w / len(keys)
    bar_w = slot_w * 0.8 / len(names)
    parts = _frame("Monthly HVAC energy (heating + cooling)", "kWh", ymax, keys, slot_w)
    for si, name in enumerate(names):
        color = PALETTE[si % len(PALETTE)]
        for mi, key in enumerate(keys):
            row = table[name].get(key)
            if row is None:
                continue
            x = MARGIN_L + slot_w * mi + slot_w * 0.1 + bar_w * si
            h_heat = plot_h * row.e_heat / ymax
            h_cool = plot_h * row.e_cool / ymax
            base = MARGIN_T + plot_h
            parts.append(f'<rect x="{_f(x)}" y="{_f(base - h_heat)}" width="{_f(bar_w)}" '
                         f'height="{_f(h_heat)}" fill="{color}"/>')
            parts.append(f'<rect x="{_f(x)}" y="{_f(base - h_heat - h_cool)}" width="{_f(bar_w)}" '
                         f'height="{_f(h_cool)}" fill="{color}" fill-opacity="0.45"/>')
    parts += _legend([(name, PALETTE[i % len(PALETTE)]) for i, name in enumerate(names)])
    parts.append(f'<text x="{WIDTH - MARGIN_R + 15}" y="{HEIGHT - MARGIN_B}">solid: heating, pale: cooling</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def ppd_chart(rollups: Mapping[str, Sequence[MonthlyRow]]) -> str:
    keys = _month_keys(rollups)
    names = list(rollups)
    ymax = _nice_max(max(r.mean_ppd for rows in rollups.values() for r in rows))
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B
    slot_w = plot_w / len(keys)
    parts = _frame("Monthly average PPD", "PPD (%)", ymax, keys, slot_w)
    for si, name in enumerate(names):
        color = PALETTE[si % len(PALETTE)]
        rows = {(r.year, r.month): r for r in rollups[name]}
        pts = []
        for mi, key in enumerate(keys):
            if key in rows:
                x = MARGIN_L + slot_w * (mi + 0.5)
                y = MARGIN_T + plot_h - plot_h * rows[key].mean_ppd / ymax
                pts.append((x, y))
        if len(pts) > 1:
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                         f'points="{" ".join(f"{_f(x)},{_f(y)}" for x, y in pts)}"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="3" fill="{color}"/>')
    parts += _legend([(name, PALETTE[i % len(PALETTE)]) for i, name in enumerate(names)])
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_monthly_charts(rollups: Mapping[str, Sequence[MonthlyRow]]) -> tuple[str, str]:
    """(energy grouped-bar SVG, PPD line SVG) for a set of named scenarios."""
    if not rollups or not any(rollups.values()):
        raise ValueError("cannot render an empty rollup")
    return energy_chart(rollups), ppd_chart(rollups)
