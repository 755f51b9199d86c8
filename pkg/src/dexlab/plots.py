"""Learning-curve data (CSV) and plain SVG charts from a results tree."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .bench import FINAL_FILE, METRICS_FILE
from .errors import UsageError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf")


def read_metrics(path) -> list[tuple[int, float]]:
    with open(path, newline="") as f:
        return [(int(r["step"]), float(r["eval_success"])) for r in csv.DictReader(f)]


def collect_curves(root) -> dict:
    """{(env, agent): [series per seed]} where a series is [(step, success), ...]."""
    curves: dict = {}
    for final_path in sorted(Path(root).rglob(FINAL_FILE)):
        final = json.loads(final_path.read_text())
        series = read_metrics(final_path.parent / METRICS_FILE)
        if series:
            curves.setdefault((final["env"], final["agent"]), []).append(series)
    return curves


def bootstrap_mean_ci(values, n_resamples=2000, level=0.95, seed=0) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return float(v.mean()), float(v.mean())
    rng = np.random.default_rng(seed)
    means = v[rng.integers(len(v), size=(n_resamples, len(v)))].mean(axis=1)
    lo, hi = np.percentile(means, [50 * (1 - level), 50 * (1 + level)])
    return float(lo), float(hi)


def curve_band(series_list, n_resamples=2000, seed=0) -> list[tuple[int, float, float, float, int]]:
    """Per evaluation step: (step, mean, lower, upper, n) over the seeds that reached it."""
    by_step: dict = {}
    for series in series_list:
        for step, value in series:
            by_step.setdefault(step, []).append(value)
    rows = []
    for step in sorted(by_step):
        vals = by_step[step]
        lo, hi = bootstrap_mean_ci(vals, n_resamples, seed=seed)
        rows.append((step, float(np.mean(vals)), lo, hi, len(vals)))
    return rows


def band_csv(rows) -> str:
    lines = ["step,mean,lower,upper,n"] + [f"{s},{m!r},{lo!r},{hi!r},{n}" for s, m, lo, hi, n in rows]
    return "\n".join(lines) + "\n"


def svg_chart(title: str, bands: dict, width=640, height=400) -> str:
    """Success vs environment steps; one line plus shaded CI per agent."""
    left, right, top, bottom = 60, 160, 30, 50
    pw, ph = width - left - right, height - top - bottom
    max_step = max((r[0] for rows in bands.values() for r in rows), default=1) or 1

    def xy(step, value):
        return left + pw * step / max_step, top + ph * (1.0 - value)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left}" y="20" font-family="sans-serif" font-size="14">{title}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v in (0.0, 0.25, 0.5, 0.75, 1.0):
        _, y = xy(0, v)
        out.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{y + 4:.2f}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.2f}</text>')
    for frac in (0.0, 0.5, 1.0):
        x, _ = xy(frac * max_step, 0.0)
        out.append(f'<text x="{x:.2f}" y="{top + ph + 16}" font-family="sans-serif" font-size="10" text-anchor="middle">{int(frac * max_step)}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 12}" font-family="sans-serif" font-size="11" text-anchor="middle">environment steps</text>')
    for i, (agent, rows) in enumerate(sorted(bands.items())):
        color = PALETTE[i % len(PALETTE)]
        upper = [xy(s, hi) for s, _, _, hi, _ in rows]
        lower = [xy(s, lo) for s, _, lo, _, _ in rows][::-1]
        poly = " ".join(f"{x:.2f},{y:.2f}" for x, y in upper + lower)
        line = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(s, m) for s, m, _, _, _ in rows))
        out.append(f'<polygon points="{poly}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = top + 14 * (i + 1)
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly}" font-family="sans-serif" font-size="10">{agent}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def write_plots(root, out_dir, n_resamples=2000) -> list[Path]:
    curves = collect_curves(root)
    if not curves:
        raise UsageError(f"no metrics found under {root}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    per_env: dict = {}
    for (env, agent), series in sorted(curves.items()):
        rows = curve_band(series, n_resamples)
        path = out_dir / f"{_safe(env)}__{_safe(agent)}.csv"
        path.write_text(band_csv(rows))
        written.append(path)
        per_env.setdefault(env, {})[agent] = rows
    for env, bands in sorted(per_env.items()):
        path = out_dir / f"{_safe(env)}.svg"
        path.write_text(svg_chart(env, bands))
        written.append(path)
    return written
