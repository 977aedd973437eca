"""Report files for a finished ensemble: flat CSV, JSON and static SVG charts."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .analysis import EnsembleStats
from .errors import ConfigError, IoError

__all__ = ["FORMATS", "emit_report", "stats_to_json", "stats_from_json", "write_csv",
           "write_svg", "svg_chart", "dump_path_csv"]

FORMATS = ("csv", "json", "svg")

_W, _H = 640, 400
_M = {"left": 70, "right": 20, "top": 30, "bottom": 45}
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def stats_to_json(stats: EnsembleStats) -> str:
    return json.dumps(stats.to_dict(), indent=1)


def stats_from_json(text: str) -> EnsembleStats:
    return EnsembleStats.from_dict(json.loads(text))


def _csv_columns(stats: EnsembleStats):
    cols = {"t": stats.grid}
    for p in stats.p_list:
        for name, m in (("vnorm", stats.mean_vnorm), ("xnorm", stats.mean_xnorm),
                        ("cond_vnorm", stats.cond_mean_vnorm),
                        ("cond_xnorm", stats.cond_mean_xnorm)):
            if m is not None:
                cols[f"{name}_p{p:g}_mean"] = m[p].mean
                cols[f"{name}_p{p:g}_se"] = m[p].se
    if stats.martingale_mean is not None:
        cols["martingale_mean"] = stats.martingale_mean.mean
        cols["martingale_se"] = stats.martingale_mean.se
    return cols


def write_csv(stats: EnsembleStats, path) -> Path:
    """One row per grid time; every row carries the seed and the scenario config."""
    path = Path(path)
    cols = _csv_columns(stats)
    config = json.dumps(stats.scenario)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(list(cols) + ["master_seed", "scenario", "scenario_config"])
            for k in range(len(stats.grid)):
                out.writerow([repr(float(c[k])) for c in cols.values()] +
                             [stats.master_seed, stats.scenario_name, config])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def _ticks(lo, hi, log):
    if log:
        return [10.0 ** e for e in range(math.floor(lo), math.ceil(hi) + 1)]
    step = 10 ** math.floor(math.log10(max(hi - lo, 1e-300)))
    if (hi - lo) / step < 4:
        step /= 2
    start = math.ceil(lo / step) * step
    return list(np.arange(start, hi + 0.5 * step, step))


def svg_chart(title: str, t, series: dict, *, log: bool = False, overlay=None) -> str:
    """Static line chart; one polyline per entry of ``series`` (label -> values).

    ``overlay`` is an optional (t, y, label) drawn as a dashed path.
    """
    t = np.asarray(t, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    tf = lambda y: np.log10(y) if log else y  # noqa: E731
    vals = []
    for y in ys.values():
        ok = np.isfinite(y) & ((y > 0) if log else True)
        vals.append(tf(y[ok]))
    allv = np.concatenate(vals) if vals else np.array([0.0])
    if allv.size == 0:
        allv = np.array([0.0])
    lo, hi = float(allv.min()), float(allv.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    t0, t1 = float(t.min()), float(t.max())
    if t1 <= t0:
        t1 = t0 + 1.0
    pw = _W - _M["left"] - _M["right"]
    ph = _H - _M["top"] - _M["bottom"]

    def sx(v):
        return _M["left"] + (v - t0) / (t1 - t0) * pw

    def sy(v):
        return _M["top"] + (hi - v) / (hi - lo) * ph

    def points(tt, y):
        ok = np.isfinite(y) & ((y > 0) if log else True)
        return " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(tt[ok], tf(y[ok])))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
             f'viewBox="0 0 {_W} {_H}">',
             f'<rect width="{_W}" height="{_H}" fill="white"/>',
             f'<text x="{_W / 2}" y="18" text-anchor="middle" font-size="14">'
             f'{escape(title)}</text>',
             f'<rect x="{_M["left"]}" y="{_M["top"]}" width="{pw}" height="{ph}" '
             f'fill="none" stroke="black"/>']
    for v in _ticks(lo, hi, log):
        pos = math.log10(v) if log else v
        if lo - 1e-12 <= pos <= hi + 1e-12:
            label = f"{v:.0e}" if log else f"{v:.3g}"
            parts.append(f'<text x="{_M["left"] - 6}" y="{sy(pos) + 4:.2f}" '
                         f'text-anchor="end" font-size="11">{label}</text>')
    for v in _ticks(t0, t1, False):
        parts.append(f'<text x="{sx(v):.2f}" y="{_H - _M["bottom"] + 16}" '
                     f'text-anchor="middle" font-size="11">{v:.3g}</text>')
    parts.append(f'<text x="{_W / 2}" y="{_H - 8}" text-anchor="middle" font-size="12">t</text>')
    for k, (label, y) in enumerate(ys.items()):
        color = _COLORS[k % len(_COLORS)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{points(t, y)}"><title>{escape(label)}</title></polyline>')
        parts.append(f'<text x="{_W - _M["right"] - 6}" y="{_M["top"] + 16 + 14 * k}" '
                     f'text-anchor="end" font-size="11" fill="{color}">{escape(label)}</text>')
    if overlay is not None:
        ot, oy, olabel = overlay
        pts = points(np.asarray(ot, dtype=float), np.asarray(oy, dtype=float))
        if pts:
            parts.append(f'<path fill="none" stroke="black" stroke-dasharray="5,4" '
                         f'd="M {pts.replace(" ", " L ")}"><title>{escape(olabel)}</title></path>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(stats: EnsembleStats, out_dir) -> list:
    out_dir = Path(out_dir)
    fit = stats.fits.get("mean_vnorm")
    overlay = None
    if fit is not None:
        overlay = (stats.grid, fit.predict(stats.grid), f"{fit.model} fit, rate {fit.rate:.4g}")
    charts = {
        "mean_vnorm.svg": svg_chart(
            f"{stats.scenario_name}: E|v|_p (log scale)", stats.grid,
            {f"p={p:g}": stats.mean_vnorm[p].mean for p in stats.p_list}, log=True,
            overlay=overlay),
        "mean_xnorm.svg": svg_chart(
            f"{stats.scenario_name}: E|x|_p", stats.grid,
            {f"p={p:g}": stats.mean_xnorm[p].mean for p in stats.p_list}),
    }
    paths = []
    for name, text in charts.items():
        paths.append(_write_text(out_dir / name, text))
    return paths


def _write_text(path: Path, text: str) -> Path:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def emit_report(stats: EnsembleStats, manifest, out_dir, formats=FORMATS) -> list:
    """Write the requested formats into ``out_dir``; returns the written paths.

    ``stats.json`` holds only the statistics, so identical inputs give
    identical files; wall time and criteria go to ``manifest.json``.
    """
    formats = [formats] if isinstance(formats, str) else list(formats)
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"unknown report format(s): {', '.join(bad)}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc
    written = []
    if "csv" in formats:
        written.append(write_csv(stats, out_dir / "stats.csv"))
    if "json" in formats:
        written.append(_write_text(out_dir / "stats.json", stats_to_json(stats)))
        if manifest is not None:
            written.append(_write_text(out_dir / "manifest.json",
                                       json.dumps(manifest.to_dict(), indent=1)))
    if "svg" in formats:
        written.extend(write_svg(stats, out_dir))
    return written


def dump_path_csv(result, path) -> Path:
    """Per-path trajectory table: t, min_dist, norms per p, M_t, qv_t."""
    path = Path(path)
    header = ["t", "min_dist"]
    for p in result.p_list:
        header += [f"xnorm_p{p:g}", f"vnorm_p{p:g}"]
    header += ["M_t", "qv_t"]
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(header)
            for k, t in enumerate(result.times):
                row = [t, result.min_dist[k]]
                for j in range(len(result.p_list)):
                    row += [result.xnorm[k, j], result.vnorm[k, j]]
                row += [result.m[k], result.qv[k]]
                out.writerow([repr(float(v)) for v in row])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path
