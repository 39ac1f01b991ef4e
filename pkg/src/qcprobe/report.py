"""CSV tables and static SVG plots."""

import csv
import io
import math
from html import escape
from pathlib import Path

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"]


class NonFiniteError(ValueError):
    def __init__(self, where):
        self.where = where
        super().__init__("non-finite values at " + ", ".join(where))


def format_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return "" if v is None else str(v)


def emit_csv(table, path, columns=None):
    """Write a list of row dicts (or a header + row tuples) as CSV with LF line endings.

    Floats are written with 17 significant digits, so parsing them back with
    ``float`` gives the identical double.
    """
    rows = list(table)
    if not rows:
        raise ValueError("refusing to write an empty table")
    if isinstance(rows[0], dict):
        columns = list(columns or rows[0])
        body = [[r.get(c) for c in columns] for r in rows]
    else:
        if columns is None:
            raise ValueError("columns are required for tuple rows")
        body = [list(r) for r in rows]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in body:
        w.writerow([format_cell(v) for v in r])
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(buf.getvalue())
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------------ SVG

def _check_finite(series):
    bad = []
    for si, s in enumerate(series):
        for key in ("x", "y", "yerr"):
            if s.get(key) is None:
                continue
            arr = np.asarray(s[key], dtype=np.float64)
            for i in np.flatnonzero(~np.isfinite(arr)):
                bad.append(f"series {si} {key}[{i}]")
    if bad:
        raise NonFiniteError(bad)


def _fmt(v):
    return f"{v:.4g}"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-9 * step:
        out.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return out


def _limits(values, pad=0.05):
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        span = abs(lo) if lo else 1.0
        return lo - 0.5 * span, hi + 0.5 * span
    d = (hi - lo) * pad
    return lo - d, hi + d


class _Frame:
    """One set of axes at (x0, y0) with size (w, h) in SVG pixels."""

    def __init__(self, x0, y0, w, h, xlim, ylim):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlim, self.ylim = xlim, ylim

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (np.asarray(x, dtype=np.float64) - lo) / (hi - lo) * self.w

    def py(self, y):
        lo, hi = self.ylim
        return self.y0 + self.h - (np.asarray(y, dtype=np.float64) - lo) / (hi - lo) * self.h

    def axes(self, out, xlabel="", ylabel="", title="", ticks=True):
        out.append(f'<rect x="{self.x0:.2f}" y="{self.y0:.2f}" width="{self.w:.2f}" height="{self.h:.2f}" '
                   'fill="none" stroke="#000" stroke-width="1"/>')
        if ticks:
            for t in _ticks(*self.xlim):
                x = float(self.px(t))
                out.append(f'<line x1="{x:.2f}" y1="{self.y0 + self.h:.2f}" x2="{x:.2f}" '
                           f'y2="{self.y0 + self.h + 4:.2f}" stroke="#000"/>')
                out.append(f'<text x="{x:.2f}" y="{self.y0 + self.h + 16:.2f}" font-size="10" '
                           f'text-anchor="middle">{_fmt(t)}</text>')
            for t in _ticks(*self.ylim):
                y = float(self.py(t))
                out.append(f'<line x1="{self.x0 - 4:.2f}" y1="{y:.2f}" x2="{self.x0:.2f}" y2="{y:.2f}" stroke="#000"/>')
                out.append(f'<text x="{self.x0 - 6:.2f}" y="{y + 3:.2f}" font-size="10" '
                           f'text-anchor="end">{_fmt(t)}</text>')
        if xlabel:
            out.append(f'<text x="{self.x0 + self.w / 2:.2f}" y="{self.y0 + self.h + 32:.2f}" font-size="12" '
                       f'text-anchor="middle">{escape(xlabel)}</text>')
        if ylabel:
            cx, cy = self.x0 - 40, self.y0 + self.h / 2
            out.append(f'<text x="{cx:.2f}" y="{cy:.2f}" font-size="12" text-anchor="middle" '
                       f'transform="rotate(-90 {cx:.2f} {cy:.2f})">{escape(ylabel)}</text>')
        if title:
            out.append(f'<text x="{self.x0 + self.w / 2:.2f}" y="{self.y0 - 6:.2f}" font-size="12" '
                       f'text-anchor="middle">{escape(title)}</text>')

    def shade(self, out, spans):
        for lo, hi in spans:
            x0 = float(self.px(max(lo, self.xlim[0])))
            x1 = float(self.px(min(hi, self.xlim[1])))
            if x1 > x0:
                out.append(f'<rect class="unpunished" x="{x0:.2f}" y="{self.y0:.2f}" width="{x1 - x0:.2f}" '
                           f'height="{self.h:.2f}" fill="#e31a1c" fill-opacity="0.15" stroke="none"/>')

    def polyline(self, out, x, y, color):
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(self.px(x), self.py(y)))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')

    def markers(self, out, x, y, color, r=3.0):
        for a, b in zip(self.px(x), self.py(y)):
            out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="{r}" fill="{color}" fill-opacity="0.8"/>')

    def errorbars(self, out, x, y, err, color):
        y = np.asarray(y, dtype=np.float64)
        err = np.asarray(err, dtype=np.float64)
        for a, lo, hi in zip(self.px(x), self.py(y - err), self.py(y + err)):
            out.append(f'<line x1="{a:.2f}" y1="{lo:.2f}" x2="{a:.2f}" y2="{hi:.2f}" stroke="{color}"/>')
            for yy in (lo, hi):
                out.append(f'<line x1="{a - 3:.2f}" y1="{yy:.2f}" x2="{a + 3:.2f}" y2="{yy:.2f}" stroke="{color}"/>')


def _legend(out, labels, x, y):
    for i, label in enumerate(labels):
        if not label:
            continue
        color = PALETTE[i % len(PALETTE)]
        yy = y + 14 * i
        out.append(f'<rect x="{x:.2f}" y="{yy - 8:.2f}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{x + 14:.2f}" y="{yy + 1:.2f}" font-size="11">{escape(str(label))}</text>')


def emit_svg_plot(series, kind, path, title="", xlabel="", ylabel="", spans=(), columns=4):
    """Write a standalone SVG.

    ``series`` is a list of dicts with ``y`` and optional ``x``, ``yerr`` and
    ``label``. ``kind`` is ``line`` (one curve per series, error bars from
    ``yerr``), ``scatter`` (markers only) or ``panel-grid`` (one small plot per
    series, ``columns`` per row). ``spans`` are ``(start, stop)`` x-ranges
    drawn as shaded unpunished regions.
    """
    if kind not in ("line", "scatter", "panel-grid"):
        raise ValueError(f"unknown plot kind {kind!r}")
    series = [dict(s) for s in series]
    if not series or any(np.size(s.get("y", [])) == 0 for s in series):
        raise ValueError("nothing to plot")
    for s in series:
        s["y"] = np.atleast_1d(np.asarray(s["y"], dtype=np.float64))
        s["x"] = np.arange(s["y"].size, dtype=np.float64) if s.get("x") is None \
            else np.atleast_1d(np.asarray(s["x"], dtype=np.float64))
        if s["x"].shape != s["y"].shape:
            raise ValueError("x and y lengths differ")
    _check_finite(series)

    out = []
    if kind == "panel-grid":
        ncol = min(columns, len(series))
        nrow = -(-len(series) // ncol)
        pw, ph, mx, my = 200, 120, 50, 40
        width, height = mx + ncol * (pw + 20), my + nrow * (ph + my) + 10
        allx = np.concatenate([s["x"] for s in series])
        ally = np.concatenate([s["y"] for s in series])
        xlim, ylim = (float(allx.min()), float(allx.max())), _limits(ally)
        if xlim[1] == xlim[0]:
            xlim = (xlim[0] - 0.5, xlim[1] + 0.5)
        for i, s in enumerate(series):
            r, c = divmod(i, ncol)
            f = _Frame(mx + c * (pw + 20), my + r * (ph + my), pw, ph, xlim, ylim)
            f.shade(out, spans)
            f.axes(out, title=str(s.get("label", f"step {i}")), ticks=(c == 0 and r == nrow - 1))
            if s["y"].size == 1:
                f.markers(out, s["x"], s["y"], PALETTE[0])
            else:
                f.polyline(out, s["x"], s["y"], PALETTE[0])
        head_y = 18
    else:
        width, height = 640, 420
        allx = np.concatenate([s["x"] for s in series])
        ylo = np.concatenate([s["y"] - np.asarray(s.get("yerr", 0.0)) * np.ones_like(s["y"]) for s in series])
        yhi = np.concatenate([s["y"] + np.asarray(s.get("yerr", 0.0)) * np.ones_like(s["y"]) for s in series])
        f = _Frame(70, 40, 430, 320, _limits(allx), _limits(np.concatenate([ylo, yhi])))
        f.shade(out, spans)
        f.axes(out, xlabel, ylabel)
        for i, s in enumerate(series):
            color = PALETTE[i % len(PALETTE)]
            if kind == "line" and s["y"].size > 1:
                f.polyline(out, s["x"], s["y"], color)
            f.markers(out, s["x"], s["y"], color, 3.0 if kind == "line" else 2.5)
            if s.get("yerr") is not None:
                f.errorbars(out, s["x"], s["y"], s["yerr"], color)
        _legend(out, [s.get("label", "") for s in series], 515, 50)
        head_y = 22
    head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
            f'<rect width="{width}" height="{height}" fill="#fff"/>']
    if title:
        head.append(f'<text x="{width / 2:.2f}" y="{head_y}" font-size="14" text-anchor="middle">'
                    f'{escape(title)}</text>')
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("\n".join(head + out + ["</svg>"]) + "\n")
    return path
