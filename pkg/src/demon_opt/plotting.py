"""Self-contained SVG rendering of line plots and lr x momentum heatmaps."""

from __future__ import annotations

import math
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 80, 150, 30, 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


class SchemaError(ValueError):
    pass


def _num(x: float) -> str:
    return f"{x:.3f}"


def _label(x: float) -> str:
    return f"{x:.4g}"


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<text x="{WIDTH // 2}" y="18" text-anchor="middle" class="title">{escape(title)}</text>',
    ]


def _axes() -> list[str]:
    x0, y0 = MARGIN_L, HEIGHT - MARGIN_B
    x1, y1 = WIDTH - MARGIN_R, MARGIN_T
    return [
        f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]


def _grey(frac: float) -> str:
    # frac 0 (best, lowest) -> light, 1 (worst) -> dark
    level = round(245 - frac * (245 - 40))
    return f"#{level:02x}{level:02x}{level:02x}"


def heatmap_svg(rows: Sequence[Mapping[str, str]], title: str = "final validation metric") -> str:
    """One ``rect.cell`` per grid row; lower mean metric is drawn lighter.

    Colour scales linearly between the smallest and largest finite cell
    values. Non-finite cells are drawn red.
    """
    lrs: list[float] = []
    moms: list[float] = []
    values: dict[tuple[float, float], float] = {}
    for r in rows:
        lr, m = float(r["lr"]), float(r["momentum"])
        raw = r["mean_final_val"]
        values[(lr, m)] = float(raw) if raw not in ("", None) else math.nan
        if lr not in lrs:
            lrs.append(lr)
        if m not in moms:
            moms.append(m)
    lrs.sort()
    moms.sort()
    out = _header(title) + _axes()
    finite = [v for v in values.values() if math.isfinite(v)]
    lo, hi = (min(finite), max(finite)) if finite else (0.0, 0.0)
    if lrs:
        cw = (WIDTH - MARGIN_L - MARGIN_R) / len(lrs)
        ch = (HEIGHT - MARGIN_T - MARGIN_B) / len(moms)
        for i, lr in enumerate(lrs):
            cx = MARGIN_L + (i + 0.5) * cw
            out.append(
                f'<text class="axis-label" x="{_num(cx)}" y="{HEIGHT - MARGIN_B + 16}" '
                f'text-anchor="middle">{_label(lr)}</text>'
            )
        for j, m in enumerate(moms):
            cy = HEIGHT - MARGIN_B - (j + 0.5) * ch
            out.append(
                f'<text class="axis-label" x="{MARGIN_L - 6}" y="{_num(cy + 4)}" text-anchor="end">{_label(m)}</text>'
            )
        for (lr, m), v in sorted(values.items()):
            i, j = lrs.index(lr), moms.index(m)
            x = MARGIN_L + i * cw
            y = HEIGHT - MARGIN_B - (j + 1) * ch
            if math.isfinite(v):
                fill = _grey((v - lo) / (hi - lo) if hi > lo else 0.0)
            else:
                fill = "#cc0000"
            out.append(
                f'<rect class="cell" x="{_num(x)}" y="{_num(y)}" width="{_num(cw)}" height="{_num(ch)}" '
                f'fill="{fill}" stroke="white"><title>lr={_label(lr)} momentum={_label(m)} value={v!r}</title></rect>'
            )
    out.append(f'<text x="{(WIDTH - MARGIN_R + MARGIN_L) // 2}" y="{HEIGHT - 15}" text-anchor="middle">learning rate</text>')
    out.append(
        f'<text x="18" y="{HEIGHT // 2}" text-anchor="middle" transform="rotate(-90 18 {HEIGHT // 2})">momentum</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def lines_svg(series: Mapping[str, Sequence[tuple[float, float]]], title: str = "") -> str:
    """One polyline per named series of ``(t, value)`` points on shared linear axes."""
    out = _header(title) + _axes()
    pts = [p for s in series.values() for p in s if math.isfinite(p[1])]
    if pts:
        tmin, tmax = min(p[0] for p in pts), max(p[0] for p in pts)
        vmin, vmax = min(p[1] for p in pts), max(p[1] for p in pts)
        tspan = tmax - tmin or 1.0
        vspan = vmax - vmin or 1.0
        pw = WIDTH - MARGIN_L - MARGIN_R
        ph = HEIGHT - MARGIN_T - MARGIN_B

        def xy(t: float, v: float) -> str:
            return f"{_num(MARGIN_L + (t - tmin) / tspan * pw)},{_num(HEIGHT - MARGIN_B - (v - vmin) / vspan * ph)}"

        for k, v in enumerate((vmin, vmax)):
            out.append(
                f'<text class="axis-label" x="{MARGIN_L - 6}" y="{HEIGHT - MARGIN_B - k * ph + 4}" '
                f'text-anchor="end">{_label(v)}</text>'
            )
        for k, t in enumerate((tmin, tmax)):
            out.append(
                f'<text class="axis-label" x="{MARGIN_L + k * pw}" y="{HEIGHT - MARGIN_B + 16}" '
                f'text-anchor="middle">{_label(t)}</text>'
            )
        for n, (name, s) in enumerate(series.items()):
            colour = PALETTE[n % len(PALETTE)]
            coords = " ".join(xy(t, v) for t, v in s if math.isfinite(v))
            out.append(f'<polyline class="series" fill="none" stroke="{colour}" stroke-width="1.5" points="{coords}"/>')
            ly = MARGIN_T + 14 * n + 10
            out.append(
                f'<text class="legend" x="{WIDTH - MARGIN_R + 10}" y="{ly}" fill="{colour}">{escape(name)}</text>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


HEATMAP_COLUMNS = ("lr", "momentum", "mean_final_val")


def svg_from_csv(header: Sequence[str], rows: Sequence[Mapping[str, str]], kind: str) -> str:
    """Render parsed CSV rows; raises :class:`SchemaError` naming missing columns."""
    if kind == "heatmap":
        missing = [c for c in HEATMAP_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"heatmap needs columns {list(HEATMAP_COLUMNS)}; missing {missing} in {list(header)}")
        return heatmap_svg(rows)
    if kind != "lines":
        raise SchemaError(f"unknown plot kind {kind!r}")
    if "t" not in header:
        raise SchemaError(f"line plot needs a 't' column; got {list(header)}")
    names = ["loss"] if "loss" in header else [c for c in header if c != "t"]
    series = {}
    for name in names:
        pts = []
        for r in rows:
            if r.get(name, "") == "":
                continue
            try:
                pts.append((float(r["t"]), float(r[name])))
            except ValueError as exc:
                raise SchemaError(f"column {name!r} holds a non-numeric value: {exc}") from exc
        series[name] = pts
    return lines_svg(series)
