"""Deterministic SVG contour/frontier plots.

Renders contour polylines, experiment cross markers, dashed frontier
lines, and the operating-point marker into a self-contained SVG document.
Output bytes are a pure function of the inputs: coordinates are formatted
with fixed precision and no timestamps or ids are embedded.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

from .frontier import FrontierLine, OperatingPoint
from .ledger import Rect
from .surface import ContourSet

_CONTOUR_COLOR = "#555555"
_FRONTIER_COLOR = "#1f77b4"
_CROSS_COLOR = "#222222"
_POINT_COLOR = "#d62728"


class PlotError(ValueError):
    """Plot cannot be rendered (no contours, degenerate viewport)."""


@dataclass(frozen=True)
class PlotSpec:
    """Canvas geometry and axis labeling for a contour plot."""

    width: float = 720.0
    height: float = 540.0
    margin_left: float = 72.0
    margin_right: float = 24.0
    margin_top: float = 44.0
    margin_bottom: float = 56.0
    title: str = ""
    x_label: str = "LR"
    y_label: str = "ALMR (%)"

    def __post_init__(self):
        if self.width - self.margin_left - self.margin_right <= 0:
            raise PlotError("degenerate viewport: margins exceed width")
        if self.height - self.margin_top - self.margin_bottom <= 0:
            raise PlotError("degenerate viewport: margins exceed height")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Projection:
    """Data rectangle to pixel rectangle, y increasing upward."""

    def __init__(self, data: Rect, spec: PlotSpec):
        if data.width <= 0 or data.height <= 0:
            raise PlotError(f"degenerate data bounds {data}")
        self.data = data
        self.px0 = spec.margin_left
        self.py0 = spec.margin_top
        self.pw = spec.width - spec.margin_left - spec.margin_right
        self.ph = spec.height - spec.margin_top - spec.margin_bottom

    def to_px(self, x: float, y: float) -> tuple[float, float]:
        fx = (x - self.data.xmin) / self.data.width
        fy = (y - self.data.ymin) / self.data.height
        return self.px0 + fx * self.pw, self.py0 + (1.0 - fy) * self.ph


def _clip_segment(rect: Rect, p0: tuple[float, float],
                  p1: tuple[float, float]) -> tuple | None:
    """Liang-Barsky clip of segment p0-p1 to rect; None when fully outside."""
    x0, y0 = p0
    x1, y1 = p1
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-dx, x0 - rect.xmin), (dx, rect.xmax - x0),
        (-dy, y0 - rect.ymin), (dy, rect.ymax - y0),
    ):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    if t0 > t1:
        return None
    return (x0 + t0 * dx, y0 + t0 * dy), (x0 + t1 * dx, y0 + t1 * dy)


def _decade_ticks(lo: float, hi: float) -> list[float]:
    import math
    first = math.ceil(lo - 1e-9)
    return [float(d) for d in range(first, math.floor(hi + 1e-9) + 1)]


def _nice_step(span: float) -> float:
    import math
    raw = span / 6.0
    mag = 10.0 ** math.floor(math.log10(raw)) if raw > 0 else 1.0
    for mult in (1.0, 2.0, 5.0, 10.0):
        if mult * mag >= raw:
            return mult * mag
    return 10.0 * mag


def render_contour_plot(contours: list[ContourSet],
                        crosses: list[tuple[float, float]],
                        lines: list[FrontierLine],
                        point: OperatingPoint | None,
                        spec: PlotSpec | None = None,
                        data_bounds: Rect | None = None) -> str:
    """Render a contour-and-frontier plot as an SVG document string.

    The data viewport defaults to the first contour set's lattice bounds.
    Frontier lines are clipped to the viewport and dropped entirely when
    outside; crosses and the operating point are drawn only when inside.
    """
    if not contours:
        raise PlotError("need at least one contour set")
    spec = spec if spec is not None else PlotSpec()
    data = data_bounds if data_bounds is not None else contours[0].bounds
    proj = _Projection(data, spec)

    parts: list[str] = []
    parts.append('<?xml version="1.0" encoding="UTF-8"?>')
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(spec.width)}" '
        f'height="{_fmt(spec.height)}" viewBox="0 0 {_fmt(spec.width)} {_fmt(spec.height)}">'
    )
    parts.append(f'<rect x="0" y="0" width="{_fmt(spec.width)}" '
                 f'height="{_fmt(spec.height)}" fill="#ffffff"/>')

    # Axes frame and ticks.
    x0px, y1px = proj.to_px(data.xmin, data.ymin)
    x1px, y0px = proj.to_px(data.xmax, data.ymax)
    parts.append('<g class="axes" stroke="#000000" stroke-width="1" fill="none">')
    parts.append(f'<rect x="{_fmt(x0px)}" y="{_fmt(y0px)}" '
                 f'width="{_fmt(x1px - x0px)}" height="{_fmt(y1px - y0px)}"/>')
    parts.append("</g>")
    parts.append('<g class="ticks" font-family="sans-serif" font-size="11" fill="#000000">')
    x_ticks = _decade_ticks(data.xmin, data.xmax)
    if not x_ticks:
        x_ticks = [data.xmin, data.xmax]
    for t in x_ticks:
        px, _ = proj.to_px(t, data.ymin)
        parts.append(f'<line x1="{_fmt(px)}" y1="{_fmt(y1px)}" x2="{_fmt(px)}" '
                     f'y2="{_fmt(y1px + 5)}" stroke="#000000"/>')
        label = f"1e{int(t)}" if float(t).is_integer() else f"10^{t:.2f}"
        parts.append(f'<text x="{_fmt(px)}" y="{_fmt(y1px + 18)}" '
                     f'text-anchor="middle">{escape(label)}</text>')
    step = _nice_step(data.height)
    tick = step * (int(data.ymin / step) if data.ymin >= 0 else -int(-data.ymin / step + 1))
    while tick <= data.ymax + 1e-9:
        if tick >= data.ymin - 1e-9:
            _, py = proj.to_px(data.xmin, tick)
            parts.append(f'<line x1="{_fmt(x0px - 5)}" y1="{_fmt(py)}" x2="{_fmt(x0px)}" '
                         f'y2="{_fmt(py)}" stroke="#000000"/>')
            parts.append(f'<text x="{_fmt(x0px - 9)}" y="{_fmt(py + 4)}" '
                         f'text-anchor="end">{tick:g}</text>')
        tick += step
    parts.append("</g>")

    labels_px = (proj.to_px(data.xmin + data.width / 2, data.ymin)[0], y1px + 38)
    parts.append(f'<text x="{_fmt(labels_px[0])}" y="{_fmt(labels_px[1])}" '
                 f'font-family="sans-serif" font-size="13" '
                 f'text-anchor="middle">{escape(spec.x_label)}</text>')
    _, ymid = proj.to_px(data.xmin, data.ymin + data.height / 2)
    parts.append(f'<text x="18" y="{_fmt(ymid)}" font-family="sans-serif" font-size="13" '
                 f'text-anchor="middle" transform="rotate(-90 18 {_fmt(ymid)})">'
                 f'{escape(spec.y_label)}</text>')
    if spec.title:
        parts.append(f'<text x="{_fmt(spec.width / 2)}" y="24" font-family="sans-serif" '
                     f'font-size="15" text-anchor="middle">{escape(spec.title)}</text>')

    # Contour polylines with one midpoint label per polyline.
    parts.append(f'<g class="contours" stroke="{_CONTOUR_COLOR}" stroke-width="1" fill="none">')
    label_parts: list[str] = []
    for cset in contours:
        for poly, is_closed in zip(cset.polylines, cset.closed):
            if len(poly) < 2:
                continue
            coords = [proj.to_px(float(x), float(y)) for x, y in poly]
            d = "M " + " L ".join(f"{_fmt(px)} {_fmt(py)}" for px, py in coords)
            if is_closed:
                d += " Z"
            parts.append(f'<path class="contour" d="{d}"/>')
            mid = coords[len(coords) // 2]
            label_parts.append(
                f'<text x="{_fmt(mid[0])}" y="{_fmt(mid[1] - 3)}" font-family="sans-serif" '
                f'font-size="10" fill="{_CONTOUR_COLOR}" '
                f'text-anchor="middle">{cset.level:.4g}</text>'
            )
    parts.extend(label_parts)
    parts.append("</g>")

    # Experiment points as cross glyphs.
    parts.append(f'<g class="crosses" stroke="{_CROSS_COLOR}" stroke-width="1.5">')
    arm = 4.0
    for x, y in crosses:
        if not data.contains(x, y):
            continue
        px, py = proj.to_px(x, y)
        parts.append(
            f'<path class="cross" d="M {_fmt(px - arm)} {_fmt(py - arm)} '
            f'L {_fmt(px + arm)} {_fmt(py + arm)} M {_fmt(px - arm)} {_fmt(py + arm)} '
            f'L {_fmt(px + arm)} {_fmt(py - arm)}"/>'
        )
    parts.append("</g>")

    # Frontier lines, dashed, clipped to the data viewport.
    parts.append(f'<g class="frontiers" stroke="{_FRONTIER_COLOR}" stroke-width="1.5" '
                 'stroke-dasharray="7 4" fill="none">')
    for line in lines:
        seg = _clip_segment(
            data,
            (data.xmin, line.y_at(data.xmin)),
            (data.xmax, line.y_at(data.xmax)),
        )
        if seg is None:
            continue
        (ax, ay), (bx, by) = seg
        pa = proj.to_px(ax, ay)
        pb = proj.to_px(bx, by)
        parts.append(f'<path class="frontier" d="M {_fmt(pa[0])} {_fmt(pa[1])} '
                     f'L {_fmt(pb[0])} {_fmt(pb[1])}"/>')
    parts.append("</g>")

    if point is not None and data.contains(point.x, point.almr_percent):
        px, py = proj.to_px(point.x, point.almr_percent)
        parts.append(f'<g class="operating-point">'
                     f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="5.5" '
                     f'fill="none" stroke="{_POINT_COLOR}" stroke-width="2"/>'
                     f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="1.8" '
                     f'fill="{_POINT_COLOR}"/></g>')

    parts.append("</svg>")
    return "\n".join(parts) + "\n"
