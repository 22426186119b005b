"""Efficient-frontier extraction and the recommended operating point.

Two lines are regressed in (log10 LR, ALMR%) space: the metric-peak ridge
(where the averaged benchmark metric is maximal per learning rate) and the
loss steepest-descent line (a streamline of the validation-loss surface).
Their intersection is the recommended (ALMR, LR) operating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ledger import ExperimentGrid
from .metrics import AggregationSpec, average_metric
from .surface import ResponseSurface, fit_surface

LINE_KINDS = ("metric_ridge", "loss_descent")

# Peaks landing this close to a scan bound are treated as clamped by the
# search box rather than as genuine surface peaks.
BOUNDARY_MARGIN = 1e-2
GOLDEN_TOL = 1e-3
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class FrontierError(ValueError):
    """No well-defined frontier line could be extracted."""


class IntersectError(ValueError):
    """The two frontier lines have no stable intersection."""


class StageError(RuntimeError):
    """Pipeline failure tagged with the stage that produced it."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


@dataclass(frozen=True)
class FrontierLine:
    """Regressed line ALMR = a * log10(LR) + b."""

    slope_a: float
    intercept_b: float
    kind: str
    x_domain: tuple[float, float]
    rms_residual: float
    support_points: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in LINE_KINDS:
            raise FrontierError(f"kind must be one of {LINE_KINDS}")
        if self.rms_residual < 0:
            raise FrontierError("rms_residual must be >= 0")
        lo, hi = self.x_domain
        span = max(hi - lo, 1e-12)
        for x, _ in self.support_points:
            if not (lo - 1e-9 * span <= x <= hi + 1e-9 * span):
                raise FrontierError(f"support x={x} outside x_domain {self.x_domain}")
        if self.support_points:
            sq = [(y - self.y_at(x)) ** 2 for x, y in self.support_points]
            rms = math.sqrt(sum(sq) / len(sq))
            if abs(rms - self.rms_residual) > 1e-9 * max(1.0, rms):
                raise FrontierError(
                    f"rms_residual {self.rms_residual} inconsistent with supports (got {rms})"
                )

    def y_at(self, x: float) -> float:
        return self.slope_a * x + self.intercept_b

    def to_dict(self) -> dict:
        return {
            "slope_a": self.slope_a,
            "intercept_b": self.intercept_b,
            "kind": self.kind,
            "x_domain": list(self.x_domain),
            "rms_residual": self.rms_residual,
            "support_points": [[x, y] for x, y in self.support_points],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrontierLine":
        return cls(
            slope_a=d["slope_a"], intercept_b=d["intercept_b"], kind=d["kind"],
            x_domain=tuple(d["x_domain"]), rms_residual=d["rms_residual"],
            support_points=tuple((x, y) for x, y in d["support_points"]),
        )


@dataclass(frozen=True)
class OperatingPoint:
    """Recommended (ALMR%, LR) pair; ALMR is clamped to [0, 100]."""

    almr_percent: float
    raw_almr_percent: float
    lr: float
    x: float
    in_hull: bool

    def __post_init__(self):
        if self.lr <= 0:
            raise IntersectError("lr must be > 0")
        if abs(self.x - math.log10(self.lr)) > 1e-12 * max(1.0, abs(self.x)):
            raise IntersectError("x must equal log10(lr)")
        if not 0.0 <= self.almr_percent <= 100.0:
            raise IntersectError("clamped almr_percent must lie in [0, 100]")

    @property
    def clamped(self) -> bool:
        return self.almr_percent != self.raw_almr_percent

    def to_dict(self) -> dict:
        return {
            "almr_percent": self.almr_percent,
            "raw_almr_percent": self.raw_almr_percent,
            "lr": self.lr,
            "log10_lr": self.x,
            "in_hull": self.in_hull,
            "clamped": self.clamped,
        }


def _ols(xs: list[float], ys: list[float]) -> tuple[float, float, float]:
    """Least-squares line y = a*x + b with the fit's RMS residual."""
    n = len(xs)
    xm = sum(xs) / n
    ym = sum(ys) / n
    sxx = sum((x - xm) ** 2 for x in xs)
    if sxx == 0:
        raise FrontierError("all support points share one x; line is vertical")
    sxy = sum((x - xm) * (y - ym) for x, y in zip(xs, ys))
    a = sxy / sxx
    b = ym - a * xm
    rms = math.sqrt(sum((y - (a * x + b)) ** 2 for x, y in zip(xs, ys)) / n)
    return a, b, rms


def _golden_max(f, lo: float, hi: float, tol: float) -> float:
    """Golden-section maximizer on [lo, hi] to absolute tolerance tol."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def metric_ridge(surface: ResponseSurface, x_scan: list[float],
                 y_bounds: tuple[float, float], y_tol: float = GOLDEN_TOL,
                 boundary_margin: float = BOUNDARY_MARGIN) -> FrontierLine:
    """Regress the per-scan-line metric peaks into the ridge frontier.

    For each scan abscissa the metric surface is maximized over y by
    golden-section search; peaks that land within ``boundary_margin`` of
    either y bound are discarded as clamped by the search box, and the
    survivors are fit by ordinary least squares.
    """
    if len(x_scan) < 2:
        raise FrontierError(f"need at least 2 scan abscissae, got {len(x_scan)}")
    lo, hi = y_bounds
    if not hi > lo:
        raise FrontierError(f"degenerate y_bounds {y_bounds}")
    peaks: list[tuple[float, float]] = []
    for x in sorted(x_scan):
        y_peak = _golden_max(lambda y: surface.evaluate(x, y), lo, hi, y_tol)
        if y_peak - lo <= boundary_margin or hi - y_peak <= boundary_margin:
            continue
        peaks.append((x, y_peak))
    if len(peaks) < 2:
        raise FrontierError(
            f"frontier undefined: only {len(peaks)} interior peak(s) survived "
            f"boundary clamping over {len(x_scan)} scan lines"
        )
    xs = [p[0] for p in peaks]
    ys = [p[1] for p in peaks]
    a, b, rms = _ols(xs, ys)
    return FrontierLine(
        slope_a=a, intercept_b=b, kind="metric_ridge",
        x_domain=(min(xs), max(xs)), rms_residual=rms,
        support_points=tuple(peaks),
    )


def loss_descent_line(surface: ResponseSurface, start: tuple[float, float],
                      step_frac: float = 0.02, max_steps: int = 400) -> FrontierLine:
    """Trace the steepest-descent streamline of the loss surface and fit it.

    Steps follow the normalized negative gradient with step length
    step_frac times the domain diagonal, stopping at the domain boundary,
    after max_steps, or at a stationary point.
    """
    if not 0 < step_frac <= 0.05:
        raise FrontierError(f"step_frac must be in (0, 0.05], got {step_frac}")
    if max_steps < 1:
        raise FrontierError("max_steps must be >= 1")
    x, y = start
    if not surface.in_domain(x, y):
        raise FrontierError(f"start {start} outside surface domain {surface.domain}")
    h = step_frac * surface.domain.diagonal
    path = [(x, y)]
    for _ in range(max_steps):
        gx, gy = surface.gradient(x, y)
        norm = math.hypot(gx, gy)
        if norm < 1e-9:
            break
        x2 = x - h * gx / norm
        y2 = y - h * gy / norm
        if not surface.in_domain(x2, y2):
            break
        x, y = x2, y2
        path.append((x, y))
    if len(path) < 2:
        raise FrontierError(
            f"streamline from {start} has fewer than 2 points (stationary start?)"
        )
    xs = [p[0] for p in path]
    ys = [p[1] for p in path]
    if max(xs) - min(xs) < 1e-9 * max(surface.domain.width, 1e-300):
        raise FrontierError("streamline is near-vertical; slope not representable")
    a, b, rms = _ols(xs, ys)
    return FrontierLine(
        slope_a=a, intercept_b=b, kind="loss_descent",
        x_domain=(min(xs), max(xs)), rms_residual=rms,
        support_points=tuple(path),
    )


def intersect(metric_line: FrontierLine, loss_line: FrontierLine,
              grid: ExperimentGrid) -> OperatingPoint:
    """Intersect the two frontier lines into an operating point.

    The intersection is x* = (b2 - b1) / (a1 - a2), y* = a2*x* + b2; the
    lines are ordered canonically first so the result is identical under
    argument swap. ALMR is clamped to [0, 100] (raw value retained) and
    in_hull reports containment in the experiment grid's bounds.
    """
    first, second = sorted(
        (metric_line, loss_line),
        key=lambda l: (l.kind, l.slope_a, l.intercept_b),
    )
    a1, b1 = first.slope_a, first.intercept_b
    a2, b2 = second.slope_a, second.intercept_b
    if abs(a1 - a2) < 1e-9 * max(abs(a1), abs(a2), 1.0):
        raise IntersectError(
            f"frontier lines are near-parallel (slopes {a1} and {a2}); no stable intersection"
        )
    x_star = (b2 - b1) / (a1 - a2)
    y_star = a2 * x_star + b2
    return OperatingPoint(
        almr_percent=min(max(y_star, 0.0), 100.0),
        raw_almr_percent=y_star,
        lr=10.0 ** x_star,
        x=x_star,
        in_hull=grid.bounds.contains(x_star, y_star),
    )


def adjust_almr_for_lr(metric_line: FrontierLine, lr: float) -> float:
    """Transfer rule for a new model size: re-read the ridge at the new LR.

    Evaluates the metric-ridge line at log10(lr) and clamps to [0, 100],
    the documented way to adjust the mixture ratio when the learning rate
    is lowered for a larger model.
    """
    if lr <= 0:
        raise FrontierError(f"lr must be > 0, got {lr}")
    return min(max(metric_line.y_at(math.log10(lr)), 0.0), 100.0)


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RecommendOptions:
    """Knobs for the end-to-end recommendation pipeline.

    ``scan_x`` defaults to the grid's distinct learning-rate abscissae and
    ``descent_start`` to the grid centroid; both are recorded in the output
    so a recommendation is reproducible from its own document.
    """

    surface_kind: str = "thin_plate_spline"
    ridge: float = 0.0
    scan_x: tuple[float, ...] | None = None
    y_bounds: tuple[float, float] | None = None
    descent_start: tuple[float, float] | None = None
    step_frac: float = 0.02
    max_steps: int = 400
    y_tol: float = GOLDEN_TOL

    def to_dict(self) -> dict:
        return {
            "surface_kind": self.surface_kind,
            "ridge": self.ridge,
            "scan_x": list(self.scan_x) if self.scan_x is not None else None,
            "y_bounds": list(self.y_bounds) if self.y_bounds is not None else None,
            "descent_start": list(self.descent_start) if self.descent_start is not None else None,
            "step_frac": self.step_frac,
            "max_steps": self.max_steps,
            "y_tol": self.y_tol,
        }


@dataclass(frozen=True)
class Recommendation:
    """Operating point plus full provenance of how it was derived."""

    operating_point: OperatingPoint
    metric_line: FrontierLine
    loss_line: FrontierLine
    loss_surface: ResponseSurface
    metric_surface: ResponseSurface
    options: RecommendOptions
    aggregation: AggregationSpec

    def to_dict(self) -> dict:
        def surface_info(s: ResponseSurface) -> dict:
            return {
                "kind": s.kind,
                "field_name": s.field_name,
                "num_centers": len(s.centers),
                "domain": s.domain.to_dict(),
                "ridge": s.ridge,
            }
        return {
            "operating_point": self.operating_point.to_dict(),
            "metric_line": self.metric_line.to_dict(),
            "loss_line": self.loss_line.to_dict(),
            "surfaces": {
                "val_loss": surface_info(self.loss_surface),
                "avg_metric": surface_info(self.metric_surface),
            },
            "options": self.options.to_dict(),
            "aggregation": self.aggregation.to_dict(),
        }


def _resolved_options(grid: ExperimentGrid, options: RecommendOptions) -> RecommendOptions:
    scan = options.scan_x
    if scan is None:
        scan = tuple(sorted(set(grid.xs)))
    y_bounds = options.y_bounds
    if y_bounds is None:
        y_bounds = (grid.bounds.ymin, grid.bounds.ymax)
    start = options.descent_start
    if start is None:
        start = grid.centroid()
    return replace(options, scan_x=scan, y_bounds=y_bounds, descent_start=start)


def recommend(grid: ExperimentGrid, spec: AggregationSpec,
              options: RecommendOptions | None = None) -> Recommendation:
    """Run fit -> frontier -> intersect over an experiment grid.

    Any stage failure is re-raised as a StageError tagged "fit",
    "frontier", or "intersect" so callers can report (and exit) per stage.
    """
    opts = _resolved_options(grid, options if options is not None else RecommendOptions())
    try:
        loss_pts = [(p.x, p.y, p.loss) for p in grid.points]
        metric_pts = [(p.x, p.y, average_metric(p.metrics, spec)) for p in grid.points]
        loss_surface = fit_surface(loss_pts, kind=opts.surface_kind,
                                   field_name="val_loss", ridge=opts.ridge)
        metric_surface = fit_surface(metric_pts, kind=opts.surface_kind,
                                     field_name="avg_metric", ridge=opts.ridge)
    except Exception as exc:
        raise StageError("fit", exc) from exc
    try:
        ridge_line = metric_ridge(metric_surface, list(opts.scan_x), opts.y_bounds,
                                  y_tol=opts.y_tol)
        descent = loss_descent_line(loss_surface, opts.descent_start,
                                    step_frac=opts.step_frac, max_steps=opts.max_steps)
    except Exception as exc:
        raise StageError("frontier", exc) from exc
    try:
        point = intersect(ridge_line, descent, grid)
    except Exception as exc:
        raise StageError("intersect", exc) from exc
    return Recommendation(
        operating_point=point, metric_line=ridge_line, loss_line=descent,
        loss_surface=loss_surface, metric_surface=metric_surface,
        options=opts, aggregation=spec,
    )
