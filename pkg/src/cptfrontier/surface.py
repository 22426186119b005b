"""Scalar response surfaces over scattered (log10 LR, ALMR%) points.

Fits an interpolating thin-plate spline (or a least-squares plane) and
provides evaluation, analytic gradients, and marching-squares contour
extraction. All linear algebra is done with hand-rolled, vectorised
elimination instead of BLAS so results are bit-identical regardless of
the host's thread configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ledger import Rect

SURFACE_KINDS = ("thin_plate_spline", "plane")
FIELD_NAMES = ("val_loss", "avg_metric")

# Relative eigenvalue ratio below which the point scatter counts as collinear.
_COLLINEAR_RTOL = 1e-12


class SurfaceFitError(ValueError):
    """Fit could not be performed: bad inputs or a singular system."""


class ContourError(ValueError):
    """Invalid contour request (empty levels, degenerate bounds, tiny lattice)."""


def _solve_linear(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting, no BLAS.

    Row operations are plain numpy ufuncs, so elimination is deterministic
    across thread counts. Raises SurfaceFitError with a pivot-ratio
    condition report when the system is numerically singular.
    """
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    n = a.shape[0]
    scale = np.abs(a).max()
    if scale == 0:
        raise SurfaceFitError("singular system: zero matrix")
    pivots = np.empty(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) <= 1e-13 * scale:
            raise SurfaceFitError(
                f"numerically singular system (pivot {abs(a[p, k]):.3e} vs scale {scale:.3e})"
            )
        if p != k:
            a[[k, p]] = a[[p, k]]
            b[[k, p]] = b[[p, k]]
        pivots[k] = abs(a[k, k])
        factors = a[k + 1:, k] / a[k, k]
        a[k + 1:, k:] -= factors[:, None] * a[k, k:]
        b[k + 1:] -= factors * b[k]
    if pivots.min() <= 1e-12 * pivots.max():
        raise SurfaceFitError(
            f"numerically singular system (pivot ratio {pivots.min() / pivots.max():.3e})"
        )
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - (a[i, i + 1:] * x[i + 1:]).sum()) / a[i, i]
    return x


def _tps_kernel(r2: np.ndarray) -> np.ndarray:
    """phi(r) = r^2 log r, written as r^2/2 * log(r^2), with phi(0) = 0."""
    out = np.zeros_like(r2)
    nz = r2 > 0
    out[nz] = 0.5 * r2[nz] * np.log(r2[nz])
    return out


def _pairwise_sq_dist(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    dx = p[:, 0:1] - q[None, :, 0]
    dy = p[:, 1:2] - q[None, :, 1]
    return dx * dx + dy * dy


def _collinear(xy: np.ndarray) -> bool:
    """True when the points lie (numerically) on one straight line."""
    centered = xy - xy.mean(axis=0)
    sxx = float((centered[:, 0] ** 2).sum())
    syy = float((centered[:, 1] ** 2).sum())
    sxy = float((centered[:, 0] * centered[:, 1]).sum())
    tr = sxx + syy
    if tr == 0:
        return True
    det = sxx * syy - sxy * sxy
    disc = max(tr * tr - 4.0 * det, 0.0)
    lam_min = (tr - math.sqrt(disc)) / 2.0
    return lam_min <= _COLLINEAR_RTOL * tr


@dataclass(frozen=True)
class ContourSet:
    """Iso-level polylines extracted from a lattice evaluation."""

    level: float
    polylines: tuple[np.ndarray, ...]
    closed: tuple[bool, ...]
    bounds: Rect

    def __post_init__(self):
        if len(self.polylines) != len(self.closed):
            raise ContourError("polylines and closed flags must align")

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "polylines": [[[float(x), float(y)] for x, y in line] for line in self.polylines],
            "closed": list(self.closed),
            "bounds": self.bounds.to_dict(),
        }


@dataclass(frozen=True)
class ResponseSurface:
    """Fitted scalar field z(x, y) with an RBF expansion plus affine tail.

    z(x, y) = sum_i w_i phi(|(x, y) - c_i|) + c0 + cx*x + cy*y

    A "plane" surface has an empty expansion and only the tail.
    """

    kind: str
    field_name: str
    centers: np.ndarray            # (n, 2)
    rbf_weights: np.ndarray        # (n,)
    linear_tail: tuple[float, float, float]
    domain: Rect
    ridge: float = 0.0

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at an (m, 2) array of points."""
        points = np.asarray(points, dtype=float)
        c0, cx, cy = self.linear_tail
        out = c0 + cx * points[:, 0] + cy * points[:, 1]
        if len(self.centers):
            g = _tps_kernel(_pairwise_sq_dist(points, self.centers))
            out = out + (g * self.rbf_weights[None, :]).sum(axis=1)
        return out

    def evaluate(self, x: float, y: float) -> float:
        return float(self.evaluate_many(np.array([[x, y]]))[0])

    def in_domain(self, x: float, y: float) -> bool:
        return self.domain.contains(x, y)

    def evaluate_with_flag(self, x: float, y: float) -> tuple[float, bool]:
        """Value plus an extrapolation flag (True when outside the fit domain)."""
        return self.evaluate(x, y), not self.in_domain(x, y)

    def gradient(self, x: float, y: float) -> tuple[float, float]:
        """Analytic gradient of the expansion; the kernel slope at r=0 is 0.

        d/dx phi(r) = (2 log r + 1) * (x - cx_i), continuous at r -> 0.
        """
        _, cx, cy = self.linear_tail
        gx, gy = cx, cy
        if len(self.centers):
            dx = x - self.centers[:, 0]
            dy = y - self.centers[:, 1]
            r2 = dx * dx + dy * dy
            coef = np.zeros_like(r2)
            nz = r2 > 0
            coef[nz] = np.log(r2[nz]) + 1.0
            gx += float((self.rbf_weights * coef * dx).sum())
            gy += float((self.rbf_weights * coef * dy).sum())
        return gx, gy

    def contours(self, nx: int, ny: int, levels: list[float],
                 bounds: Rect | None = None) -> list[ContourSet]:
        """Evaluate on an nx-by-ny lattice and march each requested level."""
        if nx < 2 or ny < 2:
            raise ContourError(f"lattice must be at least 2x2, got {nx}x{ny}")
        if not levels:
            raise ContourError("empty level set")
        rect = bounds if bounds is not None else self.domain
        if rect.width <= 0 or rect.height <= 0:
            raise ContourError(f"degenerate bounds {rect}")
        xs = np.linspace(rect.xmin, rect.xmax, nx)
        ys = np.linspace(rect.ymin, rect.ymax, ny)
        px, py = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([px.ravel(), py.ravel()])
        z = self.evaluate_many(pts).reshape(nx, ny)
        # Cell-centre samples resolve the two ambiguous marching-squares cases.
        cxs = 0.5 * (xs[:-1] + xs[1:])
        cys = 0.5 * (ys[:-1] + ys[1:])
        ccx, ccy = np.meshgrid(cxs, cys, indexing="ij")
        centers = np.column_stack([ccx.ravel(), ccy.ravel()])
        zc = self.evaluate_many(centers).reshape(nx - 1, ny - 1)
        return [_march(xs, ys, z, zc, level, rect) for level in levels]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "field_name": self.field_name,
            "centers": [[float(x), float(y)] for x, y in self.centers],
            "rbf_weights": [float(w) for w in self.rbf_weights],
            "linear_tail": list(self.linear_tail),
            "domain": self.domain.to_dict(),
            "ridge": self.ridge,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResponseSurface":
        centers = np.array(d["centers"], dtype=float).reshape(-1, 2)
        return cls(
            kind=d["kind"],
            field_name=d["field_name"],
            centers=centers,
            rbf_weights=np.array(d["rbf_weights"], dtype=float),
            linear_tail=tuple(d["linear_tail"]),
            domain=Rect.from_dict(d["domain"]),
            ridge=d.get("ridge", 0.0),
        )


def fit_surface(points, kind: str = "thin_plate_spline",
                field_name: str = "val_loss", ridge: float = 0.0) -> ResponseSurface:
    """Fit a response surface through scattered (x, y, z) samples.

    "thin_plate_spline" solves the standard augmented interpolation system
    (kernel block plus first-degree polynomial tail, with the usual
    orthogonality side conditions on the weights); an optional ridge term
    trades exact interpolation for smoothing on noisy grids. "plane" does
    an ordinary least-squares affine fit.
    """
    if kind not in SURFACE_KINDS:
        raise SurfaceFitError(f"kind must be one of {SURFACE_KINDS}")
    if field_name not in FIELD_NAMES:
        raise SurfaceFitError(f"field_name must be one of {FIELD_NAMES}")
    if ridge < 0:
        raise SurfaceFitError("ridge must be >= 0")
    arr = np.array([(float(x), float(y), float(z)) for x, y, z in points], dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 3:
        raise SurfaceFitError(f"need at least 3 points, got {0 if arr.ndim != 2 else arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise SurfaceFitError("points must be finite")
    xy = arr[:, :2]
    z = arr[:, 2]
    n = len(xy)

    r2 = _pairwise_sq_dist(xy, xy)
    off_diag = r2 + np.eye(n) * np.inf
    if off_diag.min() == 0.0:
        i, j = np.unravel_index(int(np.argmin(off_diag)), off_diag.shape)
        raise SurfaceFitError(f"duplicate coordinates at points {i} and {j}: {tuple(xy[i])}")
    if _collinear(xy):
        raise SurfaceFitError("points are collinear; surface fit is singular")

    domain = Rect(float(xy[:, 0].min()), float(xy[:, 0].max()),
                  float(xy[:, 1].min()), float(xy[:, 1].max()))

    if kind == "plane":
        ones = np.ones(n)
        cols = [ones, xy[:, 0], xy[:, 1]]
        a = np.array([[(u * v).sum() for v in cols] for u in cols])
        rhs = np.array([(u * z).sum() for u in cols])
        c0, cx, cy = _solve_linear(a, rhs)
        return ResponseSurface(
            kind="plane", field_name=field_name,
            centers=np.empty((0, 2)), rbf_weights=np.empty(0),
            linear_tail=(float(c0), float(cx), float(cy)),
            domain=domain, ridge=0.0,
        )

    # Augmented system: [[K + ridge*I, P], [P^T, 0]] @ [w, c] = [z, 0].
    k_mat = _tps_kernel(r2) + ridge * np.eye(n)
    p_mat = np.column_stack([np.ones(n), xy[:, 0], xy[:, 1]])
    a = np.zeros((n + 3, n + 3))
    a[:n, :n] = k_mat
    a[:n, n:] = p_mat
    a[n:, :n] = p_mat.T
    rhs = np.concatenate([z, np.zeros(3)])
    sol = _solve_linear(a, rhs)
    return ResponseSurface(
        kind="thin_plate_spline", field_name=field_name,
        centers=xy, rbf_weights=sol[:n],
        linear_tail=(float(sol[n]), float(sol[n + 1]), float(sol[n + 2])),
        domain=domain, ridge=ridge,
    )


# ---------------------------------------------------------------------------
# Marching squares
# ---------------------------------------------------------------------------
#
# Cells are indexed by their lower-left lattice node (i, j). Corners:
#
#     b3 (i,j+1) --T-- b2 (i+1,j+1)
#      |                 |
#      L                 R
#      |                 |
#     b0 (i,j)  --B-- b1 (i+1,j)
#
# Edge keys: ("h", i, j) for the horizontal edge from node (i,j) to (i+1,j),
# ("v", i, j) for the vertical edge from node (i,j) to (i,j+1). Crossing
# coordinates are computed once per edge, so chained segments share exact
# vertex values.

_B, _R, _T, _L = 0, 1, 2, 3

_CASE_SEGMENTS: dict[int, list[tuple[int, int]]] = {
    0: [], 15: [],
    1: [(_L, _B)], 14: [(_L, _B)],
    2: [(_B, _R)], 13: [(_B, _R)],
    3: [(_L, _R)], 12: [(_L, _R)],
    4: [(_R, _T)], 11: [(_R, _T)],
    6: [(_B, _T)], 9: [(_B, _T)],
    7: [(_L, _T)], 8: [(_L, _T)],
    # Cases 5 and 10 are saddles, resolved by the cell-centre sample.
}


def _march(xs: np.ndarray, ys: np.ndarray, z: np.ndarray, z_center: np.ndarray,
           level: float, bounds: Rect) -> ContourSet:
    nx, ny = z.shape
    above = z > level
    crossings: dict[tuple, tuple[float, float]] = {}

    def edge_point(key: tuple) -> tuple[float, float]:
        pt = crossings.get(key)
        if pt is not None:
            return pt
        kind, i, j = key
        if kind == "h":
            z0, z1 = z[i, j], z[i + 1, j]
            t = (level - z0) / (z1 - z0)
            pt = (xs[i] + t * (xs[i + 1] - xs[i]), ys[j])
        else:
            z0, z1 = z[i, j], z[i, j + 1]
            t = (level - z0) / (z1 - z0)
            pt = (xs[i], ys[j] + t * (ys[j + 1] - ys[j]))
        crossings[key] = pt
        return pt

    adjacency: dict[tuple, list[tuple]] = {}

    def add_segment(e0: tuple, e1: tuple) -> None:
        edge_point(e0)
        edge_point(e1)
        adjacency.setdefault(e0, []).append(e1)
        adjacency.setdefault(e1, []).append(e0)

    for i in range(nx - 1):
        for j in range(ny - 1):
            code = (int(above[i, j]) | int(above[i + 1, j]) << 1
                    | int(above[i + 1, j + 1]) << 2 | int(above[i, j + 1]) << 3)
            if code in (0, 15):
                continue
            edges = {
                _B: ("h", i, j), _T: ("h", i, j + 1),
                _L: ("v", i, j), _R: ("v", i + 1, j),
            }
            if code in (5, 10):
                center_above = z_center[i, j] > level
                if code == 5:   # b0 and b2 above
                    segs = [(_B, _R), (_T, _L)] if center_above else [(_L, _B), (_R, _T)]
                else:           # b1 and b3 above
                    segs = [(_L, _B), (_R, _T)] if center_above else [(_B, _R), (_T, _L)]
            else:
                segs = _CASE_SEGMENTS[code]
            for s0, s1 in segs:
                add_segment(edges[s0], edges[s1])

    polylines: list[np.ndarray] = []
    closed: list[bool] = []
    visited: set[tuple] = set()

    def walk(start: tuple) -> list[tuple]:
        path = [start]
        visited.add(start)
        prev = None
        node = start
        while True:
            options = [k for k in adjacency[node] if k != prev and k not in visited]
            if not options:
                # A cycle closes when the start node is reachable again.
                if start in adjacency[node] and prev != start and len(path) > 2:
                    path.append(start)
                break
            prev, node = node, options[0]
            visited.add(node)
            path.append(node)
        return path

    # Open paths start at degree-1 crossings (lattice boundary), then any
    # remaining cycles; iteration order is sorted for determinism.
    keys = sorted(adjacency)
    for key in keys:
        if key not in visited and len(adjacency[key]) == 1:
            path = walk(key)
            polylines.append(np.array([edge_point(k) for k in path]))
            closed.append(False)
    for key in keys:
        if key not in visited:
            path = walk(key)
            polylines.append(np.array([edge_point(k) for k in path]))
            closed.append(len(path) > 1 and path[0] == path[-1])

    return ContourSet(level=level, polylines=tuple(polylines),
                      closed=tuple(closed), bounds=bounds)
