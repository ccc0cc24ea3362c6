"""Geometric estimators and organized-grid utilities used by the metrics."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage


class DegenerateInput(ValueError):
    pass


@dataclass(frozen=True)
class Plane:
    """``a x + b y + c z + d = 0`` with unit normal (d in mm)."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        n = np.linalg.norm([self.a, self.b, self.c])
        if abs(n - 1.0) > 1e-12:
            raise ValueError(f"plane normal must be unit length, |n| = {n}")

    @classmethod
    def from_normal(cls, normal, d: float) -> "Plane":
        n = np.asarray(normal, dtype=float)
        s = np.linalg.norm(n)
        return cls(*(n / s), float(d) / s)

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal + self.d

    def flipped(self) -> "Plane":
        return Plane(-self.a, -self.b, -self.c, -self.d)

    def transformed(self, R, t) -> "Plane":
        """Plane carried along by the rigid motion ``x -> R x + t``."""
        n = np.asarray(R) @ self.normal
        return Plane.from_normal(n, self.d - n @ np.asarray(t))


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")


@dataclass(frozen=True)
class Circle2:
    x: float
    y: float
    radius: float
    score: float = 0.0

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class PointGrid:
    """One 3D point per camera pixel; ``points[row, col]``; invalid -> NaN."""

    points: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        valid = np.array(self.valid, dtype=bool)
        if pts.shape != valid.shape + (3,):
            raise ValueError(f"points {pts.shape} and mask {valid.shape} disagree")
        valid &= np.all(np.isfinite(pts), axis=-1)
        pts[~valid] = np.nan
        pts.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    def valid_points(self, mask=None) -> np.ndarray:
        m = self.valid if mask is None else (self.valid & mask)
        return self.points[m]

    def with_mask(self, keep) -> "PointGrid":
        """Grid whose validity is ``valid & keep`` (never re-validates)."""
        return replace(self, valid=self.valid & np.asarray(keep, dtype=bool))

    def transformed(self, R, t) -> "PointGrid":
        return PointGrid(self.points @ np.asarray(R).T + np.asarray(t), self.valid)


# ---------------------------------------------------------------- planes


def fit_plane(points, min_count: int = 3, reference=(0.0, 0.0, 0.0)) -> Plane:
    """Orthogonal-distance least-squares plane.

    The normal is the right singular vector of the centred points with the
    smallest singular value.  It is oriented so that ``reference`` (by
    default the camera origin) has non-negative signed distance; pass
    ``reference=None`` to keep the raw SVD orientation.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(P) < max(3, min_count):
        raise DegenerateInput(f"need at least {max(3, min_count)} points, got {len(P)}")
    c = P.mean(axis=0)
    _, s, vt = np.linalg.svd(P - c, full_matrices=False)
    if s[0] == 0 or s[1] <= 1e-12 * s[0]:
        raise DegenerateInput("points are collinear or coincident")
    n = vt[2]
    plane = Plane.from_normal(n, -n @ c)
    if reference is not None and plane.signed_distance(reference) < 0:
        plane = plane.flipped()
    return plane


def point_plane_distance(p, pl: Plane) -> np.ndarray:
    return np.abs(pl.signed_distance(p))


# ---------------------------------------------------------------- spheres


def _sphere_algebraic(P: np.ndarray):
    A = np.column_stack([2 * P, np.ones(len(P))])
    b = np.sum(P * P, axis=1)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    c = sol[:3]
    r2 = sol[3] + c @ c
    return c, np.sqrt(max(r2, 0.0))


def _sphere_cost(P, c, r):
    res = np.linalg.norm(P - c, axis=1) - r
    return res @ res


def fit_sphere(points, gtol: float = 1e-10, max_iter: int = 200) -> Sphere:
    """Algebraic initialization refined by damped Gauss-Newton on orthogonal residuals.

    The algebraic stage solves the linear system in ``(2c, |c|^2 - r^2)``;
    refinement minimises ``sum (|p - c| - r)^2`` until the gradient norm is
    below ``gtol`` (relative to the data scale).  The refined result is
    never worse than the algebraic one.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(P) < 4:
        raise DegenerateInput(f"need at least 4 points, got {len(P)}")
    origin = P.mean(axis=0)
    Q = P - origin
    scale = np.sqrt(np.mean(np.sum(Q * Q, axis=1)))
    if scale == 0:
        raise DegenerateInput("points are coincident")
    Q = Q / scale
    s = np.linalg.svd(Q, compute_uv=False)
    if s[2] <= 1e-9 * s[0]:
        raise DegenerateInput("points are coplanar")

    c0, r0 = _sphere_algebraic(Q)
    x = np.append(c0, r0)
    cost0 = cost = _sphere_cost(Q, c0, r0)
    lam = 1e-3
    for _ in range(max_iter):
        diff = Q - x[:3]
        dist = np.linalg.norm(diff, axis=1)
        res = dist - x[3]
        J = np.column_stack([-diff / dist[:, None], -np.ones(len(Q))])
        g = J.T @ res
        if np.linalg.norm(g) < gtol:
            break
        H = J.T @ J
        while True:
            step = np.linalg.solve(H + lam * np.diag(np.diag(H)), -g)
            xn = x + step
            cn = _sphere_cost(Q, xn[:3], xn[3])
            if cn <= cost:
                x, cost = xn, cn
                lam = max(lam / 10, 1e-12)
                break
            lam *= 10
            if lam > 1e12:
                break
        if lam > 1e12 or np.linalg.norm(step) < 1e-15:
            break
    if cost > cost0:
        x = np.append(c0, r0)
    radius = abs(x[3]) * scale
    if not radius > 0:
        raise DegenerateInput("sphere fit collapsed")
    return Sphere(origin + x[:3] * scale, float(radius))


# ---------------------------------------------------------------- Hough


@dataclass(frozen=True)
class HoughParams:
    r_step: float = 1.0
    blur_sigma: float = 1.0
    edge_threshold: float = 0.2  # fraction of the strongest gradient
    min_edge: float = 20.0  # absolute Sobel magnitude floor (8-bit units)
    min_score: float = 0.15  # votes per circumference pixel
    min_dist: float | None = None  # default: r_min
    polarity: str = "both"  # "dark" (dark disk on bright), "bright", "both"
    refine_window: int = 2
    max_circles: int | None = None


def hough_circles(image, r_min: float, r_max: float, params: HoughParams = HoughParams()) -> list[Circle2]:
    """Gradient-voting circular Hough transform.

    Each edge pixel votes along its gradient direction at every radius in
    ``[r_min, r_max]`` (bilinear splatting).  Accumulator peaks whose
    circumference-normalised score exceeds ``min_score`` survive a greedy
    non-maximum suppression at ``min_dist``; centres and radii are refined by
    the vote centroid of the peak neighbourhood.
    """
    if not r_min < r_max:
        raise ValueError("r_min must be below r_max")
    img = np.asarray(image, dtype=float)
    if img.size == 0:
        raise ValueError("empty image")
    h, w = img.shape
    sm = ndimage.gaussian_filter(img, params.blur_sigma) if params.blur_sigma > 0 else img
    gx = ndimage.sobel(sm, axis=1)
    gy = ndimage.sobel(sm, axis=0)
    mag = np.hypot(gx, gy)
    peak_mag = mag.max()
    if peak_mag <= 0:
        return []
    edges = mag >= max(params.min_edge, params.edge_threshold * peak_mag)
    if not edges.any():
        return []
    ys, xs = np.nonzero(edges)
    weight = mag[ys, xs] / peak_mag
    dx = gx[ys, xs] / mag[ys, xs]
    dy = gy[ys, xs] / mag[ys, xs]
    signs = {"dark": (-1.0,), "bright": (1.0,), "both": (-1.0, 1.0)}[params.polarity]
    radii = np.arange(r_min, r_max + 1e-9, params.r_step)
    acc = np.zeros((len(radii), h, w))
    for ri, r in enumerate(radii):
        for sgn in signs:
            cx = xs + sgn * r * dx
            cy = ys + sgn * r * dy
            _splat(acc[ri], cx, cy, weight)
    acc = ndimage.gaussian_filter(acc, (0.5, 0.7, 0.7))
    score = acc / (2 * np.pi * radii)[:, None, None]

    # peaks of the best-radius map, suppressed within min_dist
    min_dist = params.min_dist if params.min_dist is not None else float(r_min)
    best = score.max(axis=0)
    best_r = score.argmax(axis=0)
    # square window keeps the filter separable; the greedy pass below applies the exact distance
    size = 2 * max(1, int(np.floor(min_dist / np.sqrt(2)))) + 1
    local_max = best == ndimage.maximum_filter(best, size=size, mode="constant")
    ys_c, xs_c = np.nonzero(local_max & (best >= params.min_score))
    if len(ys_c) == 0:
        return []
    vals = best[ys_c, xs_c]
    order = np.argsort(-vals, kind="stable")
    kept: list[Circle2] = []
    win = params.refine_window
    for idx in order:
        y, x = ys_c[idx], xs_c[idx]
        ri = best_r[y, x]
        if any((c.x - x) ** 2 + (c.y - y) ** 2 < min_dist**2 for c in kept):
            continue
        r0, r1 = max(ri - 1, 0), min(ri + 2, len(radii))
        y0, y1 = max(y - win, 0), min(y + win + 1, h)
        x0, x1 = max(x - win, 0), min(x + win + 1, w)
        patch = score[r0:r1, y0:y1, x0:x1]
        patch = np.clip(patch - 0.5 * score[ri, y, x], 0, None)
        tot = patch.sum()
        rr, yy, xx = np.meshgrid(radii[r0:r1], np.arange(y0, y1), np.arange(x0, x1), indexing="ij")
        c = Circle2(
            float((xx * patch).sum() / tot),
            float((yy * patch).sum() / tot),
            float((rr * patch).sum() / tot),
            float(vals[idx]),
        )
        kept.append(c)
        if params.max_circles and len(kept) >= params.max_circles:
            break
    return kept


def _splat(acc: np.ndarray, x: np.ndarray, y: np.ndarray, w: np.ndarray) -> None:
    h, wd = acc.shape
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    fx = x - x0
    fy = y - y0
    for ox, oy, ww in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)), (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + ox, y0 + oy
        ok = (xi >= 0) & (xi < wd) & (yi >= 0) & (yi < h)
        np.add.at(acc, (yi[ok], xi[ok]), (w * ww)[ok])


# ---------------------------------------------------------------- grid utilities


def circle_mask(shape, circles, radius_factor: float = 1.0) -> np.ndarray:
    """Boolean image that is True within ``radius_factor * r`` of any circle."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    m = np.zeros(shape, dtype=bool)
    for c in circles:
        r = radius_factor * c.radius
        y0, y1 = max(int(np.floor(c.y - r)), 0), min(int(np.ceil(c.y + r)) + 1, h)
        x0, x1 = max(int(np.floor(c.x - r)), 0), min(int(np.ceil(c.x + r)) + 1, w)
        if y0 >= y1 or x0 >= x1:
            continue
        sub = (xx[y0:y1, x0:x1] - c.x) ** 2 + (yy[y0:y1, x0:x1] - c.y) ** 2 <= r * r
        m[y0:y1, x0:x1] |= sub
    return m


def mask_circle_regions(grid: PointGrid, circles, radius_factor: float = 1.2) -> PointGrid:
    """Invalidate grid pixels inside any detected image circle, grown by ``radius_factor``.

    The circles are image-space detections, and the grid is organized by the
    same camera pixels, so the mask is applied pixel-for-pixel.
    """
    if radius_factor < 1:
        raise ValueError("radius_factor must be >= 1")
    if not circles:
        return grid
    return grid.with_mask(~circle_mask(grid.valid.shape, circles, radius_factor))


def signed_heights(grid: PointGrid, pl: Plane) -> np.ndarray:
    """Signed distance of every grid point from ``pl`` (NaN where invalid)."""
    return np.where(grid.valid, pl.signed_distance(np.nan_to_num(grid.points)), np.nan)


def segment_above_plane(
    grid: PointGrid, pl: Plane, height_threshold: float = 0.1, bridge: int = 1
) -> list[np.ndarray]:
    """8-connected components of valid pixels lying more than the threshold above ``pl``.

    Pixels are linked across gaps of up to ``2 * bridge`` invalid pixels, so a
    one-pixel decode dropout along a stripe edge does not split an object in
    two.  Masks still hold only valid above-threshold pixels.  Returns boolean
    pixel masks sorted by component size, largest first.
    Use ``grid.points[mask]`` for the member points.
    """
    if not height_threshold > 0:
        raise ValueError("height_threshold must be positive")
    if bridge < 0:
        raise ValueError("bridge must be >= 0")
    h = signed_heights(grid, pl)
    above = grid.valid & (np.nan_to_num(h, nan=-np.inf) > height_threshold)
    structure = np.ones((3, 3), dtype=bool)
    linked = ndimage.binary_dilation(above, structure, iterations=bridge) if bridge else above
    labels, n = ndimage.label(linked, structure=structure)
    if n == 0:
        return []
    labels = np.where(above, labels, 0)
    sizes = ndimage.sum_labels(above, labels, index=np.arange(1, n + 1))
    order = [i for i in np.argsort(-sizes, kind="stable") if sizes[i] > 0]
    return [labels == (i + 1) for i in order]


def fit_base_plane(grid: PointGrid, height_threshold: float = 0.1, iterations: int = 10, exclude=None) -> Plane:
    """Plane of the supporting flat, ignoring objects standing on it.

    Starts from all valid points and repeatedly refits on the points that are
    not more than ``height_threshold`` above the current plane, then finishes
    with a symmetric band ``|h| <= height_threshold``.
    """
    keep = grid.valid.copy() if exclude is None else grid.valid & ~exclude
    pts = np.nan_to_num(grid.points)
    pl = fit_plane(pts[keep])
    for _ in range(iterations):
        h = pl.signed_distance(pts)
        new = keep & (h <= height_threshold)
        if new.sum() < 3:
            break
        pl_new = fit_plane(pts[new])
        converged = np.array_equal(new, keep) or abs(pl_new.d - pl.d) < 1e-13
        pl, keep = pl_new, new
        if converged:
            break
    h = pl.signed_distance(pts)
    band = grid.valid & (np.abs(h) <= height_threshold)
    if exclude is not None:
        band &= ~exclude
    return fit_plane(pts[band])


def bilinear_point(grid: PointGrid, x: float, y: float) -> np.ndarray | None:
    """Interpolate the grid at subpixel ``(x = column, y = row)``.

    Returns None unless all four neighbouring pixels are valid.
    """
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    if x0 < 0 or y0 < 0 or x0 + 1 >= grid.width or y0 + 1 >= grid.height:
        return None
    if not grid.valid[y0 : y0 + 2, x0 : x0 + 2].all():
        return None
    fx, fy = x - x0, y - y0
    P = grid.points
    return (
        P[y0, x0] * (1 - fx) * (1 - fy)
        + P[y0, x0 + 1] * fx * (1 - fy)
        + P[y0 + 1, x0] * (1 - fx) * fy
        + P[y0 + 1, x0 + 1] * fx * fy
    )
