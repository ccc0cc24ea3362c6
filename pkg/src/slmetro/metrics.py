"""Length, flatness, height and sphericity criteria plus multi-trial statistics.

Every per-trial criterion yields an :class:`ErrorSamples` set in mm; each set
is reduced to range / mean / standard deviation (population, divisor N) and
the per-trial triples are reduced again across trials into a
:class:`MetricTuple`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .artifact import ArtifactSpec
from .geometry import CameraModel, apply_distortion, normalized_to_pixel, pixel_to_normalized
from .fitting import (
    Circle2,
    DegenerateInput,
    HoughParams,
    Plane,
    PointGrid,
    bilinear_point,
    circle_mask,
    fit_base_plane,
    fit_plane,
    fit_sphere,
    hough_circles,
    mask_circle_regions,
    segment_above_plane,
    signed_heights,
)

CRITERIA = ("length", "flatness", "height", "sphericity")
SUGGESTED_TRIALS = 50


class MetricError(ValueError):
    pass


class EmptySamples(MetricError):
    pass


class EmptyTrials(MetricError):
    pass


class InsufficientMarkers(MetricError):
    pass


class NoBlockFound(MetricError):
    pass


class NoBallsFound(MetricError):
    pass


@dataclass(frozen=True)
class ErrorSamples:
    criterion: str
    values: np.ndarray  # mm

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("error samples must be finite")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class SummaryStats:
    range: float
    mean: float
    std: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MetricTuple:
    mean_of_range: float
    std_of_range: float
    mean_of_mean: float
    std_of_mean: float
    mean_of_std: float | None
    std_of_std: float | None
    trials: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BenchmarkReport:
    metrics: dict[str, MetricTuple | None]  # None -> skipped
    device: str = "virtual"
    config: str = ""
    trials: int = 0
    per_trial: list[dict] = field(default_factory=list)
    decimals: int | None = 2  # None -> shortest faithful rendering

    def to_dict(self) -> dict:
        return {
            "device": self.device,
            "config": self.config,
            "trials": self.trials,
            "decimals": self.decimals,
            "metrics": {k: (None if v is None else v.to_dict()) for k, v in self.metrics.items()},
            "per_trial": self.per_trial,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkReport":
        metrics = {k: (None if v is None else MetricTuple(**v)) for k, v in d["metrics"].items()}
        for c in CRITERIA:
            metrics.setdefault(c, None)
        return cls(
            metrics,
            d.get("device", ""),
            d.get("config", ""),
            int(d.get("trials", 0)),
            list(d.get("per_trial", [])),
            d.get("decimals", 2),
        )


# ---------------------------------------------------------------- statistics


def _stats(values) -> SummaryStats:
    x = np.asarray(values, dtype=float)
    # exactly rounded sum: means of signed errors sit near zero, where
    # ordinary summation loses relative accuracy
    mu = math.fsum(x.tolist()) / len(x)
    std = float(np.sqrt(np.mean((x - mu) ** 2)))
    return SummaryStats(float(np.max(x) - np.min(x)), mu, std, len(x))


def summarize(samples: ErrorSamples) -> SummaryStats:
    if len(samples) == 0:
        raise EmptySamples(f"no {samples.criterion} samples")
    return _stats(samples.values)


def aggregate(trials: list[SummaryStats]) -> MetricTuple:
    """Mean and population std, across trials, of each trial's range, mean and std."""
    if not trials:
        raise EmptyTrials("no trials to aggregate")
    if len(trials) < SUGGESTED_TRIALS:
        warnings.warn(f"only {len(trials)} trials; at least {SUGGESTED_TRIALS} are recommended", stacklevel=2)
    r = _stats([t.range for t in trials])
    m = _stats([t.mean for t in trials])
    s = _stats([t.std for t in trials])
    return MetricTuple(r.mean, r.std, m.mean, m.std, s.mean, s.std, len(trials))


# ---------------------------------------------------------------- markers


def expected_marker_radius_px(grid: PointGrid, spec: ArtifactSpec, focal_px: float) -> float:
    z = np.median(grid.points[grid.valid][:, 2])
    return spec.marker_radius * focal_px / z


def _camera_of(camera) -> CameraModel:
    """Accept a CameraModel or anything carrying one as ``.camera`` (a Calibration)."""
    return camera.camera if hasattr(camera, "camera") else camera


def detect_markers(texture, grid: PointGrid, spec: ArtifactSpec, camera, params: HoughParams | None = None,
                   refine: bool = True) -> list[Circle2]:
    """Hough-detect the dark ring markers at the radius implied by the grid depth.

    Centres are then refined by a distortion-aware darkness centroid.
    """
    cam = _camera_of(camera)
    if not grid.valid.any():
        return []
    focal_px = cam.intrinsics.fu
    r = expected_marker_radius_px(grid, spec, focal_px)
    pitch_px = spec.l_c * focal_px / np.median(grid.points[grid.valid][:, 2])
    if params is None:
        params = HoughParams(polarity="dark", min_dist=0.5 * pitch_px, r_step=max(0.5, r / 20))
    circles = hough_circles(texture, 0.8 * r, 1.2 * r, params)
    if refine:
        circles = [refine_marker_center(texture, c, grid.valid, cam) for c in circles]
    return circles


def refine_marker_center(texture, circle: Circle2, valid=None, camera: CameraModel | None = None,
                         inner: float = 1.25, outer: float = 1.6, iterations: int = 3) -> Circle2:
    """Darkness-weighted centroid of the ink around a Hough centre.

    The background level is the median of the annulus ``[inner, outer] * r``;
    weights are the clipped deficit below it inside ``inner * r``.  With a
    ``camera`` the centroid is taken in undistorted normalized coordinates
    (pixel weights scaled by their undistorted area), so lens distortion
    does not drag the centre of a frontal marker.  Returns the input circle
    when the window leaves the image or touches invalid pixels.
    """
    img = np.asarray(texture, dtype=float)
    h, w = img.shape
    x, y, r = circle.x, circle.y, circle.radius
    half = int(np.ceil(outer * r)) + 1
    for _ in range(iterations):
        xi, yi = int(round(x)), int(round(y))
        if xi - half < 0 or yi - half < 0 or xi + half >= w or yi + half >= h:
            return circle
        ys, xs = np.mgrid[yi - half : yi + half + 1, xi - half : xi + half + 1]
        patch = img[ys, xs]
        d = np.hypot(xs - x, ys - y)
        core = d <= inner * r
        ring = (d > inner * r) & (d <= outer * r)
        if valid is not None and not valid[ys[d <= outer * r], xs[d <= outer * r]].all():
            return circle
        bg = np.median(patch[ring])
        wt = np.clip(bg - patch, 0.0, None) * core
        if wt.sum() <= 0:
            return circle
        if camera is None:
            x, y = float((wt * xs).sum() / wt.sum()), float((wt * ys).sum() / wt.sum())
            continue
        m = pixel_to_normalized(np.stack([xs, ys], axis=-1).astype(float), camera)
        dx_u, dx_v = np.gradient(m[..., 0], axis=1), np.gradient(m[..., 0], axis=0)
        dy_u, dy_v = np.gradient(m[..., 1], axis=1), np.gradient(m[..., 1], axis=0)
        wt = wt * np.abs(dx_u * dy_v - dx_v * dy_u)
        c = (wt[..., None] * m).sum(axis=(0, 1)) / wt.sum()
        x, y = normalized_to_pixel(apply_distortion(c, camera.distortion), camera.intrinsics)
        x, y = float(x), float(y)
    return Circle2(x, y, r, circle.score)


def marker_centers_3d(grid: PointGrid, circles) -> tuple[np.ndarray, list[Circle2]]:
    """Read the grid at each detected subpixel centre (bilinear); drop unreadable ones."""
    pts, kept = [], []
    for c in circles:
        p = bilinear_point(grid, c.x, c.y)
        if p is not None:
            pts.append(p)
            kept.append(c)
    return np.asarray(pts).reshape(-1, 3), kept


def match_marker_layout(P: np.ndarray, spec: ArtifactSpec, tol: float = 0.3) -> np.ndarray:
    """Assign integer (col, row) lattice indices to 3D marker centres.

    The lattice orientation is estimated from nearest-neighbour vectors
    folded modulo 90 degrees; centres are then expressed in lattice units
    relative to one another and rounded.  Fails (InsufficientMarkers) when
    any rounding residual exceeds ``tol`` pitches, indices collide, or the
    occupied extent does not fit the spec layout.
    """
    P = np.asarray(P, dtype=float)
    n = len(P)
    if n < 2:
        raise InsufficientMarkers(f"{n} markers detected, need at least 2")
    lc = spec.l_c
    D = np.linalg.norm(P[:, None] - P[None], axis=-1)
    np.fill_diagonal(D, np.inf)
    nn = np.argmin(D, axis=1)
    vecs = P[nn] - P
    good = np.abs(np.linalg.norm(vecs, axis=1) / lc - 1) < tol
    if not good.any():
        raise InsufficientMarkers("no marker pair near the certified pitch")
    try:
        normal = fit_plane(P).normal
    except DegenerateInput:
        # collinear centres: any normal perpendicular to the line works
        line = vecs[good][0]
        normal = np.cross(line, [0.0, 0.0, 1.0] if abs(line[2]) < 0.9 * np.linalg.norm(line) else [1.0, 0.0, 0.0])
        normal /= np.linalg.norm(normal)
    u0 = vecs[good][0] - (vecs[good][0] @ normal) * normal
    u0 /= np.linalg.norm(u0)
    w0 = np.cross(normal, u0)
    theta = np.arctan2(vecs[good] @ w0, vecs[good] @ u0)
    theta0 = np.angle(np.mean(np.exp(4j * theta))) / 4
    a = np.cos(theta0) * u0 + np.sin(theta0) * w0
    b = np.cross(normal, a)
    rel = P - P[0]
    q = np.column_stack([rel @ a, rel @ b]) / lc
    # make indices relative to the minimum corner, then refine the origin
    idx = np.rint(q - q.min(axis=0)).astype(int)
    offset = np.mean(q - idx, axis=0)
    idx = np.rint(q - offset).astype(int)
    resid = np.abs(q - offset - idx)
    if resid.max() > tol:
        raise InsufficientMarkers(f"marker lattice residual {resid.max():.2f} pitch exceeds {tol}")
    idx -= idx.min(axis=0)
    if len({tuple(i) for i in idx}) != n:
        raise InsufficientMarkers("ambiguous marker assignment (index collision)")
    ext = tuple(idx.max(axis=0) + 1)
    layout = (spec.marker_cols, spec.marker_rows)
    if not (ext[0] <= layout[0] and ext[1] <= layout[1]) and not (ext[0] <= layout[1] and ext[1] <= layout[0]):
        raise InsufficientMarkers(f"detected marker extent {ext} does not fit the {layout} layout")
    return idx


def adjacent_pairs(idx: np.ndarray) -> list[tuple[int, int]]:
    lookup = {tuple(v): i for i, v in enumerate(idx)}
    pairs = []
    for i, v in enumerate(idx):
        for step in ((1, 0), (0, 1)):
            j = lookup.get((v[0] + step[0], v[1] + step[1]))
            if j is not None:
                pairs.append((i, j))
    return pairs


# ---------------------------------------------------------------- criteria


def eval_length(grid: PointGrid, texture, spec: ArtifactSpec, camera, circles=None) -> ErrorSamples:
    """Adjacent marker spacing minus the certified pitch, one sample per pair.

    ``camera`` is the camera model (or calibration) used for detection;
    pass ``circles`` to reuse an earlier detection.
    """
    if circles is None:
        circles = detect_markers(texture, grid, spec, camera)
    P, _ = marker_centers_3d(grid, circles)
    if len(P) < 2:
        raise InsufficientMarkers(f"{len(P)} usable markers, need at least 2")
    idx = match_marker_layout(P, spec)
    pairs = adjacent_pairs(idx)
    if not pairs:
        raise InsufficientMarkers("no horizontally or vertically adjacent marker pair")
    d = np.array([np.linalg.norm(P[i] - P[j]) for i, j in pairs])
    return ErrorSamples("length", d - spec.l_c)


def flatness_residuals(grid: PointGrid, circles, radius_factor: float = 1.2, min_points: int = 100):
    """Signed residuals of the marker-masked flat about its fitted plane."""
    masked = mask_circle_regions(grid, circles, radius_factor)
    pts = masked.valid_points()
    if len(pts) < min_points:
        raise DegenerateInput(f"{len(pts)} flat points after masking, need {min_points}")
    pl = fit_plane(pts)
    return pl.signed_distance(pts), pl


def eval_flatness(grid: PointGrid, circles, spec: ArtifactSpec | None = None, radius_factor: float = 1.2) -> ErrorSamples:
    """Orthogonal distance of every unmasked flat point to the least-squares plane."""
    res, _ = flatness_residuals(grid, circles, radius_factor)
    return ErrorSamples("flatness", np.abs(res))


def _in_plane_extent(points: np.ndarray, pl: Plane) -> np.ndarray:
    """Sorted (descending) side lengths of the principal in-plane bounding box."""
    q = points - np.outer(pl.signed_distance(points), pl.normal)
    q -= q.mean(axis=0)
    _, _, vt = np.linalg.svd(q, full_matrices=False)
    coords = q @ vt[:2].T
    return np.sort(np.ptp(coords, axis=0))[::-1]


def eval_height(
    grid: PointGrid,
    circles,
    spec: ArtifactSpec,
    radius_factor: float = 1.2,
    height_threshold: float = 0.1,
    edge_margin: int = 2,
    footprint_tol: float = 0.35,
) -> ErrorSamples:
    """Block-top distance to the flat's plane minus the certified height.

    The flat plane is fitted without the markers and without the block (its
    component dilated by ``edge_margin`` pixels).  Block-top points are the
    component eroded by ``edge_margin`` pixels, which drops side walls.
    """
    ink = circle_mask(grid.valid.shape, circles, radius_factor) if circles else None
    pl = fit_base_plane(grid, height_threshold, exclude=ink)
    block = None
    want = np.sort(np.asarray(spec.block_size))[::-1]
    for comp in segment_above_plane(grid, pl, height_threshold):
        if comp.sum() < 10:
            break
        ext = _in_plane_extent(grid.points[comp], pl)
        if np.all(np.abs(ext / want - 1) < footprint_tol):
            block = comp
            break
    if block is None:
        raise NoBlockFound("no raised component matches the gauge block footprint")
    structure = np.ones((3, 3), dtype=bool)
    grown = ndimage.binary_dilation(block, structure, iterations=edge_margin + 1)
    excl = grown if ink is None else grown | ink
    pl = fit_base_plane(grid, height_threshold, exclude=excl)
    top = ndimage.binary_erosion(block, structure, iterations=edge_margin) & grid.valid
    h = signed_heights(grid, pl)
    top &= np.nan_to_num(h) > 0.5 * spec.h_c
    if top.sum() == 0:
        raise NoBlockFound("gauge block has no interior top-face points")
    return ErrorSamples("height", np.abs(h[top]) - spec.h_c)


def eval_sphericity(
    grid: PointGrid, spec: ArtifactSpec, height_threshold: float = 0.1, min_points: int = 50, edge_margin: int = 2
) -> ErrorSamples:
    """Fitted radius minus certified radius for every ball segmented above the flat.

    Each ball component loses an ``edge_margin``-pixel rim before fitting:
    silhouette pixels see the surface at grazing incidence and, after any
    neighbourhood filter, blend with the flat behind the ball.
    """
    pl = fit_base_plane(grid, height_threshold)
    radii = []
    max_extent = 2.6 * spec.r_c
    structure = np.ones((3, 3), dtype=bool)
    for comp in segment_above_plane(grid, pl, height_threshold):
        if comp.sum() < min_points:
            break
        if _in_plane_extent(grid.points[comp], pl)[0] > max_extent:
            continue
        core = ndimage.binary_erosion(comp, structure, iterations=edge_margin) if edge_margin else comp
        if core.sum() < min_points:
            continue
        try:
            radii.append(fit_sphere(grid.points[core]).radius)
        except DegenerateInput:
            continue
    if not radii:
        raise NoBallsFound("no ball-sized component above the flat")
    return ErrorSamples("sphericity", np.asarray(radii) - spec.r_c)


def coplanarity_range(points) -> tuple[float, Plane]:
    """Max minus min signed distance of the points from their own fitted plane."""
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    pl = fit_plane(P)
    s = pl.signed_distance(P)
    return float(s.max() - s.min()), pl


def pin_tips_from_grid(grid: PointGrid, height_threshold: float = 0.1, edge_margin: int = 1, min_points: int = 4):
    """Tip points (mean of each eroded pin-top component) of pins above the flat."""
    pl = fit_base_plane(grid, height_threshold)
    h = signed_heights(grid, pl)
    tips = []
    structure = np.ones((3, 3), dtype=bool)
    for comp in segment_above_plane(grid, pl, height_threshold):
        top = comp
        if edge_margin:
            eroded = ndimage.binary_erosion(comp, structure, iterations=edge_margin)
            if eroded.sum() >= min_points:
                top = eroded
        hv = h[top]
        top_pts = grid.points[top][hv > 0.5 * np.max(hv)]
        if len(top_pts) >= min_points:
            tips.append(top_pts.mean(axis=0))
    return np.asarray(tips).reshape(-1, 3)


def passes_coplanarity(range_mm: float, tolerance_um: float = 10.0) -> bool:
    return range_mm * 1e3 < tolerance_um


# ---------------------------------------------------------------- reporting

ROW_LABELS = {"length": "E_d", "flatness": "E_p", "height": "E_h", "sphericity": "E_s"}
COLUMNS = ("mean_of_range", "std_of_range", "mean_of_mean", "std_of_mean")
HEADERS = ("μ(R)", "σ(R)", "μ(μ)", "σ(μ)")


def _fmt(value_mm: float, decimals: int | None) -> str:
    um = value_mm * 1e3
    if decimals is None:
        # shortest rendering that round-trips at micrometre precision
        return format(float(f"{um:.6g}"), "g")
    return f"{um:.{decimals}f}"


def render_report(report: BenchmarkReport) -> tuple[str, str]:
    """Aligned text table and CSV, all values in μm.

    Mean columns carry a ``μm`` suffix, spread columns are bare numbers;
    criteria without trials render as ``skipped``.
    """
    dec = report.decimals
    rows = []
    csv = ["criterion,mean_of_range_um,std_of_range_um,mean_of_mean_um,std_of_mean_um,trials"]
    for crit in CRITERIA:
        label = ROW_LABELS[crit]
        mt = report.metrics.get(crit)
        if mt is None:
            rows.append([label, "skipped", "skipped", "skipped", "skipped"])
            csv.append(f"{label},skipped,skipped,skipped,skipped,0")
            continue
        vals = [_fmt(getattr(mt, c), dec) for c in COLUMNS]
        rows.append([label, f"{vals[0]} μm", vals[1], f"{vals[2]} μm", vals[3]])
        csv.append(",".join([label, *vals, str(mt.trials)]))
    header = ["", *HEADERS]
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(5)]
    fmt_row = lambda r: " | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
    lines = [fmt_row(header), "-+-".join("-" * w for w in widths)] + [fmt_row(r) for r in rows]
    return "\n".join(lines) + "\n", "\n".join(csv) + "\n"


def table_row_cells(table: str, label: str) -> list[str]:
    """Cells of the row starting with ``label`` in a rendered table."""
    for line in table.splitlines():
        cells = [c.strip() for c in line.split("|")]
        if cells and cells[0] == label:
            return cells
    raise KeyError(label)


def report_from_trials(per_trial: list[dict], device: str = "virtual", config: str = "", decimals: int | None = 2):
    """Build a report from per-trial records ``{"trial": i, "stats": {criterion: SummaryStats}}``."""
    records = sorted(per_trial, key=lambda r: r["trial"])
    metrics: dict[str, MetricTuple | None] = {}
    for crit in CRITERIA:
        stats = [r["stats"][crit] for r in records if r["stats"].get(crit) is not None]
        if not stats:
            metrics[crit] = None
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            metrics[crit] = aggregate(stats)
    audit = [
        {
            "trial": r["trial"],
            "stats": {k: (None if v is None else v.to_dict()) for k, v in r["stats"].items()},
            "errors": r.get("errors", {}),
        }
        for r in records
    ]
    return BenchmarkReport(metrics, device, config, len(records), audit, decimals)


def is_finite_report(report: BenchmarkReport) -> bool:
    return all(
        mt is None or all(math.isfinite(getattr(mt, c)) for c in COLUMNS) for mt in report.metrics.values()
    )
