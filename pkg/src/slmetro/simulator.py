"""Ground-truth scenes and a ray-cast camera/projector simulator.

Scenes are described in an artifact-local frame: the flat's top face is
``z = 0`` and solids stand on it along ``+z`` (towards the camera).  A scene
pose maps local coordinates into the camera frame.

Rendering model: one ray per camera pixel centre, nearest hit wins, constant
albedo (flat vs. marker ink), no inter-reflection.  A hit is lit only if it
faces the projector, is not shadowed, and projects inside the projector
image; unlit pixels are black and therefore decode-invalid.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .artifact import ArtifactSpec
from .calibration import Calibration
from .codec import PatternStack
from .fitting import PointGrid
from .geometry import (
    CameraModel,
    Distortion,
    Intrinsics,
    LaserPlane,
    Pose,
    homogeneous,
    look_at,
    pixel_to_normalized,
    project_camera_frame,
    rotation_matrix,
)

KINDS = ("flat", "block", "balls", "pins")
REFERENCE_DISTANCE = 200.0  # mm, camera to flat at zero offset
WORKING_RANGE = (-10.0, 10.0)  # mm, depth offsets around the reference


class SimulationError(ValueError):
    pass


class OutOfWorkingRange(SimulationError):
    pass


class InvalidKernel(SimulationError):
    pass


# ---------------------------------------------------------------- device


def virtual_device(scale: str = "quarter") -> Calibration:
    """Camera 2448x2048 (or 612x512 at quarter scale) + 1280x720 projector.

    The projector sits 100 mm to the camera's right and converges on the
    optical axis at the reference distance.
    """
    cam = CameraModel(
        Intrinsics(8000.0, 8000.0, 1223.5, 1023.5, 0.0),
        Distortion(k1=-0.08, k2=0.05, p1=2e-4, p2=-1e-4),
        (2448, 2048),
    )
    if scale == "quarter":
        cam = cam.scaled(0.25)
    elif scale != "full":
        raise ValueError(f"scale must be 'full' or 'quarter', got {scale!r}")
    proj = CameraModel(
        Intrinsics(2600.0, 2600.0, 639.5, 359.5, 0.0),
        Distortion(k1=0.03, k2=0.0),
        (1280, 720),
    )
    pose = look_at((100.0, 0.0, 0.0), (0.0, 0.0, REFERENCE_DISTANCE))
    return Calibration(cam, proj, pose)


# ---------------------------------------------------------------- scenes


@dataclass(frozen=True)
class NoiseModel:
    sigma_z: float = 0.0  # mm
    sigma_I: float = 0.0  # 8-bit counts
    outlier_rate: float = 0.0
    smoothing: int | None = None  # box kernel applied to output grids
    seed: int = 0

    def __post_init__(self):
        if self.sigma_z < 0 or self.sigma_I < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not 0 <= self.outlier_rate < 1:
            raise ValueError("outlier_rate must lie in [0, 1)")
        if self.smoothing is not None:
            check_kernel(self.smoothing)

    def with_seed(self, seed: int) -> "NoiseModel":
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class Scene:
    kind: str
    pose: Pose  # local -> camera
    flat_size: tuple[float, float]
    markers: np.ndarray  # (n, 2) ink centres
    marker_radius: float
    marker_ring_width: float | None
    block: tuple[float, float, float, float, float] | None = None  # x0, x1, y0, y1, height
    sphere_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    sphere_radius: float = 0.0
    pin_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    pin_radius: float = 0.0
    pin_heights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    flat_albedo: float = 0.9
    ink_albedo: float = 0.2

    def base_plane(self):
        """The flat's top face in the camera frame, normal towards the camera."""
        from .fitting import Plane

        n = self.pose.R[:, 2]
        return Plane.from_normal(n, -n @ self.pose.T)

    def local_to_camera(self, p) -> np.ndarray:
        return self.pose.apply(p)

    def pin_tips(self) -> np.ndarray:
        """Pin tip centres in the camera frame."""
        local = np.column_stack([self.pin_centers, self.pin_heights])
        return self.local_to_camera(local)


def _orthogonal_offsets(xy: np.ndarray, spread: float, rng: np.random.Generator) -> np.ndarray:
    """Height offsets orthogonal to ``span{1, x, y}`` with ``max - min == spread``.

    The orthogonality makes the least-squares plane through the tips
    coincide with the nominal tip plane, so the coplanarity range equals the
    injected spread exactly.
    """
    if spread == 0 or len(xy) < 4:
        return np.zeros(len(xy))
    A = np.column_stack([np.ones(len(xy)), xy])
    Q, _ = np.linalg.qr(A)
    for _ in range(100):
        v = rng.standard_normal(len(xy))
        v -= Q @ (Q.T @ v)
        if np.ptp(v) > 1e-9:
            return v * (spread / np.ptp(v))
    raise SimulationError("could not construct pin offsets")


def build_scene(
    spec: ArtifactSpec,
    depth_offset: float = 0.0,
    pose_jitter: tuple[float, float, float] = (0.0, 0.0, 0.0),
    kind: str = "flat",
    working_range: tuple[float, float] = WORKING_RANGE,
    seed: int = 0,
    tilt_deg: float = 0.0,
    reference_distance: float = REFERENCE_DISTANCE,
) -> Scene:
    """Place the artifact ``kind`` at ``depth_offset`` from the reference distance.

    ``pose_jitter`` is ``(dx mm, dy mm, rotation deg)`` applied in the plane
    of the flat.  ``seed`` only drives the pin-height pattern.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    lo, hi = working_range
    if not lo <= depth_offset <= hi:
        raise OutOfWorkingRange(f"depth offset {depth_offset} mm outside working range [{lo}, {hi}]")
    dx, dy, rot = pose_jitter
    R0 = np.diag([1.0, -1.0, -1.0])
    R = R0 @ rotation_matrix((0, 0, 1), np.radians(rot))
    if tilt_deg:
        R = R @ rotation_matrix((1, 0, 0), np.radians(tilt_deg))
    T = np.array([0.0, 0.0, reference_distance + depth_offset]) + R0 @ np.array([dx, dy, 0.0])
    kw: dict = {}
    if kind == "block":
        (bx, by), (sx, sy) = spec.block_center, spec.block_size
        kw["block"] = (bx - sx / 2, bx + sx / 2, by - sy / 2, by + sy / 2, spec.h_c)
    elif kind == "balls":
        xy = np.asarray(spec.ball_positions[: spec.ball_count], dtype=float)
        kw["sphere_centers"] = np.column_stack([xy, np.full(len(xy), spec.r_c)])
        kw["sphere_radius"] = spec.r_c
    elif kind == "pins":
        xy = spec.pin_positions()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E37]))
        kw["pin_centers"] = xy
        kw["pin_radius"] = spec.pin_radius
        kw["pin_heights"] = spec.pin_height + _orthogonal_offsets(xy, spec.pin_spread, rng)
    markers = spec.marker_positions() if kind != "pins" else np.zeros((0, 2))
    return Scene(
        kind=kind,
        pose=Pose(R, T),
        flat_size=spec.flat_size,
        markers=markers,
        marker_radius=spec.marker_radius,
        marker_ring_width=spec.marker_ring_width,
        **kw,
    )


# ---------------------------------------------------------------- ray casting

SURF_NONE, SURF_FLAT, SURF_BLOCK, SURF_SPHERE, SURF_PIN = 0, 1, 2, 3, 4


def _intersect(scene: Scene, o: np.ndarray, d: np.ndarray, include_flat: bool = True):
    """Nearest positive hit of rays ``o + t d`` with the local-frame scene.

    ``o`` broadcasts against ``d`` (shape ``(N, 3)``).  Returns ``(t, normal,
    surface_id)`` with ``t = inf`` on a miss.
    """
    n = len(d)
    single_origin = np.ndim(o) == 1
    o = np.broadcast_to(o, d.shape)
    t_best = np.full(n, np.inf)
    nrm = np.zeros((n, 3))
    sid = np.zeros(n, dtype=np.int8)
    eps = 1e-9

    def take(t, normal, surf):
        better = (t > eps) & (t < t_best)
        t_best[better] = t[better]
        nrm[better] = normal[better] if np.ndim(normal) == 2 else normal
        sid[better] = surf

    with np.errstate(divide="ignore", invalid="ignore"):
        if include_flat:
            t = -o[:, 2] / d[:, 2]
            p = o + t[:, None] * d
            hw, hh = scene.flat_size[0] / 2, scene.flat_size[1] / 2
            ok = (np.abs(p[:, 0]) <= hw) & (np.abs(p[:, 1]) <= hh) & (d[:, 2] < 0)
            take(np.where(ok, t, np.inf), np.array([0.0, 0.0, 1.0]), SURF_FLAT)

        if scene.block is not None:
            x0, x1, y0, y1, hz = scene.block
            lo = np.array([x0, y0, 0.0])
            hi = np.array([x1, y1, hz])
            inv = 1.0 / d
            ta = (lo - o) * inv
            tb = (hi - o) * inv
            tmin = np.minimum(ta, tb)
            tmax = np.maximum(ta, tb)
            t_near = np.nanmax(tmin, axis=1)
            t_far = np.nanmin(tmax, axis=1)
            ok = (t_near <= t_far) & (t_far > eps)
            axis = np.nanargmax(tmin, axis=1)
            normal = np.zeros((n, 3))
            normal[np.arange(n), axis] = -np.sign(d[np.arange(n), axis])
            take(np.where(ok, t_near, np.inf), normal, SURF_BLOCK)

        if len(scene.sphere_centers):
            r = scene.sphere_radius
            dd = np.einsum("ij,ij->i", d, d)
            for c in scene.sphere_centers:
                if single_origin:
                    oc = o[0] - c
                    b = d @ oc
                    cc = oc @ oc - r * r
                else:
                    oc = o - c
                    b = np.einsum("ij,ij->i", oc, d)
                    cc = np.einsum("ij,ij->i", oc, oc) - r * r
                disc = b * b - dd * cc
                # only rays that meet the sphere need the rest
                idx = np.nonzero(disc >= 0)[0]
                if not len(idx):
                    continue
                bi, ddi, sq = b[idx], dd[idx], np.sqrt(disc[idx])
                t1 = (-bi - sq) / ddi
                t2 = (-bi + sq) / ddi
                ti = np.where(t1 > eps, t1, t2)
                t = np.full(n, np.inf)
                t[idx] = ti
                normal = np.zeros((n, 3))
                normal[idx] = (o[idx] + ti[:, None] * d[idx] - c) / r
                take(t, normal, SURF_SPHERE)

        for (cx, cy), h in zip(scene.pin_centers, scene.pin_heights):
            r = scene.pin_radius
            # top disk
            t = (h - o[:, 2]) / d[:, 2]
            p = o + t[:, None] * d
            ok = ((p[:, 0] - cx) ** 2 + (p[:, 1] - cy) ** 2 <= r * r) & (d[:, 2] < 0)
            take(np.where(ok, t, np.inf), np.array([0.0, 0.0, 1.0]), SURF_PIN)
            # side wall
            ox, oy = o[:, 0] - cx, o[:, 1] - cy
            a = d[:, 0] ** 2 + d[:, 1] ** 2
            b = ox * d[:, 0] + oy * d[:, 1]
            c = ox * ox + oy * oy - r * r
            disc = b * b - a * c
            sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
            t1 = (-b - sq) / a
            t2 = (-b + sq) / a
            t = np.where(t1 > eps, t1, t2)
            z = o[:, 2] + t * d[:, 2]
            ok = (disc >= 0) & (z >= 0) & (z <= h)
            t = np.where(ok, t, np.inf)
            p = o + np.nan_to_num(t, posinf=0)[:, None] * d
            normal = np.column_stack([(p[:, 0] - cx) / r, (p[:, 1] - cy) / r, np.zeros(n)])
            take(t, normal, SURF_PIN)
    return t_best, nrm, sid


@dataclass(frozen=True)
class TraceResult:
    """Per-ray trace output; arrays share the leading shape of the query."""

    hit: np.ndarray
    points: np.ndarray  # camera frame, NaN on miss
    proj_uv: np.ndarray  # projector pixel of the hit, NaN when not projectable
    lit: np.ndarray  # hit, facing the projector, unshadowed, inside its image
    ink: np.ndarray
    surface: np.ndarray

    @property
    def proj_col(self) -> np.ndarray:
        return self.proj_uv[..., 0]


def _ink(scene: Scene, p_local: np.ndarray, on_flat: np.ndarray) -> np.ndarray:
    ink = np.zeros(len(p_local), dtype=bool)
    if not len(scene.markers):
        return ink
    idx = np.nonzero(on_flat)[0]
    xy = p_local[idx, :2]
    ro = scene.marker_radius
    ri = 0.0 if scene.marker_ring_width is None else ro - scene.marker_ring_width
    # markers never overlap, so the nearest centre decides
    dist = _marker_distance(scene, xy)
    ink[idx] = (dist <= ro) & (dist >= ri)
    return ink


def _marker_distance(scene: Scene, xy: np.ndarray) -> np.ndarray:
    d2 = np.full(len(xy), np.inf)
    x, y = xy[:, 0], xy[:, 1]
    for mx, my in scene.markers:
        np.minimum(d2, (x - mx) ** 2 + (y - my) ** 2, out=d2)
    return np.sqrt(d2)


def trace_rays(scene: Scene, calib: Calibration, xy_norm: np.ndarray) -> TraceResult:
    """Trace camera rays given as undistorted normalized coordinates."""
    shape = xy_norm.shape[:-1]
    rays_cam = homogeneous(xy_norm.reshape(-1, 2))
    Rs, Ts = scene.pose.R, scene.pose.T
    o_local = -Rs.T @ Ts
    d_local = rays_cam @ Rs  # R^T applied to each ray
    t, nrm, sid = _intersect(scene, o_local, d_local)
    hit = np.isfinite(t)
    tt = np.where(hit, t, np.nan)
    p_local = o_local + tt[:, None] * d_local
    # d has unit z in the camera frame, so t is the camera depth
    points = rays_cam * tt[:, None]

    ink = _ink(scene, p_local, hit & (sid == SURF_FLAT))

    lit = hit.copy()
    proj_uv = np.full((len(t), 2), np.nan)
    if calib.projector is not None:
        centre_local = Rs.T @ (calib.pose.center - Ts)
        to_proj = centre_local - p_local
        facing = np.einsum("ij,ij->i", nrm, to_proj) > 0
        lit &= facing
        idx = np.nonzero(lit)[0]
        if len(idx):
            origin = p_local[idx] + 1e-7 * nrm[idx]
            ts, _, _ = _intersect(scene, origin, to_proj[idx], include_flat=False)
            lit[idx[ts < 1.0]] = False
        pp = calib.pose.apply(np.nan_to_num(points))
        uv, front = project_camera_frame(pp, calib.projector)
        W, H = calib.projector.resolution
        inside = front & (uv[:, 0] >= 0) & (uv[:, 0] <= W - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= H - 1)
        proj_uv = np.where((hit & front)[:, None], uv, np.nan)
        lit &= inside
    return TraceResult(
        hit.reshape(shape),
        points.reshape(shape + (3,)),
        proj_uv.reshape(shape + (2,)),
        lit.reshape(shape),
        ink.reshape(shape),
        sid.reshape(shape),
    )


def pixel_grid(cam: CameraModel) -> np.ndarray:
    """``(height, width, 2)`` array of pixel-centre coordinates ``(u, v)``."""
    v, u = np.mgrid[0 : cam.height, 0 : cam.width]
    return np.stack([u, v], axis=-1).astype(float)


def trace_pixels(scene: Scene, calib: Calibration, pixels) -> TraceResult:
    pix = np.asarray(pixels, dtype=float)
    return trace_rays(scene, calib, pixel_to_normalized(pix, calib.camera))


@lru_cache(maxsize=8)
def normalized_pixel_grid(cam: CameraModel) -> np.ndarray:
    """Undistorted normalized coordinates of every pixel centre (read-only, cached)."""
    m = pixel_to_normalized(pixel_grid(cam), cam)
    m.setflags(write=False)
    return m


def trace_image(scene: Scene, calib: Calibration) -> TraceResult:
    return trace_rays(scene, calib, normalized_pixel_grid(calib.camera))


def trace_pixel(scene: Scene, calib: Calibration, pixel):
    """Trace a single pixel: ``(point, projector_column, ink)`` or None on a miss."""
    r = trace_pixels(scene, calib, np.asarray(pixel, dtype=float)[None])
    if not r.hit[0]:
        return None
    return r.points[0], float(r.proj_col[0]), bool(r.ink[0])


# ---------------------------------------------------------------- rendering


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by seed and stream ids."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def _albedo(scene: Scene, tr: TraceResult) -> np.ndarray:
    return np.where(tr.ink, scene.ink_albedo, scene.flat_albedo)


class _BilinearSampler:
    """Bilinear lookup of projector frames at fixed projector coordinates."""

    def __init__(self, uv: np.ndarray, ok: np.ndarray, shape: tuple[int, int]):
        H, W = shape
        self.ok = ok
        u, v = uv[ok, 0], uv[ok, 1]
        self.u0 = np.clip(np.floor(u).astype(int), 0, W - 2)
        self.v0 = np.clip(np.floor(v).astype(int), 0, H - 2)
        self.fu = u - self.u0
        self.fv = v - self.v0

    def __call__(self, frame: np.ndarray) -> np.ndarray:
        out = np.zeros(self.ok.shape)
        if not self.ok.any():
            return out
        f = np.asarray(frame, dtype=float)
        u0, v0, fu, fv = self.u0, self.v0, self.fu, self.fv
        if np.all(f == f[0]):
            # column-only pattern: the row interpolation is trivial
            row = f[0]
            out[self.ok] = row[u0] * (1 - fu) + row[u0 + 1] * fu
            return out
        out[self.ok] = (
            f[v0, u0] * (1 - fu) * (1 - fv)
            + f[v0, u0 + 1] * fu * (1 - fv)
            + f[v0 + 1, u0] * (1 - fu) * fv
            + f[v0 + 1, u0 + 1] * fu * fv
        )
        return out


def _sample_bilinear(frame: np.ndarray, uv: np.ndarray, ok: np.ndarray) -> np.ndarray:
    return _BilinearSampler(uv, ok, np.shape(frame))(frame)


def _texture(scene: Scene, calib: Calibration, tr: TraceResult, supersample: int) -> np.ndarray:
    tex = np.where(tr.lit, 255.0 * _albedo(scene, tr), 0.0)
    if supersample <= 1 or not len(scene.markers):
        return tex
    # anti-alias marker edges: resample pixels whose footprint may straddle ink
    P = np.nan_to_num(tr.points)
    local = (P - scene.pose.T) @ scene.pose.R
    ro = scene.marker_radius
    ri = 0.0 if scene.marker_ring_width is None else ro - scene.marker_ring_width
    footprint = np.where(tr.hit, P[..., 2] / calib.camera.intrinsics.fu, 0.0)
    dist = _marker_distance(scene, local[..., :2].reshape(-1, 2)).reshape(tr.hit.shape)
    near = np.abs(dist - ro) < 2 * footprint
    if ri > 0:
        near |= np.abs(dist - ri) < 2 * footprint
    near &= tr.hit
    rows, cols = np.nonzero(near)
    if not len(rows):
        return tex
    s = supersample
    offs = (np.arange(s) + 0.5) / s - 0.5
    ou, ov = np.meshgrid(offs, offs)
    sub = np.stack(
        [cols[:, None] + ou.ravel()[None, :], rows[:, None] + ov.ravel()[None, :]], axis=-1
    )  # (n, s*s, 2)
    trs = trace_pixels(scene, calib, sub.reshape(-1, 2))
    val = np.where(trs.lit, 255.0 * _albedo(scene, trs), 0.0).reshape(len(rows), s * s)
    tex[rows, cols] = val.mean(axis=1)
    return tex


def render_texture(scene: Scene, calib: Calibration, noise: NoiseModel = NoiseModel(), supersample: int = 3,
                   trace: TraceResult | None = None) -> np.ndarray:
    """Image under full (all-white) projector illumination, 8-bit count units."""
    tr = trace if trace is not None else trace_image(scene, calib)
    tex = _texture(scene, calib, tr, supersample)
    if noise.sigma_I > 0:
        tex = tex + noise.sigma_I * rng_for(noise.seed, 1, 0).standard_normal(tex.shape)
    return np.clip(tex, 0.0, 255.0)


def render_stack(
    scene: Scene,
    calib: Calibration,
    patterns: PatternStack,
    noise: NoiseModel = NoiseModel(),
    supersample: int = 3,
    trace: TraceResult | None = None,
) -> tuple[PatternStack, np.ndarray]:
    """Render the captured stack and the texture image.

    Each captured intensity is the pattern value bilinearly sampled at the
    hit's projector pixel times the surface albedo, plus Gaussian noise;
    unlit pixels are 0.  Values are floats in 8-bit count units.
    """
    if calib.projector is None:
        raise SimulationError("rendering pattern stacks needs a projector")
    if (patterns.width, patterns.height) != calib.projector.resolution:
        raise SimulationError(
            f"pattern size {patterns.width}x{patterns.height} != projector {calib.projector.resolution}"
        )
    tr = trace if trace is not None else trace_image(scene, calib)
    alb = _albedo(scene, tr)
    uv = np.nan_to_num(tr.proj_uv)
    sampler = _BilinearSampler(uv, tr.lit, (patterns.height, patterns.width))
    frames = []
    for i, f in enumerate(patterns.frames):
        img = alb * sampler(f)
        if noise.sigma_I > 0:
            img = img + noise.sigma_I * rng_for(noise.seed, 2, i).standard_normal(img.shape)
        frames.append(np.clip(img, 0.0, 255.0))
    cam = calib.camera
    captured = PatternStack(cam.width, cam.height, frames, patterns.meta)
    return captured, render_texture(scene, calib, noise, supersample, tr)


def render_laser_image(
    scene: Scene, calib: Calibration, plane: LaserPlane, line_sigma: float = 0.05, trace: TraceResult | None = None
) -> np.ndarray:
    """Camera image of a laser sheet: Gaussian profile of the hit's distance to the plane."""
    tr = trace if trace is not None else trace_image(scene, calib)
    dist = plane.evaluate(np.nan_to_num(tr.points))
    img = 255.0 * _albedo(scene, tr) * np.exp(-0.5 * (dist / line_sigma) ** 2)
    return np.where(tr.hit, img, 0.0)


# ---------------------------------------------------------------- fast path


def synthesize_grid(
    scene: Scene, calib: Calibration, noise: NoiseModel = NoiseModel(), trace: TraceResult | None = None
) -> PointGrid:
    """Point grid straight from the ray cast, with depth noise along each ray.

    Pixels are valid where a lit surface is hit.  Depth noise is Gaussian
    (``sigma_z``); a fraction ``outlier_rate`` of pixels get a uniform depth
    within +-10 % of the true one.  ``noise.smoothing`` applies a box filter.
    """
    tr = trace if trace is not None else trace_image(scene, calib)
    pts = tr.points.copy()
    valid = tr.lit.copy()
    Z = pts[..., 2]
    if noise.sigma_z > 0 or noise.outlier_rate > 0:
        rng = rng_for(noise.seed, 3, 0)
        Zn = Z + noise.sigma_z * rng.standard_normal(Z.shape)
        if noise.outlier_rate > 0:
            out = rng.random(Z.shape) < noise.outlier_rate
            Zn = np.where(out, Z * rng.uniform(0.9, 1.1, Z.shape), Zn)
        with np.errstate(invalid="ignore"):
            pts = pts * (Zn / Z)[..., None]
    grid = PointGrid(pts, valid)
    if noise.smoothing:
        grid = smooth_grid(grid, noise.smoothing)
    return grid


def check_kernel(k) -> None:
    if int(k) != k or k < 3 or k % 2 == 0:
        raise InvalidKernel(f"kernel size must be an odd integer >= 3, got {k}")


def smooth_grid(grid: PointGrid, kernel_size: int = 3) -> PointGrid:
    """Box-average each coordinate over valid neighbours; validity unchanged."""
    check_kernel(kernel_size)
    w = grid.valid.astype(float)
    P = np.nan_to_num(grid.points) * w[..., None]
    box = np.ones((kernel_size, kernel_size))
    # direct correlation: running-sum box filters drift at the 1e-12 level
    cnt = ndimage.correlate(w, box, mode="constant")
    out = np.empty_like(P)
    for k in range(3):
        s = ndimage.correlate(P[..., k], box, mode="constant")
        with np.errstate(invalid="ignore", divide="ignore"):
            out[..., k] = s / cnt
    return PointGrid(out, grid.valid)


def measure_pin_tips(scene: Scene, tip_noise: float = 0.0, seed: int = 0, distribution: str = "uniform") -> np.ndarray:
    """Pin tip centres with per-tip depth error along each camera ray.

    ``distribution="uniform"`` draws errors bounded by ``tip_noise`` (mm);
    ``"gaussian"`` uses ``tip_noise`` as the standard deviation.
    """
    tips = scene.pin_tips()
    if tip_noise <= 0:
        return tips
    rng = rng_for(seed, 4, 0)
    if distribution == "uniform":
        e = rng.uniform(-tip_noise, tip_noise, len(tips))
    elif distribution == "gaussian":
        e = tip_noise * rng.standard_normal(len(tips))
    else:
        raise ValueError(f"distribution must be 'uniform' or 'gaussian', got {distribution!r}")
    ray = tips / np.linalg.norm(tips, axis=1, keepdims=True)
    return tips + e[:, None] * ray
