"""Reconstruction and the multi-trial benchmark protocol.

A trial places each requested artifact scene at one depth offset of the
working range (offsets uniformly spaced across trials) with a small random
in-plane jitter, produces a point grid plus texture, and evaluates the
criteria that scene supports:

    flat   -> length, flatness
    block  -> height
    balls  -> sphericity
    pins   -> none (coplanarity is checked separately)
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .artifact import ArtifactSpec
from .calibration import Calibration, CalibrationError
from .codec import CodecConfig, PatternStack, decode, generate_from_config
from .fitting import PointGrid
from .geometry import intersect_laser_plane, triangulate_column
from .metrics import (
    CRITERIA,
    MetricError,
    BenchmarkReport,
    ErrorSamples,
    detect_markers,
    eval_flatness,
    eval_height,
    eval_length,
    eval_sphericity,
    report_from_trials,
    summarize,
)
from .simulator import (
    WORKING_RANGE,
    NoiseModel,
    OutOfWorkingRange,
    build_scene,
    check_kernel,
    normalized_pixel_grid,
    render_stack,
    render_texture,
    rng_for,
    smooth_grid,
    synthesize_grid,
    trace_image,
)

log = logging.getLogger(__name__)

SCENE_CRITERIA = {"flat": ("length", "flatness"), "block": ("height",), "balls": ("sphericity",), "pins": ()}
PIPELINES = ("render", "fast")


# ---------------------------------------------------------------- reconstruction


def triangulate_map(proj_col: np.ndarray, valid: np.ndarray, calib: Calibration) -> PointGrid:
    """Triangulate every valid pixel of a projector-column correspondence map."""
    if calib.projector is None:
        raise CalibrationError("projector triangulation needs a projector in the calibration")
    m_c = normalized_pixel_grid(calib.camera)
    if m_c.shape[:2] != valid.shape:
        raise CalibrationError(f"correspondence map {valid.shape[::-1]} does not match camera {calib.camera.resolution}")
    pts, ok = triangulate_column(m_c, np.where(valid, proj_col, 0.0), calib.projector, calib.pose)
    return PointGrid(pts, ok & valid)


def reconstruct(stack: PatternStack, cfg: CodecConfig, calib: Calibration) -> PointGrid:
    """Decode a captured stack and triangulate it into an organized point grid."""
    cm = decode(stack, cfg)
    return triangulate_map(cm.proj_col, cm.valid, calib)


def laser_line_peaks(image, threshold: float = 20.0, half_window: int = 3):
    """Subpixel laser-line column per image row (intensity-weighted centroid).

    Returns ``(rows, cols)`` for rows whose peak exceeds ``threshold``.
    """
    img = np.asarray(image, dtype=float)
    h, w = img.shape
    peak = np.argmax(img, axis=1)
    rows = np.nonzero(img[np.arange(h), peak] > threshold)[0]
    cols = []
    for r in rows:
        c0 = peak[r]
        lo, hi = max(c0 - half_window, 0), min(c0 + half_window + 1, w)
        seg = img[r, lo:hi]
        wt = np.clip(seg - 0.5 * seg.max(), 0.0, None)
        cols.append((wt * np.arange(lo, hi)).sum() / wt.sum())
    return rows, np.asarray(cols, dtype=float)


def reconstruct_laser(image, calib: Calibration, threshold: float = 20.0) -> PointGrid:
    """Laser-sheet reconstruction: one point per row on the detected line."""
    if calib.laser_plane is None:
        raise CalibrationError("laser reconstruction needs a laser_plane in the calibration")
    cam = calib.camera
    rows, cols = laser_line_peaks(image, threshold)
    pts = np.full((cam.height, cam.width, 3), np.nan)
    valid = np.zeros((cam.height, cam.width), dtype=bool)
    if len(rows):
        P = intersect_laser_plane(np.column_stack([cols, rows.astype(float)]), cam, calib.laser_plane)
        ci = np.clip(np.rint(cols).astype(int), 0, cam.width - 1)
        pts[rows, ci] = P
        valid[rows, ci] = True
    return PointGrid(pts, valid)


# ---------------------------------------------------------------- trials


@dataclass(frozen=True)
class TrialPlan:
    index: int
    depth_offset: float
    jitter: tuple[float, float, float]  # dx mm, dy mm, rotation deg
    seed: int


def plan_trials(
    n_trials: int,
    seed: int = 0,
    working_range: tuple[float, float] = WORKING_RANGE,
    jitter: tuple[float, float, float] = (0.5, 0.5, 2.0),
    offsets=None,
) -> list[TrialPlan]:
    """Uniformly spaced depth offsets across the working range with random jitter."""
    if n_trials < 1:
        raise ValueError("trial count must be >= 1")
    lo, hi = working_range
    if offsets is None:
        offsets = np.linspace(lo, hi, n_trials) if n_trials > 1 else np.array([(lo + hi) / 2])
    elif len(offsets) != n_trials:
        raise ValueError(f"{len(offsets)} offsets given for {n_trials} trials")
    plans = []
    for i, off in enumerate(offsets):
        if not lo <= off <= hi:
            raise OutOfWorkingRange(f"trial {i}: depth offset {off} mm outside working range [{lo}, {hi}]")
        rng = rng_for(seed, 10, i)
        j = tuple(float(v) for v in rng.uniform(-1.0, 1.0, 3) * np.asarray(jitter))
        plans.append(TrialPlan(i, float(off), j, int(np.random.SeedSequence([seed, i]).generate_state(1)[0])))
    return plans


@dataclass(frozen=True)
class TrialSettings:
    spec: ArtifactSpec = field(default_factory=ArtifactSpec)  # what the simulator builds
    eval_spec: ArtifactSpec | None = None  # what the metrics assume; None -> spec
    codec: CodecConfig = field(default_factory=CodecConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    scenes: tuple[str, ...] = ("flat", "block", "balls")
    pipeline: str = "render"
    supersample: int = 3
    capture_bits: int | None = 16  # quantize rendered captures like a camera; None keeps floats
    working_range: tuple[float, float] = WORKING_RANGE

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ValueError(f"pipeline must be one of {PIPELINES}, got {self.pipeline!r}")
        bad = set(self.scenes) - set(SCENE_CRITERIA)
        if bad:
            raise ValueError(f"unsupported benchmark scenes {sorted(bad)}")

    @property
    def metric_spec(self) -> ArtifactSpec:
        return self.eval_spec if self.eval_spec is not None else self.spec


@dataclass
class SceneResult:
    kind: str
    grid: PointGrid
    texture: np.ndarray
    truth: PointGrid
    stack: PatternStack | None = None


def quantize(frames, bits: int):
    scale = (1 << bits) - 1
    return [np.rint(np.asarray(f) * (scale / 255.0)) * (255.0 / scale) for f in frames]


def simulate_scene(kind: str, plan: TrialPlan, settings: TrialSettings, calib: Calibration) -> SceneResult:
    scene = build_scene(
        settings.spec, plan.depth_offset, plan.jitter, kind, settings.working_range, seed=plan.seed
    )
    k = list(SCENE_CRITERIA).index(kind)
    noise = settings.noise.with_seed(int(np.random.SeedSequence([plan.seed, k]).generate_state(1)[0]))
    tr = trace_image(scene, calib)
    truth = PointGrid(tr.points, tr.lit)
    stack = None
    if settings.pipeline == "fast":
        grid = synthesize_grid(scene, calib, replace(noise, smoothing=None), trace=tr)
        texture = render_texture(scene, calib, noise, settings.supersample, trace=tr)
    else:
        patterns = generate_from_config(settings.codec)
        stack, texture = render_stack(scene, calib, patterns, noise, settings.supersample, trace=tr)
        if settings.capture_bits:
            stack = PatternStack(stack.width, stack.height, quantize(stack.frames, settings.capture_bits), stack.meta)
        grid = reconstruct(stack, settings.codec, calib)
    if noise.smoothing:
        grid = smooth_grid(grid, noise.smoothing)
    return SceneResult(kind, grid, texture, truth, stack)


def evaluate_scene(kind: str, grid: PointGrid, texture, spec: ArtifactSpec, calib: Calibration) -> dict:
    """Error samples for every criterion the scene supports; failures become messages."""
    out: dict[str, ErrorSamples | str] = {}
    if not SCENE_CRITERIA[kind]:
        return out
    try:
        circles = detect_markers(texture, grid, spec, calib.camera) if kind in ("flat", "block") else []
    except MetricError as exc:
        return {c: f"{type(exc).__name__}: {exc}" for c in SCENE_CRITERIA[kind]}
    jobs = {
        "length": lambda: eval_length(grid, texture, spec, calib.camera, circles),
        "flatness": lambda: eval_flatness(grid, circles, spec),
        "height": lambda: eval_height(grid, circles, spec),
        "sphericity": lambda: eval_sphericity(grid, spec),
    }
    for crit in SCENE_CRITERIA[kind]:
        try:
            out[crit] = jobs[crit]()
        except (MetricError, ValueError) as exc:
            out[crit] = f"{type(exc).__name__}: {exc}"
    return out


def run_trial(plan: TrialPlan, settings: TrialSettings, calib: Calibration) -> dict:
    """One trial record: per-criterion SummaryStats (None on failure) and error messages."""
    stats: dict = {c: None for c in CRITERIA}
    errors: dict = {}
    for kind in settings.scenes:
        res = simulate_scene(kind, plan, settings, calib)
        for crit, val in evaluate_scene(kind, res.grid, res.texture, settings.metric_spec, calib).items():
            if isinstance(val, str):
                errors[crit] = val
                log.warning("trial %d %s failed: %s", plan.index, crit, val)
            else:
                stats[crit] = summarize(val)
    return {"trial": plan.index, "offset": plan.depth_offset, "jitter": list(plan.jitter), "stats": stats, "errors": errors}


def _run_trial_args(args):
    return run_trial(*args)


def run_benchmark(
    settings: TrialSettings,
    calib: Calibration,
    n_trials: int = 50,
    seed: int = 0,
    workers: int = 1,
    plans: list[TrialPlan] | None = None,
    device: str = "virtual",
) -> BenchmarkReport:
    plans = plans if plans is not None else plan_trials(n_trials, seed, settings.working_range)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            records = list(ex.map(_run_trial_args, [(p, settings, calib) for p in plans]))
    else:
        records = [run_trial(p, settings, calib) for p in plans]
    return report_from_trials(records, device=device, config=settings.pipeline)


def run_smoothing_study(
    settings: TrialSettings, calib: Calibration, kernel_size: int = 3, n_trials: int = 50, seed: int = 0
) -> tuple[BenchmarkReport, BenchmarkReport]:
    """Benchmark the same simulated grids raw and after one box-smoothing pass.

    Returns ``(raw_report, smoothed_report)``; both see identical scenes and noise.
    """
    check_kernel(kernel_size)
    raw, smooth = [], []
    for plan in plan_trials(n_trials, seed, settings.working_range):
        rec_raw = {"trial": plan.index, "stats": {c: None for c in CRITERIA}, "errors": {}}
        rec_sm = {"trial": plan.index, "stats": {c: None for c in CRITERIA}, "errors": {}}
        for kind in settings.scenes:
            res = simulate_scene(kind, plan, settings, calib)
            for rec, grid in ((rec_raw, res.grid), (rec_sm, smooth_grid(res.grid, kernel_size))):
                for crit, val in evaluate_scene(kind, grid, res.texture, settings.metric_spec, calib).items():
                    if isinstance(val, str):
                        rec["errors"][crit] = val
                    else:
                        rec["stats"][crit] = summarize(val)
        raw.append(rec_raw)
        smooth.append(rec_sm)
    return (
        report_from_trials(raw, config=f"{settings.pipeline}/raw"),
        report_from_trials(smooth, config=f"{settings.pipeline}/smooth{kernel_size}"),
    )
