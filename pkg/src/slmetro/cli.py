"""``slmetro`` command line: patterns / simulate / reconstruct / evaluate / coplanarity / report.

Stages hand off through files so real captures can replace the simulator at
the stack-directory boundary.  Output layout under ``--out``::

    run_manifest.json          every file written, by stage
    config.json, calibration.json
    patterns/                  projected frames + manifest
    trials/trial_000/<scene>/  stack/ (render pipeline), texture.pgm,
                               ground_truth.ply, grid.ply, scene.json
    report.txt, report.csv, report.json, audit.jsonl

File payloads are in mm, printed numbers in μm.  ``SLMETRO_LOG`` sets the
log level (default WARNING).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .artifact import ArtifactSpec
from .calibration import Calibration, CalibrationError, load_calibration, save_calibration
from .codec import CodecConfig, CodecError, generate_from_config, read_stack, write_stack
from .fitting import DegenerateInput, PointGrid
from .io import FormatError, load_intensity, read_grid_ply, read_points_text, save_intensity, write_grid_ply
from .metrics import (
    CRITERIA,
    BenchmarkReport,
    coplanarity_range,
    passes_coplanarity,
    pin_tips_from_grid,
    render_report,
    report_from_trials,
    summarize,
)
from .pipeline import (
    SCENE_CRITERIA,
    TrialPlan,
    TrialSettings,
    evaluate_scene,
    plan_trials,
    reconstruct,
    reconstruct_laser,
    simulate_scene,
)
from .simulator import KINDS, WORKING_RANGE, NoiseModel, OutOfWorkingRange, virtual_device

log = logging.getLogger("slmetro")

RUN_MANIFEST = "run_manifest.json"
EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    calibration: str | None = None  # None -> built-in virtual device at ``scale``
    scale: str = "quarter"
    artifact: ArtifactSpec = field(default_factory=ArtifactSpec)
    eval_artifact: ArtifactSpec | None = None  # spec assumed by the metrics; None -> artifact
    codec: CodecConfig = field(default_factory=CodecConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    trials: int = 50
    working_range: tuple[float, float] = WORKING_RANGE
    offsets: list[float] | None = None
    jitter: tuple[float, float, float] = (0.5, 0.5, 2.0)
    scenes: tuple[str, ...] = ("flat", "block", "balls")
    pipeline: str = "render"
    supersample: int = 3
    capture_bits: int = 16
    out: str = "runs/default"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if int(self.trials) < 1:
            raise ConfigError("trials must be >= 1")
        if self.scale not in ("full", "quarter"):
            raise ConfigError(f"scale must be 'full' or 'quarter', got {self.scale!r}")
        if self.calibration is not None and not Path(self.calibration).exists():
            raise ConfigError(f"calibration file not found: {self.calibration}")
        bad = set(self.scenes) - set(KINDS)
        if bad:
            raise ConfigError(f"unknown scenes {sorted(bad)}")
        if self.capture_bits not in (8, 16):
            raise ConfigError("capture_bits must be 8 or 16")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kw = dict(d)
        try:
            if "artifact" in kw:
                kw["artifact"] = ArtifactSpec.from_dict(kw["artifact"])
            if kw.get("eval_artifact") is not None:
                kw["eval_artifact"] = ArtifactSpec.from_dict(kw["eval_artifact"])
            if "codec" in kw:
                kw["codec"] = CodecConfig.from_dict(kw["codec"])
            if "noise" in kw:
                kw["noise"] = NoiseModel(**kw["noise"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        for key in ("working_range", "jitter", "scenes"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if kw.get("calibration") and base is not None and not Path(kw["calibration"]).is_absolute():
            kw["calibration"] = str(base / kw["calibration"])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["codec"] = asdict(self.codec)
        return d

    def load_calibration(self) -> Calibration:
        if self.calibration is None:
            return virtual_device(self.scale)
        return load_calibration(self.calibration)

    def settings(self) -> TrialSettings:
        return TrialSettings(
            spec=self.artifact,
            eval_spec=self.eval_artifact,
            codec=self.codec,
            noise=self.noise,
            scenes=self.scenes,
            pipeline=self.pipeline,
            supersample=self.supersample,
            capture_bits=self.capture_bits,
            working_range=self.working_range,
        )


def load_run_config(path: str | None, args: argparse.Namespace | None = None) -> RunConfig:
    """Config file (optional) with command-line overrides applied on top."""
    d: dict = {}
    base = None
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            d = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        base = p.parent
    if args is not None:
        for key in ("trials", "seed", "workers", "out", "scale"):
            val = getattr(args, key, None)
            if val is not None:
                d[key] = val
    return RunConfig.from_dict(d, base)


# ---------------------------------------------------------------- run manifest


class RunManifest:
    """Single JSON index of every file a run produced, grouped by stage."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.path = self.root / RUN_MANIFEST
        self.doc = json.loads(self.path.read_text()) if self.path.exists() else {"format": "slmetro-run/1", "stages": {}}

    def record(self, stage: str, files, **info) -> None:
        rel = sorted({os.path.relpath(Path(f), self.root) for f in files})
        self.doc["stages"][stage] = {"files": rel, **info}
        self.root.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.doc, indent=2, sort_keys=True) + "\n")


def _files_under(d: Path) -> list[Path]:
    return sorted(p for p in Path(d).rglob("*") if p.is_file())


# ---------------------------------------------------------------- patterns


def cmd_patterns(args) -> int:
    cfg = load_run_config(args.config, args)
    out = Path(cfg.out)
    pdir = out / "patterns"
    write_stack(pdir, generate_from_config(cfg.codec), cfg.codec)
    files = _files_under(pdir)
    RunManifest(out).record("patterns", files, frames=len(cfg.codec.meta))
    print(f"wrote {len(cfg.codec.meta)} frames + manifest to {pdir}")
    return EXIT_OK


# ---------------------------------------------------------------- simulate


def _scene_dir(out: Path, trial: int, kind: str) -> Path:
    return out / "trials" / f"trial_{trial:03d}" / kind


def _simulate_trial(args) -> list[str]:
    plan, cfg_dict, calib_dict, out = args
    cfg = RunConfig.from_dict(cfg_dict)
    calib = Calibration.from_dict(calib_dict)
    settings = cfg.settings()
    written = []
    for kind in cfg.scenes:
        res = simulate_scene(kind, plan, settings, calib)
        d = _scene_dir(Path(out), plan.index, kind)
        d.mkdir(parents=True, exist_ok=True)
        if res.stack is not None:
            write_stack(d / "stack", res.stack, cfg.codec, bits=cfg.capture_bits, extra={"kind": kind})
        else:
            write_grid_ply(d / "grid.ply", res.grid.points, res.grid.valid)
        save_intensity(d / "texture.pgm", res.texture, bits=16)
        write_grid_ply(d / "ground_truth.ply", res.truth.points, res.truth.valid)
        (d / "scene.json").write_text(
            json.dumps(
                {"kind": kind, "trial": plan.index, "depth_offset": plan.depth_offset,
                 "jitter": list(plan.jitter), "seed": plan.seed, "pipeline": cfg.pipeline},
                indent=2,
            )
            + "\n"
        )
        written += [str(p) for p in _files_under(d)]
    return written


def cmd_simulate(args) -> int:
    cfg = load_run_config(args.config, args)
    calib = cfg.load_calibration()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        plans = plan_trials(cfg.trials, cfg.seed, cfg.working_range, cfg.jitter, cfg.offsets)
    except OutOfWorkingRange as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    save_calibration(calib, out / "calibration.json")
    jobs = [(p, cfg.to_dict(), calib.to_dict(), str(out)) for p in plans]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            written = [f for files in ex.map(_simulate_trial, jobs) for f in files]
    else:
        written = [f for job in jobs for f in _simulate_trial(job)]
    RunManifest(out).record(
        "simulate", written + [str(out / "config.json"), str(out / "calibration.json")], trials=len(plans)
    )
    print(f"simulated {len(plans)} trials x {len(cfg.scenes)} scenes into {out / 'trials'}")
    return EXIT_OK


# ---------------------------------------------------------------- reconstruct


def _find_calibration(arg: str | None, near: Path) -> Calibration:
    if arg:
        return load_calibration(arg)
    for d in [near, *near.parents]:
        c = d / "calibration.json"
        if c.exists():
            return load_calibration(c)
    raise CalibrationError(f"no --calibration given and no calibration.json above {near}")


def reconstruct_path(path: Path, calib: Calibration) -> PointGrid:
    """Projector mode: ``path`` is a stack directory; laser mode: a line image (PGM)."""
    if calib.mode == "laser":
        img = path / "laser.pgm" if path.is_dir() else path
        return reconstruct_laser(load_intensity(img), calib)
    stack, cfg, _ = read_stack(path)
    return reconstruct(stack, cfg, calib)


def cmd_reconstruct(args) -> int:
    written = []
    for src in args.inputs:
        path = Path(src)
        calib = _find_calibration(args.calibration, path.resolve())
        grid = reconstruct_path(path, calib)
        if args.out and len(args.inputs) == 1:
            dst = Path(args.out)
        elif path.is_dir():
            # a trial's stack/ sits next to where its grid belongs
            dst = (path.parent if path.name == "stack" else path) / "grid.ply"
        else:
            dst = path.with_name(path.stem + "_grid.ply")
        dst.parent.mkdir(parents=True, exist_ok=True)
        write_grid_ply(dst, grid.points, grid.valid)
        written.append(dst)
        print(f"{src}: {int(grid.valid.sum())} valid points -> {dst}")
    root = _run_root(Path(args.inputs[0]))
    if root is not None:
        RunManifest(root).record("reconstruct", written)
    return EXIT_OK


def _run_root(p: Path) -> Path | None:
    for d in [p.resolve(), *p.resolve().parents]:
        if (d / RUN_MANIFEST).exists():
            return d
    return None


# ---------------------------------------------------------------- evaluate


def _trial_dirs(inputs: list[str], cfg: RunConfig) -> list[Path]:
    if inputs:
        dirs = []
        for s in inputs:
            p = Path(s)
            dirs += sorted(p.glob("trial_*")) if (p / "trial_000").exists() or p.name == "trials" else [p]
        return dirs
    return sorted((Path(cfg.out) / "trials").glob("trial_*"))


def _evaluate_trial(args) -> dict:
    tdir, spec_dict, calib_dict = args
    tdir = Path(tdir)
    spec = ArtifactSpec.from_dict(spec_dict)
    calib = Calibration.from_dict(calib_dict)
    stats = {c: None for c in CRITERIA}
    errors: dict = {}
    index = int(tdir.name.split("_")[-1]) if tdir.name.startswith("trial_") else 0
    for sdir in sorted(p for p in tdir.iterdir() if p.is_dir()):
        meta_path = sdir / "scene.json"
        kind = json.loads(meta_path.read_text())["kind"] if meta_path.exists() else sdir.name
        if kind not in SCENE_CRITERIA or not SCENE_CRITERIA[kind]:
            continue
        try:
            if (sdir / "grid.ply").exists():
                pts, valid = read_grid_ply(sdir / "grid.ply")
                grid = PointGrid(pts, valid)
            else:
                grid = reconstruct_path(sdir / "stack", calib)
            texture = load_intensity(sdir / "texture.pgm")
        except (OSError, FormatError, CodecError, CalibrationError) as exc:
            for c in SCENE_CRITERIA[kind]:
                errors[c] = f"{type(exc).__name__}: {exc}"
            continue
        for crit, val in evaluate_scene(kind, grid, texture, spec, calib).items():
            if isinstance(val, str):
                errors[crit] = val
            else:
                stats[crit] = summarize(val)
    return {"trial": index, "dir": str(tdir), "stats": stats, "errors": errors}


def write_report(report: BenchmarkReport, out: Path) -> list[Path]:
    table, csv = render_report(report)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"txt": out / "report.txt", "csv": out / "report.csv", "json": out / "report.json", "jsonl": out / "audit.jsonl"}
    paths["txt"].write_text(table)
    paths["csv"].write_text(csv)
    doc = report.to_dict()
    paths["json"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    paths["jsonl"].write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in doc["per_trial"]))
    return list(paths.values())


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args.config, args)
    dirs = _trial_dirs(args.inputs, cfg)
    if not dirs:
        print("error: no trial directories to evaluate", file=sys.stderr)
        return EXIT_FAIL
    calib = cfg.load_calibration() if cfg.calibration else _find_or_virtual(dirs[0], cfg)
    spec = cfg.eval_artifact or cfg.artifact
    jobs = [(str(d), spec.to_dict(), calib.to_dict()) for d in dirs]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            records = list(ex.map(_evaluate_trial, jobs))
    else:
        records = [_evaluate_trial(j) for j in jobs]
    for r in records:
        for crit, msg in r["errors"].items():
            log.warning("trial %d %s excluded: %s", r["trial"], crit, msg)
    ok = [r for r in records if any(v is not None for v in r["stats"].values())]
    if not ok:
        print("error: every trial failed", file=sys.stderr)
        for r in records:
            print(f"  trial {r['trial']}: {r['errors']}", file=sys.stderr)
        return EXIT_FAIL
    if len(ok) < len(records):
        warnings.warn(f"{len(records) - len(ok)} of {len(records)} trials failed and were excluded", stacklevel=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = report_from_trials(records, device="virtual" if not cfg.calibration else cfg.calibration, config=cfg.pipeline)
    if report.trials < 50:
        log.warning("%d trials evaluated; at least 50 are recommended", report.trials)
    out = Path(args.out) if args.out else Path(cfg.out)
    files = write_report(report, out)
    RunManifest(out).record("evaluate", files, trials=report.trials)
    print(render_report(report)[0], end="")
    return EXIT_OK


def _find_or_virtual(trial_dir: Path, cfg: RunConfig) -> Calibration:
    try:
        return _find_calibration(None, trial_dir.resolve())
    except CalibrationError:
        return virtual_device(cfg.scale)


# ---------------------------------------------------------------- coplanarity


def cmd_coplanarity(args) -> int:
    path = Path(args.input)
    if path.suffix.lower() == ".ply":
        pts, valid = read_grid_ply(path)
        tips = pin_tips_from_grid(PointGrid(pts, valid))
    else:
        tips = read_points_text(path)
    rng, _ = coplanarity_range(tips)
    ok = passes_coplanarity(rng, args.tolerance_um)
    print(f"{len(tips)} tips  range {rng * 1e3:.3f} μm  tolerance {args.tolerance_um:g} μm  {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------- report


def load_fixture(name: str) -> BenchmarkReport:
    text = resources.files("slmetro").joinpath("data", f"{name}.json").read_text()
    return BenchmarkReport.from_dict(json.loads(text))


def cmd_report(args) -> int:
    if args.fixture:
        report = load_fixture(args.fixture)
    else:
        if not args.input:
            print("error: give a report.json or --fixture", file=sys.stderr)
            return EXIT_ERROR
        report = BenchmarkReport.from_dict(json.loads(Path(args.input).read_text()))
    if args.decimals is not None:
        report.decimals = None if args.decimals < 0 else args.decimals
    table, csv = render_report(report)
    print(csv if args.csv else table, end="")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slmetro", description="Structured-light metrology benchmark toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, run=True):
        sp.add_argument("--config", help="run-config JSON")
        sp.add_argument("--out", help="output directory")
        if run:
            sp.add_argument("--trials", type=int)
            sp.add_argument("--seed", type=int)
            sp.add_argument("--workers", type=int)
            sp.add_argument("--scale", choices=("full", "quarter"))

    sp = sub.add_parser("patterns", help="write projector pattern frames")
    common(sp, run=False)
    sp.set_defaults(func=cmd_patterns, trials=None, seed=None, workers=None, scale=None)

    sp = sub.add_parser("simulate", help="render capture stacks and ground truth per trial")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("reconstruct", help="decode + triangulate stack directories into PLY grids")
    sp.add_argument("inputs", nargs="+", help="stack directories (or laser line images)")
    sp.add_argument("--calibration", help="calibration JSON (default: nearest calibration.json)")
    sp.add_argument("--out", help="output PLY (single input only)")
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("evaluate", help="run the four criteria over trial directories")
    sp.add_argument("inputs", nargs="*", help="trial directories or a trials/ folder (default: <out>/trials)")
    common(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("coplanarity", help="pin-tip coplanarity range check")
    sp.add_argument("input", help="PLY grid (tips auto-segmented) or xyz text file of tips")
    sp.add_argument("--tolerance-um", type=float, default=10.0)
    sp.set_defaults(func=cmd_coplanarity)

    sp = sub.add_parser("report", help="render a stored report or a bundled fixture")
    sp.add_argument("input", nargs="?", help="report.json")
    sp.add_argument("--fixture", help="bundled fixture name, e.g. published_replay")
    sp.add_argument("--decimals", type=int, help="digits after the point; negative for shortest form")
    sp.add_argument("--csv", action="store_true")
    sp.set_defaults(func=cmd_report)
    return p


def setup_logging() -> None:
    name = os.environ.get("SLMETRO_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    # basicConfig is a no-op when the root logger already has handlers
    logging.getLogger("slmetro").setLevel(level)
    logging.captureWarnings(True)


def main(argv=None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CodecError, CalibrationError, FormatError, DegenerateInput, OutOfWorkingRange) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
