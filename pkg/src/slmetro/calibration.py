"""Calibration file (JSON) for a camera plus a projector or a laser plane.

Schema (all lengths in millimetres)::

    {
      "units": "mm",
      "camera": {
        "resolution": [width, height],
        "intrinsics": {"fu": ..., "fv": ..., "u0": ..., "v0": ..., "gamma": 0.0},
        "distortion": {"k1": 0, "k2": 0, "k3": 0, "p1": 0, "p2": 0}
      },
      "projector": { same layout as "camera" },              # optional
      "camera_to_projector": {"R": [9 floats, row-major],
                              "T": [3 floats]},               # required with projector
      "laser_plane": [a, b, c, d]                             # optional, camera frame
    }

``camera_to_projector`` maps camera-frame points into the projector frame.
Calibration parameters are only ever consumed; nothing here estimates them.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .geometry import CameraModel, Distortion, Intrinsics, LaserPlane, Pose


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class Calibration:
    camera: CameraModel
    projector: CameraModel | None = None
    pose: Pose | None = None  # camera -> projector
    laser_plane: LaserPlane | None = None

    def __post_init__(self):
        if self.projector is not None and self.pose is None:
            raise CalibrationError("a projector needs a camera_to_projector pose")
        if self.projector is None and self.laser_plane is None:
            raise CalibrationError("calibration needs a projector or a laser plane")

    @property
    def mode(self) -> str:
        return "projector" if self.projector is not None else "laser"

    def to_dict(self) -> dict:
        out: dict = {"units": "mm", "camera": _model_to_dict(self.camera)}
        if self.projector is not None:
            out["projector"] = _model_to_dict(self.projector)
            out["camera_to_projector"] = {"R": self.pose.R.reshape(-1).tolist(), "T": self.pose.T.tolist()}
        if self.laser_plane is not None:
            lp = self.laser_plane
            out["laser_plane"] = [lp.a, lp.b, lp.c, lp.d]
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "Calibration":
        units = doc.get("units", "mm")
        if units != "mm":
            raise CalibrationError(f"units must be 'mm', got {units!r}")
        try:
            camera = _model_from_dict(doc["camera"])
        except KeyError as exc:
            raise CalibrationError(f"missing calibration field {exc}") from None
        projector = pose = laser = None
        if "projector" in doc:
            projector = _model_from_dict(doc["projector"])
            try:
                ext = doc["camera_to_projector"]
                pose = Pose(np.asarray(ext["R"], dtype=float).reshape(3, 3), ext["T"])
            except KeyError as exc:
                raise CalibrationError(f"missing calibration field {exc}") from None
            except ValueError as exc:
                raise CalibrationError(f"camera_to_projector: {exc}") from None
        if doc.get("laser_plane") is not None:
            laser = LaserPlane.from_coefficients(*map(float, doc["laser_plane"]))
        return cls(camera, projector, pose, laser)


def _model_to_dict(m: CameraModel) -> dict:
    return {"resolution": list(m.resolution), "intrinsics": asdict(m.intrinsics), "distortion": asdict(m.distortion)}


def _model_from_dict(d: dict) -> CameraModel:
    try:
        intr = Intrinsics(**{k: float(v) for k, v in d["intrinsics"].items()})
        dist = Distortion(**{k: float(v) for k, v in d.get("distortion", {}).items()})
        return CameraModel(intr, dist, tuple(d["resolution"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CalibrationError(f"bad device model: {exc}") from None


def load_calibration(path) -> Calibration:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise CalibrationError(f"calibration file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"{path}: invalid JSON ({exc})") from None
    return Calibration.from_dict(doc)


def save_calibration(calib: Calibration, path) -> None:
    Path(path).write_text(json.dumps(calib.to_dict(), indent=2))
