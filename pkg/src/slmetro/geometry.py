"""Projective geometry for camera / projector / laser structured-light rigs.

Conventions
-----------
* Pixel coordinates are ``(u, v)`` with ``u`` the column and ``v`` the row;
  the centre of array element ``[row, col]`` sits at ``(col, row)``.
* Normalized image points are ``(x, y)`` on the ``z = 1`` plane of the
  device frame, i.e. ``(X / Z, Y / Z)``.
* All metric quantities are millimetres.
* The camera is the reference frame.  A camera->projector :class:`Pose`
  maps ``M_p = R @ M_c + T``.

Every operation accepts either a single point (shape ``(2,)`` / ``(3,)``) or
a stack of points (shape ``(..., 2)`` / ``(..., 3)``) and returns the same
leading shape.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNDISTORT_TOL = 1e-12
UNDISTORT_MAX_ITER = 50
DEGENERACY_EPS = 1e-12


class GeometryError(ValueError):
    pass


class NonConvergence(GeometryError):
    pass


class BehindCamera(GeometryError):
    pass


class RayParallelToPlane(GeometryError):
    pass


class DegenerateRays(GeometryError):
    pass


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Intrinsics:
    fu: float
    fv: float
    u0: float
    v0: float
    gamma: float = 0.0

    def __post_init__(self):
        vals = (self.fu, self.fv, self.u0, self.v0, self.gamma)
        if not all(np.isfinite(vals)):
            raise ValueError("intrinsics must be finite")
        if self.fu <= 0 or self.fv <= 0:
            raise ValueError(f"focal lengths must be positive, got fu={self.fu}, fv={self.fv}")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fu, self.gamma, self.u0], [0.0, self.fv, self.v0], [0.0, 0.0, 1.0]])

    def scaled(self, s: float) -> "Intrinsics":
        """Intrinsics for an image resampled by ``s`` (pixel-centre convention)."""
        return Intrinsics(
            self.fu * s, self.fv * s, (self.u0 + 0.5) * s - 0.5, (self.v0 + 0.5) * s - 0.5, self.gamma * s
        )


@dataclass(frozen=True)
class Distortion:
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if not all(np.isfinite((self.k1, self.k2, self.k3, self.p1, self.p2))):
            raise ValueError("distortion coefficients must be finite")

    @property
    def is_identity(self) -> bool:
        return self.k1 == self.k2 == self.k3 == self.p1 == self.p2 == 0.0


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``x -> R @ x + T``; ``R`` is validated as a rotation."""

    R: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        R = _readonly(self.R)
        T = _readonly(self.T).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"R must be 3x3, got shape {R.shape}")
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(T)):
            raise ValueError("pose must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise ValueError("R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("det(R) must be +1")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.R.T + self.T

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.T)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.R @ other.R, self.R @ other.T + self.T)

    @property
    def center(self) -> np.ndarray:
        """Origin of the target frame expressed in the source frame."""
        return -self.R.T @ self.T


@dataclass(frozen=True)
class CameraModel:
    """Pinhole + Brown distortion model; also used for projectors."""

    intrinsics: Intrinsics
    distortion: Distortion = field(default_factory=Distortion)
    resolution: tuple[int, int] = (640, 480)  # (width, height)

    def __post_init__(self):
        w, h = self.resolution
        if int(w) != w or int(h) != h or w <= 0 or h <= 0:
            raise ValueError(f"resolution must be positive integers, got {self.resolution}")
        object.__setattr__(self, "resolution", (int(w), int(h)))

    @property
    def width(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]

    def scaled(self, s: float) -> "CameraModel":
        w, h = self.resolution
        return CameraModel(self.intrinsics.scaled(s), self.distortion, (int(round(w * s)), int(round(h * s))))


@dataclass(frozen=True)
class LaserPlane:
    """Plane ``a X + b Y + c Z + d = 0`` in the camera frame, unit normal."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        n = np.array([self.a, self.b, self.c], dtype=float)
        norm = np.linalg.norm(n)
        if not np.isfinite(norm) or norm == 0 or not np.isfinite(self.d):
            raise ValueError("laser plane needs a finite non-zero normal")
        if abs(norm - 1.0) > 1e-12:
            raise ValueError("laser plane normal must be unit length; use LaserPlane.from_coefficients")

    @classmethod
    def from_coefficients(cls, a, b, c, d) -> "LaserPlane":
        n = float(np.linalg.norm([a, b, c]))
        if n == 0:
            raise ValueError("laser plane needs a non-zero normal")
        return cls(a / n, b / n, c / n, d / n)

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def evaluate(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.normal + self.d


# ---------------------------------------------------------------- distortion


def _split(p):
    p = np.asarray(p, dtype=float)
    return p[..., 0], p[..., 1]


def _radial_scale(x, y, d: Distortion):
    r2 = x * x + y * y
    return 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3))


def _tangential(x, y, d: Distortion):
    r2 = x * x + y * y
    dx = 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x)
    dy = 2.0 * d.p2 * x * y + d.p1 * (r2 + 2.0 * y * y)
    return dx, dy


def apply_distortion(p, d: Distortion) -> np.ndarray:
    """Map ideal normalized points to distorted normalized points."""
    x, y = _split(p)
    s = _radial_scale(x, y, d)
    dx, dy = _tangential(x, y, d)
    return np.stack([x * s + dx, y * s + dy], axis=-1)


def remove_distortion(q, d: Distortion, tol: float = UNDISTORT_TOL, max_iter: int = UNDISTORT_MAX_ITER) -> np.ndarray:
    """Invert :func:`apply_distortion` by fixed-point iteration.

    Iterates ``p <- (q - tangential(p)) / radial_scale(p)`` until the forward
    residual ``|apply_distortion(p) - q|_inf <= tol`` for every point.

    Raises
    ------
    NonConvergence
        If any point's residual exceeds ``tol`` after ``max_iter`` iterations.
    """
    q = np.asarray(q, dtype=float)
    if d.is_identity:
        return q.copy()
    qx, qy = q[..., 0], q[..., 1]
    x, y = qx.copy(), qy.copy()
    for _ in range(max_iter):
        s = _radial_scale(x, y, d)
        dx, dy = _tangential(x, y, d)
        res = np.maximum(np.abs(x * s + dx - qx), np.abs(y * s + dy - qy))
        if np.all(res <= tol):
            return np.stack([x, y], axis=-1)
        x = (qx - dx) / s
        y = (qy - dy) / s
    s = _radial_scale(x, y, d)
    dx, dy = _tangential(x, y, d)
    res = np.maximum(np.abs(x * s + dx - qx), np.abs(y * s + dy - qy))
    if not np.all(res <= tol):
        worst = float(np.nanmax(res)) if res.size else float("nan")
        raise NonConvergence(f"undistortion residual {worst:.3e} > tol {tol:.1e} after {max_iter} iterations")
    return np.stack([x, y], axis=-1)


# ---------------------------------------------------------------- projection


def normalized_to_pixel(p, intr: Intrinsics) -> np.ndarray:
    x, y = _split(p)
    return np.stack([intr.fu * x + intr.gamma * y + intr.u0, intr.fv * y + intr.v0], axis=-1)


def project_camera_frame(M, cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Project points already in the device frame; returns ``(pixels, in_front)``.

    Points with ``Z <= 0`` yield NaN pixels instead of raising.
    """
    M = np.asarray(M, dtype=float)
    Z = M[..., 2]
    in_front = Z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        Zs = np.where(in_front, Z, np.nan)
        xy = np.stack([M[..., 0] / Zs, M[..., 1] / Zs], axis=-1)
    return normalized_to_pixel(apply_distortion(xy, cam.distortion), cam.intrinsics), in_front


def project(M_world, cam: CameraModel, pose: Pose | None = None) -> np.ndarray:
    """Pixel coordinates of world points seen by ``cam`` (``pose``: world->device)."""
    M = np.asarray(M_world, dtype=float)
    if pose is not None:
        M = pose.apply(M)
    pix, in_front = project_camera_frame(M, cam)
    if not np.all(in_front):
        raise BehindCamera("point has Z <= 0 in the device frame")
    return pix


def pixel_to_normalized(m, cam: CameraModel) -> np.ndarray:
    """Undistorted normalized coordinates of pixel(s) ``m``."""
    u, v = _split(m)
    K = cam.intrinsics
    yd = (v - K.v0) / K.fv
    xd = (u - K.u0 - K.gamma * yd) / K.fu
    return remove_distortion(np.stack([xd, yd], axis=-1), cam.distortion)


def homogeneous(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)


# ---------------------------------------------------------------- laser


def intersect_laser_plane(m, cam: CameraModel, lp: LaserPlane) -> np.ndarray:
    """3D point where the viewing ray through pixel ``m`` meets the laser plane.

    The pixel is undistorted first; depth is then
    ``Z = -d / (a x + b y + c)`` on the undistorted normalized ray.
    """
    xy = pixel_to_normalized(m, cam)
    x, y = xy[..., 0], xy[..., 1]
    denom = lp.a * x + lp.b * y + lp.c
    if np.any(np.abs(denom) < DEGENERACY_EPS):
        raise RayParallelToPlane("viewing ray is parallel to the laser plane")
    Z = -lp.d / denom
    return np.stack([Z * x, Z * y, Z], axis=-1)


# ---------------------------------------------------------------- two-view


def skew(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.array([[0.0, -t[2], t[1]], [t[2], 0.0, -t[0]], [-t[1], t[0], 0.0]])


def essential_matrix(pose: Pose) -> np.ndarray:
    return skew(pose.T) @ pose.R


def epipolar_residual(m_c, m_p, pose: Pose) -> np.ndarray:
    """``m_p^T [T]x R m_c`` on homogeneous normalized points (0 when consistent)."""
    hc = homogeneous(m_c)
    hp = homogeneous(m_p)
    E = essential_matrix(pose)
    return np.einsum("...i,ij,...j->...", hp, E, hc)


def _depth_closed_form(m_c, m_p, pose: Pose):
    a = homogeneous(m_c) @ pose.R.T  # camera ray rotated into projector frame
    b = homogeneous(m_p)
    T = pose.T
    ab = np.einsum("...i,...i->...", a, b)
    aa = np.einsum("...i,...i->...", a, a)
    bb = np.einsum("...i,...i->...", b, b)
    aT = a @ T
    bT = b @ T
    num = ab * bT - bb * aT
    den = aa * bb - ab * ab
    return num, den


def triangulate(m_c, m_p, pose: Pose) -> np.ndarray:
    """Closed-form camera-frame point from a camera/projector correspondence.

    With ``a = R m_c`` and ``b = m_p`` (homogeneous normalized rays), the
    camera depth minimizing the gap between the two rays is

        Z = ((a.b)(b.T) - |b|^2 (a.T)) / (|a|^2 |b|^2 - (a.b)^2)

    and the point is ``Z * (x_c, y_c, 1)``.

    Raises
    ------
    DegenerateRays
        If the denominator falls below 1e-12 (parallel rays).
    """
    num, den = _depth_closed_form(m_c, m_p, pose)
    if np.any(np.abs(den) < DEGENERACY_EPS):
        raise DegenerateRays("camera and projector rays are parallel")
    Z = num / den
    return homogeneous(m_c) * Z[..., None]


def triangulate_many(m_c, m_p, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`triangulate` returning ``(points, ok)`` instead of raising."""
    num, den = _depth_closed_form(m_c, m_p, pose)
    ok = np.abs(den) >= DEGENERACY_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        Z = np.where(ok, num / np.where(ok, den, 1.0), np.nan)
    return homogeneous(m_c) * Z[..., None], ok


def projector_point_for_column(
    m_c, u_p, projector: CameraModel, pose: Pose, tol: float = 1e-10, max_iter: int = 30
) -> tuple[np.ndarray, np.ndarray]:
    """Find the camera depth whose projector projection lands on column ``u_p``.

    Column-only coding leaves the projector row free; it is fixed by the
    epipolar constraint, i.e. by sliding along the camera ray.  Returns
    ``(depth, ok)``; the depth is exact for a distortion-free projector and
    Newton-refined otherwise.
    """
    m_c = np.asarray(m_c, dtype=float)
    u_p = np.asarray(u_p, dtype=float)
    a = homogeneous(m_c) @ pose.R.T
    T = pose.T
    K = projector.intrinsics
    du = u_p - K.u0
    den = du * a[..., 2] - K.fu * a[..., 0] - K.gamma * a[..., 1]
    num = K.fu * T[0] + K.gamma * T[1] - du * T[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        Z = num / den
    ok = np.abs(den) >= DEGENERACY_EPS
    if projector.distortion.is_identity:
        return Z, ok & np.isfinite(Z)

    def column(z):
        P = a * z[..., None] + T
        pix, _ = project_camera_frame(P, projector)
        return pix[..., 0]

    for _ in range(max_iter):
        h = np.maximum(np.abs(Z), 1.0) * 1e-6
        f0 = column(Z) - u_p
        if np.all(~ok | ~np.isfinite(f0) | (np.abs(f0) < tol)):
            break
        df = (column(Z + h) - column(Z - h)) / (2 * h)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(np.abs(f0) < tol, 0.0, f0 / df)
        Z = Z - step
    f0 = column(Z) - u_p
    ok = ok & np.isfinite(Z) & (np.abs(f0) < 1e-6)
    return Z, ok


def triangulate_column(m_c, u_p, projector: CameraModel, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Triangulate from camera normalized points and decoded projector columns.

    The projector row is recovered on the epipolar line, the projector pixel
    is normalized through the projector model, and the closed-form
    :func:`triangulate` produces the point.  Returns ``(points, ok)``.
    """
    Z, ok = projector_point_for_column(m_c, u_p, projector, pose)
    Zs = np.where(ok, Z, 1.0)
    P_proj = homogeneous(m_c) @ pose.R.T * Zs[..., None] + pose.T
    pix_p, front = project_camera_frame(P_proj, projector)
    ok &= front & (Z > 0)
    pix_p = np.where(ok[..., None], pix_p, projector.intrinsics.u0)
    m_p = pixel_to_normalized(pix_p, projector)
    pts, ok2 = triangulate_many(m_c, m_p, pose)
    ok &= ok2
    pts[~ok] = np.nan
    return pts, ok


def look_at(eye, target, up=(0.0, -1.0, 0.0)) -> Pose:
    """Pose mapping reference-frame points into a device frame at ``eye``
    whose optical (+z) axis points at ``target``; image +y follows ``-up``."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return Pose(R, -R @ eye)


def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about ``axis`` by ``angle`` radians."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    Kx = skew(k)
    return np.eye(3) + np.sin(angle) * Kx + (1 - np.cos(angle)) * (Kx @ Kx)
