"""Independent reference implementations used to check the package.

Nothing here imports the code under test's numerics: each oracle is a
deliberately naive re-derivation (scalar loops, brute force, or a different
formulation of the same quantity).
"""
import math

import numpy as np


def project_scalar(X, Y, Z, fu, fv, u0, v0, gamma=0.0, k1=0.0, k2=0.0, k3=0.0, p1=0.0, p2=0.0):
    """Pinhole + Brown distortion, written out term by term for one point."""
    x, y = X / Z, Y / Z
    r2 = x * x + y * y
    radial = 1 + k1 * r2 + k2 * r2**2 + k3 * r2**3
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    return fu * xd + gamma * yd + u0, fv * yd + v0


def midpoint_triangulate(m_c, m_p, R, T):
    """Two-ray least-squares midpoint, in the camera frame.

    Camera ray: s * (x_c, y_c, 1).  The projector centre in the camera frame
    is C = -R^T T and its ray direction is R^T (x_p, y_p, 1).
    """
    R = np.asarray(R, float)
    T = np.asarray(T, float)
    a = np.array([m_c[0], m_c[1], 1.0])
    C = -R.T @ T
    b = R.T @ np.array([m_p[0], m_p[1], 1.0])
    A = np.column_stack([a, -b])
    (s, t), *_ = np.linalg.lstsq(A, C, rcond=None)
    return 0.5 * (s * a + C + t * b)


def brute_stats(values):
    """Range by sorting; mean and population std by two compensated passes."""
    v = sorted(float(x) for x in values)
    n = len(v)
    mean = math.fsum(v) / n
    var = math.fsum((x - mean) ** 2 for x in v) / n
    return v[-1] - v[0], mean, math.sqrt(var)


def popcount(n: int) -> int:
    return bin(n).count("1")


def gray_by_reflection(bits: int) -> list[int]:
    """Reflected binary code built by mirroring, not by the xor formula."""
    codes = [0, 1]
    for b in range(1, bits):
        codes = codes + [c | (1 << b) for c in reversed(codes)]
    return codes


def render_ring(shape, cx, cy, r_out, width=None, bg=230.0, ink=50.0, ss=8):
    """Anti-aliased ring (or disk when ``width`` is None) by supersampling."""
    h, w = shape
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    cover = np.zeros(shape)
    r_in = 0.0 if width is None else r_out - width
    for oy in offs:
        for ox in offs:
            d = np.hypot(xx + ox - cx, yy + oy - cy)
            cover += (d <= r_out) & (d >= r_in)
    cover /= ss * ss
    return bg * (1 - cover) + ink * cover


def sphere_cap(n, radius, center, max_polar_deg, rng, axis=(0.0, 0.0, -1.0)):
    """Uniform-area samples on a spherical cap around ``axis``."""
    cmin = math.cos(math.radians(max_polar_deg))
    z = rng.uniform(cmin, 1.0, n)
    phi = rng.uniform(0, 2 * np.pi, n)
    s = np.sqrt(1 - z * z)
    local = np.column_stack([s * np.cos(phi), s * np.sin(phi), z])
    a = np.asarray(axis, float) / np.linalg.norm(axis)
    # rotate +z onto axis
    v = np.cross([0.0, 0.0, 1.0], a)
    c = a[2]
    if np.linalg.norm(v) < 1e-12:
        Rm = np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    else:
        vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
        Rm = np.eye(3) + vx + vx @ vx / (1 + c)
    return np.asarray(center, float) + radius * local @ Rm.T


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def plane_distance_scalar(p, a, b, c, d):
    return abs(a * p[0] + b * p[1] + c * p[2] + d) / math.sqrt(a * a + b * b + c * c)
