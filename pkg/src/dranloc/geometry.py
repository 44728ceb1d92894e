"""SE(3) poses, the pinhole camera, and pixel Jacobians.

Conventions:
    * A pose maps world to camera: ``x_cam = R @ x_world + t``.
    * Rotations are stored as unit quaternions ``(w, x, y, z)``.
    * Tangent vectors are ``(rho, omega)``: translation first, rotation second.
    * Pose updates are left-multiplicative: ``pose' = se3_exp(delta) * pose``,
      so Jacobians are taken with respect to a perturbation in the camera frame.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import BehindCamera

Z_MIN = 1e-6
SMALL_ANGLE = 1e-8
# below this the closed-form SO(3) coefficients lose digits to cancellation
SERIES_ANGLE = 1e-2


def skew(v):
    """Cross-product matrix ``[v]x``."""
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_rotmat(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotmat_to_quat(R):
    """Shepperd's method; returns a unit quaternion with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax([tr, *diag]))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid world-to-camera transform."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4)
        t = np.asarray(self.t, dtype=float).reshape(3)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0 or not np.all(np.isfinite(t)):
            raise ValueError("pose needs a finite, nonzero quaternion and finite translation")
        if abs(n - 1.0) > 1e-14:
            # leave near-unit input bit-exact so text round trips are lossless
            q = q / n
        if q[0] < 0:
            q = -q
        q.flags.writeable = False
        t = t.copy()
        t.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_rt(cls, R, t):
        return cls(rotmat_to_quat(R), t)

    @cached_property
    def R(self):
        R = quat_to_rotmat(self.q)
        R.flags.writeable = False
        return R

    @property
    def center(self):
        """Camera center in world coordinates, ``-R^T t``."""
        return -self.R.T @ self.t

    def __matmul__(self, other):
        return se3_compose(self, other)

    def __repr__(self):
        return f"PoseSE3(q={np.array2string(self.q, precision=6)}, t={np.array2string(self.t, precision=6)})"

    def to_string(self):
        return pose_to_string(self)


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def intrinsics(self):
        return np.array([self.fx, self.fy, self.cx, self.cy])

    def scaled(self, s):
        """Camera for the image resized by ``s`` (pixel centers at integer coordinates)."""
        w = max(1, int(round(self.width * s)))
        h = max(1, int(round(self.height * s)))
        return PinholeCamera(self.fx * s, self.fy * s, (self.cx + 0.5) * s - 0.5,
                             (self.cy + 0.5) * s - 0.5, w, h)

    def in_image(self, uv, margin=0.0):
        uv = np.atleast_2d(uv)
        return ((uv[:, 0] >= -margin) & (uv[:, 0] < self.width + margin)
                & (uv[:, 1] >= -margin) & (uv[:, 1] < self.height + margin))

    def backproject(self, uv):
        """Unit-less rays ``(x/z, y/z, 1)`` for pixels, shape (N, 3)."""
        uv = np.atleast_2d(np.asarray(uv, dtype=float))
        return np.column_stack([(uv[:, 0] - self.cx) / self.fx,
                                (uv[:, 1] - self.cy) / self.fy,
                                np.ones(len(uv))])


# ---------------------------------------------------------------------------
# exponential / logarithm
# ---------------------------------------------------------------------------

def _so3_coeffs(theta):
    """sin(t)/t, (1-cos t)/t^2, (t - sin t)/t^3; Taylor series below SERIES_ANGLE."""
    t2 = theta * theta
    if theta < SERIES_ANGLE:
        return (1.0 - t2 / 6.0 * (1.0 - t2 / 20.0),
                0.5 - t2 / 24.0 * (1.0 - t2 / 30.0),
                1.0 / 6.0 - t2 / 120.0 * (1.0 - t2 / 42.0))
    return (np.sin(theta) / theta, 2.0 * np.sin(0.5 * theta) ** 2 / t2,
            (theta - np.sin(theta)) / (t2 * theta))


def so3_exp_quat(omega):
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    if theta < SMALL_ANGLE:
        half = 0.5 - theta * theta / 48.0
        return np.array([1.0 - theta * theta / 8.0, *(half * omega)])
    return np.array([np.cos(theta / 2), *(np.sin(theta / 2) / theta * omega)])


def so3_exp(omega):
    """Rodrigues' formula."""
    omega = np.asarray(omega, dtype=float)
    a, b, _ = _so3_coeffs(np.linalg.norm(omega))
    K = skew(omega)
    return np.eye(3) + a * K + b * (K @ K)


def so3_left_jacobian(omega):
    """The ``V`` matrix that maps rho to the translation of ``exp((rho, omega))``."""
    omega = np.asarray(omega, dtype=float)
    _, b, c = _so3_coeffs(np.linalg.norm(omega))
    K = skew(omega)
    return np.eye(3) + b * K + c * (K @ K)


def quat_log(q):
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    v = q[1:]
    s = np.linalg.norm(v)
    if s < SMALL_ANGLE:
        return 2.0 * v / q[0]
    return 2.0 * np.arctan2(s, q[0]) / s * v


def se3_exp(delta):
    """Exponential map of a tangent vector ``(rho, omega)`` to a pose."""
    delta = np.asarray(delta, dtype=float).reshape(6)
    rho, omega = delta[:3], delta[3:]
    return PoseSE3(so3_exp_quat(omega), so3_left_jacobian(omega) @ rho)


def se3_log(pose):
    omega = quat_log(pose.q)
    theta = np.linalg.norm(omega)
    K = skew(omega)
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        coef = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        coef = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / theta ** 2
    V_inv = np.eye(3) - 0.5 * K + coef * (K @ K)
    return np.concatenate([V_inv @ pose.t, omega])


def se3_compose(a, b):
    """``a * b``: apply ``b`` first, then ``a``."""
    return PoseSE3(quat_multiply(a.q, b.q), a.R @ b.t + a.t)


def se3_inverse(p):
    q_inv = np.array([p.q[0], -p.q[1], -p.q[2], -p.q[3]])
    return PoseSE3(q_inv, -(p.R.T @ p.t))


def left_update(pose, delta):
    return se3_compose(se3_exp(delta), pose)


# ---------------------------------------------------------------------------
# points and projection
# ---------------------------------------------------------------------------

def transform_point(pose, P):
    return pose.R @ np.asarray(P, dtype=float) + pose.t


def transform_points(pose, P):
    return np.asarray(P, dtype=float).reshape(-1, 3) @ pose.R.T + pose.t


def project(camera, P_cam):
    x, y, z = np.asarray(P_cam, dtype=float)
    if not z > Z_MIN:
        raise BehindCamera(f"point depth {z} <= {Z_MIN}")
    return np.array([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy])


def project_points(camera, P_cam):
    """Vectorised projection; returns ``(uv, valid)`` where invalid rows are nan."""
    P_cam = np.asarray(P_cam, dtype=float).reshape(-1, 3)
    z = P_cam[:, 2]
    valid = z > Z_MIN
    zs = np.where(valid, z, np.nan)
    uv = np.column_stack([camera.fx * P_cam[:, 0] / zs + camera.cx,
                          camera.fy * P_cam[:, 1] / zs + camera.cy])
    return uv, valid


def projection_jacobians(camera, P_cam):
    """d(pixel)/d(delta) for camera-frame points, shape (N, 2, 6)."""
    P_cam = np.asarray(P_cam, dtype=float).reshape(-1, 3)
    x, y, z = P_cam.T
    iz = 1.0 / z
    fx, fy = camera.fx, camera.fy
    J = np.zeros((len(P_cam), 2, 6))
    # d pix / d P_cam
    J[:, 0, 0] = fx * iz
    J[:, 0, 2] = -fx * x * iz * iz
    J[:, 1, 1] = fy * iz
    J[:, 1, 2] = -fy * y * iz * iz
    # chain with d P_cam / d omega = -[P_cam]x
    J[:, 0, 3] = -fx * x * y * iz * iz
    J[:, 0, 4] = fx * (1.0 + x * x * iz * iz)
    J[:, 0, 5] = -fx * y * iz
    J[:, 1, 3] = -fy * (1.0 + y * y * iz * iz)
    J[:, 1, 4] = fy * x * y * iz * iz
    J[:, 1, 5] = fy * x * iz
    return J


def project_jacobian(camera, pose, P):
    """2x6 Jacobian of the projected pixel w.r.t. a left perturbation of ``pose``."""
    Pc = transform_point(pose, P)
    if not Pc[2] > Z_MIN:
        raise BehindCamera(f"point depth {Pc[2]} <= {Z_MIN}")
    return projection_jacobians(camera, Pc)[0]


def rotation_angle_deg(q_a, q_b):
    """Angle of ``R_a R_b^T`` in degrees, stable for tiny angles and exact for equal inputs."""
    q_a = np.asarray(q_a, dtype=float)
    q_b = np.asarray(q_b, dtype=float)
    d = np.linalg.norm(q_a - q_b)
    s = np.linalg.norm(q_a + q_b)
    return float(np.degrees(4.0 * np.arctan2(min(d, s), max(d, s))))


def pose_error(est, gt):
    """(camera-center distance, rotation angle in degrees)."""
    return float(np.linalg.norm(est.center - gt.center)), rotation_angle_deg(est.q, gt.q)


# ---------------------------------------------------------------------------
# text form
# ---------------------------------------------------------------------------

def pose_to_string(pose):
    return " ".join(f"{v:.17g}" for v in (*pose.q, *pose.t))


def pose_from_string(text):
    vals = [float(v) for v in text.split()]
    if len(vals) != 7:
        raise ValueError(f"expected 7 numbers for a pose, got {len(vals)}")
    return PoseSE3(vals[:4], vals[4:])


def look_at(center, target, up=(0.0, 0.0, 1.0)):
    """World-to-camera pose with +z toward ``target`` and +y pointing down."""
    center = np.asarray(center, dtype=float)
    f = np.asarray(target, dtype=float) - center
    f /= np.linalg.norm(f)
    right = np.cross(f, up)
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    R = np.vstack([right, down, f])
    return PoseSE3.from_rt(R, -R @ center)
