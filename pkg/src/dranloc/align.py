"""Coarse-to-fine feature-metric pose refinement with Levenberg-Marquardt.

For a pyramid level the cost is

    E(pose) = sum_i  w_i * rho(|F_q[p_q^i] - F_k[p_k^i]|^2)

with ``w_i = 1 / ((1 + U_q[p_q^i]) (1 + U_k[p_k^i]))``, ``p_q^i`` the projection
of map point ``i`` through the query pose and ``p_k^i`` its projection through the
(trusted) keyframe pose. Only the query pose is optimised.

``lm_step`` solves ``(H + diag(lambda) diag(H)) delta = J^T W r`` with ``J = dr/d
delta``; the descent update is therefore ``pose' = exp(-delta) * pose``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import LevelMissing, NoValidPoints, SingularSystem
from .geometry import left_update, project_points, projection_jacobians, transform_points

POINT_SOURCES = ("top_keyframe_obs", "all_candidate_obs")
ROBUST_LOSSES = ("none", "huber", "cauchy")


@dataclass(frozen=True)
class AlignConfig:
    level_order: tuple = (16, 4, 1)
    max_iters_per_level: int = 30
    huber_scale: object = 1.0            # float, or {stride: scale}
    robust: str = "huber"
    damping: tuple = (0.01,) * 6
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    lambda_bounds: tuple = (1e-6, 1e4)
    step_tol: float = 1e-6
    point_source: str = "top_keyframe_obs"
    border_margin_texels: float = 1.0

    def __post_init__(self):
        if self.robust not in ROBUST_LOSSES:
            raise ValueError(f"robust must be one of {ROBUST_LOSSES}")
        if self.point_source not in POINT_SOURCES:
            raise ValueError(f"point_source must be one of {POINT_SOURCES}")
        if len(self.damping) != 6 or min(self.damping) < 0:
            raise ValueError("damping must be six nonnegative values")
        if not self.step_tol > 0 or self.max_iters_per_level < 1:
            raise ValueError("tolerances must be positive")

    def scale_for(self, stride):
        if isinstance(self.huber_scale, dict):
            return float(self.huber_scale.get(stride, self.huber_scale.get(str(stride), 1.0)))
        return float(self.huber_scale)


@dataclass(frozen=True, eq=False)
class ReferenceView:
    """One keyframe contributing residual terms."""

    pose: object
    camera: object
    pyramid: object
    points: np.ndarray                 # (N, 3) world
    pixels: np.ndarray = None          # (N, 2) keyframe pixels; projected if None


@dataclass(eq=False)
class ResidualSystem:
    residuals: np.ndarray       # (N, D)
    jacobian: np.ndarray        # (N, D, 6), or None
    unc_weights: np.ndarray     # (N,)
    robust_weights: np.ndarray  # (N,)
    total_cost: float
    num_dropped: int = 0

    @property
    def weights(self):
        return self.unc_weights * self.robust_weights

    @property
    def num_points(self):
        return len(self.residuals)

    @property
    def r(self):
        return self.residuals.reshape(-1)

    @property
    def J(self):
        return self.jacobian.reshape(-1, 6)

    @property
    def W(self):
        return np.repeat(self.weights, self.residuals.shape[1])

    def normal_equations(self):
        w = self.weights
        H = np.einsum("n,ndi,ndj->ij", w, self.jacobian, self.jacobian)
        g = np.einsum("n,ndi,nd->i", w, self.jacobian, self.residuals)
        return H, g


@dataclass
class LevelStats:
    stride: int
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    points_used: int
    cost_history: list = field(default_factory=list)


@dataclass
class AlignResult:
    pose: object
    levels: list
    points_used: int

    @property
    def converged(self):
        return bool(self.levels) and self.levels[-1].converged


# ---------------------------------------------------------------------------
# weights and losses
# ---------------------------------------------------------------------------

def uncertainty_weight(u_q, u_k):
    return 1.0 / ((1.0 + np.asarray(u_q, dtype=float)) * (1.0 + np.asarray(u_k, dtype=float)))


def robust_weight(sq_norm, gamma, kind="huber"):
    """IRLS weight rho'(s) for the squared residual norm s."""
    s = np.asarray(sq_norm, dtype=float)
    if kind == "none":
        return np.ones_like(s)
    if kind == "cauchy":
        return 1.0 / (1.0 + s / gamma ** 2)
    n = np.sqrt(s)
    return np.where(n <= gamma, 1.0, gamma / np.where(n > 0, n, 1.0))


def robust_cost(sq_norm, gamma, kind="huber"):
    s = np.asarray(sq_norm, dtype=float)
    if kind == "none":
        return s
    if kind == "cauchy":
        return gamma ** 2 * np.log1p(s / gamma ** 2)
    return np.where(s <= gamma ** 2, s, 2.0 * gamma * np.sqrt(s) - gamma ** 2)


# ---------------------------------------------------------------------------
# per-level problem
# ---------------------------------------------------------------------------

def _grid_ok(gx, gy, w, h, lo):
    return (gx >= lo) & (gx <= w - 1 - lo) & (gy >= lo) & (gy <= h - 1 - lo)


class LevelProblem:
    """Keyframe-side samples for one level, cached; query side evaluated per pose."""

    def __init__(self, stride, refs, query_pyr, camera_q, config):
        self.stride = stride
        self.config = config
        self.camera_q = camera_q
        self.fq, self.uq = query_pyr.level(stride)
        self.gamma = config.scale_for(stride)
        xyz, fk, uk = [], [], []
        self.num_dropped_ref = 0
        for ref in refs:
            fmap, umap = ref.pyramid.level(stride)
            pts = np.asarray(ref.points, dtype=float).reshape(-1, 3)
            if ref.pixels is not None:
                pk = np.asarray(ref.pixels, dtype=float).reshape(-1, 2)
                ok = np.ones(len(pts), dtype=bool)
            else:
                pk, ok = project_points(ref.camera, transform_points(ref.pose, pts))
            gx, gy = pk[:, 0] / stride, pk[:, 1] / stride
            # reference samples must interpolate; clamped border values are biased
            ok &= _grid_ok(np.nan_to_num(gx, nan=-1e9), np.nan_to_num(gy, nan=-1e9),
                           fmap.width, fmap.height, 0.0)
            self.num_dropped_ref += int((~ok).sum())
            xyz.append(pts[ok])
            fk.append(_kernels.bilinear_values(fmap.data, gx[ok], gy[ok]))
            uk.append(_kernels.bilinear_values(umap.data[:, :, None], gx[ok], gy[ok])[:, 0])
        self.xyz = np.vstack(xyz) if xyz else np.zeros((0, 3))
        self.fk = np.vstack(fk) if fk else np.zeros((0, self.fq.depth))
        self.uk = np.concatenate(uk) if uk else np.zeros(0)
        if self.fk.shape[1] != self.fq.depth:
            raise ValueError("query and keyframe feature depths differ")

    def query_grid(self, pose, idx):
        Pc = transform_points(pose, self.xyz[idx])
        uv, front = project_points(self.camera_q, Pc)
        return Pc, uv / self.stride, front

    def select(self, pose, margin):
        """Indices of points valid at ``pose`` with ``margin`` texels inside the grid."""
        idx = np.arange(len(self.xyz))
        _, g, front = self.query_grid(pose, idx)
        g = np.nan_to_num(g, nan=-1e9)
        ok = front & _grid_ok(g[:, 0], g[:, 1], self.fq.width, self.fq.height, margin)
        return idx[ok]

    def evaluate(self, pose, idx=None, with_jacobian=True, clamp=False):
        """Residual system at ``pose``.

        Without ``clamp``, points outside the sampleable region are dropped. With
        ``clamp`` the point set ``idx`` is fixed and samples clamp to the border;
        a point behind the camera makes the cost infinite.
        """
        if idx is None:
            idx = np.arange(len(self.xyz))
        Pc, g, front = self.query_grid(pose, idx)
        if clamp:
            if not front.all():
                return None
            keep = np.ones(len(idx), dtype=bool)
        else:
            gg = np.nan_to_num(g, nan=-1e9)
            keep = front & _grid_ok(gg[:, 0], gg[:, 1], self.fq.width, self.fq.height, -0.5)
        dropped = int((~keep).sum())
        if not keep.any():
            raise NoValidPoints(f"no valid points at stride {self.stride}")
        sel = idx[keep]
        gx, gy = g[keep, 0], g[keep, 1]
        if with_jacobian:
            fq, dfq = _kernels.bilinear_values_grads(self.fq.data, gx, gy)
            dfq /= self.stride
            J = np.einsum("ndk,nkj->ndj", dfq, projection_jacobians(self.camera_q, Pc[keep]))
        else:
            fq = _kernels.bilinear_values(self.fq.data, gx, gy)
            J = None
        uq = _kernels.bilinear_values(self.uq.data[:, :, None], gx, gy)[:, 0]
        r = fq - self.fk[sel]
        sq = np.einsum("nd,nd->n", r, r)
        wu = uncertainty_weight(uq, self.uk[sel])
        wr = robust_weight(sq, self.gamma, self.config.robust)
        cost = float(np.sum(wu * robust_cost(sq, self.gamma, self.config.robust)))
        return ResidualSystem(r, J, wu, wr, cost, dropped)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def _refs_from_points(points, kf_pyr, camera_k, pose_k):
    if isinstance(points, np.ndarray):
        return [ReferenceView(pose_k, camera_k, kf_pyr, points)]
    points = list(points)
    xyz = np.array([np.asarray(getattr(p, "position", p), dtype=float) for p, _ in points]).reshape(-1, 3)
    pix = [px for _, px in points]
    if any(px is None for px in pix):
        return [ReferenceView(pose_k, camera_k, kf_pyr, xyz)]
    return [ReferenceView(pose_k, camera_k, kf_pyr, xyz, np.array(pix, dtype=float).reshape(-1, 2))]


def _check_level(level, pyramids):
    for pyr in pyramids:
        if level not in pyr.strides:
            raise LevelMissing(f"stride {level} missing from pyramid with strides {pyr.strides}")


def build_residual_system_multi(level, pose, refs, query_pyr, camera_q, config=AlignConfig()):
    _check_level(level, [query_pyr] + [r.pyramid for r in refs])
    return LevelProblem(level, refs, query_pyr, camera_q, config).evaluate(pose)


def build_residual_system(level, pose, points, query_pyr, kf_pyr, camera_q, camera_k, pose_k,
                          config=AlignConfig()):
    """Residuals, Jacobian and weights for one keyframe's points at one level."""
    refs = _refs_from_points(points, kf_pyr, camera_k, pose_k)
    return build_residual_system_multi(level, pose, refs, query_pyr, camera_q, config)


def feature_metric_cost(level, pose, refs, query_pyr, camera_q, config=AlignConfig()):
    _check_level(level, [query_pyr] + [r.pyramid for r in refs])
    return LevelProblem(level, refs, query_pyr, camera_q, config).evaluate(pose, with_jacobian=False).total_cost


def lm_step(system, lam, max_retries=5):
    """Solve ``(H + diag(lam) * diag(H)) delta = J^T W r`` by Cholesky."""
    H, g = system.normal_equations() if isinstance(system, ResidualSystem) else system
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (6,)).copy()
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(g))):
        raise SingularSystem("non-finite normal equations")
    d = np.diag(H)
    for _ in range(max_retries + 1):
        A = H + np.diag(lam * d)
        try:
            L = np.linalg.cholesky(A)
            delta = np.linalg.solve(L.T, np.linalg.solve(L, g))
            if np.all(np.isfinite(delta)):
                return delta
        except np.linalg.LinAlgError:
            pass
        lam = np.where(lam > 0, lam * 10.0, 1e-6)
    raise SingularSystem("normal equations could not be factorised")


def optimize_level(level, init_pose, refs, query_pyr, camera_q, config=AlignConfig()):
    """LM at one level. Returns ``(pose, LevelStats)``."""
    _check_level(level, [query_pyr] + [r.pyramid for r in refs])
    prob = LevelProblem(level, refs, query_pyr, camera_q, config)
    idx = prob.select(init_pose, config.border_margin_texels)
    if len(idx) == 0:
        raise NoValidPoints(f"no points inside the query view at stride {level}")
    pose = init_pose
    system = prob.evaluate(pose, idx, clamp=True)
    if system is None:
        raise NoValidPoints("selected points behind the camera")
    cost = system.total_cost
    stats = LevelStats(level, cost, cost, 0, False, len(idx), [cost])
    damping = np.asarray(config.damping, dtype=float)
    lo, hi = config.lambda_bounds
    mu = 1.0
    step_converged = False
    for it in range(config.max_iters_per_level):
        stats.iterations = it + 1
        try:
            delta = lm_step(system, damping * mu)
        except SingularSystem:
            mu *= config.lambda_up
            if mu > hi:
                break
            continue
        if np.linalg.norm(delta) < config.step_tol:
            step_converged = True
            break
        cand = left_update(pose, -delta)
        new = prob.evaluate(cand, idx, clamp=True)
        if new is not None and new.total_cost < cost:
            pose, system, cost = cand, new, new.total_cost
            stats.cost_history.append(cost)
            mu = max(mu * config.lambda_down, lo)
        else:
            mu *= config.lambda_up
            if mu > hi:
                break
    stats.final_cost = cost
    norms = np.sqrt(np.einsum("nd,nd->n", system.residuals, system.residuals))
    stats.converged = step_converged and float(np.median(norms)) <= prob.gamma
    return pose, stats


def optimize_pyramid(init_pose, refs, query_pyr, camera_q, config=AlignConfig()):
    """Run ``optimize_level`` over ``config.level_order``, each seeded by the last."""
    pose, levels = init_pose, []
    for stride in config.level_order:
        pose, stats = optimize_level(stride, pose, refs, query_pyr, camera_q, config)
        levels.append(stats)
    return AlignResult(pose, levels, levels[-1].points_used if levels else 0)
