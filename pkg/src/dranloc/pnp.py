"""Minimal and refined perspective-n-point solvers."""

import numpy as np

from .geometry import PoseSE3, Z_MIN, left_update, project_points, projection_jacobians, transform_points


def absolute_orientation(world, cam):
    """R, t minimising sum |R world_i + t - cam_i|^2 (Kabsch, no scale)."""
    mw = world.mean(axis=0)
    mc = cam.mean(axis=0)
    H = (world - mw).T @ (cam - mc)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, mc - R @ mw


def _real_roots(coeffs):
    coeffs = np.asarray(coeffs, dtype=float)
    scale = np.max(np.abs(coeffs))
    if not scale > 0:
        return np.zeros(0)
    coeffs = coeffs / scale
    # drop vanishing leading terms so numpy.roots sees the true degree
    nz = np.flatnonzero(np.abs(coeffs) > 1e-14)
    if len(nz) == 0:
        return np.zeros(0)
    roots = np.roots(coeffs[nz[0]:])
    return roots[np.abs(roots.imag) < 1e-6 * np.maximum(1.0, np.abs(roots))].real


def _polish(coeffs, v, iters=3):
    p = np.poly1d(coeffs)
    dp = p.deriv()
    for _ in range(iters):
        d = dp(v)
        if d == 0:
            break
        v = v - p(v) / d
    return v


def p3p(bearings, world):
    """Grunert's three-point solution.

    ``bearings`` are unit rays (3, 3) in the camera frame, ``world`` the matching
    points (3, 3). Returns a list of candidate poses (up to four).
    """
    j1, j2, j3 = bearings
    P1, P2, P3 = world
    a = np.linalg.norm(P2 - P3)
    b = np.linalg.norm(P1 - P3)
    c = np.linalg.norm(P1 - P2)
    if min(a, b, c) < 1e-12:
        return []
    ca, cb, cg = j2 @ j3, j1 @ j3, j1 @ j2
    a2, b2, c2 = a * a, b * b, c * c
    acb = (a2 - c2) / b2
    apcb = (a2 + c2) / b2
    A4 = (acb - 1.0) ** 2 - 4.0 * c2 / b2 * ca * ca
    A3 = 4.0 * (acb * (1.0 - acb) * cb - (1.0 - apcb) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb)
    A2 = 2.0 * (acb * acb - 1.0 + 2.0 * acb * acb * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca
                - 4.0 * apcb * ca * cb * cg + 2.0 * (b2 - a2) / b2 * cg * cg)
    A1 = 4.0 * (-acb * (1.0 + acb) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apcb) * ca * cg)
    A0 = (1.0 + acb) ** 2 - 4.0 * a2 / b2 * cg * cg
    coeffs = [A4, A3, A2, A1, A0]
    poses = []
    for v in _real_roots(coeffs):
        v = _polish(coeffs, v)
        den = 2.0 * (cg - v * ca)
        if abs(den) < 1e-12:
            continue
        u = ((-1.0 + acb) * v * v - 2.0 * acb * cb * v + 1.0 + acb) / den
        d = 1.0 + u * u - 2.0 * u * cg
        if not d > 0:
            continue
        s1 = np.sqrt(c2 / d)
        s2, s3 = u * s1, v * s1
        if s1 <= 0 or s2 <= 0 or s3 <= 0:
            continue
        cam = np.vstack([s1 * j1, s2 * j2, s3 * j3])
        R, t = absolute_orientation(world, cam)
        if np.all(np.isfinite(R)) and np.all(np.isfinite(t)):
            poses.append(PoseSE3.from_rt(R, t))
    return poses


def refine_pose(pose, camera, world, pixels, iterations=10, scale_floor=1e-3):
    """Gauss-Newton on reprojection error with redescending (Tukey) IRLS weights.

    The Tukey scale follows the residual spread (1.4826 * MAD, floored at
    ``scale_floor`` pixels), so a stray contaminated correspondence among
    otherwise consistent ones gets zero weight once the fit tightens.
    """
    world = np.asarray(world, dtype=float)
    pixels = np.asarray(pixels, dtype=float)
    for _ in range(iterations):
        Pc = transform_points(pose, world)
        uv, ok = project_points(camera, Pc)
        if ok.sum() < 3:
            break
        r = (uv - pixels)[ok]
        e = np.linalg.norm(r, axis=1)
        sigma = max(1.4826 * np.median(e), scale_floor)
        c = 4.685 * sigma
        w = np.where(e < c, (1.0 - (e / c) ** 2) ** 2, 0.0)
        if np.count_nonzero(w) < 3:
            break
        J = projection_jacobians(camera, Pc[ok])
        sw = np.sqrt(w)[:, None, None]
        A = (sw * J).reshape(-1, 6)
        bvec = -(sw[:, :, 0] * r).reshape(-1)
        delta, *_ = np.linalg.lstsq(A, bvec, rcond=None)
        if not np.all(np.isfinite(delta)):
            break
        pose = left_update(pose, delta)
        if np.linalg.norm(delta) < 1e-14:
            break
    return pose


def in_front(pose, world):
    return transform_points(pose, world)[:, 2] > Z_MIN
