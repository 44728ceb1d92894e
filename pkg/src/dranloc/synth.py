"""Synthetic scenes with known geometry and analytic feature fields.

A scene is a set of textured rectangles (a closed room by default). Every
level of every image is rendered by casting the ray through each texel's pixel
and evaluating a smooth random-Fourier feature field at the hit point, so two
views of the same surface point see the same feature up to interpolation and
the optional noise. That makes the feature-metric optimum sit at the true pose
and gives every stage of the pipeline a ground truth.
"""

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, NoIntersection
from .feature import FeatureMap, FeaturePyramid, UncertaintyMap, sample_many
from .geometry import PinholeCamera, PoseSE3, left_update, look_at, pose_to_string, project_points, \
    transform_points
from .retrieval import GemParams, finalize_descriptor, fit_whitening, gem_pool, save_whitening, unit
from .scene_map import Keyframe, SceneMap, ScenePoint, save_map
from .store import FeatureStore, keyframe_name, query_name

SCENE_DIAMETER = 10.0


# ---------------------------------------------------------------------------
# feature fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeatureField:
    """``A @ cos(Omega X / sigma + phi) / sqrt(M)`` plus a per-channel offset."""

    omegas: np.ndarray   # (M, 3)
    phases: np.ndarray   # (M,)
    A: np.ndarray        # (D, M)
    sigma: float
    seed: int

    @property
    def dim(self):
        return self.A.shape[0]

    @property
    def num_components(self):
        return self.A.shape[1]

    @property
    def offset(self):
        """Smallest per-channel shift that keeps every value nonnegative."""
        return np.abs(self.A).sum(axis=1) / math.sqrt(self.num_components)

    def centered(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, 3)
        return np.cos(X @ self.omegas.T / self.sigma + self.phases) @ self.A.T / math.sqrt(self.num_components)

    def __call__(self, X):
        return self.centered(X) + self.offset

    def lipschitz_bound(self):
        return (np.linalg.norm(self.A, 2) * np.linalg.norm(self.omegas, 2)
                / (self.sigma * math.sqrt(self.num_components)))


def make_field(dim, sigma, seed, amplitude=(0.5, 1.5)):
    """One plane wave per channel with random direction, phase and amplitude."""
    rng = np.random.default_rng(seed)
    omegas = rng.normal(size=(dim, 3))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=dim)
    amps = rng.uniform(*amplitude, size=dim)
    A = np.diag(amps) * math.sqrt(dim)
    return FeatureField(omegas, phases, A, float(sigma), int(seed))


def world_feature(fld, X):
    X = np.asarray(X, dtype=float)
    out = fld(X.reshape(-1, 3))
    return out[0] if X.ndim == 1 else out


# ---------------------------------------------------------------------------
# geometry of the scene
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Plane:
    center: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    half1: float
    half2: float

    @property
    def normal(self):
        return np.cross(self.e1, self.e2)


def _rect(center, e1, e2, h1, h2):
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    return Plane(np.asarray(center, dtype=float), e1 / np.linalg.norm(e1), e2 / np.linalg.norm(e2), h1, h2)


def cast_rays(planes, origin, dirs):
    """Nearest hit distance, plane index and in-plane border distance per ray."""
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    n = len(dirs)
    best_t = np.full(n, np.inf)
    best_k = np.full(n, -1, dtype=np.int64)
    border = np.zeros(n)
    for k, pl in enumerate(planes):
        nrm = pl.normal
        den = dirs @ nrm
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((pl.center - origin) @ nrm) / den
        ok = np.isfinite(t) & (t > 1e-9) & (t < best_t)
        if not ok.any():
            continue
        X = origin + t[ok, None] * dirs[ok]
        u1 = (X - pl.center) @ pl.e1
        u2 = (X - pl.center) @ pl.e2
        inside = (np.abs(u1) <= pl.half1) & (np.abs(u2) <= pl.half2)
        rows = np.flatnonzero(ok)[inside]
        best_t[rows] = t[ok][inside]
        best_k[rows] = k
        border[rows] = np.minimum(pl.half1 - np.abs(u1[inside]), pl.half2 - np.abs(u2[inside]))
    return best_t, best_k, border


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    num_planes: int = 5
    points_per_keyframe: int = 150
    num_keyframes: int = 30
    num_queries: int = 40
    feature_dims: dict = field(default_factory=lambda: {1: 32, 4: 64, 16: 128})
    texture_scales: dict = field(default_factory=lambda: {1: 0.08, 4: 0.2, 16: 0.7})
    hyper_layers: list = field(default_factory=lambda: [[4, 128, 0.12], [8, 128, 0.25]])
    descriptor_dim: int = 512
    retrieval_scale: float = 1.5
    gem_p: float = 3.0
    whitening_views: int = 0
    pixel_noise: float = 0.5
    feature_noise: float = 0.01
    uncertainty_mode: str = "zero"
    covisibility: float = 0.25
    width: int = 256
    height: int = 192
    focal: float = 180.0
    orbit_radius: float = 1.0
    camera_height: float = 1.5
    pitch_deg: float = -10.0
    room_height: float = 3.5
    query_offset: float = 0.15
    query_yaw_deg: float = 4.0
    seed: int = 0

    def validate(self):
        for name in ("num_planes", "points_per_keyframe", "num_keyframes", "num_queries", "descriptor_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.pixel_noise < 0 or self.feature_noise < 0:
            raise ConfigError("noise levels must be nonnegative")
        if self.uncertainty_mode not in ("zero", "border_ramp"):
            raise ConfigError("uncertainty_mode must be 'zero' or 'border_ramp'")
        if set(self.feature_dims) != set(self.texture_scales):
            raise ConfigError("feature_dims and texture_scales must cover the same strides")
        if not 0 <= self.covisibility <= 1:
            raise ConfigError("covisibility must lie in [0, 1]")
        if self.width < 16 or self.height < 16 or not self.focal > 0:
            raise ConfigError("camera must be at least 16x16 with positive focal length")
        if not 0 < self.orbit_radius < 0.5 * self.room_half_extent:
            raise ConfigError("orbit must stay well inside the room")

    @property
    def room_half_extent(self):
        return math.sqrt(max(SCENE_DIAMETER ** 2 - self.room_height ** 2, 1e-6) / 8.0)

    @property
    def camera(self):
        return PinholeCamera(self.focal, self.focal, (self.width - 1) / 2.0, (self.height - 1) / 2.0,
                             self.width, self.height)

    @property
    def obs_tol(self):
        return 3.0 * self.pixel_noise + 0.5

    @classmethod
    def from_dict(cls, doc):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        doc = dict(doc)
        for key in ("feature_dims", "texture_scales"):
            if key in doc:
                doc[key] = {int(k): v for k, v in doc[key].items()}
        try:
            cfg = cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    def to_dict(self):
        d = asdict(self)
        d["feature_dims"] = {str(k): v for k, v in self.feature_dims.items()}
        d["texture_scales"] = {str(k): v for k, v in self.texture_scales.items()}
        return d


# ---------------------------------------------------------------------------
# scene
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SynthScene:
    config: SynthConfig
    planes: list
    fields: dict            # stride -> FeatureField (alignment pyramid)
    hyper_fields: list      # [(stride, FeatureField)]
    retrieval_field: FeatureField
    camera: PinholeCamera


def make_scene(config):
    config.validate()
    rng = np.random.default_rng([config.seed, 1])
    a, h = config.room_half_extent, config.room_height
    ex, ey, ez = np.eye(3)
    planes = [
        _rect([0, 0, 0], ex, ey, a, a),
        _rect([a, 0, h / 2], ey, ez, a, h / 2),
        _rect([0, a, h / 2], ex, ez, a, h / 2),
        _rect([-a, 0, h / 2], ey, ez, a, h / 2),
        _rect([0, -a, h / 2], ex, ez, a, h / 2),
    ][:config.num_planes]
    for _ in range(max(0, config.num_planes - 5)):
        ang = rng.uniform(0, 2 * np.pi)
        rad = rng.uniform(2 * config.orbit_radius + 0.5, a - 0.4)
        c = np.array([rad * np.cos(ang), rad * np.sin(ang), 1.0])
        facing = ang + np.pi + rng.uniform(-0.5, 0.5)
        e1 = np.array([-np.sin(facing), np.cos(facing), 0.0])
        planes.append(_rect(c, e1, ez, 0.6, 1.0))
    seeds = rng.integers(0, 2 ** 31, size=3 + len(config.feature_dims) + len(config.hyper_layers))
    fields = {int(s): make_field(int(config.feature_dims[s]), float(config.texture_scales[s]), int(seeds[i]))
              for i, s in enumerate(sorted(config.feature_dims))}
    off = len(fields)
    hyper = [(int(s), make_field(int(d), float(sig), int(seeds[off + i])))
             for i, (s, d, sig) in enumerate(config.hyper_layers)]
    retr = make_field(int(config.descriptor_dim), float(config.retrieval_scale), int(seeds[-1]))
    return SynthScene(config, planes, fields, hyper, retr, config.camera)


def _rays(camera, pose, stride):
    w = -(-camera.width // stride)
    h = -(-camera.height // stride)
    xs, ys = np.meshgrid(np.arange(w) * stride, np.arange(h) * stride)
    d_cam = camera.backproject(np.column_stack([xs.ravel(), ys.ravel()]))
    return w, h, d_cam @ pose.R, pose.center


def render_layer(scene, camera, pose, stride, fld, activation="offset", noise=0.0, rng=None,
                 uncertainty_mode="zero", require_hit=True):
    """One ``FeatureMap`` (and its ``UncertaintyMap``) seen from ``pose``."""
    w, h, dirs, origin = _rays(camera, pose, stride)
    t, k, border = cast_rays(scene.planes, origin, dirs)
    hit = k >= 0
    if require_hit and not hit.any():
        raise NoIntersection("the view does not see any scene plane")
    feats = np.empty((len(dirs), fld.dim))
    X = origin + t[hit, None] * dirs[hit]
    if activation == "relu":
        feats[hit] = np.maximum(fld.centered(X), 0.0)
        feats[~hit] = 0.0
    else:
        feats[hit] = fld(X)
        feats[~hit] = fld.offset
    if noise > 0:
        feats += rng.normal(size=feats.shape) * (noise * fld.offset)
        feats = np.maximum(feats, 0.0)
    unc = np.zeros(len(dirs))
    if uncertainty_mode == "border_ramp":
        unc[hit] = 4.0 * np.clip(1.0 - border[hit] / 0.3, 0.0, 1.0)
        unc[~hit] = 4.0
    return FeatureMap(feats.reshape(h, w, fld.dim), stride), UncertaintyMap(unc.reshape(h, w), stride)


def render_pyramid(scene, camera, pose, strides=None, noise=None, rng=None):
    cfg = scene.config
    strides = sorted(scene.fields) if strides is None else sorted(strides)
    noise = cfg.feature_noise if noise is None else noise
    rng = rng if rng is not None else np.random.default_rng(0)
    levels = [render_layer(scene, camera, pose, s, scene.fields[s], "offset", noise, rng, cfg.uncertainty_mode)
              for s in strides]
    return FeaturePyramid(levels, has_uncertainty=[cfg.uncertainty_mode != "zero"] * len(levels))


def render_hyper_maps(scene, camera, pose, noise=None, rng=None):
    noise = scene.config.feature_noise if noise is None else noise
    rng = rng if rng is not None else np.random.default_rng(0)
    maps = [render_layer(scene, camera, pose, s, fld, "relu", noise, rng)[0] for s, fld in scene.hyper_fields]
    return FeaturePyramid([(m, None) for m in maps])


def raw_multiscale(scene, camera, pose, params=None):
    """Mean of unit GeM vectors over image scales 1, 1/sqrt(2), 1/2 (before whitening)."""
    params = params or GemParams(scene.config.gem_p)
    acc = []
    for s in (1.0, 2 ** -0.5, 0.5):
        fmap, _ = render_layer(scene, camera.scaled(s), pose, 16, scene.retrieval_field, "offset")
        acc.append(unit(gem_pool(fmap, params)))
    return np.mean(acc, axis=0)


def perturb_pose(pose, sigma_t, sigma_r_deg, rng):
    """``exp(delta) * pose`` with Gaussian ``delta``; RMS errors match the sigmas."""
    rho = rng.normal(size=3) * (sigma_t / math.sqrt(3.0))
    omega = rng.normal(size=3) * (math.radians(sigma_r_deg) / math.sqrt(3.0))
    return left_update(pose, np.concatenate([rho, omega]))


def offset_pose(pose, center_shift, rotvec):
    """Rotate about the camera center by ``rotvec`` and move the center by ``center_shift``."""
    from .geometry import se3_exp, se3_compose
    rot = se3_compose(se3_exp(np.concatenate([np.zeros(3), rotvec])), pose)
    c = pose.center + np.asarray(center_shift, dtype=float)
    return PoseSE3(rot.q, -rot.R @ c)


def perturb_pose_fixed(pose, trans, rot_deg, rng):
    """Random directions, exact magnitudes: center moves ``trans``, rotation ``rot_deg``."""
    d = rng.normal(size=3)
    a = rng.normal(size=3)
    return offset_pose(pose, trans * d / np.linalg.norm(d), math.radians(rot_deg) * a / np.linalg.norm(a))


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SynthBenchmark:
    scene: SynthScene
    map: SceneMap
    gt_query_poses: dict       # query id -> PoseSE3
    store: FeatureStore
    query_camera_id: int
    correspondences: dict      # query id -> {kf id: (point_ids, query_px, kf_px)}
    eps_render: dict           # stride -> float
    whitening: object = None

    @property
    def config(self):
        return self.scene.config

    @property
    def camera(self):
        return self.map.cameras[self.query_camera_id]

    @property
    def query_ids(self):
        return sorted(self.gt_query_poses)

    def nearest_keyframes(self, query_id, k=3):
        c = self.gt_query_poses[query_id].center
        kfs = sorted(self.map.keyframes, key=lambda kf: (np.linalg.norm(kf.pose.center - c)
                                                         + 0.05 * _angle(kf.pose, self.gt_query_poses[query_id]),
                                                         kf.id))
        return [kf.id for kf in kfs[:k]]

    def oracle_dict(self):
        return {
            "version": 1,
            "scene_diameter": SCENE_DIAMETER,
            "query_camera_id": self.query_camera_id,
            "eps_render": {str(s): v for s, v in sorted(self.eps_render.items())},
            "gt_query_poses": {str(q): pose_to_string(p) for q, p in sorted(self.gt_query_poses.items())},
            "correspondences": {
                str(q): {str(k): [[int(i), *map(float, a), *map(float, b)] for i, a, b in zip(*c)]
                         for k, c in sorted(per.items())}
                for q, per in sorted(self.correspondences.items())},
            "config": self.config.to_dict(),
        }

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        save_map(self.map, os.path.join(out_dir, "map.json"))
        self.store.save(os.path.join(out_dir, "features"))
        with open(os.path.join(out_dir, "queries.json"), "w") as fh:
            json.dump({"queries": [{"id": q, "camera_id": self.query_camera_id} for q in self.query_ids]},
                      fh, indent=1)
            fh.write("\n")
        with open(os.path.join(out_dir, "oracle.json"), "w") as fh:
            json.dump(self.oracle_dict(), fh, indent=1)
            fh.write("\n")
        if self.whitening is not None:
            save_whitening(self.whitening, os.path.join(out_dir, "whitening.gwht"))


def _angle(a, b):
    from .geometry import rotation_angle_deg
    return rotation_angle_deg(a.q, b.q)


def orbit_pose(config, azimuth, radius=None, height=None, yaw_offset_deg=0.0, pitch_deg=None):
    radius = config.orbit_radius if radius is None else radius
    height = config.camera_height if height is None else height
    pitch = math.radians(config.pitch_deg if pitch_deg is None else pitch_deg)
    yaw = azimuth + math.radians(yaw_offset_deg)
    c = np.array([radius * math.cos(azimuth), radius * math.sin(azimuth), height])
    f = np.array([math.cos(pitch) * math.cos(yaw), math.cos(pitch) * math.sin(yaw), math.sin(pitch)])
    return look_at(c, c + f)


def visible_mask(scene, camera, pose, xyz, margin=0.0):
    """Points in front, inside the image, and not occluded."""
    xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
    uv, front = project_points(camera, transform_points(pose, xyz))
    ok = front & camera.in_image(np.nan_to_num(uv, nan=-1e18), -margin)
    if ok.any():
        c = pose.center
        d = xyz[ok] - c
        dist = np.linalg.norm(d, axis=1)
        t, _, _ = cast_rays(scene.planes, c, d / dist[:, None])
        ok[np.flatnonzero(ok)] = t >= dist * (1 - 1e-7)
    return ok, uv


def correspondences(scene, scene_map, q_pose, kf, camera):
    """Map points visible in both views: (ids, query pixels, keyframe pixels), exact projections."""
    vis_q, uv_q = visible_mask(scene, camera, q_pose, scene_map.point_xyz)
    vis_k, uv_k = visible_mask(scene, scene_map.cameras[kf.camera_id], kf.pose, scene_map.point_xyz)
    both = np.flatnonzero(vis_q & vis_k)
    return scene_map.point_ids[both], uv_q[both], uv_k[both]


def _sample_points(scene, camera, pose, count, rng, margin=8.0, max_rounds=50):
    pts = []
    for _ in range(max_rounds):
        need = count - sum(len(p) for p in pts)
        if need <= 0:
            break
        uv = rng.uniform([margin, margin], [camera.width - 1 - margin, camera.height - 1 - margin],
                         size=(2 * need, 2))
        d = camera.backproject(uv) @ pose.R
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        t, k, _ = cast_rays(scene.planes, pose.center, d)
        hit = k >= 0
        pts.append((pose.center + t[hit, None] * d[hit])[:need])
    pts = np.vstack(pts) if pts else np.zeros((0, 3))
    if len(pts) < count:
        raise NoIntersection("keyframe sees too little of the scene to seed points")
    return pts


def build_benchmark(scene, keyframe_poses, query_poses, render_alignment=True, with_descriptors=True,
                    measure_eps=True):
    """Map, features and oracle for explicit keyframe and query poses."""
    cfg = scene.config
    camera = scene.camera
    rng = np.random.default_rng([cfg.seed, 2])

    seeded = [_sample_points(scene, camera, p, cfg.points_per_keyframe, rng) for p in keyframe_poses]
    xyz = np.vstack(seeded)
    owner = np.concatenate([np.full(len(s), k) for k, s in enumerate(seeded)])
    ids = np.arange(len(xyz), dtype=np.int64)
    points = [ScenePoint(int(i), xyz[i]) for i in ids]

    keyframes = []
    noise_cap = 3.0 * cfg.pixel_noise
    for k, pose in enumerate(keyframe_poses):
        vis, uv = visible_mask(scene, camera, pose, xyz)
        take = vis & ((owner == k) | (rng.random(len(xyz)) < cfg.covisibility))
        sel = np.flatnonzero(take)
        noise = rng.normal(size=(len(sel), 2)) * cfg.pixel_noise
        norm = np.linalg.norm(noise, axis=1, keepdims=True)
        noise = np.where(norm > noise_cap, noise * noise_cap / np.where(norm > 0, norm, 1.0), noise)
        pix = uv[sel] + noise
        pix[:, 0] = np.clip(pix[:, 0], 0.0, np.nextafter(camera.width, 0))
        pix[:, 1] = np.clip(pix[:, 1], 0.0, np.nextafter(camera.height, 0))
        keyframes.append(Keyframe(k, 0, pose, ids[sel], pix))
    scene_map = SceneMap({0: camera}, keyframes, points)

    store = FeatureStore()
    images = [(keyframe_name(k), p) for k, p in enumerate(keyframe_poses)]
    images += [(query_name(q), p) for q, p in enumerate(query_poses)]
    raw = {}
    for i, (name, pose) in enumerate(images):
        img_rng = np.random.default_rng([cfg.seed, 3, i])
        pyr = render_pyramid(scene, camera, pose, rng=img_rng) if render_alignment else None
        store.put(name, pyramid=pyr, hyper_maps=render_hyper_maps(scene, camera, pose, rng=img_rng))
        if with_descriptors:
            raw[name] = raw_multiscale(scene, camera, pose)

    whitening = None
    if with_descriptors:
        if cfg.whitening_views > 0:
            w_rng = np.random.default_rng([cfg.seed, 4])
            train = [raw_multiscale(scene, camera, orbit_pose(cfg, w_rng.uniform(0, 2 * np.pi),
                                                               yaw_offset_deg=w_rng.uniform(-10, 10)))
                     for _ in range(cfg.whitening_views)]
            whitening = fit_whitening(train)
        for name, v in raw.items():
            store.put(name, descriptor=finalize_descriptor(v, whitening))
        scene_map.global_descriptors = {k: store.descriptor(keyframe_name(k)) for k in range(len(keyframe_poses))}

    gt = {q: p for q, p in enumerate(query_poses)}
    bench = SynthBenchmark(scene, scene_map, gt, store, 0, {}, {}, whitening)
    for q in gt:
        bench.correspondences[q] = {
            k: correspondences(scene, scene_map, gt[q], scene_map.keyframe(k), camera)
            for k in bench.nearest_keyframes(q, 3)}
    if render_alignment and measure_eps:
        bench.eps_render = measure_eps_render(bench)
    scene_map.validate(cfg.obs_tol)
    return bench


def measure_eps_render(bench):
    """Largest two-view feature discrepancy over oracle correspondences, per level."""
    eps = {}
    for s in sorted(bench.scene.fields):
        worst = 0.0
        for q, per in bench.correspondences.items():
            fq, _ = bench.store.pyramid(query_name(q)).level(s)
            for k, (_, uq, uk) in per.items():
                fk, _ = bench.store.pyramid(keyframe_name(k)).level(s)
                lim_q = np.array([(fq.width - 1) * s, (fq.height - 1) * s])
                lim_k = np.array([(fk.width - 1) * s, (fk.height - 1) * s])
                ok = np.all((uq >= 0) & (uq <= lim_q) & (uk >= 0) & (uk <= lim_k), axis=1)
                if ok.any():
                    d = sample_many(fq, uq[ok]) - sample_many(fk, uk[ok])
                    worst = max(worst, float(np.linalg.norm(d, axis=1).max()))
        eps[s] = worst
    return eps


def orbit_poses(config, rng):
    n = config.num_keyframes
    step = 2 * np.pi / n
    kfs = [orbit_pose(config, k * step + rng.uniform(-0.05, 0.05) * step,
                      yaw_offset_deg=rng.uniform(-2.0, 2.0)) for k in range(n)]
    queries = []
    for _ in range(config.num_queries):
        k = rng.integers(n)
        az = (k + rng.uniform(0.2, 0.8)) * step
        queries.append(orbit_pose(
            config, az,
            radius=config.orbit_radius + rng.uniform(-config.query_offset, config.query_offset),
            height=config.camera_height + rng.uniform(-0.1, 0.1),
            yaw_offset_deg=rng.uniform(-config.query_yaw_deg, config.query_yaw_deg),
            pitch_deg=config.pitch_deg + rng.uniform(-3.0, 3.0)))
    return kfs, queries


def generate_scene(config=None, **overrides):
    """Full benchmark: keyframes on a viewing orbit, queries between them."""
    config = replace(config or SynthConfig(), **overrides)
    config.validate()
    scene = make_scene(config)
    kfs, queries = orbit_poses(config, np.random.default_rng([config.seed, 0]))
    return build_benchmark(scene, kfs, queries)
