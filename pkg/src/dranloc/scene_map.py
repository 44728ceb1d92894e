"""SfM map: cameras, 3D points, keyframes with poses and 2D observations.

On-disk form is ``map.json``::

    {"version": 1,
     "cameras": [{"id", "fx", "fy", "cx", "cy", "width", "height"}],
     "points": [{"id", "xyz": [x, y, z]}],
     "keyframes": [{"id", "camera_id", "pose": "qw qx qy qz tx ty tz",
                    "obs": [[point_id, u, v], ...]}]}
"""

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import IntegrityError, ParseError, UnknownId
from .geometry import PinholeCamera, PoseSE3, pose_from_string, pose_to_string, project_points, transform_points

MAP_VERSION = 1
DEFAULT_OBS_TOL = 2.0


@dataclass(frozen=True, eq=False)
class ScenePoint:
    id: int
    position: np.ndarray


@dataclass(frozen=True, eq=False)
class Keyframe:
    id: int
    camera_id: int
    pose: PoseSE3
    obs_ids: np.ndarray      # (N,) int64 point ids
    obs_pixels: np.ndarray   # (N, 2) float64

    @property
    def observations(self):
        return [(int(i), p) for i, p in zip(self.obs_ids, self.obs_pixels)]

    def __len__(self):
        return len(self.obs_ids)


@dataclass(eq=False)
class SceneMap:
    cameras: dict
    keyframes: list
    points: list
    global_descriptors: dict = field(default=None)

    @cached_property
    def _kf_index(self):
        return {kf.id: kf for kf in self.keyframes}

    @cached_property
    def point_ids(self):
        return np.array([p.id for p in self.points], dtype=np.int64)

    @cached_property
    def point_xyz(self):
        if not self.points:
            return np.zeros((0, 3))
        return np.vstack([p.position for p in self.points])

    @cached_property
    def _pt_row(self):
        return {int(pid): row for row, pid in enumerate(self.point_ids)}

    def keyframe(self, kf_id):
        try:
            return self._kf_index[kf_id]
        except KeyError:
            raise UnknownId(f"unknown keyframe id {kf_id}") from None

    def camera(self, cam_id):
        try:
            return self.cameras[cam_id]
        except KeyError:
            raise UnknownId(f"unknown camera id {cam_id}") from None

    def point(self, pid):
        try:
            return self.points[self._pt_row[int(pid)]]
        except KeyError:
            raise UnknownId(f"unknown point id {pid}") from None

    def rows_of(self, point_ids):
        """Row indices into ``point_xyz`` for a sequence of point ids."""
        try:
            return np.array([self._pt_row[int(p)] for p in point_ids], dtype=np.int64)
        except KeyError as exc:
            raise UnknownId(f"unknown point id {exc.args[0]}") from None

    def validate(self, obs_tol=DEFAULT_OBS_TOL):
        """Raise IntegrityError naming the first violated invariant."""
        if not self.keyframes:
            raise IntegrityError("map has no keyframes")
        if len(set(self.point_ids.tolist())) != len(self.points):
            raise IntegrityError("duplicate point id")
        if len(self._kf_index) != len(self.keyframes):
            raise IntegrityError("duplicate keyframe id")
        for kf in self.keyframes:
            if kf.camera_id not in self.cameras:
                raise IntegrityError(f"keyframe {kf.id}: unknown camera_id {kf.camera_id}")
            cam = self.cameras[kf.camera_id]
            ids = kf.obs_ids.tolist()
            if len(set(ids)) != len(ids):
                raise IntegrityError(f"keyframe {kf.id}: duplicated point_id in observations")
            missing = [i for i in ids if i not in self._pt_row]
            if missing:
                raise IntegrityError(f"keyframe {kf.id}: dangling point_id {missing[0]}")
            if not len(ids):
                continue
            uv = kf.obs_pixels
            inside = (uv[:, 0] >= 0) & (uv[:, 0] < cam.width) & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height)
            if not inside.all():
                bad = ids[int(np.argmin(inside))]
                raise IntegrityError(f"keyframe {kf.id}: observation of point {bad} outside the image")
            proj, ok = project_points(cam, transform_points(kf.pose, self.point_xyz[self.rows_of(ids)]))
            err = np.where(ok, np.linalg.norm(proj - uv, axis=1), np.inf)
            if np.any(err > obs_tol):
                k = int(np.argmax(err))
                raise IntegrityError(
                    f"keyframe {kf.id}: point {ids[k]} reprojects {err[k]:.3f} px from its "
                    f"observation (obs_tol={obs_tol})")


def visible_points(scene_map, keyframe_id):
    """The keyframe's observations joined with point positions, ordered by point id."""
    kf = scene_map.keyframe(keyframe_id)
    order = np.argsort(kf.obs_ids, kind="stable")
    return [(scene_map.point(kf.obs_ids[i]), kf.obs_pixels[i]) for i in order]


def keyframe_arrays(scene_map, keyframe_id):
    """(point_ids, xyz, pixels) for a keyframe, ordered by point id."""
    kf = scene_map.keyframe(keyframe_id)
    order = np.argsort(kf.obs_ids, kind="stable")
    ids = kf.obs_ids[order]
    return ids, scene_map.point_xyz[scene_map.rows_of(ids)], kf.obs_pixels[order]


def points_in_view(scene_map, pose, camera, margin_px=0.0):
    """Map points in front of ``pose`` that project into the image grown by ``margin_px``."""
    if not scene_map.points:
        return []
    uv, ok = project_points(camera, transform_points(pose, scene_map.point_xyz))
    ok &= camera.in_image(np.nan_to_num(uv, nan=-1e18), margin_px)
    return [(scene_map.points[i], uv[i]) for i in np.flatnonzero(ok)]


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def map_to_dict(scene_map):
    return {
        "version": MAP_VERSION,
        "cameras": [{"id": int(cid), "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
                     "width": c.width, "height": c.height}
                    for cid, c in sorted(scene_map.cameras.items())],
        "points": [{"id": int(p.id), "xyz": [float(v) for v in p.position]} for p in scene_map.points],
        "keyframes": [{"id": int(kf.id), "camera_id": int(kf.camera_id), "pose": pose_to_string(kf.pose),
                       "obs": [[int(i), float(u), float(v)] for i, (u, v) in zip(kf.obs_ids, kf.obs_pixels)]}
                      for kf in scene_map.keyframes],
    }


def save_map(scene_map, path):
    with open(path, "w") as fh:
        json.dump(map_to_dict(scene_map), fh, indent=1)
        fh.write("\n")


def map_from_dict(doc):
    try:
        if doc.get("version") != MAP_VERSION:
            raise ParseError(f"unsupported map version {doc.get('version')!r}")
        cameras = {}
        for c in doc["cameras"]:
            cameras[int(c["id"])] = PinholeCamera(float(c["fx"]), float(c["fy"]), float(c["cx"]),
                                                  float(c["cy"]), int(c["width"]), int(c["height"]))
        points = [ScenePoint(int(p["id"]), np.array(p["xyz"], dtype=float).reshape(3)) for p in doc["points"]]
        keyframes = []
        for k in doc["keyframes"]:
            obs = np.array(k["obs"], dtype=float).reshape(-1, 3)
            keyframes.append(Keyframe(int(k["id"]), int(k["camera_id"]), pose_from_string(k["pose"]),
                                      obs[:, 0].astype(np.int64), obs[:, 1:].copy()))
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ParseError(f"malformed map document: {exc!r}") from exc
    return SceneMap(cameras, keyframes, points)


def load_map(path, obs_tol=DEFAULT_OBS_TOL):
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from exc
    scene_map = map_from_dict(doc)
    scene_map.validate(obs_tol)
    return scene_map
