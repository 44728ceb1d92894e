import json

import numpy as np
import pytest

from dranloc.errors import IntegrityError, ParseError, UnknownId
from dranloc.geometry import PinholeCamera, PoseSE3, look_at
from dranloc.scene_map import (Keyframe, SceneMap, ScenePoint, keyframe_arrays, load_map, map_from_dict,
                               map_to_dict, points_in_view, save_map, visible_points)


CAM = PinholeCamera(100.0, 100.0, 50.0, 40.0, 100, 80)


def tiny_map(obs=None):
    pose = PoseSE3.identity()
    pts = [ScenePoint(i, np.array([0.1 * i, -0.05 * i, 2.0 + 0.1 * i])) for i in range(5)]
    if obs is None:
        ids = np.arange(5)
        uv = np.array([[50 + 100 * p.position[0] / p.position[2], 40 + 100 * p.position[1] / p.position[2]]
                       for p in pts])
    else:
        ids, uv = obs
    return SceneMap({0: CAM}, [Keyframe(3, 0, pose, np.asarray(ids), np.asarray(uv, dtype=float))], pts)


def assert_maps_equal(a, b):
    assert map_to_dict(a) == map_to_dict(b)
    for ka, kb in zip(a.keyframes, b.keyframes):
        np.testing.assert_array_equal(ka.pose.q, kb.pose.q)
        np.testing.assert_array_equal(ka.pose.t, kb.pose.t)
        np.testing.assert_array_equal(ka.obs_pixels, kb.obs_pixels)
    np.testing.assert_array_equal(a.point_xyz, b.point_xyz)


class TestRoundTrip:
    def test_tiny_map(self, tmp_path):
        m = tiny_map()
        save_map(m, tmp_path / "map.json")
        assert_maps_equal(m, load_map(tmp_path / "map.json"))

    def test_empty_points(self, tmp_path):
        m = SceneMap({0: CAM}, [Keyframe(0, 0, PoseSE3.identity(), np.zeros(0, np.int64), np.zeros((0, 2)))], [])
        save_map(m, tmp_path / "m.json")
        r = load_map(tmp_path / "m.json")
        assert r.points == [] and len(r.keyframes[0]) == 0

    def test_generated_map(self, tmp_path, clean_bench):
        m = clean_bench.map
        save_map(m, tmp_path / "map.json")
        r = load_map(tmp_path / "map.json", obs_tol=clean_bench.config.obs_tol)
        assert len(r.points) >= 100
        assert_maps_equal(m, r)

    def test_floats_keep_seventeen_digits(self, tmp_path):
        m = tiny_map()
        save_map(m, tmp_path / "map.json")
        doc = json.loads((tmp_path / "map.json").read_text())
        assert doc["version"] == 1
        assert all(len(v.split()) == 7 for v in [k["pose"] for k in doc["keyframes"]])


class TestIntegrity:
    def test_dangling_point(self):
        m = tiny_map((np.array([0, 9]), [[50, 40], [60, 40]]))
        with pytest.raises(IntegrityError, match="dangling"):
            m.validate()

    def test_duplicate_observation(self):
        m = tiny_map((np.array([0, 0]), [[50, 40], [50, 40]]))
        with pytest.raises(IntegrityError, match="duplicated"):
            m.validate()

    def test_outside_image(self):
        m = tiny_map((np.array([0]), [[-1, 40]]))
        with pytest.raises(IntegrityError, match="outside"):
            m.validate()

    def test_reprojection_tolerance(self):
        m = tiny_map((np.array([0]), [[53, 40]]))
        with pytest.raises(IntegrityError, match="reprojects"):
            m.validate(obs_tol=2.0)
        m.validate(obs_tol=3.5)

    def test_unknown_camera_and_no_keyframes(self):
        m = tiny_map()
        bad = SceneMap({}, m.keyframes, m.points)
        with pytest.raises(IntegrityError, match="camera"):
            bad.validate()
        with pytest.raises(IntegrityError, match="no keyframes"):
            SceneMap({0: CAM}, [], m.points).validate()

    def test_dangling_on_load(self, tmp_path):
        doc = map_to_dict(tiny_map())
        doc["keyframes"][0]["obs"].append([42, 50.0, 40.0])
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(IntegrityError):
            load_map(tmp_path / "m.json")

    def test_parse_error_has_line(self, tmp_path):
        (tmp_path / "m.json").write_text('{"version": 1,\n "cameras": [\n}')
        with pytest.raises(ParseError, match="line 3"):
            load_map(tmp_path / "m.json")

    def test_wrong_version(self):
        doc = map_to_dict(tiny_map())
        doc["version"] = 2
        with pytest.raises(ParseError):
            map_from_dict(doc)

    def test_unknown_ids(self):
        m = tiny_map()
        with pytest.raises(UnknownId):
            m.keyframe(0)
        with pytest.raises(UnknownId):
            m.point(99)
        with pytest.raises(KeyError):
            m.camera(5)


class TestQueries:
    def test_visible_points_sorted(self):
        uv = [[60, 35], [50, 40]]
        m = tiny_map((np.array([1, 0]), uv))
        pairs = visible_points(m, 3)
        assert [p.id for p, _ in pairs] == [0, 1]
        np.testing.assert_array_equal(pairs[0][1], [50, 40])

    def test_empty_keyframe(self):
        m = tiny_map((np.zeros(0, np.int64), np.zeros((0, 2))))
        assert visible_points(m, 3) == []

    def test_generated_counts(self, clean_bench):
        m = clean_bench.map
        for kf in m.keyframes:
            ids, xyz, pix = keyframe_arrays(m, kf.id)
            assert len(visible_points(m, kf.id)) == len(kf) == len(ids)
            assert np.all(np.diff(ids) > 0)

    def test_looking_away_sees_nothing(self):
        m = tiny_map()
        away = look_at([0, 0, 0], [0, 0, -1], up=(0, 1, 0))
        assert points_in_view(m, away, CAM) == []

    def test_margin_monotone_and_contains_observed(self, clean_bench):
        m = clean_bench.map
        tol = clean_bench.config.obs_tol
        for kf in m.keyframes:
            small = {p.id for p, _ in points_in_view(m, kf.pose, m.camera(kf.camera_id), 0.0)}
            big = {p.id for p, _ in points_in_view(m, kf.pose, m.camera(kf.camera_id), 10.0)}
            tol_set = {p.id for p, _ in points_in_view(m, kf.pose, m.camera(kf.camera_id), tol)}
            assert small <= big
            assert {int(i) for i in kf.obs_ids} <= tol_set

    def test_gt_query_view_recovers_visibility(self, clean_bench):
        from dranloc.synth import visible_mask
        m = clean_bench.map
        for q, pose in clean_bench.gt_query_poses.items():
            vis, _ = visible_mask(clean_bench.scene, clean_bench.camera, pose, m.point_xyz)
            got = {p.id for p, _ in points_in_view(m, pose, clean_bench.camera)}
            assert set(m.point_ids[vis].tolist()) <= got
