import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from arplace.geometry import (
    NNIndex,
    PointCloud,
    PointCloudFormatError,
    aabb,
    build_nn_index,
    centroid,
    load_point_cloud,
    make_rng,
    nearest,
    random_downsample,
    save_point_cloud,
)
from oracles import scan_nearest

coords = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def cloud_arrays(min_size=1, max_size=60):
    return st.integers(min_size, max_size).flatmap(
        lambda n: arrays(np.float64, (n, 3), elements=coords)
    )


UNIT_CUBE = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)


class TestPointCloud:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            PointCloud([[0, 0, math.nan]])

    def test_layer_length_must_match(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((3, 3)), layers=[0, 1])

    def test_arrays_are_read_only(self):
        c = PointCloud(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            c.points[0, 0] = 1.0


class TestAabbCentroid:
    def test_two_points(self):
        box = aabb(PointCloud([[0, 0, 0], [1, 2, 3]]))
        assert box.min.tolist() == [0, 0, 0]
        assert box.max.tolist() == [1, 2, 3]
        assert box.diagonal == pytest.approx(math.sqrt(14), abs=1e-15)

    def test_single_point(self):
        box = aabb(PointCloud([[1.5, -2, 7]]))
        assert box.min.tolist() == box.max.tolist() == [1.5, -2, 7]
        assert box.diagonal == 0

    def test_unit_cube(self):
        assert aabb(PointCloud(UNIT_CUBE)).diagonal == pytest.approx(math.sqrt(3), abs=1e-15)

    @pytest.mark.parametrize("fn", [aabb, centroid, build_nn_index])
    def test_empty_cloud_errors(self, fn):
        with pytest.raises(ValueError):
            fn(PointCloud(np.zeros((0, 3))))

    def test_centroid_examples(self):
        assert centroid(PointCloud([[0, 0, 0], [2, 0, 0]])).tolist() == [1, 0, 0]
        assert centroid(PointCloud([[3, 4, 5]])).tolist() == [3, 4, 5]
        assert centroid(PointCloud(UNIT_CUBE)).tolist() == [0.5, 0.5, 0.5]

    @given(cloud_arrays())
    def test_aabb_contains_every_point(self, pts):
        box = aabb(PointCloud(pts))
        assert box.contains(pts).all()
        assert np.all(box.min <= box.max)
        assert box.diagonal >= 0


class TestNearest:
    def test_single_point_index(self):
        idx = build_nn_index(PointCloud([[1, 2, 3]]))
        assert nearest(idx, [10, -4, 0])[0] == 0

    def test_query_at_indexed_point(self):
        pts = make_rng(1).random((50, 3))
        idx = NNIndex(pts)
        for i in (0, 17, 49):
            assert nearest(idx, pts[i]) == (i, 0.0)

    def test_axis_example(self):
        idx = NNIndex([[1, 0, 0], [0, 2, 0]])
        assert nearest(idx, [0, 0, 0]) == (0, 1.0)

    def test_tie_goes_to_smallest_index(self):
        pts = make_rng(2).random((10, 3)) + 5.0
        pts[3] = [1.0, 0.0, 0.0]
        pts[7] = [-1.0, 0.0, 0.0]
        assert nearest(NNIndex(pts), [0, 0, 0]) == (3, 1.0)

    def test_duplicate_points_tie(self):
        pts = np.array([[2.0, 0, 0], [1.0, 1, 1], [0.5, 0, 0], [1.0, 1, 1]])
        assert nearest(NNIndex(pts), [1.0, 1, 1]) == (1, 0.0)

    def test_matches_linear_scan(self):
        rng = make_rng(42)
        pts = rng.random((1000, 3))
        queries = rng.random((100, 3)) * 1.4 - 0.2
        idx, dist = NNIndex(pts).query(queries)
        for q, i, d in zip(queries, idx, dist):
            assert (int(i), float(d)) == scan_nearest(pts, q)

    def test_lattice_ties_match_scan(self):
        # Integer lattice + half-integer queries: many exact ties.
        g = np.arange(5.0)
        pts = np.array(np.meshgrid(g, g, g, indexing="ij")).reshape(3, -1).T
        pts = pts[make_rng(3).permutation(len(pts))]
        queries = np.array(np.meshgrid(g + 0.5, g, g - 0.5, indexing="ij")).reshape(3, -1).T
        idx, dist = NNIndex(pts).query(queries)
        for q, i, d in zip(queries, idx, dist):
            assert (int(i), float(d)) == scan_nearest(pts, q)

    @settings(max_examples=50, deadline=None)
    @given(cloud_arrays(1, 200), cloud_arrays(1, 20))
    def test_property_exact(self, pts, queries):
        idx, dist = NNIndex(pts).query(queries)
        for q, i, d in zip(queries, idx, dist):
            assert (int(i), float(d)) == scan_nearest(pts, q)


class TestDownsample:
    def test_identity_when_n_at_least_size(self):
        c = PointCloud(make_rng(0).random((20, 3)))
        assert random_downsample(c, 20, 1) is c
        assert random_downsample(c, 50, 1) is c

    def test_zero(self):
        assert len(random_downsample(PointCloud(np.ones((5, 3))), 0, 1)) == 0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            random_downsample(PointCloud(np.ones((5, 3))), -1, 0)

    def test_determinism_and_seed_sensitivity(self, tmp_path):
        c = PointCloud(make_rng(5).random((1000, 3)))
        outs = []
        for i, seed in enumerate((7, 7, 8)):
            path = tmp_path / f"d{i}.xyz"
            save_point_cloud(random_downsample(c, 500, seed), path, "xyz")
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]
        assert outs[0] != outs[2]

    @given(cloud_arrays(0, 80), st.integers(0, 100), st.integers(0, 2**32))
    def test_subset_in_order(self, pts, n, seed):
        c = PointCloud(pts, layers=np.arange(len(pts)))
        out = random_downsample(c, n, seed)
        assert len(out) == min(n, len(c))
        # layers carry the source index, so order preservation is visible.
        assert np.all(np.diff(out.layers) > 0)
        assert np.array_equal(out.points, c.points[out.layers])


class TestIO:
    def test_xyz_example(self, tmp_path):
        p = tmp_path / "a.xyz"
        p.write_text("# two points\n0 0 0\n1 2 3\n")
        assert load_point_cloud(p).points.tolist() == [[0, 0, 0], [1, 2, 3]]

    def test_xyz_nan_names_line(self, tmp_path):
        p = tmp_path / "bad.xyz"
        p.write_text("0 0 nan\n")
        with pytest.raises(PointCloudFormatError, match=r":1:"):
            load_point_cloud(p)

    def test_ascii_ply(self, tmp_path):
        p = tmp_path / "a.ply"
        p.write_text(
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\n"
            "property float y\nproperty float z\nproperty int layer\nend_header\n"
            "0 0 0 2\n1 0 0 2\n0 1 0 5\n"
        )
        c = load_point_cloud(p)
        assert c.points.tolist() == [[0, 0, 0], [1, 0, 0], [0, 1, 0]]
        assert c.layers.tolist() == [2, 2, 5]

    def test_ascii_ply_with_faces_and_extra_props(self, tmp_path):
        p = tmp_path / "m.ply"
        p.write_text(
            "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 3\n"
            "property double x\nproperty double y\nproperty double z\nproperty float nx\n"
            "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
            "0 0 0 1\n1 0 0 1\n0 1 0 1\n3 0 1 2\n"
        )
        assert len(load_point_cloud(p)) == 3

    def test_ascii_ply_nan_names_line(self, tmp_path):
        p = tmp_path / "a.ply"
        p.write_text(
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\n"
            "property float y\nproperty float z\nend_header\n0 0 0\n1 nan 0\n"
        )
        with pytest.raises(PointCloudFormatError, match=r":9:"):
            load_point_cloud(p)

    def _binary_ply(self, path, pts, endian="<", fmt="binary_little_endian"):
        header = (
            f"ply\nformat {fmt} 1.0\nelement vertex {len(pts)}\n"
            "property float x\nproperty float y\nproperty float z\nproperty uchar red\n"
            "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
        ).encode()
        dt = np.dtype([("x", endian + "f4"), ("y", endian + "f4"), ("z", endian + "f4"), ("r", "u1")])
        rows = np.zeros(len(pts), dt)
        rows["x"], rows["y"], rows["z"] = pts.T
        face = np.array([3], "u1").tobytes() + np.array([0, 1, 2], endian + "i4").tobytes()
        path.write_bytes(header + rows.tobytes() + face)

    def test_binary_little_endian(self, tmp_path):
        pts = make_rng(3).random((4, 3)).astype(np.float32)
        p = tmp_path / "b.ply"
        self._binary_ply(p, pts)
        assert np.array_equal(load_point_cloud(p).points, pts.astype(np.float64))

    def test_big_endian_rejected(self, tmp_path):
        p = tmp_path / "b.ply"
        self._binary_ply(p, np.zeros((3, 3), np.float32), ">", "binary_big_endian")
        with pytest.raises(PointCloudFormatError, match="big-endian"):
            load_point_cloud(p)

    def test_truncated_binary(self, tmp_path):
        p = tmp_path / "b.ply"
        self._binary_ply(p, np.zeros((3, 3), np.float32))
        p.write_bytes(p.read_bytes()[:-20])
        with pytest.raises(PointCloudFormatError, match="offset"):
            load_point_cloud(p)

    @pytest.mark.parametrize(
        "text",
        [
            "plx\n",
            "ply\nelement vertex 1\nproperty float x\nend_header\n0\n",
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n0 0\n",
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
            "property float z\nend_header\n0 0 0\n",
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n",
        ],
    )
    def test_malformed_headers(self, tmp_path, text):
        p = tmp_path / "x.ply"
        p.write_text(text)
        with pytest.raises(PointCloudFormatError):
            load_point_cloud(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(PointCloudFormatError, match="cannot read"):
            load_point_cloud(tmp_path / "nope.ply")

    def test_round_trip_two_points(self, tmp_path):
        c = PointCloud([[0, 0, 0], [1, 2, 3]])
        for fmt, name in (("ply_ascii", "c.ply"), ("xyz", "c.xyz")):
            save_point_cloud(c, tmp_path / name, fmt)
            assert np.array_equal(load_point_cloud(tmp_path / name).points, c.points)

    def test_empty_cloud(self, tmp_path):
        save_point_cloud(PointCloud(np.zeros((0, 3))), tmp_path / "e.ply")
        assert "element vertex 0" in (tmp_path / "e.ply").read_text()
        assert len(load_point_cloud(tmp_path / "e.ply")) == 0

    def test_layers_written(self, tmp_path):
        c = PointCloud(np.eye(3), layers=[0, 1, 1], layer_names=("floor", "chair"))
        save_point_cloud(c, tmp_path / "l.ply")
        assert "property int layer" in (tmp_path / "l.ply").read_text()
        back = load_point_cloud(tmp_path / "l.ply")
        assert back.layers.tolist() == [0, 1, 1]
        assert back.layer_names == ("floor", "chair")

    @settings(deadline=None)
    @given(cloud_arrays(0, 40))
    def test_ply_round_trip_float32(self, tmp_path_factory, pts):
        p = tmp_path_factory.mktemp("rt") / "c.ply"
        save_point_cloud(PointCloud(pts), p)
        expect = pts.astype(np.float32).astype(np.float64)
        assert np.array_equal(load_point_cloud(p).points, expect)

    @settings(deadline=None)
    @given(cloud_arrays(0, 40))
    def test_xyz_round_trip_exact(self, tmp_path_factory, pts):
        p = tmp_path_factory.mktemp("rt") / "c.xyz"
        save_point_cloud(PointCloud(pts), p, "xyz")
        assert np.array_equal(load_point_cloud(p).points, pts)
