import json
import subprocess
import sys

import numpy as np
import pytest

from arplace.cli import run_cli
from arplace.geometry import load_point_cloud, save_point_cloud
from conftest import cube_obj


@pytest.fixture
def clouds(tmp_path, room):
    save_point_cloud(room, tmp_path / "v.ply")
    return tmp_path


def test_sample_support_cube(tmp_path, cube_path):
    out = tmp_path / "c.ply"
    assert run_cli(["sample", "--mesh", str(cube_path), "--n", "0", "--method", "support",
                    "--out", str(out)]) == 0
    assert load_point_cloud(out).points.tolist() == [[0.5, 0.0, 0.5]]


def test_sample_surface_with_filters(tmp_path):
    mesh = tmp_path / "m.obj"
    mesh.write_text(cube_obj("a@keep") + cube_obj("b@drop", lo=(5, 0, 0), hi=(6, 1, 1)))
    out = tmp_path / "s.ply"
    assert run_cli(["--seed", "4", "sample", "--mesh", str(mesh), "--n", "200",
                    "--exclude-layers", "drop", "--out", str(out)]) == 0
    cloud = load_point_cloud(out)
    assert len(cloud) == 200 and cloud.points[:, 0].max() <= 1.0


def test_sample_mixed(tmp_path):
    mesh = tmp_path / "m.obj"
    mesh.write_text(cube_obj("floor@floor", hi=(4, 0.1, 4)) + cube_obj("box@props", lo=(1, 0.1, 1), hi=(2, 1, 2)))
    out = tmp_path / "s.ply"
    rc = run_cli(["sample", "--mesh", str(mesh), "--n", "50", "--method", "mixed",
                  "--layer-spec", "floor=surface,props=support", "--out", str(out)])
    assert rc == 0
    pts = load_point_cloud(out).points
    # PLY stores float32 coordinates.
    assert len(pts) == 51 and pts[-1].tolist() == [1.5, float(np.float32(0.1)), 1.5]


def test_sample_is_byte_identical(tmp_path, cube_path):
    for name in ("a.ply", "b.ply"):
        run_cli(["--seed", "1", "sample", "--mesh", str(cube_path), "--n", "300", "--out", str(tmp_path / name)])
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()


def test_register_self(clouds):
    v, t = clouds / "v.ply", clouds / "T.json"
    assert run_cli(["register", "--source", str(v), "--target", str(v), "--out", str(t)]) == 0
    doc = json.loads(t.read_text())
    assert abs(doc["theta_rad"]) < 1e-12 and abs(doc["scale"] - 1) < 1e-12
    assert np.allclose(doc["translation"], 0, atol=1e-12)
    assert doc["application"] == "q = s*Ry(theta)*p + t"


def test_register_then_heatmap_matches_one_shot(clouds, room):
    from arplace.registration import SimilarityTransformY

    target = SimilarityTransformY(2.0, 1.5, (1, 0, 3)).apply(room.points)
    target = target + np.random.default_rng(0).normal(scale=0.02, size=target.shape)
    from arplace.geometry import PointCloud
    save_point_cloud(PointCloud(target), clouds / "p.ply")
    v, p = str(clouds / "v.ply"), str(clouds / "p.ply")
    assert run_cli(["register", "--source", v, "--target", p, "--out", str(clouds / "T.json"),
                    "--heatmap", str(clouds / "h1.ply")]) == 0
    assert run_cli(["heatmap", "--source", v, "--target", p, "--transform", str(clouds / "T.json"),
                    "--out", str(clouds / "h2.ply")]) == 0
    assert (clouds / "h1.ply").read_bytes() == (clouds / "h2.ply").read_bytes()


def test_register_anisotropic_flag(clouds):
    v = str(clouds / "v.ply")
    assert run_cli(["register", "--source", v, "--target", v, "--no-keep-aspect-ratio",
                    "--starts", "2", "--out", str(clouds / "T.json")]) == 0
    doc = json.loads((clouds / "T.json").read_text())
    assert isinstance(doc["scale"], list) and np.allclose(doc["scale"], 1, atol=1e-9)


def test_evaluate(three_scene_dir, tmp_path, room):
    save_point_cloud(room, tmp_path / "v.ply")
    out = tmp_path / "report.json"
    args = ["evaluate", "--source", str(tmp_path / "v.ply"), "--dataset", str(three_scene_dir),
            "--out", str(out), "--heatmap-dir", str(tmp_path / "hm")]
    assert run_cli(args) == 0
    doc = json.loads(out.read_text())
    assert doc["ranking"] == ["exact", "noisy", "random"]
    assert doc["best"] == "exact" and doc["worst"] == "random"
    assert (tmp_path / "hm" / "noisy.ply").exists()
    first = out.read_bytes()
    assert run_cli(args) == 0
    assert out.read_bytes() == first


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["register", "--source", "a.ply", "--target", "b.ply", "--out", "t.json", "--bogus"],
        ["register", "--source", "a.ply", "--target", "b.ply", "--out", "t.json", "--starts", "0"],
        ["sample", "--mesh", "m.obj", "--out", "x.ply", "--method", "mixed", "--layer-spec", "a=melt"],
    ],
)
def test_usage_errors_exit_1(argv, capsys, tmp_path):
    (tmp_path / "m.obj").write_text(cube_obj("c"))
    argv = [str(tmp_path / a) if a.endswith(".obj") else a for a in argv]
    assert run_cli(argv) == 1
    assert capsys.readouterr().err.strip()


def test_data_errors_exit_2(tmp_path, capsys):
    (tmp_path / "bad.obj").write_text("v 0 0 0\nf 1 2 3\n")
    rc = run_cli(["sample", "--mesh", str(tmp_path / "bad.obj"), "--out", str(tmp_path / "x.ply")])
    assert rc == 2
    err = capsys.readouterr().err
    assert "bad.obj" in err and len(err.strip().splitlines()) == 1
    assert not (tmp_path / "x.ply").exists()
    rc = run_cli(["register", "--source", str(tmp_path / "none.ply"), "--target", "x.ply",
                  "--out", str(tmp_path / "t.json")])
    assert rc == 2


def test_module_entry_point(tmp_path, cube_path):
    out = tmp_path / "c.ply"
    proc = subprocess.run(
        [sys.executable, "-m", "arplace", "--quiet", "sample", "--mesh", str(cube_path),
         "--method", "support", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout == ""
    assert load_point_cloud(out).points.tolist() == [[0.5, 0.0, 0.5]]
