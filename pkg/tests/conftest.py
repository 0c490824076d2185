"""Shared fixtures: deterministic clouds, meshes and a tiny synthetic dataset."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from arplace.geometry import PointCloud, make_rng, save_point_cloud  # noqa: E402
from arplace.registration import SimilarityTransformY  # noqa: E402

CUBE_OBJ = """\
o {name}
v {x0} {y0} {z0}
v {x1} {y0} {z0}
v {x1} {y1} {z0}
v {x0} {y1} {z0}
v {x0} {y0} {z1}
v {x1} {y0} {z1}
v {x1} {y1} {z1}
v {x0} {y1} {z1}
f -8 -7 -6 -5
f -4 -1 -2 -3
f -8 -4 -3 -7
f -5 -6 -2 -1
f -7 -3 -2 -6
f -8 -5 -1 -4
"""


def cube_obj(name="cube", lo=(0, 0, 0), hi=(1, 1, 1)):
    return CUBE_OBJ.format(
        name=name, x0=lo[0], y0=lo[1], z0=lo[2], x1=hi[0], y1=hi[1], z1=hi[2]
    )


def room_cloud(n=800, seed=0):
    """Floor slab plus two boxes: a cloud with a clear yaw signature."""
    rng = make_rng(seed)
    parts = [
        ([0, 0, 0], [4, 0.02, 3], n * 6 // 10),
        ([1, 0, 1], [1.8, 0.8, 1.6], n * 2 // 10),
    ]
    parts.append(([3, 0, 0.2], [3.5, 1.5, 0.8], n - sum(p[2] for p in parts)))
    pts = [np.array(lo) + (np.array(hi) - lo) * rng.random((k, 3)) for lo, hi, k in parts]
    return PointCloud(np.vstack(pts))


@pytest.fixture
def room():
    return room_cloud()


@pytest.fixture
def cube_path(tmp_path):
    path = tmp_path / "cube.obj"
    path.write_text(cube_obj("cube@furniture"))
    return path


def build_three_scene_dataset(directory, source: PointCloud, seed=11):
    """exact copy / noisy copy / unrelated random cloud of ``source``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = make_rng(seed)
    t_exact = SimilarityTransformY(0.6, 1.25, (0.5, -0.1, 2.0))
    exact = t_exact.apply(source.points)
    t_noisy = SimilarityTransformY(-2.0, 0.8, (-1.0, 0.3, 0.4))
    noisy = t_noisy.apply(source.points)
    diag = float(np.linalg.norm(noisy.max(0) - noisy.min(0)))
    noisy = noisy + rng.normal(scale=0.01 * diag, size=noisy.shape)
    random = rng.random((len(source), 3)) * [5.0, 2.5, 4.0]
    for name, pts in (("exact", exact), ("noisy", noisy), ("random", random)):
        save_point_cloud(PointCloud(pts), directory / f"{name}.ply")
    return directory


@pytest.fixture
def three_scene_dir(tmp_path, room):
    return build_three_scene_dataset(tmp_path / "dataset", room)


_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion covered by a test")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, text = mark.args
    # Setup errors count as failures; a passing setup waits for the call.
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        _criteria[n] = ("PASS" if call.excinfo is None else "FAIL", text)

def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        status, text = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {text}")
