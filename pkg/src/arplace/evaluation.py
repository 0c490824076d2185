"""Batch placement over a directory of physical-space clouds.

Each scene is downsampled, registered with multi-start ICP and ranked by
final error. Per-scene seeds come from a hash of ``(seed, scene_id)`` so
adding or removing scenes never changes the others' results.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import jsonio
from .geometry import PointCloud, load_point_cloud, random_downsample, save_point_cloud
from .registration import (
    IcpParams,
    SimilarityTransformY,
    apply_transform,
    multi_start_icp,
)

__all__ = [
    "DatasetManifest",
    "EvaluationError",
    "EvaluationReport",
    "SceneResult",
    "derive_seed",
    "evaluate_dataset",
    "export_heatmap",
    "heatmap_colors",
    "scan_dataset",
    "write_report",
]

log = logging.getLogger(__name__)

HEATMAP_PERCENTILE = 95.0


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetManifest:
    scenes: tuple[tuple[str, Path], ...]

    def __post_init__(self):
        ids = [s for s, _ in self.scenes]
        if len(set(ids)) != len(ids):
            raise EvaluationError(f"duplicate scene ids in manifest: {sorted(ids)}")

    @property
    def scene_ids(self) -> list[str]:
        return [s for s, _ in self.scenes]


def scan_dataset(directory, pattern: str = "*.ply") -> DatasetManifest:
    """Manifest of files in ``directory`` matching ``pattern``, sorted by stem."""
    directory = Path(directory)
    if not directory.is_dir():
        raise EvaluationError(f"{directory}: not a directory")
    files = sorted((p for p in directory.glob(pattern) if p.is_file()), key=lambda p: (p.stem, p.name))
    if not files:
        raise EvaluationError(f"{directory}: no files match {pattern!r}")
    return DatasetManifest(tuple((p.stem, p) for p in files))


def derive_seed(seed: int, scene_id: str, role: str) -> int:
    """Stable 63-bit seed from ``(seed, scene_id, role)`` via SHA-256."""
    digest = hashlib.sha256(f"{seed}\x00{scene_id}\x00{role}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass
class SceneResult:
    scene_id: str
    error: float | None = None
    iterations: int | None = None
    converged: bool | None = None
    transform: SimilarityTransformY | None = None
    start_index: int | None = None
    heatmap: str | None = None
    error_message: str | None = None
    per_point_errors: np.ndarray | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.error_message is None

    def to_json(self) -> dict:
        out = {
            "scene_id": self.scene_id,
            "error": self.error,
            "converged": self.converged,
            "iterations": self.iterations,
            "start_index": self.start_index,
            "transform": None if self.transform is None else self.transform.to_json(),
        }
        if self.heatmap is not None:
            out["heatmap"] = self.heatmap
        if self.error_message is not None:
            out["error_message"] = self.error_message
        return out


@dataclass
class EvaluationReport:
    source_path: str | None
    source_points: int
    seed: int
    downsample_n: int
    params: IcpParams
    scenes: list[SceneResult]

    @property
    def ranking(self) -> list[str]:
        ranked = sorted((s for s in self.scenes if s.ok), key=lambda s: (s.error, s.scene_id))
        return [s.scene_id for s in ranked]

    @property
    def best(self) -> str | None:
        r = self.ranking
        return r[0] if r else None

    @property
    def worst(self) -> str | None:
        r = self.ranking
        return r[-1] if r else None

    def scene(self, scene_id: str) -> SceneResult:
        for s in self.scenes:
            if s.scene_id == scene_id:
                return s
        raise KeyError(scene_id)

    def to_json(self) -> dict:
        return {
            "source": {
                "path": self.source_path,
                "points": self.source_points,
                "seed": self.seed,
                "downsample": self.downsample_n,
            },
            "params": self.params.to_json(),
            "scenes": [s.to_json() for s in self.scenes],
            "ranking": self.ranking,
            "best": self.best,
            "worst": self.worst,
            "errors": [
                {"scene_id": s.scene_id, "message": s.error_message}
                for s in self.scenes if not s.ok
            ],
        }


def write_report(report: EvaluationReport, path) -> None:
    jsonio.dump(report.to_json(), path)


def heatmap_colors(per_point) -> np.ndarray:
    """Blue (0,0,255) at zero error to red (255,0,0) at the 95th percentile and above.

    Channels are ``round(255 * w)`` (round half to even) with
    ``w = min(e / e_max, 1)``; when ``e_max`` is 0 every point is blue.
    """
    e = np.asarray(per_point, dtype=np.float64).reshape(-1)
    colors = np.zeros((len(e), 3), dtype=np.uint8)
    if len(e) == 0:
        return colors
    e_max = float(np.percentile(e, HEATMAP_PERCENTILE))
    if e_max > 0:
        w = np.minimum(e / e_max, 1.0)
    else:
        w = np.zeros_like(e)
    colors[:, 0] = np.rint(255.0 * w)
    colors[:, 2] = np.rint(255.0 * (1.0 - w))
    return colors


def export_heatmap(source: PointCloud, transform: SimilarityTransformY, per_point, path) -> None:
    """Write the transformed source as ascii PLY colored by per-point error."""
    per_point = np.asarray(per_point, dtype=np.float64).reshape(-1)
    if len(per_point) != len(source):
        raise EvaluationError(
            f"per-point errors ({len(per_point)}) do not match cloud size ({len(source)})"
        )
    moved = apply_transform(transform, source)
    save_point_cloud(PointCloud(moved.points, colors=heatmap_colors(per_point)), path)


def evaluate_dataset(
    source: PointCloud,
    manifest: DatasetManifest,
    params: IcpParams = IcpParams(),
    downsample_n: int = 1000,
    seed: int = 0,
    heatmap_dir=None,
    source_path: str | None = None,
) -> EvaluationReport:
    """Register ``source`` into every scene of ``manifest``.

    Scenes that fail to load or register are kept as errored entries and left
    out of the ranking; the batch only fails when every scene fails.
    """
    if len(source) == 0:
        raise EvaluationError("source cloud is empty")
    if not manifest.scenes:
        raise EvaluationError("manifest is empty")
    if heatmap_dir is not None:
        heatmap_dir = Path(heatmap_dir)
        heatmap_dir.mkdir(parents=True, exist_ok=True)

    results = []
    for scene_id, path in sorted(manifest.scenes):
        try:
            target = load_point_cloud(path)
            src = random_downsample(source, downsample_n, derive_seed(seed, scene_id, "source"))
            dst = random_downsample(target, downsample_n, derive_seed(seed, scene_id, "target"))
            res = multi_start_icp(src, dst, params)
        except ValueError as exc:
            log.warning("scene %s failed: %s", scene_id, exc)
            results.append(SceneResult(scene_id, error_message=str(exc)))
            continue
        entry = SceneResult(
            scene_id,
            error=res.error,
            iterations=res.iterations,
            converged=res.converged,
            transform=res.transform,
            start_index=res.start_index,
            per_point_errors=res.per_point_errors,
        )
        if heatmap_dir is not None:
            out = heatmap_dir / f"{scene_id}.ply"
            export_heatmap(src, res.transform, res.per_point_errors, out)
            entry.heatmap = str(out)
        log.info("scene %s: error %.6g (%d iterations)", scene_id, res.error, res.iterations)
        results.append(entry)

    if not any(r.ok for r in results):
        raise EvaluationError(
            "every scene failed: " + "; ".join(f"{r.scene_id}: {r.error_message}" for r in results)
        )
    return EvaluationReport(
        source_path=source_path,
        source_points=len(source),
        seed=seed,
        downsample_n=downsample_n,
        params=params,
        scenes=results,
    )
