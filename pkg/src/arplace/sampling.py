"""Turn a triangle-mesh scene into a point cloud.

Two samplers are provided: area-weighted surface sampling, and support
points (the center of the bottom ``y = ymin`` face of each object's
bounding box). Objects carry a layer tag, read from an ``name@layer``
suffix on OBJ ``o``/``g`` lines, which decides which sampler sees them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .geometry import PointCloud, make_rng

__all__ = [
    "LayerFilter",
    "MeshFormatError",
    "MeshObject",
    "SamplingError",
    "SceneMesh",
    "load_mesh",
    "sample_scene",
    "support_points",
    "surface_sample",
    "triangle_areas",
]

DEFAULT_LAYER = "default"
METHODS = ("surface", "support", "ignore")


class MeshFormatError(ValueError):
    """Raised for malformed OBJ input."""


class SamplingError(ValueError):
    """Raised when a sampler has nothing to sample from."""


@dataclass(frozen=True, eq=False)
class MeshObject:
    name: str
    vertices: np.ndarray
    triangles: np.ndarray
    layer: str = DEFAULT_LAYER

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"object {self.name!r}: non-finite vertex")
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError(f"object {self.name!r}: triangle index out of range")
        if len(t) and np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise ValueError(f"object {self.name!r}: triangle with repeated vertex index")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)


@dataclass(frozen=True, eq=False)
class SceneMesh:
    objects: tuple[MeshObject, ...]

    def __post_init__(self):
        objs = tuple(self.objects)
        if not objs:
            raise ValueError("a scene needs at least one object")
        names = [o.name for o in objs]
        if len(set(names)) != len(names):
            raise ValueError("object names must be unique")
        object.__setattr__(self, "objects", objs)

    @property
    def layer_names(self) -> tuple[str, ...]:
        """Layer tags in order of first appearance; a tag's position is its layer id."""
        seen: dict[str, None] = {}
        for o in self.objects:
            seen.setdefault(o.layer, None)
        return tuple(seen)

    def layer_id(self, layer: str) -> int:
        return self.layer_names.index(layer)


@dataclass(frozen=True)
class LayerFilter:
    """Object passes iff (include is None or layer in include) and layer not in exclude."""

    include: frozenset[str] | None = None
    exclude: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.include is not None:
            object.__setattr__(self, "include", frozenset(self.include))
        object.__setattr__(self, "exclude", frozenset(self.exclude))

    def passes(self, layer: str) -> bool:
        if layer in self.exclude:
            return False
        return self.include is None or layer in self.include


ALL_LAYERS = LayerFilter()


# --------------------------------------------------------------------------
# OBJ loading

def _split_name(raw: str) -> tuple[str, str]:
    if "@" in raw:
        name, layer = raw.rsplit("@", 1)
        return name, layer or DEFAULT_LAYER
    return raw, DEFAULT_LAYER


class _Group:
    def __init__(self, name: str, layer: str):
        self.name = name
        self.layer = layer
        self.declared: list[int] = []
        self.faces: list[tuple[int, int, int]] = []


def load_mesh(path) -> SceneMesh:
    """Parse the OBJ subset ``v``, ``f``, ``o``, ``g``.

    Each ``o``/``g`` line starts a new object. An object with faces owns the
    vertices its faces reference; a face-less object owns the vertices
    declared in its block that no face uses (so a lone vertex still forms an
    object). Faces are fan-triangulated from their first vertex; negative
    indices count back from the current vertex. Other directives are ignored.
    """
    path = Path(path)
    positions: list[list[float]] = []
    groups = [_Group("object", DEFAULT_LAYER)]
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise MeshFormatError(f"{path}: cannot read file ({exc.strerror})") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            key, *args = text.split()
            if key == "v":
                try:
                    xyz = [float(a) for a in args[:3]]
                except ValueError:
                    raise MeshFormatError(f"{path}:{lineno}: bad vertex {text!r}") from None
                if len(xyz) != 3 or not all(np.isfinite(xyz)):
                    raise MeshFormatError(f"{path}:{lineno}: bad vertex {text!r}")
                groups[-1].declared.append(len(positions))
                positions.append(xyz)
            elif key == "f":
                if len(args) < 3:
                    raise MeshFormatError(
                        f"{path}:{lineno}: face needs at least 3 vertices, got {len(args)}"
                    )
                idx = []
                for a in args:
                    try:
                        k = int(a.split("/", 1)[0])
                    except ValueError:
                        raise MeshFormatError(f"{path}:{lineno}: bad face index {a!r}") from None
                    k = k - 1 if k > 0 else len(positions) + k
                    if k < 0 or k >= len(positions):
                        raise MeshFormatError(
                            f"{path}:{lineno}: face index {a} out of range "
                            f"({len(positions)} vertices defined)"
                        )
                    idx.append(k)
                for j in range(1, len(idx) - 1):
                    tri = (idx[0], idx[j], idx[j + 1])
                    if len(set(tri)) < 3:
                        raise MeshFormatError(
                            f"{path}:{lineno}: degenerate face repeats vertex index"
                        )
                    groups[-1].faces.append(tri)
            elif key in ("o", "g"):
                name, layer = _split_name(" ".join(args) if args else "object")
                groups.append(_Group(name, layer))

    objects: list[MeshObject] = []
    used: set[str] = set()
    pos = np.array(positions, dtype=np.float64).reshape(-1, 3)
    referenced = {k for g in groups for tri in g.faces for k in tri}
    for g in groups:
        if g.faces:
            order = list(dict.fromkeys(k for tri in g.faces for k in tri))
        else:
            order = [k for k in g.declared if k not in referenced]
        if not order:
            continue
        remap = {k: i for i, k in enumerate(order)}
        tris = np.array([[remap[k] for k in tri] for tri in g.faces], dtype=np.int64).reshape(-1, 3)
        name = g.name
        suffix = 1
        while name in used:
            name = f"{g.name}_{suffix}"
            suffix += 1
        used.add(name)
        objects.append(MeshObject(name, pos[order], tris, g.layer))
    if not objects:
        raise MeshFormatError(f"{path}: mesh has no vertices")
    return SceneMesh(tuple(objects))


# --------------------------------------------------------------------------
# Samplers

def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    v = vertices[triangles]
    return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def _passing(mesh: SceneMesh, flt: LayerFilter) -> list[MeshObject]:
    return [o for o in mesh.objects if flt.passes(o.layer)]


def _surface_from(mesh: SceneMesh, objects: list[MeshObject], n: int, seed: int) -> PointCloud:
    if n < 0:
        raise ValueError(f"sample count must be >= 0, got {n}")
    names = mesh.layer_names
    if n == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), layer_names=names)
    if not objects:
        raise SamplingError("no objects pass the layer filter")

    corners = []
    layer_of = []
    for o in objects:
        if len(o.triangles):
            corners.append(o.vertices[o.triangles])
            layer_of.append(np.full(len(o.triangles), mesh.layer_id(o.layer)))
    if not corners:
        raise SamplingError("passing objects have no triangles")
    tris = np.concatenate(corners)
    tri_layer = np.concatenate(layer_of)
    area = 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)
    cum = np.cumsum(area)
    total = cum[-1]
    if not total > 0:
        raise SamplingError("passing objects have zero total surface area")

    rng = make_rng(seed)
    # side="right" skips zero-area triangles: their cumulative slot is empty.
    pick = np.searchsorted(cum, rng.random(n) * total, side="right")
    last_positive = int(np.flatnonzero(area > 0)[-1])
    pick = np.minimum(pick, last_positive)

    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = tris[pick, 0], tris[pick, 1], tris[pick, 2]
    pts = (1.0 - r1)[:, None] * a + (r1 * (1.0 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return PointCloud(pts, tri_layer[pick], layer_names=names)


def surface_sample(mesh: SceneMesh, n: int, seed: int, filter: LayerFilter = ALL_LAYERS) -> PointCloud:
    """Draw ``n`` i.i.d. points uniformly over the surface of the passing objects.

    Triangles are picked with probability proportional to area; inside a
    triangle the barycentric coordinates use the square-root warp, so the
    density is uniform. Each point carries its object's layer id.
    """
    return _surface_from(mesh, _passing(mesh, filter), n, seed)


def _support_from(mesh: SceneMesh, objects: list[MeshObject]) -> PointCloud:
    if not objects:
        raise SamplingError("no objects pass the layer filter")
    pts = []
    for o in objects:
        lo, hi = o.vertices.min(axis=0), o.vertices.max(axis=0)
        pts.append(((lo[0] + hi[0]) / 2.0, lo[1], (lo[2] + hi[2]) / 2.0))
    layers = [mesh.layer_id(o.layer) for o in objects]
    return PointCloud(np.array(pts), layers, layer_names=mesh.layer_names)


def support_points(mesh: SceneMesh, filter: LayerFilter = ALL_LAYERS) -> PointCloud:
    """One point per passing object: center of its bounding box's bottom face."""
    return _support_from(mesh, _passing(mesh, filter))


def _concat(a: PointCloud, b: PointCloud, names) -> PointCloud:
    return PointCloud(
        np.concatenate([a.points, b.points]),
        np.concatenate([a.layers, b.layers]),
        layer_names=names,
    )


def sample_scene(
    mesh: SceneMesh,
    layer_methods: Mapping[str, str],
    n_surface: int,
    seed: int,
    filter: LayerFilter = ALL_LAYERS,
) -> PointCloud:
    """Route each layer to ``surface``, ``support`` or ``ignore`` and sample.

    Layers missing from ``layer_methods`` default to ``surface``. The
    ``n_surface`` points are area-weighted across all surface layers
    together and are skipped when no layer is routed to surface; the support
    block follows the surface block.
    """
    for layer, method in layer_methods.items():
        if method not in METHODS:
            raise ValueError(f"layer {layer!r}: unknown method {method!r}")
    passing = _passing(mesh, filter)
    surf = [o for o in passing if layer_methods.get(o.layer, "surface") == "surface"]
    supp = [o for o in passing if layer_methods.get(o.layer, "surface") == "support"]
    if not surf and not supp:
        raise SamplingError("every layer is ignored or filtered out; nothing to sample")

    if surf:
        surface = _surface_from(mesh, surf, n_surface, seed)
    else:
        surface = PointCloud(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), layer_names=mesh.layer_names)
    if not supp:
        return surface
    cloud = _concat(surface, _support_from(mesh, supp), mesh.layer_names)
    if len(cloud) == 0:
        raise SamplingError("sampling produced no points")
    return cloud


def parse_layer_spec(text: str) -> dict[str, str]:
    """Parse ``"a=surface,b=support,c=ignore"`` into a layer -> method map."""
    out: dict[str, str] = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        layer, sep, method = item.partition("=")
        if not sep or not layer or method not in METHODS:
            raise ValueError(f"bad layer assignment {item!r}; expected layer=surface|support|ignore")
        out[layer] = method
    return out


def parse_layer_list(text: str | None) -> frozenset[str] | None:
    if text is None:
        return None
    return frozenset(s.strip() for s in text.split(",") if s.strip())


def mesh_bounds(objects: Iterable[MeshObject]) -> tuple[np.ndarray, np.ndarray]:
    v = np.concatenate([o.vertices for o in objects])
    return v.min(axis=0), v.max(axis=0)
