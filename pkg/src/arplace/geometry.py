"""Point clouds, bounding boxes, nearest-neighbour index and cloud file I/O.

Coordinates are unit-agnostic (meters by convention) and are always held as
float64. PLY output narrows to float32 only at the serialization boundary.

All randomness in the package goes through :func:`make_rng`, which wraps
numpy's ``PCG64`` bit generator.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "Aabb",
    "NNIndex",
    "PointCloud",
    "PointCloudFormatError",
    "aabb",
    "build_nn_index",
    "centroid",
    "load_point_cloud",
    "make_rng",
    "nearest",
    "point_distances",
    "random_downsample",
    "save_point_cloud",
]


class PointCloudFormatError(ValueError):
    """Raised when a point-cloud file cannot be parsed."""


def make_rng(seed: int) -> np.random.Generator:
    """The single seeded generator used throughout the package (numpy PCG64)."""
    return np.random.Generator(np.random.PCG64(seed))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered 3D points with optional per-point layer ids and RGB colors.

    ``layer_names`` optionally maps layer id -> human-readable tag; it rides
    along in PLY comment lines.
    """

    points: np.ndarray
    layers: np.ndarray | None = None
    colors: np.ndarray | None = None
    layer_names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))
        if self.layers is not None:
            layers = np.array(self.layers, dtype=np.int64).reshape(-1)
            if len(layers) != len(pts):
                raise ValueError(
                    f"layers has length {len(layers)}, expected {len(pts)}"
                )
            object.__setattr__(self, "layers", _frozen(layers))
        if self.colors is not None:
            colors = np.array(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(colors) != len(pts):
                raise ValueError(
                    f"colors has length {len(colors)}, expected {len(pts)}"
                )
            object.__setattr__(self, "colors", _frozen(colors))
        if self.layer_names is not None:
            object.__setattr__(self, "layer_names", tuple(self.layer_names))

    def __len__(self) -> int:
        return len(self.points)

    def take(self, indices) -> "PointCloud":
        """Subset of the cloud, keeping layers and colors aligned."""
        indices = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            self.points[indices],
            None if self.layers is None else self.layers[indices],
            None if self.colors is None else self.colors[indices],
            self.layer_names,
        )

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.layers, self.colors, self.layer_names)


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    @property
    def diagonal(self) -> float:
        d = self.max - self.min
        return float(np.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.all((points >= self.min) & (points <= self.max), axis=1)


def _require_points(cloud: PointCloud, what: str) -> None:
    if len(cloud) == 0:
        raise ValueError(f"{what} requires a non-empty cloud")


def aabb(cloud: PointCloud) -> Aabb:
    _require_points(cloud, "aabb")
    return Aabb(_frozen(cloud.points.min(axis=0)), _frozen(cloud.points.max(axis=0)))


def centroid(cloud: PointCloud) -> np.ndarray:
    _require_points(cloud, "centroid")
    return cloud.points.mean(axis=0)


def point_distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Euclidean distances from each row of ``points`` to ``q``.

    This is the one distance formula used for nearest-neighbour results, so
    ties compare exactly equal.
    """
    d = points - q
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


# Relative band inside which two kd-tree distances count as a potential tie.
_TIE_BAND = 1e-9


class NNIndex:
    """Exact nearest-neighbour index over a fixed set of 3D points.

    Backed by a balanced k-d tree. Results are re-scored with
    :func:`point_distances` and near-ties are resolved by scanning the tie
    ball, so answers match an exhaustive scan exactly, with ties going to the
    smallest point index.
    """

    def __init__(self, points: np.ndarray):
        pts = np.array(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("cannot build a nearest-neighbour index over an empty cloud")
        self.points = _frozen(pts)
        self._tree = cKDTree(pts, balanced_tree=True, compact_nodes=True)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest neighbour of every query row. Returns ``(indices, distances)``."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        m = len(queries)
        if m == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        if len(self.points) == 1:
            idx = np.zeros(m, dtype=np.int64)
            return idx, point_distances(queries, self.points[0])

        kd_dist, kd_idx = self._tree.query(queries, k=2)
        idx = kd_idx[:, 0].astype(np.int64)
        ambiguous = np.flatnonzero(kd_dist[:, 1] <= kd_dist[:, 0] * (1.0 + _TIE_BAND) + 1e-300)
        if len(ambiguous):
            radii = kd_dist[ambiguous, 0] * (1.0 + _TIE_BAND) + 1e-300
            balls = self._tree.query_ball_point(queries[ambiguous], radii)
            for row, cand in zip(ambiguous, balls):
                cand = np.sort(np.asarray(cand, dtype=np.int64))
                d = point_distances(self.points[cand], queries[row])
                # argmin returns the first minimum; cand is sorted ascending.
                idx[row] = cand[np.argmin(d)]
        dist = point_distances(self.points[idx], queries)
        return idx, dist

    def nearest(self, q) -> tuple[int, float]:
        idx, dist = self.query(np.asarray(q, dtype=np.float64).reshape(1, 3))
        return int(idx[0]), float(dist[0])


def build_nn_index(cloud: PointCloud) -> NNIndex:
    return NNIndex(cloud.points)


def nearest(index: NNIndex, q) -> tuple[int, float]:
    return index.nearest(q)


def random_downsample(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """Uniform sample of ``n`` points without replacement, original order kept.

    Clouds with at most ``n`` points come back unchanged.
    """
    if n < 0:
        raise ValueError(f"sample size must be >= 0, got {n}")
    if n >= len(cloud):
        return cloud
    chosen = make_rng(seed).choice(len(cloud), size=n, replace=False)
    return cloud.take(np.sort(chosen))


# --------------------------------------------------------------------------
# File I/O

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_LAYER_COMMENT = re.compile(r"^layer_name\s+(\d+)\s+(\S+)$")


def _load_xyz(path: Path) -> PointCloud:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) < 3:
                raise PointCloudFormatError(
                    f"{path}:{lineno}: expected 'x y z', got {text!r}"
                )
            try:
                xyz = [float(v) for v in parts[:3]]
            except ValueError:
                raise PointCloudFormatError(
                    f"{path}:{lineno}: cannot parse coordinates {text!r}"
                ) from None
            if not all(np.isfinite(xyz)):
                raise PointCloudFormatError(f"{path}:{lineno}: non-finite coordinate")
            rows.append(xyz)
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3))


def _parse_ply_header(fh, path: Path):
    """Returns (encoding, elements, layer_names, header_line_count)."""
    first = fh.readline()
    if first.strip() != b"ply":
        raise PointCloudFormatError(f"{path}:1: missing 'ply' magic")
    encoding = None
    elements: list[list] = []  # [name, count, [(prop, dtype) or (prop, ('list', cnt, item))]]
    layer_names: dict[int, str] = {}
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise PointCloudFormatError(f"{path}: header ended before 'end_header'")
        line = raw.decode("ascii", errors="replace").strip()
        if not line:
            continue
        words = line.split()
        key = words[0]
        if key == "end_header":
            break
        if key in ("comment", "obj_info"):
            m = _LAYER_COMMENT.match(" ".join(words[1:]))
            if m:
                layer_names[int(m.group(1))] = m.group(2)
            continue
        if key == "format":
            if len(words) < 2:
                raise PointCloudFormatError(f"{path}:{lineno}: malformed format line")
            encoding = words[1]
            if encoding not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise PointCloudFormatError(f"{path}:{lineno}: unknown format {encoding!r}")
        elif key == "element":
            if len(words) != 3:
                raise PointCloudFormatError(f"{path}:{lineno}: malformed element line")
            try:
                count = int(words[2])
            except ValueError:
                raise PointCloudFormatError(f"{path}:{lineno}: bad element count") from None
            elements.append([words[1], count, []])
        elif key == "property":
            if not elements:
                raise PointCloudFormatError(f"{path}:{lineno}: property before element")
            if len(words) >= 5 and words[1] == "list":
                if words[2] not in _PLY_TYPES or words[3] not in _PLY_TYPES:
                    raise PointCloudFormatError(f"{path}:{lineno}: unknown list type")
                elements[-1][2].append((words[4], ("list", _PLY_TYPES[words[2]], _PLY_TYPES[words[3]])))
            elif len(words) == 3:
                if words[1] not in _PLY_TYPES:
                    raise PointCloudFormatError(
                        f"{path}:{lineno}: unknown property type {words[1]!r}"
                    )
                elements[-1][2].append((words[2], _PLY_TYPES[words[1]]))
            else:
                raise PointCloudFormatError(f"{path}:{lineno}: malformed property line")
        else:
            raise PointCloudFormatError(f"{path}:{lineno}: unexpected header keyword {key!r}")
    if encoding is None:
        raise PointCloudFormatError(f"{path}: header has no format line")
    if encoding == "binary_big_endian":
        raise PointCloudFormatError(f"{path}: big-endian PLY is not supported")
    vertex = [e for e in elements if e[0] == "vertex"]
    if not vertex:
        raise PointCloudFormatError(f"{path}: no 'vertex' element")
    names = [p[0] for p in vertex[0][2]]
    for axis in "xyz":
        if axis not in names:
            raise PointCloudFormatError(f"{path}: vertex element lacks property {axis!r}")
    return encoding, elements, layer_names, lineno


def _assemble(props: dict, layer_names: dict) -> PointCloud:
    points = np.column_stack([props["x"], props["y"], props["z"]]).astype(np.float64)
    layers = props.get("layer")
    if layers is not None:
        layers = np.asarray(layers).astype(np.int64)
    colors = None
    if all(c in props for c in ("red", "green", "blue")):
        colors = np.column_stack([props["red"], props["green"], props["blue"]]).astype(np.uint8)
    names = None
    if layer_names:
        names = tuple(layer_names.get(i, str(i)) for i in range(max(layer_names) + 1))
    return PointCloud(points, layers, colors, names)


def _load_ply(path: Path) -> PointCloud:
    with open(path, "rb") as fh:
        encoding, elements, layer_names, header_lines = _parse_ply_header(fh, path)
        body = fh.read()

    if encoding == "ascii":
        lines = body.decode("ascii", errors="replace").splitlines()
        pos = 0
        props: dict = {}
        for name, count, plist in elements:
            is_vertex = name == "vertex"
            cols: dict = {p[0]: [] for p in plist}
            for _ in range(count):
                while pos < len(lines) and not lines[pos].strip():
                    pos += 1
                if pos >= len(lines):
                    raise PointCloudFormatError(
                        f"{path}: expected {count} '{name}' rows, file ended early"
                    )
                lineno = header_lines + pos + 1
                tokens = lines[pos].split()
                pos += 1
                t = 0
                for pname, ptype in plist:
                    if isinstance(ptype, tuple):
                        if t >= len(tokens):
                            raise PointCloudFormatError(f"{path}:{lineno}: truncated row")
                        t += 1 + int(tokens[t])
                        continue
                    if t >= len(tokens):
                        raise PointCloudFormatError(f"{path}:{lineno}: truncated row")
                    try:
                        value = float(tokens[t]) if ptype[0] == "f" else int(tokens[t])
                    except ValueError:
                        raise PointCloudFormatError(
                            f"{path}:{lineno}: cannot parse {pname}={tokens[t]!r}"
                        ) from None
                    if is_vertex and pname in "xyz" and not np.isfinite(value):
                        raise PointCloudFormatError(
                            f"{path}:{lineno}: non-finite coordinate {pname}={tokens[t]}"
                        )
                    cols[pname].append(value)
                    t += 1
            if is_vertex:
                props = cols
        return _assemble(props, layer_names)

    # binary_little_endian
    offset = 0
    for name, count, plist in elements:
        if any(isinstance(p[1], tuple) for p in plist):
            if name == "vertex":
                raise PointCloudFormatError(f"{path}: list properties on vertices are not supported")
            # Variable-length rows: walk them one by one.
            for _ in range(count):
                for _pname, ptype in plist:
                    if isinstance(ptype, tuple):
                        cnt_t, item_t = np.dtype("<" + ptype[1]), np.dtype("<" + ptype[2])
                        if offset + cnt_t.itemsize > len(body):
                            raise PointCloudFormatError(f"{path}: truncated '{name}' data at byte {offset}")
                        n = int(np.frombuffer(body, cnt_t, 1, offset)[0])
                        offset += cnt_t.itemsize + n * item_t.itemsize
                    else:
                        offset += np.dtype(ptype).itemsize
            continue
        dtype = np.dtype([(p[0], "<" + p[1]) for p in plist])
        need = dtype.itemsize * count
        if offset + need > len(body):
            raise PointCloudFormatError(
                f"{path}: truncated '{name}' data: need {need} bytes at offset {offset}, "
                f"have {len(body) - offset}"
            )
        if name == "vertex":
            data = np.frombuffer(body, dtype, count, offset)
            xyz = np.column_stack([data["x"], data["y"], data["z"]]).astype(np.float64)
            bad = np.flatnonzero(~np.all(np.isfinite(xyz), axis=1))
            if len(bad):
                row = int(bad[0])
                raise PointCloudFormatError(
                    f"{path}: non-finite coordinate in vertex {row} "
                    f"(byte offset {offset + row * dtype.itemsize})"
                )
            return _assemble({n: data[n] for n in dtype.names}, layer_names)
        offset += need
    raise PointCloudFormatError(f"{path}: no vertex data")


def load_point_cloud(path, format: str = "auto") -> PointCloud:
    """Read a PLY (ascii or binary little-endian) or XYZ text file.

    Parameters
    ----------
    path : path-like
    format : {"auto", "ply", "xyz"}
        ``auto`` picks by extension, falling back to sniffing the ``ply`` magic.
    """
    path = Path(path)
    if format == "auto":
        suffix = path.suffix.lower()
        if suffix == ".ply":
            format = "ply"
        elif suffix in (".xyz", ".txt"):
            format = "xyz"
        else:
            try:
                with open(path, "rb") as fh:
                    format = "ply" if fh.read(3) == b"ply" else "xyz"
            except OSError as exc:
                raise PointCloudFormatError(f"{path}: cannot read file ({exc.strerror})") from exc
    try:
        if format == "ply":
            return _load_ply(path)
        if format == "xyz":
            return _load_xyz(path)
    except OSError as exc:
        raise PointCloudFormatError(f"{path}: cannot read file ({exc.strerror})") from exc
    except UnicodeDecodeError as exc:
        raise PointCloudFormatError(f"{path}: not a text file ({exc.reason})") from exc
    raise ValueError(f"unknown point cloud format {format!r}")


def save_point_cloud(cloud: PointCloud, path, format: str = "ply_ascii") -> None:
    """Write ``cloud`` as ascii PLY (float32 coordinates) or XYZ text.

    XYZ coordinates use 17 significant digits, so float64 values survive a
    round trip exactly. PLY adds an ``int layer`` property when the cloud has
    layers and ``uchar red/green/blue`` when it has colors.
    """
    path = Path(path)
    if format == "xyz":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for x, y, z in cloud.points:
                fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        return
    if format != "ply_ascii":
        raise ValueError(f"unknown output format {format!r}")

    header = ["ply", "format ascii 1.0"]
    if cloud.layer_names:
        header += [f"comment layer_name {i} {name}" for i, name in enumerate(cloud.layer_names)]
    header += [
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if cloud.layers is not None:
        header.append("property int layer")
    if cloud.colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")

    pts32 = cloud.points.astype(np.float32)
    lines = []
    for i in range(len(cloud)):
        row = [repr(float(v)) for v in pts32[i]]
        if cloud.layers is not None:
            row.append(str(int(cloud.layers[i])))
        if cloud.colors is not None:
            row += [str(int(c)) for c in cloud.colors[i]]
        lines.append(" ".join(row))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(header) + "\n")
        if lines:
            fh.write("\n".join(lines) + "\n")
