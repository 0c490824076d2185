"""Placement of a virtual cloud into a physical cloud.

The transform family is restricted to translation, rotation about +Y and a
single positive scale (per-axis scales when aspect ratio is released)::

    q = s * Ry(theta) * p + t
    Ry(theta): (x, y, z) -> (x cos + z sin, y, -x sin + z cos)

ICP alternates nearest-neighbour matching (virtual -> physical) with a
closed-form refit. Every refit is computed from the *original* source
points against the currently matched target points, so each iteration
produces an absolute transform rather than an incremental update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import jsonio
from .geometry import NNIndex, PointCloud, aabb, build_nn_index

__all__ = [
    "APPLICATION",
    "APPLICATION_ANISOTROPIC",
    "DegenerateScaleError",
    "IcpParams",
    "RegistrationError",
    "RegistrationResult",
    "SimilarityTransformY",
    "apply_transform",
    "correspondence_objective",
    "fit_anisotropic_y",
    "fit_similarity_y",
    "icp",
    "initial_transforms",
    "multi_start_icp",
    "placement_error",
    "read_transform",
    "write_transform",
]

APPLICATION = "q = s*Ry(theta)*p + t"
APPLICATION_ANISOTROPIC = "q = Ry(theta)*diag(s)*p + t"

SCALE_MIN = 1e-6
SCALE_MAX = 1e6
NORMALIZATIONS = ("none", "target_diagonal")


class RegistrationError(ValueError):
    """Invalid or degenerate registration input."""


class DegenerateScaleError(RegistrationError):
    """The least-squares scale is undefined or not positive."""


def wrap_angle(theta: float) -> float:
    """Reduce an angle to (-pi, pi]; values already in range are returned untouched."""
    theta = float(theta)
    if -math.pi < theta <= math.pi:
        return theta
    theta = math.remainder(theta, 2.0 * math.pi)
    return math.pi if theta <= -math.pi else theta


def rotation_y(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class SimilarityTransformY:
    theta: float = 0.0
    scale: float | tuple[float, float, float] = 1.0
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))
        if np.ndim(self.scale) == 0:
            scale = float(self.scale)
            ok = math.isfinite(scale) and scale > 0
        else:
            scale = tuple(float(v) for v in self.scale)
            if len(scale) != 3:
                raise ValueError("per-axis scale needs exactly 3 values")
            ok = all(math.isfinite(v) and v > 0 for v in scale)
        if not ok:
            raise ValueError(f"scale must be positive and finite, got {self.scale!r}")
        object.__setattr__(self, "scale", scale)
        t = tuple(float(v) for v in self.translation)
        if len(t) != 3 or not all(map(math.isfinite, t)):
            raise ValueError(f"translation must be 3 finite numbers, got {self.translation!r}")
        object.__setattr__(self, "translation", t)

    @property
    def anisotropic(self) -> bool:
        return isinstance(self.scale, tuple)

    @property
    def scale_vector(self) -> np.ndarray:
        if self.anisotropic:
            return np.array(self.scale)
        return np.full(3, self.scale)

    def linear(self) -> np.ndarray:
        """The 3x3 matrix ``Ry(theta) @ diag(scale)``."""
        return rotation_y(self.theta) * self.scale_vector[None, :]

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return points @ self.linear().T + np.array(self.translation)

    def to_json(self) -> dict:
        return {
            "theta_rad": self.theta,
            "scale": list(self.scale) if self.anisotropic else self.scale,
            "translation": list(self.translation),
            "application": APPLICATION_ANISOTROPIC if self.anisotropic else APPLICATION,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SimilarityTransformY":
        try:
            scale = data["scale"]
            expected = APPLICATION_ANISOTROPIC if isinstance(scale, list) else APPLICATION
            if data.get("application") != expected:
                raise ValueError(
                    f"transform 'application' must be {expected!r}, got {data.get('application')!r}"
                )
            return cls(data["theta_rad"], tuple(scale) if isinstance(scale, list) else scale,
                       tuple(data["translation"]))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed transform JSON: {exc}") from None


IDENTITY = SimilarityTransformY()


def write_transform(t: SimilarityTransformY, path) -> None:
    jsonio.dump(t.to_json(), path)


def read_transform(path) -> SimilarityTransformY:
    return SimilarityTransformY.from_json(jsonio.load(path))


def _as_points(x) -> np.ndarray:
    if isinstance(x, PointCloud):
        return x.points
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


def apply_transform(t: SimilarityTransformY, cloud: PointCloud) -> PointCloud:
    return cloud.with_points(t.apply(cloud.points))


def correspondence_objective(t: SimilarityTransformY, source_pts, target_pts) -> float:
    """Sum of squared residuals ``||T p_i - q_i||^2`` over paired points."""
    r = t.apply(_as_points(source_pts)) - _as_points(target_pts)
    return float(np.sum(r * r))


def _paired(source_pts, target_pts, min_len: int) -> tuple[np.ndarray, np.ndarray]:
    p, q = _as_points(source_pts), _as_points(target_pts)
    if len(p) != len(q):
        raise RegistrationError(f"correspondence sets differ in length ({len(p)} vs {len(q)})")
    if len(p) < min_len:
        raise RegistrationError(f"need at least {min_len} correspondences, got {len(p)}")
    return p, q


def _yaw_terms(p: np.ndarray, q: np.ndarray) -> tuple[float, float]:
    """(a, b) such that sum q.(Ry(theta) p) = a cos + b sin + const, for centered sets."""
    a = float(np.sum(q[:, 0] * p[:, 0] + q[:, 2] * p[:, 2]))
    b = float(np.sum(q[:, 0] * p[:, 2] - q[:, 2] * p[:, 0]))
    return a, b


def fit_similarity_y(source_pts, target_pts, fix_scale: bool = False) -> SimilarityTransformY:
    """Closed-form least-squares yaw + uniform scale + translation.

    With both sets centered, the yaw maximizing the correlation is
    ``atan2(b, a)`` and the scale follows as ``(hypot(a, b) + c) / sum |p|^2``
    where ``c`` is the Y-Y correlation. Raises :class:`DegenerateScaleError`
    when the scale is undefined (all source points equal) or not positive.
    """
    p, q = _paired(source_pts, target_pts, 1)
    p_mean, q_mean = p.mean(axis=0), q.mean(axis=0)
    pc, qc = p - p_mean, q - q_mean
    a, b = _yaw_terms(pc, qc)
    theta = math.atan2(b, a)
    if fix_scale:
        s = 1.0
    else:
        spread = float(np.sum(pc * pc))
        if spread == 0.0:
            raise DegenerateScaleError(
                "all source points coincide, scale is undefined; use fix_scale"
            )
        c = float(np.sum(qc[:, 1] * pc[:, 1]))
        s = (a * math.cos(theta) + b * math.sin(theta) + c) / spread
        if not s > 0:
            raise DegenerateScaleError(f"least-squares scale is not positive ({s:.6g})")
    t = q_mean - s * (rotation_y(theta) @ p_mean)
    return SimilarityTransformY(theta, s, tuple(t))


ANISO_TOLERANCE = 1e-12


def _profile_yaw(pc: np.ndarray, qc: np.ndarray, wx: float, wz: float) -> float:
    """Yaw minimizing the objective after the per-axis scales are optimized out.

    With ``r = Ry(theta)^T q`` the reduced objective is a constant minus a
    quadratic form in ``(cos, sin)``; its top eigenvector gives the yaw.
    """
    u = np.array([np.sum(pc[:, 0] * qc[:, 0]), -np.sum(pc[:, 0] * qc[:, 2])])
    w = np.array([np.sum(pc[:, 2] * qc[:, 2]), np.sum(pc[:, 2] * qc[:, 0])])
    m = np.outer(u, u) / wx + np.outer(w, w) / wz
    _, vecs = np.linalg.eigh(m)
    v = vecs[:, -1]
    if v @ u / wx + v @ w / wz < 0:
        v = -v
    return math.atan2(v[1], v[0])


def fit_anisotropic_y(
    source_pts,
    target_pts,
    max_alt_iterations: int = 100,
    init: str = "profile",
) -> SimilarityTransformY:
    """Least-squares yaw, per-axis scale and translation: ``q = Ry S p + t``.

    Block coordinate descent: for fixed scales the yaw is the isotropic
    closed form on the scaled points; for fixed yaw each axis scale is
    ``sum p_a r_a / sum p_a^2`` with ``r = Ry^T q``. Iteration stops when the
    objective changes by less than 1e-12 or after ``max_alt_iterations``.

    ``init="profile"`` seeds the descent with the exact reduced-problem yaw,
    ``init="uniform"`` with the uniform-scale fit.
    """
    p, q = _paired(source_pts, target_pts, 4)
    p_mean, q_mean = p.mean(axis=0), q.mean(axis=0)
    pc, qc = p - p_mean, q - q_mean
    var = np.sum(pc * pc, axis=0)
    if np.any(var == 0):
        axis = "xyz"[int(np.flatnonzero(var == 0)[0])]
        raise DegenerateScaleError(f"source has zero spread along {axis}; per-axis scale undefined")

    if init == "profile":
        theta = _profile_yaw(pc, qc, var[0], var[2])
    elif init == "uniform":
        theta = fit_similarity_y(pc, qc).theta
    else:
        raise ValueError(f"unknown init {init!r}")

    def scales_for(theta):
        r = qc @ rotation_y(theta)  # rows are Ry^T q
        return np.sum(pc * r, axis=0) / var

    def objective(theta, s):
        res = (pc * s) @ rotation_y(theta).T - qc
        return float(np.sum(res * res))

    s = scales_for(theta)
    prev = objective(theta, s)
    for _ in range(max_alt_iterations):
        theta = math.atan2(*_yaw_terms(pc * s, qc)[::-1])
        s = scales_for(theta)
        cur = objective(theta, s)
        done = abs(prev - cur) < ANISO_TOLERANCE
        prev = cur
        if done:
            break
    if not np.all(s > 0):
        raise DegenerateScaleError(f"least-squares per-axis scale is not positive {tuple(s)}")
    t = q_mean - rotation_y(theta) @ (s * p_mean)
    return SimilarityTransformY(theta, tuple(s), tuple(t))


def _normalizer(target_aabb, normalization: str) -> float:
    if normalization == "target_diagonal":
        scale = target_aabb.diagonal
        if scale == 0:
            raise RegistrationError("target bounding box has zero diagonal; cannot normalize")
        return scale
    if normalization == "none":
        return 1.0
    raise ValueError(f"unknown normalization {normalization!r}")


def placement_error(
    source,
    target_index: NNIndex,
    target_aabb,
    normalization: str = "target_diagonal",
) -> tuple[float, np.ndarray]:
    """Mean squared nearest-neighbour distance from source to target.

    Distances are divided by the target bounding-box diagonal first when
    ``normalization="target_diagonal"``. Returns ``(error, per_point)`` where
    ``per_point`` holds the (normalized) distances, not their squares.
    """
    pts = _as_points(source)
    if len(pts) == 0:
        raise RegistrationError("placement error needs a non-empty source")
    scale = _normalizer(target_aabb, normalization)
    _, dist = target_index.query(pts)
    per_point = dist / scale
    return float(np.mean(per_point * per_point)), per_point


@dataclass(frozen=True)
class IcpParams:
    """ICP settings. ``trim_distance`` (normalized units) drops far pairs from the refit."""

    max_iterations: int = 100
    rel_tolerance: float = 1e-6
    fix_scale: bool = False
    keep_aspect_ratio: bool = True
    starts: int = 8
    normalization: str = "target_diagonal"
    trim_distance: float | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be > 0")
        if self.starts < 1:
            raise ValueError("starts must be >= 1")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if self.trim_distance is not None and not self.trim_distance > 0:
            raise ValueError("trim_distance must be > 0 when set")

    def to_json(self) -> dict:
        return {
            "max_iterations": self.max_iterations,
            "rel_tolerance": self.rel_tolerance,
            "fix_scale": self.fix_scale,
            "keep_aspect_ratio": self.keep_aspect_ratio,
            "starts": self.starts,
            "normalization": self.normalization,
            "trim_distance": self.trim_distance,
        }


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    transform: SimilarityTransformY
    error: float
    per_point_errors: np.ndarray
    iterations: int
    converged: bool
    start_index: int = 0
    history: tuple[float, ...] = field(default=())
    scale_clamped: bool = False


def _relative_change(prev: float, cur: float) -> float:
    if prev > 0:
        return abs(prev - cur) / prev
    return 0.0 if cur == prev else math.inf


def _clamp(t: SimilarityTransformY, p_mean, q_mean) -> tuple[SimilarityTransformY, bool]:
    s = t.scale_vector
    clipped = np.clip(s, SCALE_MIN, SCALE_MAX)
    if np.array_equal(s, clipped):
        return t, False
    scale = tuple(clipped) if t.anisotropic else float(clipped[0])
    trans = q_mean - rotation_y(t.theta) @ (clipped * p_mean)
    return SimilarityTransformY(t.theta, scale, tuple(trans)), True


def _check_clouds(src: np.ndarray, dst: np.ndarray, params: IcpParams) -> None:
    if len(src) < 3 or len(dst) < 3:
        raise RegistrationError(
            f"ICP needs at least 3 points per cloud (source {len(src)}, target {len(dst)})"
        )
    if not params.fix_scale and np.all(src == src[0]):
        raise RegistrationError("source points all coincide; scale cannot be estimated (use fix_scale)")


def icp(
    source,
    target,
    init: SimilarityTransformY = IDENTITY,
    params: IcpParams = IcpParams(),
    *,
    target_index: NNIndex | None = None,
    start_index: int = 0,
) -> RegistrationResult:
    """Constrained ICP from ``init``.

    Each iteration matches the transformed source to its nearest target
    points, refits the transform on (original source, matched target), and
    re-scores. Stops when the relative error change drops below
    ``params.rel_tolerance`` or after ``params.max_iterations`` refits. The
    error sequence (``history``, initial state first) is non-increasing.
    """
    src, dst = _as_points(source), _as_points(target)
    _check_clouds(src, dst, params)
    index = target_index if target_index is not None else NNIndex(dst)
    norm = _normalizer(aabb(PointCloud(dst)), params.normalization)
    anisotropic = not params.keep_aspect_ratio and not params.fix_scale

    def score(t):
        # Same arithmetic as placement_error, keeping the matched indices.
        idx, dist = index.query(t.apply(src))
        per_point = dist / norm
        return float(np.mean(per_point * per_point)), per_point, idx

    transform = init
    err, per_point, matched = score(transform)
    history = [err]
    converged = clamped = False
    iterations = 0
    while iterations < params.max_iterations:
        iterations += 1
        keep = slice(None)
        if params.trim_distance is not None:
            keep = per_point <= params.trim_distance
            if np.count_nonzero(keep) < 4:
                keep = slice(None)
        p, q = src[keep], dst[matched][keep]
        if anisotropic:
            fitted = fit_anisotropic_y(p, q)
        else:
            fitted = fit_similarity_y(p, q, fix_scale=params.fix_scale)
        fitted, clamped = _clamp(fitted, p.mean(axis=0), q.mean(axis=0))
        new_err, new_per_point, new_matched = score(fitted)
        change = _relative_change(err, new_err)
        transform, err, per_point, matched = fitted, new_err, new_per_point, new_matched
        history.append(err)
        if clamped:
            break
        if change < params.rel_tolerance:
            converged = True
            break

    return RegistrationResult(
        transform=transform,
        error=err,
        per_point_errors=per_point,
        iterations=iterations,
        converged=converged,
        start_index=start_index,
        history=tuple(history),
        scale_clamped=clamped,
    )


def initial_transforms(source, target, params: IcpParams = IcpParams()) -> list[SimilarityTransformY]:
    """Evenly spaced yaw starts with centroid alignment and a diagonal-ratio scale."""
    src, dst = _as_points(source), _as_points(target)
    src_diag = aabb(PointCloud(src)).diagonal
    if params.fix_scale:
        s0 = 1.0
    else:
        if src_diag == 0:
            raise RegistrationError("source bounding box has zero diagonal; cannot initialize scale")
        s0 = aabb(PointCloud(dst)).diagonal / src_diag
        s0 = min(max(s0, SCALE_MIN), SCALE_MAX)
    src_c, dst_c = src.mean(axis=0), dst.mean(axis=0)
    inits = []
    for k in range(params.starts):
        theta = wrap_angle(2.0 * math.pi * k / params.starts)
        t = dst_c - s0 * (rotation_y(theta) @ src_c)
        inits.append(SimilarityTransformY(theta, s0, tuple(t)))
    return inits


def multi_start_icp(source, target, params: IcpParams = IcpParams()) -> RegistrationResult:
    """Run :func:`icp` from every start of :func:`initial_transforms`; keep the lowest error.

    Ties go to the smallest start index. Starts that fail with a degenerate
    scale are skipped; if every start fails the last error is raised.
    """
    src, dst = _as_points(source), _as_points(target)
    _check_clouds(src, dst, params)
    index = NNIndex(dst)
    best: RegistrationResult | None = None
    failure: RegistrationError | None = None
    for k, init in enumerate(initial_transforms(src, dst, params)):
        try:
            res = icp(src, dst, init, params, target_index=index, start_index=k)
        except DegenerateScaleError as exc:
            failure = exc
            continue
        if best is None or res.error < best.error:
            best = res
    if best is None:
        assert failure is not None
        raise failure
    return best


def rescore(source: PointCloud, target: PointCloud, transform: SimilarityTransformY,
            normalization: str = "target_diagonal") -> tuple[float, np.ndarray]:
    """Placement error of ``source`` under a given ``transform``."""
    return placement_error(transform.apply(source.points), build_nn_index(target), aabb(target), normalization)

