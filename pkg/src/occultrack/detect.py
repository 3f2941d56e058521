"""Occultation detection: star maps, anomaly accumulation and RANSAC line fitting.

The pipeline compares a reference frame ``n`` with an operating frame
``n + k``. Both are binarized with their own Otsu threshold; pixels bright
in the reference but dim in the operating frame are anomalies. Anomalies
from the last ``j`` operating frames are pooled and a straight line is fit
through them with RANSAC. A transit is reported when the fit is tight and
supported by enough distinct pixels.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import seeding
from .errors import InsufficientDataError, InvalidArgumentError
from .starfield import Frame

# candidate-by-point distance evaluations per RANSAC chunk
_RANSAC_CHUNK_CELLS = 1 << 22


@dataclass(frozen=True, eq=False)
class BitMask:
    bits: np.ndarray

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))


@dataclass(frozen=True, eq=False)
class StarMap:
    """Bright pixels of one frame, ordered by row-major pixel index."""

    frame_index: int
    width: int
    height: int
    x: np.ndarray
    y: np.ndarray
    intensity: np.ndarray

    def __len__(self):
        return len(self.x)

    @property
    def entries(self) -> set[tuple[int, int, int]]:
        return {(int(a), int(b), int(c)) for a, b, c in zip(self.x, self.y, self.intensity)}

    @classmethod
    def from_entries(cls, frame_index: int, width: int, height: int, entries: Iterable) -> StarMap:
        arr = np.array(sorted(entries, key=lambda e: (e[1], e[0])), dtype=np.int64).reshape(-1, 3)
        return cls(frame_index, width, height, arr[:, 0], arr[:, 1], arr[:, 2])


@dataclass(frozen=True)
class AnomalyRecord:
    x: int
    y: int
    frame_index: int


@dataclass(frozen=True, eq=False)
class Anomalies:
    """Column-wise collection of anomaly records."""

    x: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    y: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    frame: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    def __len__(self):
        return len(self.x)

    def __iter__(self) -> Iterator[AnomalyRecord]:
        for a, b, c in zip(self.x, self.y, self.frame):
            yield AnomalyRecord(int(a), int(b), int(c))

    def as_set(self) -> set[AnomalyRecord]:
        return set(self)

    @classmethod
    def from_records(cls, records: Iterable[AnomalyRecord]) -> Anomalies:
        recs = list(records)
        return cls(
            np.array([r.x for r in recs], np.int64),
            np.array([r.y for r in recs], np.int64),
            np.array([r.frame_index for r in recs], np.int64),
        )

    def points(self) -> np.ndarray:
        return np.column_stack([self.x, self.y]).astype(float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "frame"])
        w.writerows(zip(self.x.tolist(), self.y.tolist(), self.frame.tolist()))
        return buf.getvalue()


@dataclass(frozen=True)
class AnomalyBuffer:
    capacity_frames: int
    records: Anomalies = field(default_factory=Anomalies)

    def __post_init__(self):
        if self.capacity_frames < 1:
            raise InvalidArgumentError("buffer capacity must be >= 1 frame")

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class RansacParams:
    max_iterations: int = 100
    inlier_tolerance: float = 3.0
    min_inliers: int = 5
    loss_threshold: float = 9.0
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be >= 1")
        if not self.inlier_tolerance > 0:
            raise InvalidArgumentError("inlier_tolerance must be > 0")
        if self.min_inliers < 2:
            raise InvalidArgumentError("min_inliers must be >= 2")


@dataclass(frozen=True)
class LineModel:
    point: tuple[float, float]
    direction: tuple[float, float]

    def __post_init__(self):
        dx, dy = self.direction
        norm = math.hypot(dx, dy)
        if norm == 0:
            raise InvalidArgumentError("direction must be non-zero")
        dx, dy = dx / norm, dy / norm
        if dx < 0 or (dx == 0 and dy < 0):
            dx, dy = -dx, -dy
        object.__setattr__(self, "direction", (dx + 0.0, dy + 0.0))
        object.__setattr__(self, "point", (float(self.point[0]), float(self.point[1])))

    def distances(self, pts) -> np.ndarray:
        """Perpendicular distance of each ``(x, y)`` row to the line."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        dx, dy = self.direction
        return np.abs((pts[:, 0] - self.point[0]) * -dy + (pts[:, 1] - self.point[1]) * dx)

    def to_dict(self) -> dict:
        return {"px": self.point[0], "py": self.point[1], "dx": self.direction[0], "dy": self.direction[1]}


@dataclass(frozen=True)
class RansacFit:
    model: LineModel
    loss: float
    inliers: int
    inlier_points: np.ndarray = field(compare=False, repr=False, default=None)


@dataclass(frozen=True)
class DetectionResult:
    detected: bool
    model: LineModel | None
    loss: float
    inlier_count: int
    anomaly_count: int
    anomalies: Anomalies | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        return {
            "detected": self.detected,
            "loss": self.loss if math.isfinite(self.loss) else None,
            "inliers": self.inlier_count,
            "anomalies": self.anomaly_count,
            "line": self.model.to_dict() if self.model is not None else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# -- binarization ---------------------------------------------------------


def otsu_from_histogram(hist: Sequence[int]) -> tuple[int, bool]:
    """Otsu threshold of a 256-bin histogram; pixels ``> threshold`` are bright.

    Between-class variance for a split at ``t`` is proportional to
    ``(N*s0 - n0*S)**2 / (n0*n1)``; it is compared in exact integer
    arithmetic so the first (smallest) maximizer wins ties reliably.
    """
    counts = [int(c) for c in hist]
    if len(counts) != 256:
        raise InvalidArgumentError("histogram must have 256 bins")
    total = sum(counts)
    if total == 0:
        raise InvalidArgumentError("empty frame")
    occupied = [v for v, c in enumerate(counts) if c]
    if len(occupied) == 1:
        return occupied[0], True

    s_total = sum(v * c for v, c in enumerate(counts))
    best_t, best_num, best_den = 0, 0, 1
    n0 = s0 = 0
    for t in range(255):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (total * s0 - n0 * s_total) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t, False


def histogram(frame: Frame) -> np.ndarray:
    return np.bincount(frame.pixels.ravel(), minlength=256)


def otsu_threshold(frame: Frame) -> tuple[int, bool]:
    if frame.pixels.size == 0:
        raise InvalidArgumentError("empty frame")
    return otsu_from_histogram(histogram(frame))


def binarize(frame: Frame, threshold: int) -> BitMask:
    return BitMask(frame.pixels > threshold)


def extract_star_map(mask: BitMask, frame: Frame) -> StarMap:
    if mask.bits.shape != frame.pixels.shape:
        raise InvalidArgumentError(
            f"mask is {mask.width}x{mask.height} but frame is {frame.width}x{frame.height}"
        )
    lin = np.flatnonzero(mask.bits)
    y, x = np.divmod(lin, frame.width)
    return StarMap(frame.index, frame.width, frame.height, x, y, frame.pixels.ravel()[lin])


def star_map(frame: Frame) -> StarMap:
    """Binarize a frame at its own Otsu threshold and extract the star map."""
    t, _ = otsu_threshold(frame)
    return extract_star_map(binarize(frame, t), frame)


# -- differencing and buffering -------------------------------------------


def diff_star_maps(reference: StarMap, operating: StarMap, offset: tuple[int, int] = (0, 0)) -> Anomalies:
    """Positions bright in ``reference`` but not in ``operating``.

    ``offset`` is an integer ``(dx, dy)`` added to operating-map positions to
    register them onto the reference before subtracting. Each position is
    tested independently, so the result does not depend on evaluation order.
    """
    if (reference.width, reference.height) != (operating.width, operating.height):
        raise InvalidArgumentError("star maps come from different field geometries")
    w, h = reference.width, reference.height
    ox, oy = operating.x + int(offset[0]), operating.y + int(offset[1])
    if offset != (0, 0):
        ok = (ox >= 0) & (ox < w) & (oy >= 0) & (oy < h)
        ox, oy = ox[ok], oy[ok]
    ref_lin = reference.y * w + reference.x
    op_lin = np.sort(oy * w + ox)
    pos = np.searchsorted(op_lin, ref_lin)
    pos[pos == len(op_lin)] = 0
    gone = op_lin[pos] != ref_lin if len(op_lin) else np.ones(len(ref_lin), bool)
    n = int(np.count_nonzero(gone))
    return Anomalies(
        reference.x[gone].astype(np.int64),
        reference.y[gone].astype(np.int64),
        np.full(n, operating.frame_index, np.int64),
    )


def accumulate_anomalies(buffer: AnomalyBuffer, new: Anomalies | Iterable[AnomalyRecord]) -> AnomalyBuffer:
    """Append records, then drop those more than ``j - 1`` frames behind the newest."""
    if not isinstance(new, Anomalies):
        new = Anomalies.from_records(new)
    old = buffer.records
    x = np.concatenate([old.x, new.x])
    y = np.concatenate([old.y, new.y])
    f = np.concatenate([old.frame, new.frame])
    if len(f):
        keep = f >= f.max() - (buffer.capacity_frames - 1)
        x, y, f = x[keep], y[keep], f[keep]
    return AnomalyBuffer(buffer.capacity_frames, Anomalies(x, y, f))


# -- RANSAC ---------------------------------------------------------------


def _as_points(points) -> np.ndarray:
    if isinstance(points, Anomalies):
        return points.points()
    if isinstance(points, AnomalyBuffer):
        return points.records.points()
    pts = list(points) if not isinstance(points, np.ndarray) else points
    if len(pts) and isinstance(pts[0], AnomalyRecord):
        return np.array([(p.x, p.y) for p in pts], dtype=float)
    return np.asarray(pts, dtype=float).reshape(-1, 2)


def total_least_squares(pts: np.ndarray) -> LineModel:
    """Orthogonal-regression line through ``pts`` (centroid and principal axis)."""
    c = pts.mean(axis=0)
    d = pts - c
    _, vecs = np.linalg.eigh(d.T @ d)
    return LineModel((c[0], c[1]), (vecs[0, 1], vecs[1, 1]))


def ransac_fit(points, params: RansacParams = RansacParams()) -> RansacFit:
    """Robust line fit through anomaly positions.

    Duplicate positions are collapsed and the remainder sorted by ``(x, y)``
    so the seeded pair sampling, and hence the result, does not depend on
    input order. Each iteration draws two distinct points; the candidate
    with most inliers wins (ties: smaller mean squared distance, then
    earlier iteration) and is refit by total least squares on its inliers.
    """
    pts = _as_points(points)
    pts = np.unique(pts, axis=0) if len(pts) else pts
    n = len(pts)
    if n < 2:
        raise InsufficientDataError(f"RANSAC needs at least 2 distinct points, got {n}")

    rng = seeding.keyed_generator(params.seed, seeding.RANSAC)
    R = params.max_iterations
    first = rng.integers(0, n, size=R)
    second = rng.integers(0, n - 1, size=R)
    second += second >= first

    tol = params.inlier_tolerance
    counts = np.empty(R, np.int64)
    msd = np.empty(R)
    chunk = max(1, _RANSAC_CHUNK_CELLS // n)
    for lo in range(0, R, chunk):
        a = pts[first[lo:lo + chunk]]
        b = pts[second[lo:lo + chunk]]
        d = b - a
        d /= np.hypot(d[:, 0], d[:, 1])[:, None]
        # |cross(p - a, d)| for every candidate x point
        dist = np.abs(
            np.subtract.outer(a[:, 0], pts[:, 0]) * d[:, 1:2]
            - np.subtract.outer(a[:, 1], pts[:, 1]) * d[:, 0:1]
        )
        inl = dist <= tol
        c = inl.sum(axis=1)
        counts[lo:lo + chunk] = c
        msd[lo:lo + chunk] = np.where(inl, dist * dist, 0.0).sum(axis=1) / c

    best = np.lexsort((np.arange(R), msd, -counts))[0]
    a, b = pts[first[best]], pts[second[best]]
    candidate = LineModel((a[0], a[1]), (b[0] - a[0], b[1] - a[1]))
    inlier_pts = pts[candidate.distances(pts) <= tol]

    model = total_least_squares(inlier_pts)
    loss = float(np.mean(model.distances(inlier_pts) ** 2))
    return RansacFit(model, loss, len(inlier_pts), inlier_pts)


def classify_detection(fit: RansacFit | None, params: RansacParams = RansacParams(),
                       anomaly_count: int = 0) -> DetectionResult:
    if fit is None:
        return DetectionResult(False, None, math.inf, 0, anomaly_count)
    detected = fit.loss <= params.loss_threshold and fit.inliers >= params.min_inliers
    return DetectionResult(bool(detected), fit.model, fit.loss, fit.inliers, anomaly_count)


def process_sequence(
    frames: Sequence[Frame],
    k: int = 1,
    j: int = 30,
    params: RansacParams = RansacParams(),
    offset: tuple[int, int] = (0, 0),
) -> DetectionResult:
    """Run the full detection pipeline over a frame sequence.

    ``offset`` registers every operating frame onto its reference (see
    :func:`diff_star_maps`); simulated sequences are already co-registered.
    """
    if k < 1:
        raise InvalidArgumentError("frame offset k must be >= 1")
    if j <= k:
        raise InvalidArgumentError(f"buffer length j={j} must exceed k={k}")
    if len(frames) < k + 1:
        raise InsufficientDataError(f"need at least k+1={k + 1} frames, got {len(frames)}")
    shape = frames[0].pixels.shape
    if any(f.pixels.shape != shape for f in frames):
        raise InvalidArgumentError("frames differ in size")

    maps: dict[int, StarMap] = {}

    def get_map(n):
        if n not in maps:
            maps[n] = star_map(frames[n])
        return maps[n]

    buffer = AnomalyBuffer(j)
    for n in range(len(frames) - k):
        anomalies = diff_star_maps(get_map(n), get_map(n + k), offset)
        maps.pop(n, None)
        buffer = accumulate_anomalies(buffer, anomalies)

    records = buffer.records
    try:
        fit = ransac_fit(records, params)
    except InsufficientDataError:
        fit = None
    result = classify_detection(fit, params, len(records))
    return DetectionResult(result.detected, result.model, result.loss, result.inlier_count,
                           result.anomaly_count, records)
