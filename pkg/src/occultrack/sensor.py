"""Image-sequence simulation: an opaque disc crossing the field plus readout noise."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seeding
from .errors import InvalidArgumentError, ParseError
from .starfield import Frame, Photometry, StarCatalog, read_pgm, render_base_frame, write_pgm

FRAME_NAME = "frame_{:05d}.pgm"


@dataclass(frozen=True)
class TrajectorySpec:
    """Straight transit from ``(0, y0)`` on the left edge to ``(width, y1)`` on the right."""

    start: tuple[float, float]
    end: tuple[float, float]
    occluder_radius: float = 3.0
    total_frames: int = 30

    def __post_init__(self):
        object.__setattr__(self, "start", (float(self.start[0]), float(self.start[1])))
        object.__setattr__(self, "end", (float(self.end[0]), float(self.end[1])))
        if self.start[0] != 0.0:
            raise InvalidArgumentError("trajectory must start on x = 0")
        if self.end[0] <= 0:
            raise InvalidArgumentError("trajectory must end on x = width > 0")
        if self.total_frames < 2:
            raise InvalidArgumentError("total_frames must be >= 2")
        if self.occluder_radius < 0:
            raise InvalidArgumentError("occluder_radius must be >= 0")

    @property
    def width(self) -> float:
        return self.end[0]

    def to_dict(self) -> dict:
        return {
            "start": list(self.start),
            "end": list(self.end),
            "occluder_radius": self.occluder_radius,
            "total_frames": self.total_frames,
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrajectorySpec:
        return cls(tuple(d["start"]), tuple(d["end"]), d.get("occluder_radius", 3.0), d.get("total_frames", 30))


@dataclass(frozen=True)
class NoiseParams:
    sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise InvalidArgumentError("sigma must be >= 0")


def generate_trajectory(
    seed: int,
    width: int,
    height: int,
    occluder_radius: float = 3.0,
    total_frames: int = 30,
) -> TrajectorySpec:
    """Random left-to-right transit with both end heights uniform on ``[0, height]``."""
    if width < 1 or height < 1:
        raise InvalidArgumentError("field must have positive area")
    y0, y1 = seeding.keyed_generator(seed, seeding.TRAJECTORY).uniform(0.0, height, size=2)
    return TrajectorySpec((0.0, y0), (float(width), y1), occluder_radius, total_frames)


def object_position(traj: TrajectorySpec, i: int) -> tuple[float, float]:
    if not 0 <= i < traj.total_frames:
        raise InvalidArgumentError(f"frame index {i} outside [0, {traj.total_frames})")
    s = i / (traj.total_frames - 1)
    (x0, y0), (x1, y1) = traj.start, traj.end
    return x0 + s * (x1 - x0), y0 + s * (y1 - y0)


def object_positions(traj: TrajectorySpec) -> np.ndarray:
    """All per-frame positions as a ``(total_frames, 2)`` array."""
    return np.array([object_position(traj, i) for i in range(traj.total_frames)])


def disc_pixels(center: tuple[float, float], radius: float, width: int, height: int):
    """Rows and columns of pixels whose centers lie within ``radius`` of ``center``."""
    cx, cy = center
    x_lo, x_hi = max(math.ceil(cx - radius), 0), min(math.floor(cx + radius), width - 1)
    y_lo, y_hi = max(math.ceil(cy - radius), 0), min(math.floor(cy + radius), height - 1)
    if x_lo > x_hi or y_lo > y_hi:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    ys, xs = np.mgrid[y_lo:y_hi + 1, x_lo:x_hi + 1]
    inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius
    return ys[inside], xs[inside]


def apply_occultation(frame: Frame, center: tuple[float, float], radius: float) -> Frame:
    if radius < 0:
        raise InvalidArgumentError("radius must be >= 0")
    rows, cols = disc_pixels(center, radius, frame.width, frame.height)
    if rows.size == 0:
        return frame
    out = frame.pixels.copy()
    out[rows, cols] = 0
    return frame.with_pixels(out)


def readout_noise_field(shape: tuple[int, int], noise: NoiseParams, frame_index: int) -> np.ndarray:
    """Real-valued Gaussian noise for one frame, before quantization.

    Pixel ``p`` (row-major) always receives draw ``p`` of the stream keyed
    by ``(noise.seed, frame_index)``.
    """
    rng = seeding.keyed_generator(noise.seed, seeding.NOISE, frame_index)
    g = rng.standard_normal(size=shape[0] * shape[1], dtype=np.float32)
    g *= np.float32(noise.sigma)
    return g.reshape(shape)


def apply_readout_noise(frame: Frame, noise: NoiseParams) -> Frame:
    if noise.sigma == 0:
        return frame
    g = readout_noise_field(frame.pixels.shape, noise, frame.index)
    g += frame.pixels
    # values are clamped below at 0, so floor(v + 0.5) is half-away rounding
    np.add(g, np.float32(0.5), out=g)
    np.floor(g, out=g)
    np.clip(g, 0, 255, out=g)
    return frame.with_pixels(g.astype(np.uint8))


def render_frame(base: Frame, traj: TrajectorySpec, noise: NoiseParams, i: int) -> Frame:
    """Frame ``i`` of a sequence: occult the base frame, then add noise."""
    frame = Frame(base.pixels, i)
    frame = apply_occultation(frame, object_position(traj, i), traj.occluder_radius)
    return apply_readout_noise(frame, noise)


def render_sequence(
    catalog: StarCatalog,
    traj: TrajectorySpec,
    noise: NoiseParams,
    photometry: Photometry | None = None,
) -> list[Frame]:
    if traj.width != catalog.width:
        raise InvalidArgumentError(
            f"trajectory ends at x={traj.width} but the field is {catalog.width} wide"
        )
    for _, y in (traj.start, traj.end):
        if not 0 <= y <= catalog.height:
            raise InvalidArgumentError(f"trajectory endpoint y={y} outside [0, {catalog.height}]")
    base = render_base_frame(catalog, photometry)
    return [render_frame(base, traj, noise, i) for i in range(traj.total_frames)]


def write_sequence(frames, directory: str | os.PathLike) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for f in frames:
        p = directory / FRAME_NAME.format(f.index)
        write_pgm(f, p)
        paths.append(p)
    return paths


def read_sequence(directory: str | os.PathLike) -> list[Frame]:
    """Read ``frame_NNNNN.pgm`` files in index order."""
    paths = sorted(Path(directory).glob("frame_*.pgm"))
    frames = []
    for p in paths:
        try:
            idx = int(p.stem.split("_", 1)[1])
        except ValueError:
            raise ParseError(f"bad frame file name {p.name!r}") from None
        frames.append(read_pgm(p, idx))
    return frames
