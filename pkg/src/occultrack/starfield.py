"""Star catalogs, photometric mapping and noiseless frame rendering.

Frames are stored as read-only ``(height, width)`` uint8 arrays; row-major
flattening gives the on-disk PGM byte order.
"""

from __future__ import annotations

import csv
import io
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .errors import InvalidArgumentError, ParseError, ValidationError

DEFAULT_MAG_CUTOFF = 6.5
M_REF = -1.5
I_REF = 255.0

CATALOG_HEADER = ("id", "x", "y", "magnitude")


def round_half_away(x):
    """Round to the nearest integer, halves away from zero (numpy rounds half to even)."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class Star:
    id: int
    x: float
    y: float
    magnitude: float


@dataclass(frozen=True, eq=False)
class StarCatalog:
    """Stars on a ``width`` x ``height`` pixel field, held column-wise."""

    width: int
    height: int
    x: np.ndarray
    y: np.ndarray
    magnitude: np.ndarray
    magnitude_cutoff: float = DEFAULT_MAG_CUTOFF
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.x)
        if not (len(self.y) == len(self.magnitude) == n):
            raise InvalidArgumentError("star columns differ in length")
        ids = np.arange(n, dtype=np.int64) if self.ids is None else np.asarray(self.ids, np.int64)
        for name, arr in (("x", self.x), ("y", self.y), ("magnitude", self.magnitude), ("ids", ids)):
            arr = np.array(arr, dtype=np.int64 if name == "ids" else float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.x)

    def __eq__(self, other):
        if not isinstance(other, StarCatalog):
            return NotImplemented
        return (
            (self.width, self.height, self.magnitude_cutoff)
            == (other.width, other.height, other.magnitude_cutoff)
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.magnitude, other.magnitude)
        )

    @property
    def stars(self) -> list[Star]:
        return [
            Star(int(i), float(x), float(y), float(m))
            for i, x, y, m in zip(self.ids, self.x, self.y, self.magnitude)
        ]

    def pixel_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer (column, row) of every star after rounding, clipped to the field."""
        px = np.clip(round_half_away(self.x), 0, self.width - 1).astype(np.int64)
        py = np.clip(round_half_away(self.y), 0, self.height - 1).astype(np.int64)
        return px, py


@dataclass(frozen=True, eq=False)
class Frame:
    pixels: np.ndarray
    index: int = 0

    def __post_init__(self):
        pix = np.asarray(self.pixels)
        if pix.ndim != 2:
            raise InvalidArgumentError("frame pixels must be a 2-D array")
        if pix.dtype != np.uint8:
            if pix.size and (pix.min() < 0 or pix.max() > 255):
                raise InvalidArgumentError("pixel values must lie in [0, 255]")
            pix = pix.astype(np.uint8)
        if pix.flags.writeable:
            pix = pix.copy()
            pix.setflags(write=False)
        object.__setattr__(self, "pixels", pix)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.index == other.index and np.array_equal(self.pixels, other.pixels)

    def with_pixels(self, pixels: np.ndarray) -> Frame:
        return Frame(pixels, self.index)


# -- catalogs -------------------------------------------------------------


def sample_magnitudes(u: np.ndarray, mag_min: float, mag_max: float) -> np.ndarray:
    """Inverse-CDF map of uniforms onto a density proportional to 10**(0.5 m)."""
    if mag_min == mag_max:
        return np.full_like(u, float(mag_min))
    lo, hi = 10.0 ** (0.5 * mag_min), 10.0 ** (0.5 * mag_max)
    return 2.0 * np.log10(lo + u * (hi - lo))


def generate_catalog(
    seed: int,
    star_count: int,
    width: int,
    height: int,
    mag_min: float = M_REF,
    mag_max: float = DEFAULT_MAG_CUTOFF,
) -> StarCatalog:
    """Draw a random star field.

    Positions are uniform over the field and magnitudes follow the
    cumulative star-count slope, so faint stars dominate. Each star takes
    one row of a single ``(star_count, 3)`` uniform draw, which makes the
    catalog for ``n`` stars a prefix of the catalog for ``n + 1`` (before
    duplicate-pixel merging). Stars that round onto an occupied pixel are
    merged into the brighter one.
    """
    if width < 1 or height < 1:
        raise InvalidArgumentError(f"field must have positive area, got {width}x{height}")
    if star_count < 0:
        raise InvalidArgumentError("star_count must be >= 0")
    if mag_min > mag_max:
        raise InvalidArgumentError("mag_min must not exceed mag_max")

    rng = seeding.keyed_generator(seed, seeding.CATALOG)
    u = rng.random((star_count, 3))
    x = u[:, 0] * width
    y = u[:, 1] * height
    mag = sample_magnitudes(u[:, 2], mag_min, mag_max)

    cat = StarCatalog(width, height, x, y, mag, magnitude_cutoff=mag_max)
    return _merge_duplicate_pixels(cat)


def _merge_duplicate_pixels(cat: StarCatalog) -> StarCatalog:
    if len(cat) < 2:
        return cat
    px, py = cat.pixel_indices()
    lin = py * cat.width + px
    # brightest first, then original order; first occurrence per pixel wins
    order = np.lexsort((np.arange(len(cat)), cat.magnitude, lin))
    keep_sorted = np.ones(len(order), dtype=bool)
    keep_sorted[1:] = lin[order][1:] != lin[order][:-1]
    keep = np.sort(order[keep_sorted])
    if len(keep) == len(cat):
        return cat
    return StarCatalog(
        cat.width, cat.height, cat.x[keep], cat.y[keep], cat.magnitude[keep],
        magnitude_cutoff=cat.magnitude_cutoff,
    )


def load_catalog(
    text: str,
    width: int,
    height: int,
    magnitude_cutoff: float = DEFAULT_MAG_CUTOFF,
) -> StarCatalog:
    """Parse catalog CSV text (``id,x,y,magnitude`` header, one star per row)."""
    lines = text.splitlines()
    if not lines or [h.strip() for h in lines[0].split(",")] != list(CATALOG_HEADER):
        raise ParseError(f"expected header {','.join(CATALOG_HEADER)!r}", line=1)

    ids, xs, ys, ms = [], [], [], []
    for lineno, row in enumerate(csv.reader(lines[1:]), start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", line=lineno)
        try:
            sid = int(row[0])
            x, y, m = (float(c) for c in row[1:])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if not all(map(math.isfinite, (x, y, m))):
            raise ParseError("non-finite value", line=lineno)
        if not (0 <= x < width and 0 <= y < height):
            raise ValidationError(f"line {lineno}: star {sid} at ({x}, {y}) outside {width}x{height} field")
        if m > magnitude_cutoff:
            raise ValidationError(f"line {lineno}: star {sid} magnitude {m} exceeds cutoff {magnitude_cutoff}")
        ids.append(sid)
        xs.append(x)
        ys.append(y)
        ms.append(m)
    return StarCatalog(width, height, np.array(xs), np.array(ys), np.array(ms),
                       magnitude_cutoff=magnitude_cutoff, ids=np.array(ids, dtype=np.int64))


def dump_catalog(cat: StarCatalog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CATALOG_HEADER)
    for s in cat.stars:
        w.writerow([s.id, repr(s.x), repr(s.y), repr(s.magnitude)])
    return buf.getvalue()


# -- photometry -----------------------------------------------------------


def magnitude_to_intensity(m, m_ref: float = M_REF, i_ref: float = I_REF):
    """Flux-law digital number: ``clamp(round(i_ref * 10**(-0.4 (m - m_ref))), 0, 255)``.

    Accepts scalars or arrays; scalars come back as ``int``.
    """
    m = np.asarray(m, dtype=float)
    with np.errstate(over="ignore"):
        flux = i_ref * np.power(10.0, -0.4 * (m - m_ref))
    dn = np.clip(round_half_away(np.nan_to_num(flux, posinf=255.0)), 0, 255).astype(np.uint8)
    return int(dn) if dn.ndim == 0 else dn


def stretch_intensity(m, m_bright: float = M_REF, i_bright: float = I_REF,
                      m_faint: float = DEFAULT_MAG_CUTOFF, i_faint: float = 8.0):
    """Magnitude-linear display stretch between two anchor points.

    Star charts are rendered this way: brightness is linear in magnitude,
    i.e. logarithmic in flux. Stars fainter than ``m_faint`` keep falling
    off along the same line.
    """
    m = np.asarray(m, dtype=float)
    slope = (i_bright - i_faint) / (m_faint - m_bright)
    dn = np.clip(round_half_away(i_faint + slope * (m_faint - m)), 0, 255).astype(np.uint8)
    return int(dn) if dn.ndim == 0 else dn


@dataclass(frozen=True)
class Photometry:
    """Selects and parameterizes the magnitude to DN mapping used for rendering.

    ``kind="flux"`` is the physical flux law anchored at ``(m_ref, i_ref)``;
    ``kind="stretch"`` is the magnitude-linear display stretch running from
    ``(m_ref, i_ref)`` down to ``(m_faint, i_faint)``.
    """

    kind: str = "flux"
    m_ref: float = M_REF
    i_ref: float = I_REF
    m_faint: float = DEFAULT_MAG_CUTOFF
    i_faint: float = 8.0

    def __post_init__(self):
        if self.kind not in ("flux", "stretch"):
            raise InvalidArgumentError(f"unknown photometry kind {self.kind!r}")
        if self.kind == "stretch" and self.m_faint <= self.m_ref:
            raise InvalidArgumentError("m_faint must be fainter than m_ref")

    def intensity(self, m):
        if self.kind == "flux":
            return magnitude_to_intensity(m, self.m_ref, self.i_ref)
        return stretch_intensity(m, self.m_ref, self.i_ref, self.m_faint, self.i_faint)


def render_base_frame(catalog: StarCatalog, photometry: Photometry | None = None, index: int = 0) -> Frame:
    """Render single-pixel stars onto a black background; overlaps keep the maximum."""
    photometry = photometry or Photometry()
    img = np.zeros((catalog.height, catalog.width), dtype=np.uint8)
    if len(catalog):
        px, py = catalog.pixel_indices()
        dn = np.atleast_1d(photometry.intensity(catalog.magnitude)).astype(np.uint8)
        np.maximum.at(img, (py, px), dn)
    return Frame(img, index)


# -- PGM ------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def encode_pgm(frame: Frame) -> bytes:
    header = b"P5\n%d %d\n255\n" % (frame.width, frame.height)
    return header + np.ascontiguousarray(frame.pixels).tobytes()


def decode_pgm(data: bytes, index: int = 0) -> Frame:
    pos = 0
    tokens = []
    while len(tokens) < 4:
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise ParseError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = tokens
    if magic != b"P5":
        raise ParseError(f"unsupported PGM magic {magic!r}")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ParseError("non-integer PGM header field") from None
    if maxval != 255:
        raise ParseError(f"only 8-bit PGM supported, maxval={maxval}")
    pos += 1  # single whitespace byte after maxval
    body = data[pos:pos + w * h]
    if len(body) != w * h:
        raise ParseError(f"PGM body has {len(body)} bytes, expected {w * h}")
    return Frame(np.frombuffer(body, dtype=np.uint8).reshape(h, w), index)


def write_pgm(frame: Frame, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(frame))


def read_pgm(path: str | os.PathLike, index: int = 0) -> Frame:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read(), index)
