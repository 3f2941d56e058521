"""Two-observer track geometry and the orbital-radius linearity check.

Each observer sees the track inside a plane through its own position; the
track direction (the radiant) is the intersection line of the two planes.
Points on the track follow from intersecting one observer's line of sight
with the other observer's plane. All angles are radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, InvalidArgumentError, SingularityError

_UNIT_TOL = 1e-9
_PARALLEL_TOL = 1e-9


def _unit(v, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(3)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise InvalidArgumentError(f"{what} must be a finite non-zero 3-vector")
    return v / n


@dataclass(frozen=True, eq=False)
class ViewingPlane:
    """Plane through ``position`` (geocentric km) with unit normal ``normal``."""

    normal: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "normal", _unit(self.normal, "plane normal"))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))

    def to_dict(self) -> dict:
        return {"normal": self.normal.tolist(), "position": self.position.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> ViewingPlane:
        return cls(d["normal"], d.get("position", (0.0, 0.0, 0.0)))


@dataclass(frozen=True, eq=False)
class LineOfSight:
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "direction", _unit(self.direction, "line of sight"))


@dataclass(frozen=True, eq=False)
class RadiantSolution:
    direction: np.ndarray
    norm_used: float
    alpha: float
    delta: float


@dataclass(frozen=True)
class KeplerElements:
    a: float
    e: float
    f: float


# -- Kepler ---------------------------------------------------------------


def _kepler_denominator(el: KeplerElements) -> float:
    if el.e < 0:
        raise InvalidArgumentError("eccentricity must be >= 0")
    den = 1.0 + el.e * math.cos(el.f)
    if den == 0:
        raise SingularityError(f"1 + e cos f vanishes at e={el.e}, f={el.f}")
    return den


def kepler_radius(el: KeplerElements) -> float:
    """Orbital radius ``a (1 - e^2) / (1 + e cos f)``."""
    return el.a * (1.0 - el.e ** 2) / _kepler_denominator(el)


def kepler_radius_derivative(el: KeplerElements) -> float:
    """``dr/df = a (1 - e^2) e sin f / (1 + e cos f)^2``."""
    den = _kepler_denominator(el)
    return el.a * (1.0 - el.e ** 2) * el.e * math.sin(el.f) / den ** 2


def secant_deviation(a: float, e: float, f0: float, df: float, samples: int = 65) -> float:
    """Largest gap between ``r(f)`` and its secant over ``[f0, f0 + df]``."""
    r0 = kepler_radius(KeplerElements(a, e, f0))
    r1 = kepler_radius(KeplerElements(a, e, f0 + df))
    worst = 0.0
    for s in np.linspace(0.0, 1.0, samples):
        r = kepler_radius(KeplerElements(a, e, f0 + s * df))
        worst = max(worst, abs(r - (r0 + s * (r1 - r0))))
    return worst


# -- radiant --------------------------------------------------------------


def radiant_ra_dec(direction) -> tuple[float, float]:
    """Right ascension in ``[0, 2pi)`` and declination of a unit vector.

    At the poles right ascension is undefined and reported as 0.
    """
    v = np.asarray(direction, dtype=float).reshape(3)
    if abs(np.linalg.norm(v) - 1.0) > _UNIT_TOL:
        raise InvalidArgumentError("radiant direction must be a unit vector")
    xi, eta, zeta = v
    alpha = 0.0 if xi == 0 and eta == 0 else math.atan2(eta, xi) % (2 * math.pi)
    # atan2 of a tiny negative eta can round up to exactly 2pi
    if alpha >= 2 * math.pi:
        alpha = 0.0
    delta = math.asin(min(1.0, max(-1.0, zeta)))
    return alpha, delta


def radiant_direction(A: ViewingPlane, B: ViewingPlane) -> RadiantSolution:
    aA, bA, cA = A.normal
    aB, bB, cB = B.normal
    raw = np.array([bA * cB - bB * cA, cA * aB - cB * aA, aA * bB - aB * bA])
    d_r = float(np.linalg.norm(raw))
    if d_r <= _PARALLEL_TOL:
        raise DegenerateGeometryError("viewing planes are parallel; the radiant is undefined")
    direction = raw / d_r
    alpha, delta = radiant_ra_dec(direction)
    return RadiantSolution(direction, d_r, alpha, delta)


def geocentric_position(los: LineOfSight, A: ViewingPlane, B: ViewingPlane) -> np.ndarray:
    """Where observer A's line of sight meets observer B's viewing plane.

    Returns the geocentric point; the position relative to A is the result
    minus ``A.position``.
    """
    u = los.direction
    nb = B.normal
    denom = float(nb @ u)
    if abs(denom) <= _PARALLEL_TOL:
        raise DegenerateGeometryError("line of sight is parallel to the other viewing plane")
    t = float(nb @ (B.position - A.position)) / denom
    if t <= 0:
        raise DegenerateGeometryError("intersection lies behind observer A")
    rel_a = t * u
    return rel_a + A.position


def viewing_plane_from_track(spacecraft_position, los_samples) -> ViewingPlane:
    """Best-fit plane through the observer containing all sampled lines of sight.

    The normal is the eigenvector of the smallest eigenvalue of the scatter
    matrix of the unit sight directions, signed so its first non-zero
    component is positive.
    """
    dirs = np.array([
        s.direction if isinstance(s, LineOfSight) else _unit(s, "line of sight") for s in los_samples
    ])
    if len(dirs) < 2:
        raise DegenerateGeometryError("need at least two lines of sight")
    vals, vecs = np.linalg.eigh(dirs.T @ dirs)
    # all samples parallel leaves two null directions
    if vals[1] <= 1e-12 * max(vals[2], 1.0):
        raise DegenerateGeometryError("lines of sight are all parallel")
    normal = vecs[:, 0]
    nz = normal[np.abs(normal) > 1e-15]
    if len(nz) and nz[0] < 0:
        normal = -normal
    return ViewingPlane(normal + 0.0, spacecraft_position)


def triangulate(A: ViewingPlane, B: ViewingPlane, sightlines=()) -> dict:
    """Radiant plus track points for A's sight lines, in the JSON result layout."""
    sol = radiant_direction(A, B)
    points = [geocentric_position(s if isinstance(s, LineOfSight) else LineOfSight(s), A, B).tolist()
              for s in sightlines]
    return {
        "radiant": sol.direction.tolist(),
        "alpha_deg": math.degrees(sol.alpha),
        "delta_deg": math.degrees(sol.delta),
        "points": points,
    }
