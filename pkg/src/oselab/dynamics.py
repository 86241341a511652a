"""Base dynamics: compact metric spaces, their maps, and sampled measures.

Torus and circle points are stored as integer numerators over a fixed prime
modulus, so toral automorphisms, rotations and the doubling map act by exact
integer arithmetic and the semigroup law ``f^(n+k) = f^n o f^k`` holds without
round-off. Floating coordinates are derived on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegeneratePair, NegativeIterateOfNonInvertible, SpaceMismatch

#: Largest prime below 2**58; the lattice is (Z / LATTICE_MODULUS)^m.
LATTICE_MODULUS = 288230376151711717

MAP_KINDS = ("toral_automorphism", "circle_rotation", "doubling_map", "subshift")
TRANSIENT_STEPS = 1000


@dataclass(frozen=True)
class BasePoint:
    """A point of a base space, held as exact lattice numerators or symbols."""

    lattice: tuple
    space_tag: str

    @property
    def coords(self) -> np.ndarray:
        arr = np.asarray(self.lattice, dtype=np.int64)
        if self.space_tag.startswith("shift"):
            return arr.astype(float)
        return arr.astype(float) / LATTICE_MODULUS

    def to_json(self):
        return [float(c) for c in self.coords]

    def __repr__(self):
        shown = ", ".join(f"{c:.6g}" for c in self.coords[:6])
        return f"BasePoint({self.space_tag}: {shown})"


def _integer_inverse(M):
    """Inverse of a unimodular integer matrix, exactly."""
    import sympy

    inv = sympy.Matrix(M).inv()
    return tuple(tuple(int(v) for v in row) for row in inv.tolist())


@dataclass(frozen=True)
class BaseSystem:
    """A map on a compact metric space together with its Lipschitz data.

    Use the constructors :func:`toral_automorphism`, :func:`circle_rotation`,
    :func:`doubling_map` and :func:`full_shift` rather than building this
    directly.
    """

    map_kind: str
    matrix: tuple | None = None
    angle: float = 0.0
    symbols: int = 2
    window: int = 0
    inverse_matrix: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.map_kind not in MAP_KINDS:
            raise ConfigError(f"unknown map kind {self.map_kind!r}")
        if self.map_kind == "toral_automorphism":
            M = np.asarray(self.matrix, dtype=np.int64)
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise ConfigError("toral automorphism needs a square integer matrix")
            if np.any(np.abs(M) >= 16):
                raise ConfigError("toral automorphism entries must satisfy |m| < 16")
            det = round(np.linalg.det(M.astype(float)))
            if abs(det) != 1:
                raise ConfigError("toral automorphism must be unimodular")
            if self.inverse_matrix is None:
                object.__setattr__(self, "inverse_matrix", _integer_inverse(self.matrix))

    # structural properties

    @property
    def dim(self) -> int:
        if self.map_kind == "toral_automorphism":
            return len(self.matrix)
        if self.map_kind == "subshift":
            return self.window
        return 1

    @property
    def space_tag(self) -> str:
        if self.map_kind == "subshift":
            return f"shift{self.symbols}w{self.window}"
        return f"T{self.dim}"

    @property
    def invertible(self) -> bool:
        return self.map_kind in ("toral_automorphism", "circle_rotation")

    @property
    def lipschitz_forward(self) -> float:
        if self.map_kind == "toral_automorphism":
            return max(1.0, float(np.linalg.norm(np.asarray(self.matrix, float), 2)))
        if self.map_kind == "circle_rotation":
            return 1.0
        return 2.0

    @property
    def lipschitz_backward(self) -> float | None:
        if self.map_kind == "toral_automorphism":
            return max(1.0, float(np.linalg.norm(np.asarray(self.inverse_matrix, float), 2)))
        if self.map_kind == "circle_rotation":
            return 1.0
        return None

    @property
    def field_dim(self) -> int:
        """Number of real coordinates that generator fields read."""
        return 1 if self.map_kind == "subshift" else self.dim

    @property
    def _shift(self) -> int:
        return int(round(self.angle * LATTICE_MODULUS)) % LATTICE_MODULUS

    def describe(self) -> dict:
        out = {"map_kind": self.map_kind, "space_tag": self.space_tag}
        if self.matrix is not None:
            out["matrix"] = [list(r) for r in self.matrix]
        if self.map_kind == "circle_rotation":
            out["angle"] = self.angle
        if self.map_kind == "subshift":
            out["symbols"] = self.symbols
            out["window"] = self.window
        return out

    # lattice-level kernels; arrays have shape (..., m)

    def step(self, lat: np.ndarray, forward: bool = True) -> np.ndarray:
        """Apply f (or its inverse) once to a stack of lattice points."""
        q = LATTICE_MODULUS
        lat = np.asarray(lat, dtype=np.int64)
        kind = self.map_kind
        if kind == "toral_automorphism":
            M = self.matrix if forward else self.inverse_matrix
            out = np.empty_like(lat)
            for j, row in enumerate(M):
                acc = np.zeros(lat.shape[:-1], dtype=np.int64)
                for k, m in enumerate(row):
                    if m:
                        acc += (m * lat[..., k]) % q
                out[..., j] = acc % q
            return out
        if kind == "circle_rotation":
            s = self._shift
            return (lat + (s if forward else q - s)) % q
        if not forward:
            raise NegativeIterateOfNonInvertible(f"{kind} has no inverse")
        if kind == "doubling_map":
            return (2 * lat) % q
        out = np.zeros_like(lat)
        out[..., :-1] = lat[..., 1:]
        return out

    def iterate(self, lat: np.ndarray, n: int) -> np.ndarray:
        if n < 0 and not self.invertible:
            raise NegativeIterateOfNonInvertible(f"{self.map_kind} has no inverse")
        lat = np.asarray(lat, dtype=np.int64)
        if self.map_kind == "circle_rotation":
            shift = (int(n) * self._shift) % LATTICE_MODULUS
            return (lat + shift) % LATTICE_MODULUS
        for _ in range(abs(n)):
            lat = self.step(lat, forward=n > 0)
        return lat

    def orbit(self, lat: np.ndarray, lo: int, hi: int) -> np.ndarray:
        """Lattice points ``f^n(x)`` for ``n = lo..hi``, shape ``(hi-lo+1, ..., m)``."""
        if lo < 0 and not self.invertible:
            raise NegativeIterateOfNonInvertible(f"{self.map_kind} has no inverse")
        cur = self.iterate(lat, lo)
        out = np.empty((hi - lo + 1,) + cur.shape, dtype=np.int64)
        out[0] = cur
        for t in range(1, hi - lo + 1):
            cur = self.step(cur)
            out[t] = cur
        return out

    def distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Metric between stacks of lattice points."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        if self.map_kind == "subshift":
            diff = a != b
            first = np.argmax(diff, axis=-1)
            return np.where(diff.any(axis=-1), np.ldexp(1.0, -first), 0.0)
        q = LATTICE_MODULUS
        d = (a - b) % q
        d = np.where(d > q // 2, q - d, d)
        return np.sqrt(np.sum((d.astype(float) / q) ** 2, axis=-1))

    def field_coords(self, lat: np.ndarray) -> np.ndarray:
        """Real coordinates in [0, 1) fed to generator fields, shape ``(..., field_dim)``.

        For a subshift this is the base-``symbols`` expansion of the window,
        which is 1-Lipschitz for the metric ``2**-(first difference)``.
        """
        lat = np.asarray(lat, dtype=np.int64)
        if self.map_kind == "subshift":
            w = float(self.symbols) ** -np.arange(1, self.window + 1)
            return (lat.astype(float) @ w)[..., None]
        return lat.astype(float) / LATTICE_MODULUS

    def field_coords_lipschitz(self) -> float:
        """Lipschitz constant of each field coordinate for the base metric."""
        return 1.0

    # point-level helpers

    def point(self, coords) -> BasePoint:
        """Snap real coordinates (or symbols) to the nearest lattice point."""
        coords = np.atleast_1d(np.asarray(coords, dtype=float))
        if coords.shape != (self.dim,):
            raise SpaceMismatch(f"expected {self.dim} coordinates, got {coords.shape}")
        if self.map_kind == "subshift":
            sym = coords.astype(np.int64)
            if np.any(sym < 0) or np.any(sym >= self.symbols) or np.any(sym != coords):
                raise ConfigError("subshift symbols out of range")
            return BasePoint(tuple(int(s) for s in sym), self.space_tag)
        lat = [int(round((float(c) % 1.0) * LATTICE_MODULUS)) % LATTICE_MODULUS for c in coords]
        return BasePoint(tuple(lat), self.space_tag)

    def from_lattice(self, lat) -> BasePoint:
        return BasePoint(tuple(int(v) for v in np.asarray(lat).ravel()), self.space_tag)

    def check(self, x: BasePoint):
        if x.space_tag != self.space_tag:
            raise SpaceMismatch(f"point lives on {x.space_tag}, system on {self.space_tag}")

    def exact_coords(self, x: BasePoint):
        """Coordinates as exact fractions."""
        return [Fraction(v, LATTICE_MODULUS) for v in x.lattice]


def toral_automorphism(matrix) -> BaseSystem:
    matrix = tuple(tuple(int(v) for v in row) for row in matrix)
    return BaseSystem("toral_automorphism", matrix=matrix)


def circle_rotation(angle: float) -> BaseSystem:
    return BaseSystem("circle_rotation", angle=float(angle) % 1.0)


def doubling_map() -> BaseSystem:
    return BaseSystem("doubling_map")


def full_shift(symbols: int = 2, window: int = 48) -> BaseSystem:
    if symbols < 2 or window < 2:
        raise ConfigError("full shift needs at least 2 symbols and a window of 2")
    return BaseSystem("subshift", symbols=int(symbols), window=int(window))


CAT_MAP = ((2, 1), (1, 1))


def evaluate_map(system: BaseSystem, x: BasePoint, n: int) -> BasePoint:
    """Return ``f^n(x)``; negative ``n`` needs an invertible system."""
    system.check(x)
    if n < 0 and not system.invertible:
        raise NegativeIterateOfNonInvertible(f"f^{n} requested on {system.map_kind}")
    lat = system.iterate(np.asarray(x.lattice, dtype=np.int64), int(n))
    return system.from_lattice(lat)


def metric(system: BaseSystem, x: BasePoint, y: BasePoint) -> float:
    system.check(x)
    system.check(y)
    return float(system.distance(np.asarray(x.lattice), np.asarray(y.lattice)))


@dataclass(frozen=True)
class SampledMeasure:
    """Finite sample standing in for an invariant measure."""

    points: tuple
    seed: int
    scheme: str

    def __len__(self):
        return len(self.points)

    @property
    def lattice(self) -> np.ndarray:
        return np.array([p.lattice for p in self.points], dtype=np.int64)


def _random_lattice(system: BaseSystem, rng: np.random.Generator, count: int) -> np.ndarray:
    if system.map_kind == "subshift":
        return rng.integers(0, system.symbols, size=(count, system.window), dtype=np.int64)
    return rng.integers(0, LATTICE_MODULUS, size=(count, system.dim), dtype=np.int64)


def sample_points(system: BaseSystem, scheme: str, count: int, seed: int,
                  start: BasePoint | None = None) -> SampledMeasure:
    """Draw ``count`` reproducible sample points.

    ``iid_uniform`` draws independent uniform lattice points. ``orbit_birkhoff``
    follows one orbit; without an explicit ``start`` it begins at a seeded
    random point and discards a transient of 1000 steps.
    """
    if count < 1:
        raise ConfigError("count must be positive")
    rng = np.random.default_rng(seed)
    if scheme == "iid_uniform":
        lat = _random_lattice(system, rng, count)
    elif scheme == "orbit_birkhoff":
        if start is None:
            x0 = system.iterate(_random_lattice(system, rng, 1)[0], TRANSIENT_STEPS)
        else:
            system.check(start)
            x0 = np.asarray(start.lattice, dtype=np.int64)
        lat = system.orbit(x0, 0, count - 1)
    else:
        raise ConfigError(f"unknown sampling scheme {scheme!r}")
    points = tuple(system.from_lattice(row) for row in lat)
    return SampledMeasure(points, int(seed), scheme)


def lipschitz_estimate(system: BaseSystem, pairs: Sequence, backward: bool | None = None):
    """Empirical Lipschitz constants from point pairs.

    Returns ``(L_fwd, L_bwd)``; each is at least 1 and at least every observed
    difference quotient. ``L_bwd`` is ``None`` when ``backward`` is false;
    by default it is computed whenever the system is invertible.
    """
    if not pairs:
        raise ConfigError("pairs must be nonempty")
    if backward is None:
        backward = system.invertible
    if backward and not system.invertible:
        raise NegativeIterateOfNonInvertible("no backward Lipschitz constant for a non-invertible map")
    a = np.array([p[0].lattice for p in pairs], dtype=np.int64)
    b = np.array([p[1].lattice for p in pairs], dtype=np.int64)
    d0 = system.distance(a, b)
    if np.any(d0 == 0):
        raise DegeneratePair("pairs must consist of distinct points")
    fwd = max(1.0, float(np.max(system.distance(system.step(a), system.step(b)) / d0)))
    if not backward:
        return fwd, None
    bwd = system.distance(system.step(a, forward=False), system.step(b, forward=False)) / d0
    return fwd, max(1.0, float(np.max(bwd)))


def nearby_lattice(system: BaseSystem, lat: np.ndarray, distance: float,
                   rng: np.random.Generator) -> np.ndarray:
    """A lattice point at (approximately) the requested distance from ``lat``."""
    lat = np.asarray(lat, dtype=np.int64)
    if system.map_kind == "subshift":
        idx = int(np.clip(round(-np.log2(distance)), 1, system.window - 1))
        out = lat.copy()
        out[idx] = (out[idx] + 1 + rng.integers(0, system.symbols - 1)) % system.symbols
        return out
    direction = rng.standard_normal(system.dim)
    direction /= np.linalg.norm(direction)
    offset = np.rint(direction * distance * LATTICE_MODULUS).astype(np.int64)
    if not offset.any():
        offset[0] = 1
    return (lat + offset) % LATTICE_MODULUS
