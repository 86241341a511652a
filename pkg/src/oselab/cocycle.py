"""Operator fields over a base system and the linear cocycles they generate.

A generator assigns an invertible d x d matrix ``A(x)`` to every base point.
The cocycle is the ordered product ``A(f^(n-1) x) ... A(x)`` for ``n > 0`` and
the product of inverses along the backward orbit for ``n < 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import BasePoint, BaseSystem, metric
from .errors import (BlockSizeExceedsDimension, ConfigError, DegeneratePair,
                     NegativeIterateOfNonInvertible, SingularGenerator)
from .norms import check_kind, equivalence_factor, operator_norm

FIELD_KINDS = ("constant", "coboundary", "rotation_conjugated", "truncated_diagonal_compact")
RENORMALIZE_EVERY = 16
ALPHA_FLOOR = -1e6


def holder_bump(t, nu):
    """``|sin(pi t)|**nu``: 1-periodic, nu-Holder with constant ``pi**nu``."""
    return np.abs(np.sin(np.pi * np.asarray(t, dtype=float))) ** nu


def plane_rotation(theta, dim):
    """Block rotation by ``theta`` in the planes (0,1), (2,3), ...; stacks over ``theta``."""
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(theta.shape + (dim, dim))
    out[..., range(dim), range(dim)] = 1.0
    c, s = np.cos(theta), np.sin(theta)
    for k in range(0, dim - 1, 2):
        out[..., k, k] = c
        out[..., k + 1, k + 1] = c
        out[..., k, k + 1] = -s
        out[..., k + 1, k] = s
    return out


@dataclass(frozen=True, eq=False)
class ConjugatorField:
    """A Holder continuous field of invertible matrices ``C(x)``.

    ``shear``: ``C(x) = I + amplitude * sum_j g(x_j) B_j`` with fixed seeded
    directions ``B_j`` of spectral norm ``1/m``; requires ``amplitude < 1``.
    ``rotation``: ``C(x) = R(offset + amplitude * sum_j g(x_j))``.
    Here ``g`` is :func:`holder_bump` with exponent ``nu``.
    """

    dimension: int
    coord_dim: int
    nu: float
    amplitude: float
    kind: str = "shear"
    seed: int = 0
    offset: float = 0.0
    directions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("shear", "rotation"):
            raise ConfigError(f"unknown conjugator kind {self.kind!r}")
        if not 0 < self.nu <= 1:
            raise ConfigError("nu must lie in (0, 1]")
        if self.kind == "shear" and not 0 <= self.amplitude < 1:
            raise ConfigError("shear amplitude must lie in [0, 1)")
        rng = np.random.default_rng(self.seed)
        dirs = rng.standard_normal((self.coord_dim, self.dimension, self.dimension))
        dirs /= np.linalg.norm(dirs, ord=2, axis=(1, 2))[:, None, None] * self.coord_dim
        object.__setattr__(self, "directions", dirs)

    def profile(self, coords):
        """Scalar ``sum_j g(x_j)`` for field coordinates of shape ``(..., m)``."""
        return np.sum(holder_bump(coords, self.nu), axis=-1)

    def angle(self, coords):
        return self.offset + self.amplitude * self.profile(coords)

    def matrix(self, coords):
        coords = np.asarray(coords, dtype=float)
        if self.kind == "rotation":
            return plane_rotation(self.angle(coords), self.dimension)
        weights = self.amplitude * holder_bump(coords, self.nu)
        eye = np.eye(self.dimension)
        return eye + np.einsum("...j,jab->...ab", weights, self.directions)

    def inverse(self, coords):
        if self.kind == "rotation":
            return np.swapaxes(self.matrix(coords), -1, -2)
        return np.linalg.inv(self.matrix(coords))

    # analytic l2 data (constants refer to the base metric through field coordinates)

    @property
    def sup_norm(self) -> float:
        return 1.0 if self.kind == "rotation" else 1.0 + self.amplitude

    @property
    def sup_inverse_norm(self) -> float:
        return 1.0 if self.kind == "rotation" else 1.0 / (1.0 - self.amplitude)

    @property
    def holder_constant(self) -> float:
        """Holder constant of ``C`` for exponent ``nu`` (l2 operator norm)."""
        if self.kind == "rotation":
            return self.amplitude * self.coord_dim * np.pi ** self.nu
        return self.amplitude * np.pi ** self.nu

    @property
    def inverse_holder_constant(self) -> float:
        if self.kind == "rotation":
            return self.holder_constant
        return self.holder_constant * self.sup_inverse_norm ** 2

    def describe(self):
        return {"kind": self.kind, "dimension": self.dimension, "coord_dim": self.coord_dim,
                "nu": self.nu, "amplitude": self.amplitude, "seed": self.seed,
                "offset": self.offset}


@dataclass(frozen=True, eq=False)
class CocycleGenerator:
    """The operator field ``x -> A(x)`` together with its Holder data.

    Build instances with :func:`constant_generator`, :func:`coboundary_generator`,
    :func:`rotation_conjugated_generator` or :func:`truncated_diagonal_generator`.
    """

    field_kind: str
    dimension: int
    norm: str = "l2"
    matrix: np.ndarray | None = None
    diagonal: np.ndarray | None = None
    conjugator: ConjugatorField | None = None
    holder_exponent: float = 1.0
    block_size: int | None = None
    decay_rate: float | None = None

    def __post_init__(self):
        check_kind(self.norm)
        if self.field_kind not in FIELD_KINDS:
            raise ConfigError(f"unknown field kind {self.field_kind!r}")
        if self.dimension < 2:
            raise ConfigError("dimension must be at least 2")
        if self.matrix is not None and self.matrix.shape != (self.dimension, self.dimension):
            raise ConfigError("matrix shape does not match dimension")
        if self.diagonal is not None and np.any(self.diagonal == 0):
            raise SingularGenerator("diagonal has a zero entry")

    @property
    def invertible(self) -> bool:
        return True

    @property
    def uses_image_point(self) -> bool:
        return self.field_kind == "coboundary"

    # evaluation on orbits

    def matrices(self, system: BaseSystem, orbit: np.ndarray, inverse: bool = False) -> np.ndarray:
        """``A`` (or ``A^-1``) at ``orbit[:-1]``; ``orbit`` has shape ``(T+1, ..., m)``.

        The final orbit point is only read by coboundary fields, which need ``f(x)``.
        """
        orbit = np.asarray(orbit)
        base = orbit[:-1]
        kind = self.field_kind
        if kind in ("constant", "truncated_diagonal_compact"):
            M = self.matrix if not inverse else np.linalg.inv(self.matrix)
            return np.broadcast_to(M, base.shape[:-1] + M.shape).copy()
        coords = system.field_coords(orbit)
        D = self.diagonal if not inverse else 1.0 / self.diagonal
        if kind == "rotation_conjugated":
            R = self.conjugator.matrix(coords[:-1])
            return (R * D[..., None, :]) @ np.swapaxes(R, -1, -2)
        C = self.conjugator.matrix(coords)
        Cinv = self.conjugator.inverse(coords)
        if not inverse:
            return (C[1:] * D[..., None, :]) @ Cinv[:-1]
        return (C[:-1] * D[..., None, :]) @ Cinv[1:]

    def at(self, system: BaseSystem, lat: np.ndarray, inverse: bool = False) -> np.ndarray:
        lat = np.asarray(lat, dtype=np.int64)
        orbit = np.stack([lat, system.step(lat)])
        return self.matrices(system, orbit, inverse=inverse)[0]

    # analytic bounds

    def sup_bounds(self) -> tuple[float, float]:
        """Upper bounds for ``sup ||A(x)||`` and ``sup ||A(x)^-1||`` in the generator norm."""
        kind = self.field_kind
        if kind in ("constant", "truncated_diagonal_compact"):
            return (float(operator_norm(self.matrix, self.norm)),
                    float(operator_norm(np.linalg.inv(self.matrix), self.norm)))
        c = equivalence_factor(self.norm, self.dimension)
        dmax = float(np.max(np.abs(self.diagonal)))
        dinv = float(np.max(1.0 / np.abs(self.diagonal)))
        if kind == "rotation_conjugated":
            return c * dmax, c * dinv
        cj = self.conjugator
        k = cj.sup_norm * cj.sup_inverse_norm
        return c * dmax * k, c * dinv * k

    def analytic_holder_constant(self, system: BaseSystem) -> float:
        """Holder constant of ``A`` for the metric rho(A, B) = ||A-B|| + ||A^-1 - B^-1||."""
        kind = self.field_kind
        if kind in ("constant", "truncated_diagonal_compact"):
            return 0.0
        c = equivalence_factor(self.norm, self.dimension)
        cj = self.conjugator
        nu = self.holder_exponent
        dmax = float(np.max(np.abs(self.diagonal)))
        dinv = float(np.max(1.0 / np.abs(self.diagonal)))
        if kind == "rotation_conjugated":
            return c * 2.0 * (dmax + dinv) * cj.holder_constant
        lip = system.lipschitz_forward ** nu * system.field_coords_lipschitz() ** nu
        h, hi = cj.holder_constant, cj.inverse_holder_constant
        s, si = cj.sup_norm, cj.sup_inverse_norm
        fwd = dmax * (h * lip * si + s * hi)
        bwd = dinv * (h * si + s * hi * lip)
        return c * (fwd + bwd)

    def describe(self) -> dict:
        out = {"field_kind": self.field_kind, "dimension": self.dimension, "norm": self.norm,
               "holder_exponent": self.holder_exponent}
        if self.matrix is not None:
            out["matrix"] = self.matrix.tolist()
        if self.diagonal is not None:
            out["diagonal"] = self.diagonal.tolist()
        if self.conjugator is not None:
            out["conjugator"] = self.conjugator.describe()
        if self.block_size is not None:
            out["block_size"] = self.block_size
        return out


def constant_generator(M, norm: str = "l2") -> CocycleGenerator:
    M = np.array(M, dtype=float)
    if np.linalg.svd(M, compute_uv=False)[-1] <= 1e-12:
        raise SingularGenerator("constant matrix is singular")
    return CocycleGenerator("constant", M.shape[0], norm=norm, matrix=M)


def coboundary_generator(conjugator: ConjugatorField, diagonal, norm: str = "l2") -> CocycleGenerator:
    """``A(x) = C(f x) D C(x)^-1`` with ``D = diag(diagonal)``."""
    D = np.array(diagonal, dtype=float)
    if D.shape != (conjugator.dimension,):
        raise ConfigError("diagonal length must equal the conjugator dimension")
    return CocycleGenerator("coboundary", len(D), norm=norm, diagonal=D, conjugator=conjugator,
                            holder_exponent=conjugator.nu)


def rotation_conjugated_generator(angle_field: ConjugatorField, diagonal,
                                  norm: str = "l2") -> CocycleGenerator:
    """``A(x) = R(theta(x)) D R(theta(x))^-1`` with ``theta`` read from a rotation field."""
    if angle_field.kind != "rotation":
        raise ConfigError("rotation_conjugated needs a rotation field")
    D = np.array(diagonal, dtype=float)
    if D.shape != (angle_field.dimension,):
        raise ConfigError("diagonal length must equal the field dimension")
    return CocycleGenerator("rotation_conjugated", len(D), norm=norm, diagonal=D,
                            conjugator=angle_field, holder_exponent=angle_field.nu)


def truncated_diagonal_generator(dimension: int, decay_rate: float = 0.5, lead: float = 2.0,
                                 block_size: int = 2, norm: str = "l2") -> CocycleGenerator:
    """Constant ``diag(lead * decay_rate**j)``: a truncation of a compact-tail operator."""
    if not 0 < decay_rate < 1:
        raise ConfigError("decay_rate must lie in (0, 1)")
    if not 1 <= block_size <= dimension:
        raise BlockSizeExceedsDimension("block_size must lie in [1, dimension]")
    M = np.diag(lead * decay_rate ** np.arange(dimension))
    return CocycleGenerator("truncated_diagonal_compact", dimension, norm=norm, matrix=M,
                            block_size=int(block_size), decay_rate=float(decay_rate))


def _check_invertible(A):
    smin = np.linalg.svd(A, compute_uv=False)[..., -1]
    if np.any(smin <= 1e-12):
        raise SingularGenerator(f"generator value with smallest singular value {np.min(smin):.3g}")


def evaluate_generator(gen: CocycleGenerator, system: BaseSystem, x: BasePoint) -> np.ndarray:
    """Materialize ``A(x)`` as a d x d array."""
    system.check(x)
    A = gen.at(system, np.asarray(x.lattice, dtype=np.int64))
    _check_invertible(A)
    return A


def _orbit_matrices(gen, system, lat, n):
    """Generator values needed for ``cocycle(x, n)`` in application order."""
    if n >= 0:
        orbit = system.orbit(lat, 0, n)
        return gen.matrices(system, orbit)
    orbit = system.orbit(lat, n, 0)
    inv = gen.matrices(system, orbit, inverse=True)
    return inv[::-1]


def cocycle(gen: CocycleGenerator, system: BaseSystem, x: BasePoint, n: int) -> np.ndarray:
    """The cocycle ``A(x, n)`` as an explicit product (no renormalization)."""
    system.check(x)
    n = int(n)
    if n < 0 and not (gen.invertible and system.invertible):
        raise NegativeIterateOfNonInvertible("negative time needs an invertible base and generator")
    out = np.eye(gen.dimension)
    if n == 0:
        return out
    for M in _orbit_matrices(gen, system, np.asarray(x.lattice, dtype=np.int64), n):
        out = M @ out
    return out


def log_apply(mats: np.ndarray, start: np.ndarray, every: int = RENORMALIZE_EVERY):
    """Apply ``mats[T-1] ... mats[0]`` to ``start`` with periodic renormalization.

    Returns ``(log_scale, Y)`` so that the true product equals ``exp(log_scale) * Y``.
    Leading batch axes of ``mats[t]`` and ``start`` broadcast.
    """
    Y = np.array(start, dtype=float)
    log_scale = np.zeros(Y.shape[:-2])
    T = len(mats)
    for t in range(T):
        Y = mats[t] @ Y
        if (t + 1) % every == 0 or t == T - 1:
            s = np.max(np.abs(Y), axis=(-2, -1))
            with np.errstate(divide="ignore"):
                log_scale = log_scale + np.log(s)
            Y = Y / np.where(s > 0, s, 1.0)[..., None, None]
    return log_scale, Y


def log_cocycle(gen, system, x: BasePoint, n: int, start: np.ndarray | None = None):
    """Renormalized ``A(x, n) @ start``; see :func:`log_apply`."""
    if n < 0 and not system.invertible:
        raise NegativeIterateOfNonInvertible("negative time needs an invertible base")
    start = np.eye(gen.dimension) if start is None else start
    mats = _orbit_matrices(gen, system, np.asarray(x.lattice, dtype=np.int64), int(n))
    return log_apply(mats, start)


def operator_metric(A, B, norm: str = "l2") -> float:
    """``rho(A, B) = ||A - B|| + ||A^-1 - B^-1||``; scalars are treated as 1 x 1."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    for M in (A, B):
        if np.linalg.svd(M, compute_uv=False)[-1] <= 1e-12:
            raise SingularGenerator("operator metric needs invertible arguments")
    return float(operator_norm(A - B, norm) + operator_norm(np.linalg.inv(A) - np.linalg.inv(B), norm))


def kuratowski_estimate(T, block_size: int, norm: str = "l2", declared: bool = True) -> float:
    """Norm of ``T`` on the coordinates after the first ``block_size``.

    This tail-block norm bounds the compactness index of a truncated
    sequence-space operator from above. A finite-rank operator (``block_size``
    at least the dimension) has an empty tail and gives 0.
    """
    T = np.asarray(T, dtype=float)
    d = T.shape[-1]
    if block_size > d and not declared:
        raise BlockSizeExceedsDimension(f"block size {block_size} exceeds dimension {d}")
    if block_size >= d:
        return 0.0
    return float(operator_norm(T[:, block_size:], norm))


@dataclass(frozen=True)
class GrowthRates:
    lambda_hat: float
    alpha_hat: float
    horizon: int


def growth_rates(gen: CocycleGenerator, system: BaseSystem, x: BasePoint, N: int,
                 block_size: int | None = None, floor: float = ALPHA_FLOOR) -> GrowthRates:
    """Finite-horizon estimates of the norm growth rate and the compactness index rate.

    The tail columns are propagated in their own renormalized product so that
    the compactness rate stays resolvable when it is far below the norm rate.
    """
    if N < 8:
        raise ConfigError("growth_rates needs N >= 8")
    d = gen.dimension
    b = d if block_size is None and gen.block_size is None else (block_size or gen.block_size)
    mats = _orbit_matrices(gen, system, np.asarray(x.lattice, dtype=np.int64), int(N))
    s_full, Y = log_apply(mats, np.eye(d))
    lam = (s_full + np.log(float(operator_norm(Y, gen.norm)))) / N
    if b >= d:
        return GrowthRates(float(lam), floor, int(N))
    s_tail, Z = log_apply(mats, np.eye(d)[:, b:])
    tail = float(operator_norm(Z, gen.norm))
    alpha = (s_tail + np.log(tail)) / N if tail > 0 and np.isfinite(s_tail) else floor
    return GrowthRates(float(lam), float(max(alpha, floor)), int(N))


def propagated_holder_constant(a1: float, supA: float, L: float, nu: float) -> float:
    """Growth constant ``a`` with ``a >= a1 (supA L^nu / a)^n + supA`` for all n >= 0."""
    if a1 < 0 or supA <= 0 or L < 1 or not 0 < nu <= 1:
        raise ConfigError("need a1 >= 0, supA > 0, L >= 1, nu in (0, 1]")
    return float(max(supA * L ** nu, a1 + supA))


def scenario_growth_constant(gen: CocycleGenerator, system: BaseSystem,
                             a1: float | None = None) -> float:
    """The constant used for both time directions: the larger of the two propagations."""
    a1 = gen.analytic_holder_constant(system) if a1 is None else a1
    supA, supAinv = gen.sup_bounds()
    nu = gen.holder_exponent
    a = propagated_holder_constant(a1, supA, system.lipschitz_forward, nu)
    if system.invertible:
        a = max(a, propagated_holder_constant(a1, supAinv, system.lipschitz_backward, nu))
    return a


def audited_holder_ratio(gen: CocycleGenerator, system: BaseSystem, lat_x, lat_y) -> np.ndarray:
    """Observed ``rho(A(x), A(y)) / d(x, y)^nu`` for stacks of pairs."""
    d = system.distance(lat_x, lat_y)
    if np.any(d == 0):
        raise DegeneratePair("audit pairs must be distinct")
    Ax, Ay = gen.at(system, lat_x), gen.at(system, lat_y)
    Aix, Aiy = gen.at(system, lat_x, inverse=True), gen.at(system, lat_y, inverse=True)
    rho = operator_norm(Ax - Ay, gen.norm) + operator_norm(Aix - Aiy, gen.norm)
    return rho / d ** gen.holder_exponent


def estimated_holder_constant(gen, system, lat_x, lat_y) -> float:
    """``1.05 *`` the largest audited ratio; the fallback when no analytic form exists."""
    return 1.05 * float(np.max(audited_holder_ratio(gen, system, lat_x, lat_y)))


@dataclass
class CocycleHolderReport:
    distance: float
    a: float
    ratios: dict
    passed: bool

    @property
    def worst(self) -> float:
        return max(self.ratios.values())


def verify_cocycle_holder(gen: CocycleGenerator, system: BaseSystem, x: BasePoint, y: BasePoint,
                          n_max: int, a: float) -> CocycleHolderReport:
    """Ratios ``||A(x,n) - A(y,n)|| / (a^|n| d(x,y)^nu)`` for ``|n| <= n_max``."""
    d = metric(system, x, y)
    if d == 0:
        raise DegeneratePair("x and y coincide")
    nu = gen.holder_exponent
    lo = -n_max if system.invertible and gen.invertible else 0
    ratios = {}
    for sign in (1, -1):
        if sign < 0 and lo == 0:
            break
        Px = np.eye(gen.dimension)
        Py = np.eye(gen.dimension)
        mx = _orbit_matrices(gen, system, np.asarray(x.lattice, dtype=np.int64), sign * n_max)
        my = _orbit_matrices(gen, system, np.asarray(y.lattice, dtype=np.int64), sign * n_max)
        ratios.setdefault(0, 0.0)
        for k in range(n_max):
            Px = mx[k] @ Px
            Py = my[k] @ Py
            n = sign * (k + 1)
            diff = float(operator_norm(Px - Py, gen.norm))
            ratios[n] = diff / (a ** (k + 1) * d ** nu)
    passed = all(r <= 1 + 1e-9 for r in ratios.values())
    return CocycleHolderReport(d, float(a), dict(sorted(ratios.items())), passed)
