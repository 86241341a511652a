"""Lyapunov spectra, Oseledets splittings, filtrations and block decompositions.

Everything here is built on two orthonormal frame sweeps along an orbit
segment:

* a forward QR sweep started ``buffer`` steps in the past; its leading
  ``s`` columns converge to the fast filtration ``E_1 + ... + E_i``;
* an adjoint (transposed) sweep started ``buffer`` steps in the future and run
  backwards; its trailing columns converge to the slow filtration
  ``V_i = E_i + ... + E_k + F`` (vectors with forward growth at most
  ``lambda_i``).

The Oseledets spaces are the intersections ``E_i = V_i cap (E_1 + ... + E_i)``.
Growth along a subspace is always measured through the one-step maps
restricted to the computed frames, which keeps long products stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cocycle import ALPHA_FLOOR, CocycleGenerator, ConjugatorField, log_apply
from .dynamics import BasePoint, BaseSystem
from .errors import (BlockSingular, ConfigError, HorizonTooShort, IntersectionRankDeficit,
                     NegativeIterateOfNonInvertible, SingularGenerator)
from .norms import operator_norm
from .subspaces import (DirectSum, Subspace, deviation, hausdorff_distance, span_sum)

INTERSECTION_CUTOFF = 1e-10
DEFAULT_GROUPING_TOL = 1e-2


# spectrum

@dataclass(frozen=True)
class LyapunovSpectrum:
    """Grouped exponents above the compactness floor, in decreasing order."""

    exponents: tuple
    multiplicities: tuple
    alpha_floor: float
    horizon: int
    grouping_tol: float
    ambient_dim: int
    raw: tuple = ()

    def __post_init__(self):
        ex = np.asarray(self.exponents)
        if len(ex) == 0:
            raise ConfigError("spectrum has no exponent above the compactness floor")
        if np.any(np.diff(ex) >= 0):
            raise ConfigError("exponents must be strictly decreasing")
        if sum(self.multiplicities) > self.ambient_dim:
            raise ConfigError("multiplicities exceed the ambient dimension")

    @property
    def k(self) -> int:
        return len(self.exponents)

    @property
    def cumulative(self) -> tuple:
        """``(0, m_1, m_1 + m_2, ...)``: column counts of the fast filtration."""
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.multiplicities)]))

    @property
    def slow_dim(self) -> int:
        """Dimension of the part F below the compactness floor."""
        return self.ambient_dim - self.cumulative[-1]

    @property
    def levels(self) -> int:
        """Number of parts of the splitting, counting F when it is nontrivial."""
        return self.k + (1 if self.slow_dim else 0)

    def exponent(self, i: int) -> float:
        """``lambda_i`` for ``1 <= i <= k + 1``; ``lambda_{k+1}`` is the floor (or -inf)."""
        if 1 <= i <= self.k:
            return float(self.exponents[i - 1])
        if i == self.k + 1:
            return float(self.alpha_floor) if self.slow_dim else -np.inf
        raise IndexError(f"level {i} outside 1..{self.k + 1}")

    @property
    def min_gap(self) -> float:
        gaps = list(-np.diff(self.exponents))
        if self.slow_dim:
            gaps.append(self.exponents[-1] - self.alpha_floor)
        return float(min(gaps)) if gaps else np.inf

    def to_json(self) -> dict:
        return {"exponents": list(map(float, self.exponents)),
                "multiplicities": list(map(int, self.multiplicities)),
                "alpha_floor": float(self.alpha_floor), "horizon": int(self.horizon),
                "grouping_tol": float(self.grouping_tol), "ambient_dim": int(self.ambient_dim),
                "raw": list(map(float, self.raw))}

    @classmethod
    def from_json(cls, data) -> "LyapunovSpectrum":
        return cls(tuple(data["exponents"]), tuple(data["multiplicities"]), data["alpha_floor"],
                   data["horizon"], data["grouping_tol"], data["ambient_dim"],
                   tuple(data.get("raw", ())))


def group_exponents(raw, tol: float):
    """Merge sorted exponents whose neighbours differ by at most ``tol``."""
    raw = sorted((float(v) for v in raw), reverse=True)
    groups: list[list[float]] = []
    for v in raw:
        if groups and groups[-1][-1] - v <= tol:
            groups[-1].append(v)
        else:
            groups.append([v])
    return tuple(float(np.mean(g)) for g in groups), tuple(len(g) for g in groups)


def analytic_exponents(gen: CocycleGenerator):
    """Exponents known in closed form, or ``None``."""
    if gen.field_kind == "coboundary":
        return np.sort(np.log(np.abs(gen.diagonal)))[::-1]
    if gen.field_kind in ("constant", "truncated_diagonal_compact"):
        return np.sort(np.log(np.abs(np.linalg.eigvals(gen.matrix))))[::-1]
    return None


def default_grouping_tol(gen: CocycleGenerator) -> float:
    """``0.05 *`` the smallest analytic gap when exponents are known, else 1e-2."""
    ex = analytic_exponents(gen)
    if ex is None:
        return DEFAULT_GROUPING_TOL
    gaps = -np.diff(ex)
    gaps = gaps[gaps > 1e-9]
    return float(0.05 * gaps.min()) if len(gaps) else DEFAULT_GROUPING_TOL


def generic_frame(d: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))


def starting_frame(gen: CocycleGenerator, seed: int = 0) -> np.ndarray:
    """Identity for constant upper-triangular generators (the standard flag is
    invariant, so QR iteration is exact from the first step); otherwise generic."""
    M = gen.matrix
    if gen.field_kind in ("constant", "truncated_diagonal_compact") and np.allclose(M, np.triu(M), atol=0):
        return np.eye(gen.dimension)
    return generic_frame(gen.dimension, seed)


def _qr(M):
    Q, R = np.linalg.qr(M)
    s = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    s = np.where(s == 0, 1.0, s)
    return Q * s[..., None, :], R * s[..., :, None]


def qr_exponents(gen: CocycleGenerator, system: BaseSystem, lat: np.ndarray, N: int,
                 frame_seed: int = 0, checkpoints=()):
    """Raw QR exponents for a batch of points, shape ``(P, d)``, sorted decreasingly.

    Also returns a dict of the same estimates at each requested checkpoint horizon.
    """
    lat = np.atleast_2d(np.asarray(lat, dtype=np.int64))
    d = gen.dimension
    orbit = system.orbit(lat, 0, N)
    mats = gen.matrices(system, orbit)
    Q = np.broadcast_to(starting_frame(gen, frame_seed), (lat.shape[0], d, d)).copy()
    acc = np.zeros((lat.shape[0], d))
    at = {}
    for t in range(N):
        Q, R = _qr(mats[t] @ Q)
        acc += np.log(np.abs(np.diagonal(R, axis1=-2, axis2=-1)))
        if t + 1 in checkpoints:
            at[t + 1] = -np.sort(-acc / (t + 1), axis=-1)
    return -np.sort(-acc / N, axis=-1), at, mats


def alpha_estimates(gen: CocycleGenerator, mats: np.ndarray, N: int,
                    floor: float = ALPHA_FLOOR) -> np.ndarray:
    """Compactness-rate surrogate from the tail columns of the product."""
    d = gen.dimension
    b = gen.block_size if gen.block_size is not None else d
    P = mats.shape[1]
    if b >= d:
        return np.full(P, floor)
    s, Z = log_apply(mats, np.broadcast_to(np.eye(d)[:, b:], (P, d, d - b)))
    tail = operator_norm(Z, gen.norm)
    with np.errstate(divide="ignore"):
        alpha = (s + np.log(tail)) / N
    return np.where(np.isfinite(alpha), np.maximum(alpha, floor), floor)


def lyapunov_spectrum(gen: CocycleGenerator, system: BaseSystem, x: BasePoint, N: int,
                      grouping_tol: float | None = None, frame_seed: int = 0) -> LyapunovSpectrum:
    """Lyapunov spectrum at ``x`` by QR (treppen) iteration over ``N`` steps.

    Exponents not exceeding the compactness surrogate by more than the grouping
    tolerance are assigned to F. ``HorizonTooShort`` is raised when the
    estimates at ``N`` and ``N/2`` disagree by more than ten tolerances.
    """
    if N < 64:
        raise ConfigError("lyapunov_spectrum needs N >= 64")
    system.check(x)
    tol = default_grouping_tol(gen) if grouping_tol is None else float(grouping_tol)
    lat = np.asarray(x.lattice, dtype=np.int64)[None]
    raw, at, mats = qr_exponents(gen, system, lat, N, frame_seed, checkpoints=(N // 2,))
    alpha = float(alpha_estimates(gen, mats, N)[0])
    return spectrum_from_raw(raw[0], at[N // 2][0], alpha, N, tol, gen.dimension)


def spectrum_from_raw(raw, raw_half, alpha, N, tol, d) -> LyapunovSpectrum:
    keep = raw > alpha + tol
    ex, mult = group_exponents(raw[keep], tol)
    ex_h, mult_h = group_exponents(raw_half[raw_half > alpha + tol], tol)
    if mult != mult_h or np.max(np.abs(np.subtract(ex, ex_h))) > 10 * tol:
        raise HorizonTooShort(f"estimates at N={N} and N={N // 2} disagree: {ex} vs {ex_h}")
    return LyapunovSpectrum(ex, mult, float(alpha), int(N), float(tol), int(d), tuple(map(float, raw)))


# orbit sweeps

class OrbitSplittings:
    """Fast and slow frames along orbit segments of a batch of points.

    Frames are stored for offsets ``n = lo..hi`` around each base point, with
    arrays indexed ``[n - lo, p]``. The generator values ``A(f^n x)`` for the
    same offsets are kept in ``self.A``.
    """

    def __init__(self, gen: CocycleGenerator, system: BaseSystem, lattices, spectrum: LyapunovSpectrum,
                 lo: int, hi: int, buffer: int, frame_seed: int = 0, forward: bool | None = None):
        lat = np.atleast_2d(np.asarray(lattices, dtype=np.int64))
        invertible = system.invertible and gen.invertible
        if forward is None:
            forward = invertible
        if (lo < 0 or forward) and not invertible:
            raise NegativeIterateOfNonInvertible("backward orbit requested on a non-invertible base")
        if hi < lo:
            raise ConfigError("empty orbit window")
        self.gen, self.system, self.spectrum = gen, system, spectrum
        self.lo, self.hi, self.buffer = int(lo), int(hi), int(buffer)
        self.d = gen.dimension
        start = lo - buffer if forward else lo
        stop = hi + buffer
        orbit = system.orbit(lat, start, stop)
        mats = gen.matrices(system, orbit)  # offsets start .. stop-1
        W = hi - lo + 1
        self.points = orbit[lo - start: hi - start + 1]
        self.A = mats[lo - start: hi - start + 1]
        frame = np.broadcast_to(generic_frame(self.d, frame_seed), (lat.shape[0], self.d, self.d))
        self.Qf = None
        if forward:
            Qf = np.empty((W,) + frame.shape)
            Q = frame.copy()
            for n in range(start, hi + 1):
                if n >= lo:
                    Qf[n - lo] = Q
                if n < hi:
                    Q, _ = _qr(mats[n - start] @ Q)
            self.Qf = Qf
        Qb = np.empty((W,) + frame.shape)
        Q = frame.copy()
        for n in range(stop - 1, lo - 1, -1):
            Q, _ = _qr(np.swapaxes(mats[n - start], -1, -2) @ Q)
            if n <= hi:
                Qb[n - lo] = Q
        self.Qb = Qb
        self._parts = None
        self.transversality = {}

    @property
    def count(self) -> int:
        return self.Qb.shape[1]

    def index(self, n: int) -> int:
        if not self.lo <= n <= self.hi:
            raise IndexError(f"offset {n} outside [{self.lo}, {self.hi}]")
        return n - self.lo

    def fast(self, i: int) -> np.ndarray:
        """Bases of ``E_i^+ = E_1 + ... + E_i`` (``i`` columns groups), shape ``(W, P, d, s_i)``."""
        if self.Qf is None:
            raise NegativeIterateOfNonInvertible("fast filtration needs the backward orbit")
        return self.Qf[..., : self.spectrum.cumulative[i]]

    def slow(self, i: int) -> np.ndarray:
        """Bases of ``V_i`` (vectors growing at most like ``lambda_i``); ``V_1`` is everything."""
        return self.Qb[..., self.spectrum.cumulative[i - 1]:]

    def complement(self, i: int) -> np.ndarray:
        """Bases of the orthogonal complement ``U_i`` of ``V_i``."""
        return self.Qb[..., : self.spectrum.cumulative[i - 1]]

    def minus(self, i: int) -> np.ndarray:
        """Bases of ``E_i^- = E_{i+1} + ... + F`` (equal to ``V_{i+1}``)."""
        return self.slow(i + 1)

    def parts(self) -> list:
        """Bases of ``E_1, ..., E_k`` (and F when nontrivial)."""
        if self._parts is not None:
            return self._parts
        if self.Qf is None:
            raise NegativeIterateOfNonInvertible("the splitting needs the backward orbit")
        cum = self.spectrum.cumulative
        d = self.d
        out = []
        for i in range(1, self.spectrum.k + 1):
            m = cum[i] - cum[i - 1]
            ann = np.concatenate([self.Qb[..., : cum[i - 1]], self.Qf[..., cum[i]:]], axis=-1)
            ann = np.swapaxes(ann, -1, -2)  # rows annihilate E_i
            if ann.shape[-2] == 0:
                out.append(np.broadcast_to(np.eye(d), self.Qb.shape).copy())
                self.transversality[i] = np.ones(self.Qb.shape[:2])
                continue
            _, s, vh = np.linalg.svd(ann, full_matrices=True)
            smin = s[..., -1] / s[..., 0]
            self.transversality[i] = smin
            if np.any(smin <= INTERSECTION_CUTOFF):
                raise IntersectionRankDeficit(
                    f"level {i}: stacked annihilator has relative singular value {smin.min():.3g}")
            out.append(np.swapaxes(vh[..., d - m:, :], -1, -2))
        if self.spectrum.slow_dim:
            out.append(self.slow(self.spectrum.k + 1).copy())
        self._parts = out
        return out

    def restricted_maps(self, bases: np.ndarray) -> np.ndarray:
        """One-step maps ``P_{n+1}^T A_n P_n`` on a family of orthonormal frames."""
        return np.swapaxes(bases[1:], -1, -2) @ self.A[:-1] @ bases[:-1]

    def subspace(self, bases: np.ndarray, n: int, p: int = 0, norm: str | None = None) -> Subspace:
        return Subspace(bases[self.index(n), p].copy(), norm or self.gen.norm)


def _frame_rates(sweep: OrbitSplittings, bases, seed=0):
    """Average log growth of a generic vector along the restricted maps."""
    M = sweep.restricted_maps(bases)
    m = bases.shape[-1]
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((bases.shape[1], m, 1))
    s, _ = log_apply(M, c / np.linalg.norm(c, axis=1, keepdims=True))
    return s / len(M)


def _restricted_growth(sweep, bases):
    """log of the norm of the restricted product over the whole window, per point."""
    M = sweep.restricted_maps(bases)
    m = bases.shape[-1]
    s, Y = log_apply(M, np.broadcast_to(np.eye(m), (bases.shape[1], m, m)))
    return s + np.log(np.linalg.svd(Y, compute_uv=False)[..., 0])


# splittings

@dataclass(frozen=True, eq=False)
class OseledetsSplitting:
    at: BasePoint
    parts: DirectSum
    horizon: int
    spectrum: LyapunovSpectrum
    certificates: dict = field(default_factory=dict)

    def part(self, i: int) -> Subspace:
        return self.parts.parts[i - 1]

    def to_json(self) -> dict:
        return {"at": self.at.to_json(), "horizon": self.horizon, "parts": self.parts.to_json(),
                "spectrum": self.spectrum.to_json(), "certificates": _jsonable(self.certificates)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _subspace_from(bases, norm):
    return Subspace(np.asarray(bases, dtype=float).copy(), norm)


def splittings_at(gen, system, lattices, spectrum, N, frame_seed=0):
    """Splittings at a batch of points, with equivariance certificates.

    Returns a list of :class:`OseledetsSplitting`, one per point.
    """
    if not (system.invertible and gen.invertible):
        raise NegativeIterateOfNonInvertible("Oseledets splittings need an invertible cocycle")
    sweep = OrbitSplittings(gen, system, lattices, spectrum, 0, 1, N, frame_seed)
    parts = sweep.parts()
    out = []
    for p in range(sweep.count):
        here = [_subspace_from(b[0, p], gen.norm) for b in parts]
        there = [_subspace_from(b[1, p], "l2") for b in parts]
        A = sweep.A[0, p]
        equiv = [hausdorff_distance(Subspace.span(A @ h.basis), t) for h, t in zip(here, there)]
        cert = {"equivariance": equiv,
                "transversality": [float(sweep.transversality[i][0, p]) for i in sorted(sweep.transversality)]}
        x = system.from_lattice(sweep.points[0, p])
        out.append(OseledetsSplitting(x, DirectSum.of(here), int(N), spectrum, cert))
    return out


def oseledets_splitting(gen: CocycleGenerator, system: BaseSystem, x: BasePoint, N: int,
                        spectrum: LyapunovSpectrum | None = None, frame_seed: int = 0) -> OseledetsSplitting:
    """Oseledets splitting at ``x`` from frames pushed over ``N`` steps each way."""
    system.check(x)
    if spectrum is None:
        spectrum = lyapunov_spectrum(gen, system, x, max(N, 64))
    return splittings_at(gen, system, np.asarray(x.lattice)[None], spectrum, N, frame_seed)[0]


def fast_slow(splitting: OseledetsSplitting, i: int):
    """``(E_i^+, E_i^-)``: the sums of the parts up to ``i`` and after ``i``."""
    parts = splitting.parts.parts
    k = splitting.spectrum.k
    if not 1 <= i <= k:
        raise IndexError(f"level {i} outside 1..{k}")
    plus = span_sum(parts[:i])
    rest = parts[i:]
    minus = span_sum(rest) if rest else Subspace.trivial(plus.ambient_dim, plus.norm)
    return plus, minus


def growth_certificate(gen, system, x: BasePoint, spectrum: LyapunovSpectrum, N: int,
                       frame_seed: int = 0) -> dict:
    """Forward and backward growth rates of each Oseledets part over ``N`` steps."""
    lat = np.asarray(x.lattice)[None]
    fwd = OrbitSplittings(gen, system, lat, spectrum, 0, N, N, frame_seed)
    bwd = OrbitSplittings(gen, system, lat, spectrum, -N, 0, N, frame_seed)
    out = {"forward": [], "backward": [], "slow_block": []}
    for bf, bb in zip(fwd.parts(), bwd.parts()):
        out["forward"].append(float(_frame_rates(fwd, bf)[0]))
        # backward: rate of A(x, -N) equals minus the forward rate of A(f^-N x, N) inverted
        M = bwd.restricted_maps(bb)[::-1]
        Minv = np.linalg.inv(M)
        m = bb.shape[-1]
        c = np.ones((1, m, 1)) / np.sqrt(m)
        s, _ = log_apply(Minv, c)
        out["backward"].append(float(s[0] / N))
    for i in range(2, spectrum.k + 2):
        if i == spectrum.k + 1 and not spectrum.slow_dim:
            break
        out["slow_block"].append(float(_restricted_growth(fwd, fwd.slow(i))[0] / N))
    return out


# filtrations

@dataclass(frozen=True, eq=False)
class Filtration:
    at: BasePoint
    spaces: tuple
    codims: tuple
    spectrum: LyapunovSpectrum
    horizon: int
    complements: tuple | None = None
    full_complements: tuple | None = None
    projection_norms: dict | None = None
    certificates: dict = field(default_factory=dict)

    def space(self, i: int) -> Subspace:
        return self.spaces[i - 1]

    @property
    def ell(self) -> float | None:
        if not self.projection_norms:
            return None
        return float(max(max(v) for v in self.projection_norms.values()))

    def to_json(self) -> dict:
        out = {"at": self.at.to_json(), "horizon": self.horizon,
               "spaces": [s.to_json() for s in self.spaces], "codims": list(self.codims),
               "spectrum": self.spectrum.to_json(), "certificates": _jsonable(self.certificates)}
        if self.projection_norms is not None:
            out["projection_norms"] = _jsonable(self.projection_norms)
        return out


def filtrations_at(gen, system, lattices, spectrum, N, frame_seed=0, growth: bool = False):
    """Filtrations at a batch of points with nesting and invariance certificates."""
    hi = N if growth else 1
    sweep = OrbitSplittings(gen, system, lattices, spectrum, 0, hi, N, frame_seed, forward=False)
    k = spectrum.k
    out = []
    for p in range(sweep.count):
        spaces = [Subspace(sweep.slow(i)[0, p].copy(), gen.norm) for i in range(1, k + 2)]
        nxt = [Subspace(sweep.slow(i)[1, p].copy(), "l2") for i in range(1, k + 2)]
        A = sweep.A[0, p]
        nesting = [deviation(spaces[i].with_norm("l2"), spaces[i - 1].with_norm("l2"))
                   for i in range(1, k + 1) if spaces[i].dim]
        invariance = [deviation(Subspace.span(A @ s.basis), t) for s, t in zip(spaces, nxt) if s.dim]
        cert = {"nesting": nesting, "invariance": invariance}
        if growth:
            rates = []
            for i in range(1, k + 1):
                cols = sweep.slow(i)[:, p:p + 1]
                rates.append(float(_frame_rates(_SinglePoint(sweep, p), cols)[0]))
            cert["growth"] = rates
        x = system.from_lattice(sweep.points[0, p])
        codims = tuple(int(m) for m in spectrum.multiplicities)
        out.append(Filtration(x, tuple(spaces), codims, spectrum, int(N), certificates=cert))
    return out


class _SinglePoint:
    """View of one point of a sweep, for helpers that expect batch axes."""

    def __init__(self, sweep, p):
        self.A = sweep.A[:, p:p + 1]

    def restricted_maps(self, bases):
        return np.swapaxes(bases[1:], -1, -2) @ self.A[:-1] @ bases[:-1]


def filtration(gen: CocycleGenerator, system: BaseSystem, x: BasePoint, N: int,
               spectrum: LyapunovSpectrum | None = None, frame_seed: int = 0,
               growth: bool = True) -> Filtration:
    """Slow filtration ``V_1 > V_2 > ... > V_{k+1}`` at ``x`` from forward data only.

    With ``growth`` set, the certificate records the growth rate of a vector
    of ``V_i`` outside ``V_{i+1}`` along the orbit (it should be ``lambda_i``).
    """
    system.check(x)
    if spectrum is None:
        spectrum = lyapunov_spectrum(gen, system, x, max(N, 64))
    filt = filtrations_at(gen, system, np.asarray(x.lattice)[None], spectrum, N, frame_seed, growth)[0]
    if growth:
        tol = max(10 * spectrum.grouping_tol, 5e-2)
        for i, r in enumerate(filt.certificates["growth"], start=1):
            if abs(r - spectrum.exponent(i)) > tol:
                raise HorizonTooShort(f"V_{i} growth {r:.4g} differs from lambda_{i} = "
                                      f"{spectrum.exponent(i):.4g}")
    return filt


def choose_complements(filt: Filtration) -> Filtration:
    """Fill in orthogonal complements and the norms of the induced projections.

    ``U~_i`` is the orthogonal complement of ``V_{i+1}`` inside ``V_i`` and
    ``U_i = U~_1 + ... + U~_{i-1}`` is the orthogonal complement of ``V_i``.
    """
    d = filt.spaces[0].ambient_dim
    norm = filt.spaces[0].norm
    tilde, full, norms = [], [], {"u": [], "v": []}
    for i in range(1, len(filt.spaces) + 1):
        V = filt.space(i)
        U = np.linalg.svd(np.eye(d) - V.projector())[0][:, : d - V.dim] if V.dim < d else np.zeros((d, 0))
        full.append(Subspace(U, norm))
        norms["u"].append(float(operator_norm(U @ U.T, norm)) if U.shape[1] else 0.0)
        norms["v"].append(float(operator_norm(V.projector(), norm)) if V.dim else 0.0)
        if i <= len(filt.spaces) - 1:
            Vn = filt.space(i + 1)
            inside = V.basis @ np.linalg.svd(V.basis.T @ (np.eye(d) - Vn.projector()) @ V.basis)[0]
            tilde.append(Subspace(inside[:, : V.dim - Vn.dim], norm))
    return Filtration(filt.at, filt.spaces, filt.codims, filt.spectrum, filt.horizon,
                      tuple(tilde), tuple(full), norms, filt.certificates)


def operational_ell(filtrations) -> float:
    """Largest projection norm over a collection of filtrations with complements."""
    return float(max(f.ell for f in filtrations))


# block decomposition

@dataclass(frozen=True, eq=False)
class BlockDecomposition:
    level: int
    steps: int
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    B_n: np.ndarray
    C_n: np.ndarray
    D_n: np.ndarray
    full: np.ndarray
    C_direct: np.ndarray
    identity_residual: float
    one_step_residual: float
    recursion_residual: float
    leakage: float
    b_injectivity: float


def block_products(A_seq, Pu_seq, Pv_seq):
    """Blocks along a segment and their cumulative products.

    ``A_seq[j]`` maps the fibre at ``f^j x`` to ``f^{j+1} x``; ``Pu_seq`` and
    ``Pv_seq`` hold the complementary projections at ``f^j x`` for
    ``j = 0..n``. Returns ``(B_list, C_list, D_list, B_n, C_n, D_n)`` with
    ``C_n`` from the recursion ``sum_j D_{n-j-1}(f^{j+1}x) C(f^j x) B_j(x)``.
    """
    n = len(A_seq)
    d = A_seq[0].shape[0]
    Bs = [Pu_seq[j + 1] @ A_seq[j] @ Pu_seq[j] for j in range(n)]
    Cs = [Pv_seq[j + 1] @ A_seq[j] @ Pu_seq[j] for j in range(n)]
    Ds = [Pv_seq[j + 1] @ A_seq[j] @ Pv_seq[j] for j in range(n)]
    prefix = [np.eye(d)]  # B_j(x)
    for j in range(n):
        prefix.append(Bs[j] @ prefix[-1])
    suffix = [np.eye(d)] * (n + 1)  # suffix[j] = D(f^{n-1}x) ... D(f^j x)
    for j in range(n - 1, -1, -1):
        suffix[j] = suffix[j + 1] @ Ds[j]
    C_n = np.zeros((d, d))
    for j in range(n):
        C_n = C_n + suffix[j + 1] @ Cs[j] @ prefix[j]
    return Bs, Cs, Ds, prefix[n], C_n, suffix[0]


def block_cocycle(gen: CocycleGenerator, system: BaseSystem, x: BasePoint, i: int, n: int,
                  N: int = 1024, spectrum: LyapunovSpectrum | None = None,
                  frame_seed: int = 0) -> BlockDecomposition:
    """Block decomposition ``A = B + C + D`` for level ``i`` and its ``n``-step products.

    The projections use the orthogonal complement ``U_i`` of ``V_i``.
    """
    if spectrum is None:
        spectrum = lyapunov_spectrum(gen, system, x, max(N, 64))
    if not 2 <= i <= spectrum.k + 1:
        raise IndexError(f"level {i} outside 2..{spectrum.k + 1}")
    sweep = OrbitSplittings(gen, system, np.asarray(x.lattice)[None], spectrum, 0, max(n, 1), N,
                            frame_seed, forward=False)
    U = sweep.complement(i)[:, 0]
    V = sweep.slow(i)[:, 0]
    Pu = U @ np.swapaxes(U, -1, -2)
    Pv = V @ np.swapaxes(V, -1, -2)
    A_seq = sweep.A[:n, 0]
    Bs, Cs, Ds, B_n, C_n, D_n = block_products(A_seq, Pu, Pv)
    full = np.eye(gen.dimension)
    for A in A_seq:
        full = A @ full
    scale = max(1.0, float(np.linalg.norm(full, 2)))
    ident = float(np.linalg.norm(full - (B_n + C_n + D_n), 2) / scale)
    A0 = sweep.A[0, 0]
    one = float(np.linalg.norm(A0 - (Bs[0] + Cs[0] + Ds[0]), 2) / np.linalg.norm(A0, 2)) if n else 0.0
    C_direct = Pv[n] @ full @ Pu[0]
    rec = float(np.linalg.norm(C_direct - C_n, 2) / scale)
    leak = float(np.linalg.norm(Pu[1] @ A0 @ Pv[0], 2) / np.linalg.norm(A0, 2))
    Bu = np.swapaxes(U[1], -1, -2) @ A0 @ U[0]
    inj = float(np.linalg.svd(Bu, compute_uv=False)[-1]) if Bu.size else np.inf
    if inj <= 1e-10:
        raise BlockSingular(f"B restricted to U_{i} has smallest singular value {inj:.3g}")
    return BlockDecomposition(i, n, Bs[0] if n else None, Cs[0] if n else None, Ds[0] if n else None,
                              B_n, C_n, D_n, full, C_direct, ident, one, rec, leak, inj)


# closed-form ground truth

def coboundary_oracle(conjugator: ConjugatorField, diagonal, system: BaseSystem, x: BasePoint,
                      norm: str = "l2", grouping_tol: float = 1e-9):
    """Exact splitting and filtration of ``A(x) = C(f x) D C(x)^-1``.

    ``E_i(x) = C(x) * (eigenspace i of D)`` and ``V_i(x) = C(x) * (span of the
    eigenvectors with rates at most lambda_i)``.
    """
    system.check(x)
    D = np.asarray(diagonal, dtype=float)
    rates = np.log(np.abs(D))
    order = np.argsort(-rates, kind="stable")
    ex, mult = group_exponents(rates, grouping_tol)
    coords = system.field_coords(np.asarray(x.lattice))
    C = conjugator.matrix(coords)
    if np.linalg.svd(C, compute_uv=False)[-1] <= 1e-12:
        raise SingularGenerator("conjugator is singular at x")
    d = len(D)
    spectrum = LyapunovSpectrum(ex, mult, ALPHA_FLOOR, 0, grouping_tol, d, tuple(np.sort(rates)[::-1]))
    cum = spectrum.cumulative
    eye = np.eye(d)
    parts, spaces = [], []
    for i in range(spectrum.k):
        cols = eye[:, order[cum[i]: cum[i + 1]]]
        parts.append(Subspace.span(C @ cols, norm))
    for i in range(spectrum.k + 1):
        cols = eye[:, order[cum[i]:]]
        spaces.append(Subspace.span(C @ cols, norm) if cols.shape[1] else Subspace.trivial(d, norm))
    split = OseledetsSplitting(x, DirectSum.of(parts), 0, spectrum, {"oracle": True})
    filt = Filtration(x, tuple(spaces), tuple(mult), spectrum, 0, certificates={"oracle": True})
    return split, filt
