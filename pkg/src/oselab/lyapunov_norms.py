"""Lyapunov norms, the comparison function D_eps, regularity functions and regular sets.

The Lyapunov norm of a vector ``u = sum_i u_i`` (one component per Oseledets
part) at ``x`` is

    ||u||_x = sum_i sum_{|n| <= N_tr} exp(-n lambda_i - |n| eps) ||A(x, n) u_i||

with a one-sided sum at rate ``lambda_{k+1} + eps`` for the component in F.
Growth of ``u_i`` is computed through the one-step maps restricted to the
computed Oseledets frames, so even long two-sided sums stay accurate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .cocycle import CocycleGenerator
from .dynamics import BasePoint, BaseSystem, SampledMeasure
from .errors import ConfigError, ConstraintViolation, SeriesDivergenceWarning, UnreachableGamma
from .norms import operator_norm, vector_norm
from .oseledets import LyapunovSpectrum, OrbitSplittings
from .subspaces import ratio_extremes, sphere_grid

TAIL_TOLERANCE = 1e-9
DEFAULT_HORIZON = 256
ELL_CAP = 1e6


@dataclass(frozen=True)
class LyapunovNormParams:
    epsilon: float
    truncation: int
    spectrum: LyapunovSpectrum
    enforce_gap: bool = True

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConstraintViolation("epsilon must be positive")
        if self.enforce_gap and self.epsilon >= self.spectrum.min_gap / 100:
            raise ConstraintViolation(
                f"epsilon {self.epsilon:.4g} violates eps < min gap / 100 = {self.spectrum.min_gap / 100:.4g}")
        if self.truncation < 0:
            raise ConfigError("truncation must be nonnegative")

    @property
    def tail_bound(self) -> float:
        """Geometric bound ``exp(-N_tr eps / 2)`` on the relative size of the dropped tail."""
        return math.exp(-self.truncation * self.epsilon / 2)


def default_epsilon(spectrum: LyapunovSpectrum) -> float:
    return spectrum.min_gap / 200.0


def default_truncation(epsilon: float, tail: float = TAIL_TOLERANCE) -> int:
    """Smallest ``N_tr`` with ``exp(-N_tr eps / 2) < tail``."""
    return int(math.floor(2.0 * math.log(1.0 / tail) / epsilon)) + 1


def default_params(spectrum: LyapunovSpectrum, epsilon: float | None = None,
                   truncation: int | None = None) -> LyapunovNormParams:
    eps = default_epsilon(spectrum) if epsilon is None else float(epsilon)
    n_tr = default_truncation(eps) if truncation is None else int(truncation)
    return LyapunovNormParams(eps, n_tr, spectrum)


class LyapunovNormField:
    """Lyapunov norms at the points ``f^j x`` for ``|j| <= radius``.

    Parameters
    ----------
    gen, system : the cocycle.
    x : base point.
    params : epsilon, truncation and spectrum.
    radius : largest shift ``|j|`` at which norms are requested.
    buffer : burn-in length of the frame sweeps.
    """

    def __init__(self, gen: CocycleGenerator, system: BaseSystem, x: BasePoint,
                 params: LyapunovNormParams, radius: int = 16, buffer: int = 1024,
                 frame_seed: int = 0):
        system.check(x)
        self.gen, self.system, self.x, self.params = gen, system, x, params
        self.radius = int(radius)
        reach = params.truncation + self.radius
        self.sweep = OrbitSplittings(gen, system, np.asarray(x.lattice)[None], params.spectrum,
                                     -reach, reach, buffer, frame_seed)
        self.lo = -reach
        parts = self.sweep.parts()
        self.bases = [b[:, 0] for b in parts]  # (W, d, m)
        self.maps = [self.sweep.restricted_maps(b)[:, 0] for b in parts]
        self.inverse_maps = [np.linalg.inv(M) for M in self.maps]
        spec = params.spectrum
        self.rates = [spec.exponent(i) for i in range(1, spec.k + 1)]
        self.two_sided = [True] * spec.k
        if spec.slow_dim:
            self.rates.append(spec.exponent(spec.k + 1))
            self.two_sided.append(False)
        self.norm_kind = gen.norm

    @property
    def dims(self):
        return [b.shape[-1] for b in self.bases]

    def _check_center(self, centers):
        centers = np.atleast_1d(np.asarray(centers, dtype=int))
        if np.any(np.abs(centers) > self.radius):
            raise ConfigError(f"shift outside the field radius {self.radius}")
        return centers

    def level_norms(self, part: int, centers, coeffs) -> np.ndarray:
        """Lyapunov norms of ``P_j c`` for part ``part`` (0-based).

        ``coeffs`` has shape ``(J, m, K)``: ``K`` coefficient vectors per center.
        Returns shape ``(J, K)``.
        """
        centers = self._check_center(centers)
        eps, n_tr = self.params.epsilon, self.params.truncation
        lam = self.rates[part]
        P = self.bases[part]
        kind = self.norm_kind
        idx = centers - self.lo
        Y0 = np.asarray(coeffs, dtype=float)

        def amp(Y, pos):
            return vector_norm(P[pos] @ Y, kind, axis=-2)

        rate = lam + eps if not self.two_sided[part] else lam
        if P.shape[-1] == 1:
            total, last = self._scalar_series(part, idx, np.abs(Y0[:, 0, :]), rate)
        else:
            total, last = self._matrix_series(part, idx, Y0, rate, amp)
        if np.any(last > self.params.tail_bound * np.maximum(total, 1e-300) * 10):
            warnings.warn("Lyapunov norm series tail is not negligible; check epsilon and the spectrum",
                          SeriesDivergenceWarning, stacklevel=2)
        return total

    def _scalar_series(self, part, idx, y0, rate):
        """One-dimensional part: the products are scalars, so the series is a sum of exponentials of log sums."""
        eps, n_tr, lam = self.params.epsilon, self.params.truncation, self.rates[part]
        pn = vector_norm(self.bases[part][..., 0], self.norm_kind, axis=-1)
        with np.errstate(divide="ignore"):
            log_fwd = np.log(np.abs(self.maps[part][:, 0, 0]))
            log_bwd = np.log(np.abs(self.inverse_maps[part][:, 0, 0]))
        total = pn[idx][:, None] * y0
        last = np.zeros_like(total)
        if n_tr == 0:
            return total, last
        t = np.arange(1, n_tr + 1)
        series = [(idx[:, None] + t - 1, idx[:, None] + t, log_fwd,
                   -t * rate - (t * eps if self.two_sided[part] else 0.0))]
        if self.two_sided[part]:
            series.append((idx[:, None] - t, idx[:, None] - t, log_bwd, t * lam - t * eps))
        for steps, pos, logs, weight in series:
            growth = np.cumsum(logs[steps], axis=1)
            coef = pn[pos] * np.exp(growth + weight)  # (J, n_tr)
            total = total + coef.sum(axis=1)[:, None] * y0
            last = np.maximum(last, coef[:, -1][:, None] * y0)
        return total, last

    def _matrix_series(self, part, idx, Y0, rate, amp):
        eps, n_tr, lam = self.params.epsilon, self.params.truncation, self.rates[part]
        M, Minv = self.maps[part], self.inverse_maps[part]
        total = amp(Y0, idx)
        last = np.zeros_like(total)
        for direction in ((1, -1) if self.two_sided[part] else (1,)):
            Y = Y0.copy()
            logs = np.zeros(total.shape)
            term = np.zeros_like(total)
            for t in range(1, n_tr + 1):
                if direction > 0:
                    Y = M[idx + t - 1] @ Y
                    weight = -t * rate - (t * eps if self.two_sided[part] else 0.0)
                else:
                    Y = Minv[idx - t] @ Y
                    weight = t * lam - t * eps
                s = np.max(np.abs(Y), axis=-2)
                Y = Y / np.where(s > 0, s, 1.0)[..., None, :]
                with np.errstate(divide="ignore"):
                    logs = logs + np.log(s)
                term = amp(Y, idx + direction * t) * np.exp(logs + weight)
                total = total + term
            last = np.maximum(last, term)
        return total, last

    def components(self, U, center: int = 0):
        """Split ambient vectors (rows of ``U``) into per-part coefficient arrays ``(m_i, K)``."""
        j = int(self._check_center(center)[0]) - self.lo
        B = np.hstack([b[j] for b in self.bases])
        coef = np.linalg.solve(B, np.atleast_2d(U).T)
        out, start = [], 0
        for m in self.dims:
            out.append(coef[start:start + m])
            start += m
        return out

    def norms(self, U, center: int = 0) -> np.ndarray:
        """Lyapunov norms at ``f^center x`` of the rows of ``U``."""
        comps = self.components(U, center)
        total = 0.0
        for part, c in enumerate(comps):
            total = total + self.level_norms(part, [center], c[None])[0]
        return np.asarray(total)

    def norm(self, u, center: int = 0) -> float:
        return float(self.norms(np.asarray(u, dtype=float)[None], center)[0])

    def push(self, part: int, coeffs, n: int) -> np.ndarray:
        """Coefficients of ``A(x, n) P_0 c`` in the frame of the same part at ``f^n x``."""
        Y = np.asarray(coeffs, dtype=float)
        idx = -self.lo
        for t in range(n):
            Y = self.maps[part][idx + t] @ Y
        return Y

    def basis(self, part: int, center: int = 0) -> np.ndarray:
        return self.bases[part][center - self.lo]

    def unit_scales(self, centers) -> np.ndarray:
        """``S_i(f^j x)``: Lyapunov norm of the unit vector of each one-dimensional part."""
        centers = self._check_center(centers)
        out = []
        for part, P in enumerate(self.bases):
            e = P[centers - self.lo]  # (J, d, 1)
            c = 1.0 / vector_norm(e[..., 0], self.norm_kind)
            out.append(self.level_norms(part, centers, c[:, None, None])[:, 0])
        return np.stack(out, axis=-1)


def lyapunov_norm(u, field: LyapunovNormField, center: int = 0) -> float:
    """``||u||`` in the Lyapunov norm at ``f^center x``."""
    return field.norm(u, center)


# sandwich inequalities

@dataclass
class SandwichReport:
    n_max: int
    worst_lower: float
    worst_upper: float
    worst_slow: float
    passed: bool
    checks: int


def lyapunov_sandwich_check(field: LyapunovNormField, n_max: int = 16, probes: int = 4,
                            seed: int = 0, rel_tol: float = 1e-8) -> SandwichReport:
    """Check ``e^{n(l_i - eps)}||u_i||_x <= ||A(x,n)u_i||_{f^n x} <= e^{n(l_i + eps)}||u_i||_x``.

    For the F component only the upper bound, at rate ``lambda_{k+1}``, applies.
    The reported ``worst_*`` values are the largest relative violations (negative
    when the inequality holds with room).
    """
    if not 1 <= n_max <= field.radius:
        raise ConfigError("n_max must lie in 1..radius")
    rng = np.random.default_rng(seed)
    eps = field.params.epsilon
    worst_lo, worst_hi, worst_slow, checks = -np.inf, -np.inf, -np.inf, 0
    for part, m in enumerate(field.dims):
        c0 = rng.standard_normal((m, probes))
        c0 /= np.linalg.norm(c0, axis=0)
        steps = np.arange(n_max + 1)
        pushed = np.stack([field.push(part, c0, int(n)) for n in steps])
        mids = field.level_norms(part, steps, pushed)  # (n_max + 1, probes)
        base = mids[0]
        lam = field.rates[part]
        hi = np.exp(steps * (lam + eps))[:, None] * base
        # n = 0 is an identity; the margins are reported over n >= 1
        worst_hi = max(worst_hi, float(np.max(mids[1:] / hi[1:] - 1)))
        if field.two_sided[part]:
            lo = np.exp(steps * (lam - eps))[:, None] * base
            worst_lo = max(worst_lo, float(np.max(1 - mids[1:] / lo[1:])))
        else:
            worst_slow = max(worst_slow, float(np.max(mids[1:] / hi[1:] - 1)))
        checks += probes * len(steps)
    passed = worst_lo <= rel_tol and worst_hi <= rel_tol
    return SandwichReport(n_max, worst_lo, worst_hi, worst_slow, passed, checks)


# comparison function D_eps

@dataclass
class DEpsilon:
    value: float
    tight: np.ndarray
    certified_tight: np.ndarray
    centers: np.ndarray
    horizon: int
    probe_count: int
    exact: bool
    temperedness_slack: float
    same_horizon_slack: float

    def envelope(self, center: int, horizon: int) -> float:
        return _envelope(self.certified_tight, self.centers, center, horizon, self.epsilon)

    epsilon: float = 0.0


def _envelope(values, centers, center, horizon, eps):
    sel = np.abs(centers - center) <= horizon
    return float(np.max(values[sel] * np.exp(-np.abs(centers[sel] - center) * eps)))


def _dual(kind):
    return {"l2": "l2", "l1": "linf", "linf": "l1"}[kind]


def _tight_exact(field: LyapunovNormField, centers):
    """Exact ``sup ||u||_x / ||u||`` when every part is one-dimensional."""
    S = field.unit_scales(centers)  # (J, K)
    kind = field.norm_kind
    out = np.empty(len(centers))
    K = S.shape[1]
    signs = np.array([s for s in product((1.0, -1.0), repeat=K) if s[0] > 0])
    for a, j in enumerate(centers):
        E = np.hstack([b[j - field.lo] for b in field.bases])
        E = E / vector_norm(E.T, kind)[None, :]
        L = np.linalg.inv(E)  # rows are coefficient functionals
        cand = (signs * S[a]) @ L
        out[a] = float(np.max(vector_norm(cand, _dual(kind))))
    return out


def _norms_batch(field: LyapunovNormField, centers, U) -> np.ndarray:
    """Lyapunov norms of the rows of ``U`` at every center, shape ``(J, K)``."""
    centers = field._check_center(centers)
    B = np.concatenate([b[centers - field.lo] for b in field.bases], axis=-1)  # (J, d, d)
    coef = np.linalg.solve(B, np.broadcast_to(np.asarray(U, dtype=float).T, B.shape[:1] + U.T.shape))
    total, start = 0.0, 0
    for part, m in enumerate(field.dims):
        total = total + field.level_norms(part, centers, coef[:, start:start + m])
        start += m
    return total


def _ball_vertices(d: int, kind: str) -> np.ndarray:
    if kind == "l1":
        return np.eye(d)
    signs = np.array(list(product((1.0, -1.0), repeat=d)))
    return signs[signs[:, 0] > 0]


def _tight_probes(field: LyapunovNormField, centers, probe_count):
    """Bracket ``[lower, upper]`` of ``sup ||u||_y / ||u||`` at every center.

    Under l1 and linf the supremum of a norm over the polyhedral unit ball is
    attained at a vertex, so the vertex maximum is exact. Under l2 a sphere grid
    gives the lower end; the upper end is the better of the grid value inflated
    by its covering radius and the maximum over the enclosing cube's vertices.
    """
    d = field.bases[0].shape[1]
    kind = field.norm_kind
    if kind in ("l1", "linf"):
        V = _ball_vertices(d, kind)
        val = np.max(_norms_batch(field, centers, V), axis=1)
        return val, val, V.shape[0]
    U, eta = sphere_grid(np.eye(d), "l2", target=probe_count)
    lower = np.max(_norms_batch(field, centers, U), axis=1)
    cube = np.max(_norms_batch(field, centers, _ball_vertices(d, "linf")), axis=1)
    upper = np.minimum(cube, lower / (1.0 - eta)) if eta < 1 else cube
    return lower, upper, U.shape[0]


def d_epsilon(field: LyapunovNormField, probe_count: int | None = None,
              horizon: int | None = None) -> DEpsilon:
    """Tempered comparison function ``D_eps`` at ``x`` with a temperedness audit.

    The pointwise ratio ``D_tight(y) = sup ||u||_y / ||u||`` is exact when all
    parts are one-dimensional and otherwise a probe maximum, inflated by
    ``1 / (1 - resolution)`` to a certified upper value. ``D_eps`` is the
    tempered envelope ``max_{|t| <= H} D_tight(f^t x) exp(-|t| eps)``, and the
    audit compares ``D_eps,H(f^j x)`` with ``exp(|j| eps) D_eps,H+|j|(x)``.
    """
    d = field.bases[0].shape[1]
    R = field.radius
    H = R // 2 if horizon is None else int(horizon)
    if 2 * H > R:
        raise ConfigError("horizon must be at most half the field radius")
    probe_count = probe_count or 64 * d
    if probe_count < 2 * d:
        raise ConfigError("probe_count must be at least twice the ambient dimension")
    centers = np.arange(-2 * H, 2 * H + 1)
    if all(m == 1 for m in field.dims):
        tight = _tight_exact(field, centers)
        cert, count, exact = tight, 0, True
    else:
        tight, cert, count = _tight_probes(field, centers, probe_count)
        exact = field.norm_kind != "l2"
    eps = field.params.epsilon
    value = _envelope(cert, centers, 0, H, eps)
    slack, same = -np.inf, -np.inf
    for j in range(-H, H + 1):
        shifted = _envelope(cert, centers, j, H, eps)
        slack = max(slack, shifted / (np.exp(abs(j) * eps) * _envelope(cert, centers, 0, H + abs(j), eps)) - 1)
        same = max(same, shifted / (np.exp(abs(j) * eps) * value) - 1)
    return DEpsilon(value, tight, cert, centers, H, count, exact, float(slack), float(same), eps)


# regularity functions C and K

def _c_values(sweep: OrbitSplittings, i: int, eps: float, horizon: int, kind: str):
    """Finite-horizon ``C`` at level ``i`` for every point of a sweep with window [0, horizon]."""
    spec = sweep.spectrum
    j0 = sweep.index(0)
    seg = slice(j0, j0 + horizon + 1)
    lam_i, lam_next = spec.exponent(i), spec.exponent(i + 1)
    P_plus = sweep.fast(i)[seg]
    A_seg = sweep.A[j0:j0 + horizon]
    M_plus = _segment_maps(P_plus, A_seg)  # (H, P, s, s)
    P_minus = sweep.minus(i)[seg]
    count = sweep.count
    best = np.ones(count)
    # expansion on E_i^+: sup ||A(x,n)^-1 w|| through inverse products
    Minv = np.linalg.inv(M_plus)
    s = P_plus.shape[-1]
    Hn = np.broadcast_to(np.eye(s), (count, s, s)).copy()
    logs = np.zeros(count)
    for t in range(horizon + 1):
        if t > 0:
            Hn = Hn @ Minv[t - 1]
            sc = np.max(np.abs(Hn), axis=(-2, -1))
            Hn = Hn / sc[:, None, None]
            logs += np.log(sc)
        if kind == "l2":
            sup = np.linalg.svd(Hn, compute_uv=False)[..., 0]
        else:
            sup = np.array([ratio_extremes(P_plus[0, p] @ Hn[p], P_plus[t, p], kind)[0]
                            for p in range(count)])
        best = np.maximum(best, np.exp(logs + np.log(sup) + t * (lam_i - eps)))
    if P_minus.shape[-1] and np.isfinite(lam_next):
        M_minus = _segment_maps(P_minus, A_seg)
        m = P_minus.shape[-1]
        G = np.broadcast_to(np.eye(m), (count, m, m)).copy()
        logs = np.zeros(count)
        for t in range(horizon + 1):
            if t > 0:
                G = M_minus[t - 1] @ G
                sc = np.max(np.abs(G), axis=(-2, -1))
                G = G / sc[:, None, None]
                logs += np.log(sc)
            if kind == "l2":
                sup = np.linalg.svd(G, compute_uv=False)[..., 0]
            else:
                sup = np.array([ratio_extremes(P_minus[t, p] @ G[p], P_minus[0, p], kind)[0]
                                for p in range(count)])
            best = np.maximum(best, np.exp(logs + np.log(sup) - t * (lam_next + eps)))
    return best


def _segment_maps(bases, A_seg):
    return np.swapaxes(bases[1:], -1, -2) @ A_seg @ bases[:-1]


def _projection_norms(sweep: OrbitSplittings, i: int, kind: str):
    """``max(||pi_i^+||, ||pi_i^-||)`` at every offset and point of a sweep."""
    plus = sweep.fast(i)
    minus = sweep.minus(i)
    s = plus.shape[-1]
    if minus.shape[-1] == 0:
        return np.ones(plus.shape[:2])
    B = np.concatenate([plus, minus], axis=-1)
    inv = np.linalg.inv(B)
    pi_plus = plus @ inv[..., :s, :]
    d = B.shape[-1]
    pi_minus = np.eye(d) - pi_plus
    return np.maximum(operator_norm(pi_plus, kind), operator_norm(pi_minus, kind))


def _k_values(sweep: OrbitSplittings, i: int, eps: float, horizon: int, kind: str):
    norms = _projection_norms(sweep, i, kind)  # (W, P)
    offs = np.arange(sweep.lo, sweep.hi + 1)
    sel = np.abs(offs) <= horizon
    w = np.exp(-np.abs(offs[sel]) * eps)
    return np.max(norms[sel] * w[:, None], axis=0)


@dataclass
class RegularityFunctions:
    """C, K (and optionally D_eps) per sampled point and level."""

    points: tuple
    levels: tuple
    C: np.ndarray
    K: np.ndarray
    D_eps: np.ndarray
    horizon: int
    epsilon: float

    def records(self):
        for p, x in enumerate(self.points):
            for a, i in enumerate(self.levels):
                yield {"x": x, "level_i": i, "C_val": float(self.C[p, a]), "K_val": float(self.K[p, a]),
                       "D_eps": float(self.D_eps[p]), "horizon": self.horizon}

    def regularity(self, levels=None) -> np.ndarray:
        """``max(C, K)`` per point over the requested levels (default: all)."""
        cols = [self.levels.index(i) for i in (levels or self.levels)]
        return np.maximum(self.C[:, cols].max(axis=1), self.K[:, cols].max(axis=1))


def regularity_levels(spectrum: LyapunovSpectrum):
    return tuple(range(1, spectrum.k + 1))


def regularity_values(gen: CocycleGenerator, system: BaseSystem, lattices, spectrum: LyapunovSpectrum,
                      epsilon: float, horizon: int = DEFAULT_HORIZON, buffer: int = 1024,
                      levels=None, frame_seed: int = 0):
    """``(C, K)`` arrays of shape ``(P, len(levels))`` for a batch of points."""
    levels = tuple(levels or regularity_levels(spectrum))
    sweep = OrbitSplittings(gen, system, lattices, spectrum, -horizon, horizon, buffer, frame_seed)
    C = np.stack([_c_values(sweep, i, epsilon, horizon, gen.norm) for i in levels], axis=-1)
    K = np.stack([_k_values(sweep, i, epsilon, horizon, gen.norm) for i in levels], axis=-1)
    return C, K, sweep


def c_function(gen, system, x: BasePoint, spectrum: LyapunovSpectrum, i: int, epsilon: float,
               horizon: int = DEFAULT_HORIZON, buffer: int = 1024) -> float:
    """Smallest ``C >= 1`` with the two growth inequalities on ``E_i^-`` and ``E_i^+`` up to ``horizon``."""
    sweep = OrbitSplittings(gen, system, np.asarray(x.lattice)[None], spectrum, 0, horizon, buffer)
    return float(_c_values(sweep, i, epsilon, horizon, gen.norm)[0])


def k_function(gen, system, x: BasePoint, spectrum: LyapunovSpectrum, i: int, epsilon: float,
               horizon: int = DEFAULT_HORIZON, buffer: int = 1024) -> float:
    """``sup_{|n| <= horizon} max(||pi_i^+||, ||pi_i^-||)(f^n x) exp(-|n| eps)``."""
    sweep = OrbitSplittings(gen, system, np.asarray(x.lattice)[None], spectrum, -horizon, horizon, buffer)
    return float(_k_values(sweep, i, epsilon, horizon, gen.norm)[0])


def k_temperedness(gen, system, x: BasePoint, spectrum: LyapunovSpectrum, i: int, epsilon: float,
                   horizon: int = 64, shift: int = 64, buffer: int = 1024) -> dict:
    """Audit ``K_H(f^j x) <= exp(|j| eps) K_{H+|j|}(x)`` for ``|j| <= shift``."""
    R = horizon + shift
    sweep = OrbitSplittings(gen, system, np.asarray(x.lattice)[None], spectrum, -R, R, buffer)
    g = _projection_norms(sweep, i, gen.norm)[:, 0]
    offs = np.arange(-R, R + 1)
    slack, same = -np.inf, -np.inf
    base = _envelope(g, offs, 0, horizon, epsilon)
    for j in range(-shift, shift + 1):
        shifted = _envelope(g, offs, j, horizon, epsilon)
        wide = _envelope(g, offs, 0, horizon + abs(j), epsilon)
        slack = max(slack, shifted / (np.exp(abs(j) * epsilon) * wide) - 1)
        same = max(same, shifted / (np.exp(abs(j) * epsilon) * base) - 1)
    return {"K": base, "slack": float(slack), "same_horizon_slack": float(same)}


def regularity_functions(gen, system, samples, spectrum: LyapunovSpectrum, epsilon: float,
                         horizon: int = DEFAULT_HORIZON, buffer: int = 1024, levels=None,
                         chunk: int = 16) -> RegularityFunctions:
    """C and K for every sample point, processed in fixed-size chunks."""
    points = samples.points if isinstance(samples, SampledMeasure) else tuple(samples)
    lat = np.array([p.lattice for p in points], dtype=np.int64)
    levels = tuple(levels or regularity_levels(spectrum))
    Cs, Ks = [], []
    for start in range(0, len(points), chunk):
        C, K, _ = regularity_values(gen, system, lat[start:start + chunk], spectrum, epsilon,
                                    horizon, buffer, levels)
        Cs.append(C)
        Ks.append(K)
    nan = np.full(len(points), np.nan)
    return RegularityFunctions(tuple(points), levels, np.concatenate(Cs), np.concatenate(Ks), nan,
                               int(horizon), float(epsilon))


@dataclass
class RegularSet:
    ell: float
    members: tuple
    measure_estimate: float
    gamma_target: float | None
    member_mask: np.ndarray = field(repr=False, default=None)
    values: np.ndarray = field(repr=False, default=None)

    def members_at(self, ell: float) -> np.ndarray:
        return self.values <= ell


def build_regular_set(functions: RegularityFunctions, levels=None, ell: float | None = None,
                      gamma: float | None = None, cap: float = ELL_CAP) -> RegularSet:
    """The sampled regular set ``{x : C(x) <= ell and K(x) <= ell}``.

    Exactly one of ``ell`` and ``gamma`` must be given. With ``gamma`` the
    smallest integer ``ell`` whose member fraction exceeds ``1 - gamma`` is used.
    """
    if (ell is None) == (gamma is None):
        raise ConfigError("give exactly one of ell and gamma")
    v = functions.regularity(levels)
    P = len(v)
    if gamma is not None:
        if not 0 < gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        need = math.floor((1.0 - gamma) * P) + 1  # count strictly above (1 - gamma) P
        if need > P:
            raise UnreachableGamma(f"{P} samples cannot certify a fraction above {1 - gamma}")
        ell = float(max(1, math.ceil(np.sort(v)[need - 1])))
        if ell > cap:
            raise UnreachableGamma(f"required ell {ell:.4g} exceeds the cap {cap:.4g}")
    mask = v <= ell
    members = tuple(p for p, m in zip(functions.points, mask) if m)
    return RegularSet(float(ell), members, float(mask.mean()), gamma, mask, v)
