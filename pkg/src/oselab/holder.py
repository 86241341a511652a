"""Holder continuity bounds for Oseledets subspaces, evaluated on concrete pairs.

The closed-form constants are computed from the spectrum, epsilon, the
regularity level ``ell``, the growth constant ``a`` and the Holder exponent of
the generator. Each verification returns a :class:`HolderReport` with measured
distances, the bounds they are compared to, and the intermediate quantities
of the underlying argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .cocycle import CocycleGenerator, _orbit_matrices
from .dynamics import BasePoint, BaseSystem, metric
from .errors import (ConfigError, ConstraintViolation, DegenerateDesign,
                     HypothesisSynthesisFailure, PairOutsideRegularSet, PairTooFar, UnreachableGamma)
from .norms import operator_norm
from .oseledets import (LyapunovSpectrum, OrbitSplittings, _qr, choose_complements, fast_slow,
                        filtrations_at, splittings_at)
from .subspaces import (DirectSum, Subspace, certified_distance, deviation, graph_operator,
                        hausdorff_bracket, neumann_inverse, projections, ratio_extremes,
                        restricted_conorm, restricted_norm)

REL_SLACK = 1e-6


def _passes(measured: float, bound: float) -> bool:
    return bool(measured <= bound * (1 + REL_SLACK))


def bracket_index(delta: float, ratio: float) -> int:
    """The integer ``n`` with ``ratio^(n+1) <= delta < ratio^n`` for ``0 < delta, ratio < 1``."""
    if not (0 < delta < 1 and 0 < ratio < 1):
        raise ConfigError("bracketing needs delta and ratio in (0, 1)")
    n = int(math.floor(math.log(delta) / math.log(ratio)))
    # guard the floor against rounding at the interval ends
    while ratio ** (n + 1) > delta:
        n += 1
    while n > 0 and delta >= ratio ** n:
        n -= 1
    return n


# closed-form constants

@dataclass(frozen=True)
class HolderConstants:
    level: int
    C_minus: float | None
    nu_minus: float | None
    C_plus: float | None
    nu_plus: float | None
    C_hat: float | None
    nu_hat: float | None
    C_main: float | None
    nu_main: float | None
    omega: float | None
    inputs: dict = field(default_factory=dict)

    def to_json(self):
        out = {k: getattr(self, k) for k in ("level", "C_minus", "nu_minus", "C_plus", "nu_plus",
                                              "C_hat", "nu_hat", "C_main", "nu_main", "omega")}
        out["inputs"] = dict(self.inputs)
        return out


def lemma_l5_bound(alpha1: float, alpha2: float, ell: float, a: float, delta: float) -> float:
    """``(4 + 2 ell) ell^2 (alpha1/alpha2) delta^(log(alpha2/alpha1)/log(alpha2/a))``."""
    expo = math.log(alpha2 / alpha1) / math.log(alpha2 / a)
    return (4 + 2 * ell) * ell ** 2 * (alpha1 / alpha2) * delta ** expo


def theoretical_constants(i: int, spectrum: LyapunovSpectrum, eps: float, ell: float, a: float,
                          nu: float, check_eps: bool = True) -> HolderConstants:
    """All closed-form constants and exponents for level ``i``.

    Constants that need ``lambda_{i+1}`` are ``None`` when it is ``-inf`` (bottom
    level with trivial F); those needing ``lambda_{i-1}`` are ``None`` for ``i = 1``.
    """
    k = spectrum.k
    if not 1 <= i <= k:
        raise ConfigError(f"level {i} outside 1..{k}")
    if eps <= 0 or ell < 1 or not 0 < nu <= 1:
        raise ConstraintViolation("need eps > 0, ell >= 1 and nu in (0, 1]")
    if check_eps and eps >= spectrum.min_gap / 100:
        raise ConstraintViolation(f"eps {eps:.4g} violates eps < min gap / 100")
    lam = spectrum.exponent
    la = math.log(a)
    li, lnext = lam(i), lam(i + 1)
    finite_next = math.isfinite(lnext)
    Cm = nm = Cp = npl = Ch = nh = Cmain = nmain = omega = None
    if finite_next:
        if la <= li - eps or la <= -lnext - 2 * eps:
            raise ConstraintViolation(f"a = {a:.4g} is too small for level {i}")
        Cm = (4 + 2 * ell) * ell ** 2 * math.exp(li - lnext - 2 * eps)
        nm = nu * (li - lnext - 2 * eps) / (la - lnext - eps)
        Cp = (4 + 2 * ell) * ell ** 2 * math.exp(li - lnext - 4 * eps)
        npl = nu * (li - lnext - 4 * eps) / (la + li - 2 * eps)
    if i >= 2:
        lprev = lam(i - 1)
        if la <= lprev - eps:
            raise ConstraintViolation(f"a = {a:.4g} is too small for level {i}")
        Ch = (4 + 6 * ell) * (3 * ell) ** 2 * math.exp(lprev - li - 2 * eps)
        nh = (lprev - li - 2 * eps) / (la - li - eps)
        if Cp is not None:
            Cmain = 6 * ell * Cp + 2 * Ch * (ell * Cp + 1)
            nmain = npl * nh
            omega = nmain / nu
    inputs = {"lambdas": [lam(j) for j in range(1, k + 2)], "eps": eps, "ell": ell, "a": a, "nu": nu}
    return HolderConstants(i, Cm, nm, Cp, npl, Ch, nh, Cmain, nmain, omega, inputs)


def filtration_constants(i: int, spectrum: LyapunovSpectrum, eps: float, ell: float, a: float,
                         nu: float) -> tuple[float, float]:
    """``(C_i, nu_i)`` for the slow filtration at level ``i`` (2 <= i <= k+1)."""
    if not 2 <= i <= spectrum.k + 1:
        raise ConfigError(f"filtration level {i} outside 2..{spectrum.k + 1}")
    lprev, li = spectrum.exponent(i - 1), spectrum.exponent(i)
    if not math.isfinite(li):
        raise ConfigError("the bottom filtration space is trivial")
    if not 0 < eps < (lprev - li) / 2:
        raise ConstraintViolation("filtration epsilon must lie in (0, gap / 2)")
    if math.log(a) <= lprev - eps:
        raise ConstraintViolation(f"a = {a:.4g} is too small for filtration level {i}")
    C = (4 + 2 * ell) * ell ** 2 * math.exp(lprev - li - 2 * eps)
    v = nu * (lprev - li - 2 * eps) / (math.log(a) - li - eps)
    return C, v


# two-splitting comparison laboratory

@dataclass(eq=False)
class LemmaL5Instance:
    A_n: np.ndarray
    B_n: np.ndarray
    E: Subspace
    E_prime: Subspace
    F: Subspace
    F_prime: Subspace
    alpha1: float
    alpha2: float
    ell: float
    a: float
    delta: float
    n_star: int
    certificates: dict = field(default_factory=dict)


def _projection_norm(E: Subspace, Ep: Subspace) -> float:
    P = projections(DirectSum.of([E, Ep]))
    return float(max(operator_norm(p, E.norm) for p in P))


def lemma_hypotheses(A, B, E, Ep, F, Fp, alpha1, alpha2, ell, n) -> dict:
    """Numerical check of hypotheses (i)-(iii) at step ``n``."""
    tol = 1 + 1e-9
    return {
        "i_contract": restricted_norm(A, E) <= ell * alpha2 ** n * tol,
        "i_expand": restricted_conorm(A, Ep) * tol >= alpha1 ** n / ell,
        "ii_contract": restricted_norm(B, F) <= ell * alpha2 ** n * tol,
        "ii_expand": restricted_conorm(B, Fp) * tol >= alpha1 ** n / ell,
        "iii_E": _projection_norm(E, Ep) <= ell * tol,
        "iii_F": _projection_norm(F, Fp) <= ell * tol,
    }


def synthesize_l5_instance(seed: int, dims: int, alpha1: float, alpha2: float, ell: float,
                           perturbation: float, a: float | None = None, n_max: int = 12,
                           norm: str = "l2") -> LemmaL5Instance:
    """Build ``A_n = S diag(alpha2^n, alpha1^n) S^-1`` and ``B_n = R A_n R^-1``.

    ``S`` couples the contracting block ``E`` and the expanding block ``E'`` just
    enough to keep the splitting projections within ``ell``. ``R = expm(phi K)``
    is a rotation with ``phi = perturbation``. The step ``n`` is the largest
    ``n <= n_max`` with ``||A_n - B_n|| < alpha2^n``, which makes the admissible
    interval for ``delta`` nonempty.
    """
    if not 0 < alpha2 < alpha1:
        raise ConfigError("need 0 < alpha2 < alpha1")
    if ell < 1 or dims < 2:
        raise ConfigError("need ell >= 1 and dims >= 2")
    rng = np.random.default_rng(seed)
    d = int(dims)
    p = int(rng.integers(1, d))  # dim E
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    # projection norm of span(e) + span(e + c f) is sqrt(1 + 1/c^2) ... keep it below ell
    coupling = 0.0 if ell <= 1 else min(0.5, 0.5 * math.sqrt(1 - 1 / ell ** 2))
    G = rng.standard_normal((d - p, p))
    G /= max(np.linalg.norm(G, 2), 1e-12)
    S = np.eye(d)
    S[p:, :p] = coupling * G  # E columns tilt toward E'
    S = Q @ S
    E = Subspace.span(S[:, :p], norm)
    Ep = Subspace.span(S[:, p:], norm)
    K = rng.standard_normal((d, d))
    K = (K - K.T) / 2
    K /= np.linalg.norm(K, 2)
    R = expm(perturbation * K)
    Sinv = np.linalg.inv(S)
    a = alpha1 * (1.0 + float(rng.uniform(0.05, 1.0))) if a is None else float(a)
    if a < alpha1:
        raise ConfigError("a must be at least alpha1")
    chosen = None
    for n in range(n_max, 0, -1):
        A = S @ np.diag(np.r_[np.full(p, alpha2 ** n), np.full(d - p, alpha1 ** n)]) @ Sinv
        B = R @ A @ R.T
        gap_n = float(operator_norm(A - B, norm))
        if gap_n < alpha2 ** n:
            chosen = (n, A, B, gap_n)
            break
    if chosen is None:
        raise HypothesisSynthesisFailure("perturbation too large for every step up to n_max")
    n, A, B, gap_n = chosen
    ratio = alpha2 / a
    delta = max(gap_n / a ** n, ratio ** (n + 1))
    F = Subspace.span(R @ E.basis, norm)
    Fp = Subspace.span(R @ Ep.basis, norm)
    certs = lemma_hypotheses(A, B, E, Ep, F, Fp, alpha1, alpha2, ell, n)
    certs["bracket"] = bool(ratio ** (n + 1) <= delta < ratio ** n)
    certs["closeness"] = bool(gap_n <= delta * a ** n * (1 + 1e-12))
    if not all(certs.values()):
        failed = [k for k, v in certs.items() if not v]
        raise HypothesisSynthesisFailure(f"hypotheses not certified: {failed}")
    return LemmaL5Instance(A, B, E, Ep, F, Fp, float(alpha1), float(alpha2), float(ell), a,
                           float(delta), n, certs)


@dataclass
class LemmaL5Report:
    measured: float
    bound: float
    passed: bool
    deviation_bound: float
    deviations: tuple
    cone_ratio: float
    cone_passed: bool
    cone_probe_ratio: float
    deviation_passed: bool = True


def check_lemma_l5(inst: LemmaL5Instance, probes: int = 64) -> LemmaL5Report:
    """Compare ``d(E, F)`` with the closed-form bound and audit the cone inclusion ``F in Q``."""
    bracket = hausdorff_bracket(inst.E, inst.F)
    measured = bracket.upper
    bound = lemma_l5_bound(inst.alpha1, inst.alpha2, inst.ell, inst.a, inst.delta)
    inter = (2 + inst.ell) * inst.ell ** 2 * (inst.alpha2 / inst.alpha1) ** inst.n_star
    devs = (deviation(inst.F, inst.E), deviation(inst.E, inst.F))
    n = inst.n_star
    cone_limit = 2 * inst.ell * inst.alpha2 ** n
    exact = restricted_norm(inst.A_n, inst.F)
    rng = np.random.default_rng(0)
    U = inst.F.basis @ rng.standard_normal((inst.F.dim, probes))
    ratios = np.linalg.norm(inst.A_n @ U, axis=0) / np.linalg.norm(U, axis=0)
    if inst.F.norm != "l2":
        from .norms import vector_norm
        ratios = vector_norm((inst.A_n @ U).T, inst.F.norm) / vector_norm(U.T, inst.F.norm)
    probe_ratio = float(np.max(ratios) / cone_limit)
    return LemmaL5Report(float(measured), float(bound), _passes(measured, bound), float(inter),
                         tuple(float(v) for v in devs), float(exact / cone_limit),
                         bool(exact <= cone_limit * (1 + 1e-9)), probe_ratio,
                         bool(max(devs) <= inter * (1 + REL_SLACK)))


# pair verification

@dataclass
class HolderReport:
    x: BasePoint
    y: BasePoint
    level: int
    base_distance: float
    kind: str
    measured: dict
    bounds: dict
    passes: dict
    intermediates: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.passes.values())

    def row(self) -> dict:
        out = {"x": " ".join(map(str, self.x.lattice)), "y": " ".join(map(str, self.y.lattice)),
               "level": self.level, "kind": self.kind, "distance": self.base_distance,
               "passed": int(self.passed)}
        for key in sorted(self.measured):
            out[f"measured_{key}"] = self.measured[key]
        for key in sorted(self.bounds):
            out[f"bound_{key}"] = self.bounds[key]
        for key in sorted(self.intermediates):
            val = self.intermediates[key]
            if isinstance(val, (int, float, bool, np.floating, np.integer)):
                out[f"aux_{key}"] = val
        return out


@dataclass(eq=False)
class VerificationContext:
    """Shared data for verifying pairs of one invertible scenario."""

    gen: CocycleGenerator
    system: BaseSystem
    spectrum: LyapunovSpectrum
    eps: float
    ell: float
    a: float
    horizon: int = 1024
    members: dict | None = None
    splittings: dict = field(default_factory=dict)
    _constants: dict = field(default_factory=dict)

    @property
    def nu(self) -> float:
        return float(self.gen.holder_exponent)

    @property
    def norm(self) -> str:
        return self.gen.norm

    def constants(self, i: int) -> HolderConstants:
        if i not in self._constants:
            self._constants[i] = theoretical_constants(i, self.spectrum, self.eps, self.ell, self.a, self.nu)
        return self._constants[i]

    def prepare(self, points, chunk: int = 64):
        """Compute and cache splittings for every point not yet cached."""
        todo = [p for p in points if tuple(p.lattice) not in self.splittings]
        seen = {}
        for p in todo:
            seen.setdefault(tuple(p.lattice), p)
        todo = list(seen.values())
        for start in range(0, len(todo), chunk):
            lat = np.array([p.lattice for p in todo[start:start + chunk]], dtype=np.int64)
            for s in splittings_at(self.gen, self.system, lat, self.spectrum, self.horizon):
                self.splittings[tuple(s.at.lattice)] = s

    def splitting(self, x: BasePoint):
        key = tuple(x.lattice)
        if key not in self.splittings:
            self.prepare([x])
        return self.splittings[key]

    def check_pair(self, x: BasePoint, y: BasePoint) -> float:
        if self.members is not None:
            for p in (x, y):
                if not self.members.get(tuple(p.lattice), False):
                    raise PairOutsideRegularSet(f"{p} is not in the regular set")
        d = metric(self.system, x, y)
        if d >= 1:
            raise PairTooFar(f"d(x, y) = {d:.4g} >= 1")
        if d == 0:
            raise PairTooFar("x and y coincide")
        return d


def _dhat(E: Subspace, F: Subspace) -> float:
    """Measured sphere distance; the upper end of the bracket under l1/linf."""
    return float(certified_distance(E, F))


def _bracket_info(d: float, nu: float, alpha2: float, a: float, prefix: str) -> dict:
    delta = d ** nu
    ratio = alpha2 / a
    n = bracket_index(delta, ratio)
    return {f"{prefix}_delta": delta, f"{prefix}_n": n,
            f"{prefix}_bracket_ok": bool(ratio ** (n + 1) <= delta < ratio ** n)}


def verify_minus(x: BasePoint, y: BasePoint, i: int, ctx: VerificationContext) -> HolderReport:
    """``d(E_i^-(x), E_i^-(y)) <= C_i^- d(x,y)^(nu_i^-)``."""
    d = ctx.check_pair(x, y)
    c = ctx.constants(i)
    if c.C_minus is None:
        raise ConfigError(f"level {i} has no stable bound (E_{i}^- is trivial)")
    _, mx = fast_slow(ctx.splitting(x), i)
    _, my = fast_slow(ctx.splitting(y), i)
    m = _dhat(mx, my)
    b = c.C_minus * d ** c.nu_minus
    alpha2 = math.exp(ctx.spectrum.exponent(i + 1) + ctx.eps)
    inter = _bracket_info(d, ctx.nu, alpha2, ctx.a, "lemma")
    return HolderReport(x, y, i, d, "minus", {"dhat": m}, {"minus": b}, {"minus": _passes(m, b)}, inter)


def verify_plus(x: BasePoint, y: BasePoint, i: int, ctx: VerificationContext) -> HolderReport:
    """``d(E_i^+(x), E_i^+(y)) <= C_i^+ d(x,y)^(nu_i^+)``, from the backward cocycle."""
    d = ctx.check_pair(x, y)
    c = ctx.constants(i)
    if c.C_plus is None:
        raise ConfigError(f"level {i} has no unstable bound (E_{i}^+ is everything)")
    px, _ = fast_slow(ctx.splitting(x), i)
    py, _ = fast_slow(ctx.splitting(y), i)
    m = _dhat(px, py)
    b = c.C_plus * d ** c.nu_plus
    alpha2 = math.exp(-ctx.spectrum.exponent(i) + 2 * ctx.eps)
    inter = _bracket_info(d, ctx.nu, alpha2, ctx.a, "lemma")
    return HolderReport(x, y, i, d, "plus", {"dhat": m}, {"plus": b}, {"plus": _passes(m, b)}, inter)


def _graph_data(x, y, i, ctx):
    px, mx = fast_slow(ctx.splitting(x), i)
    py, _ = fast_slow(ctx.splitting(y), i)
    dplus = _dhat(px, py)
    return px, mx, py, dplus


def verify_graph_bounds(x: BasePoint, y: BasePoint, i: int, ctx: VerificationContext) -> HolderReport:
    """Two-sided comparison of ``d(E_i^+(x), E_i^+(y))`` with the graph operator norm."""
    d = ctx.check_pair(x, y)
    px, mx, py, dplus = _graph_data(x, y, i, ctx)
    if dplus > 1.0 / ctx.ell:
        raise PairTooFar(f"d(E+(x), E+(y)) = {dplus:.4g} exceeds 1/ell")
    L = graph_operator(px, mx, py)
    nL = L.norm_value
    lower = nL / (ctx.ell * (1 + nL))
    upper = 2 * ctx.ell * nL
    lower_ok = bool(dplus * (1 + REL_SLACK) >= lower) if nL > 0 else True
    return HolderReport(x, y, i, d, "graph", {"dhat_plus": dplus, "L_norm": nL},
                        {"graph_lower": lower, "graph_upper": upper},
                        {"graph_lower": lower_ok, "graph_upper": _passes(dplus, upper)},
                        {"graph_residual": L.graph_residual})


def main_rule(i: int, spectrum: LyapunovSpectrum) -> str:
    """How level ``i`` is verified: ``trivial``, ``plus`` (E_1 = E_1^+), ``minus`` or ``pipeline``."""
    k = spectrum.k
    bottom = not spectrum.slow_dim and i == k
    if bottom and k == 1:
        return "trivial"
    if i == 1:
        return "plus"
    if bottom:
        return "minus"
    return "pipeline"


def verify_main(x: BasePoint, y: BasePoint, i: int, ctx: VerificationContext) -> HolderReport:
    """``d(E_i(x), E_i(y)) <= C_i d(x,y)^(nu_i)`` with every intermediate of the argument.

    Level 1 uses the unstable bound directly (``E_1 = E_1^+``); the bottom level
    with trivial F uses the stable bound one level up (``E_k = E_{k-1}^-``).
    """
    d = ctx.check_pair(x, y)
    rule = main_rule(i, ctx.spectrum)
    Ex = ctx.splitting(x).part(i)
    Ey = ctx.splitting(y).part(i)
    m = _dhat(Ex, Ey)
    if rule == "trivial":
        return HolderReport(x, y, i, d, "main", {"dhat": m}, {"main": 0.0}, {"main": m <= 1e-12},
                            {"rule": rule})
    if rule == "plus":
        c = ctx.constants(1)
        b = c.C_plus * d ** c.nu_plus
        return HolderReport(x, y, i, d, "main", {"dhat": m}, {"main": b}, {"main": _passes(m, b)},
                            {"rule": rule, "nu_bound": c.nu_plus})
    if rule == "minus":
        c = ctx.constants(i - 1)
        b = c.C_minus * d ** c.nu_minus
        return HolderReport(x, y, i, d, "main", {"dhat": m}, {"main": b}, {"main": _passes(m, b)},
                            {"rule": rule, "nu_bound": c.nu_minus})
    c = ctx.constants(i)
    nu, ell = ctx.nu, ctx.ell
    if d ** nu >= 0.25:
        raise PairTooFar(f"d^nu = {d ** nu:.4g} >= 1/4")
    px, mx, py, dplus = _graph_data(x, y, i, ctx)
    if dplus > 1.0 / ell:
        raise PairTooFar(f"d(E+(x), E+(y)) = {dplus:.4g} exceeds 1/ell")
    L = graph_operator(px, mx, py)
    nL = L.norm_value
    if nL >= 0.5:
        raise PairTooFar(f"||L|| = {nL:.4g} >= 1/2")
    inv = neumann_inverse(L)
    pulled = Subspace.span(inv.phi_inverse @ Ey.basis, ctx.norm)
    sec = _dhat(pulled, Ey)
    fst = _dhat(Ex, pulled)
    delta_hat = nL + 2 * d ** nu
    alpha2 = math.exp(ctx.spectrum.exponent(i) + ctx.eps)
    bounds = {
        "graph_lower": nL / (ell * (1 + nL)),
        "graph_upper": 2 * ell * nL,
        "sec_graph": 4 * nL,
        "sec": 6 * ell * c.C_plus * d ** c.nu_plus,
        "pre_h": c.C_hat * delta_hat ** c.nu_hat,
        "fst": 2 * c.C_hat * (ell * c.C_plus + 1) * d ** (c.nu_plus * c.nu_hat),
        "main": c.C_main * d ** c.nu_main,
        "triangle": fst + sec + 1e-9,
    }
    measured = {"dhat": m, "dhat_plus": dplus, "L_norm": nL, "sec": sec, "fst": fst,
                "Lhat_norm": inv.operator.norm_value}
    passes = {
        "graph_lower": bool(dplus * (1 + REL_SLACK) >= bounds["graph_lower"]) if nL > 0 else True,
        "graph_upper": _passes(dplus, bounds["graph_upper"]),
        "sec_graph": _passes(sec, bounds["sec_graph"]),
        "sec": _passes(sec, bounds["sec"]),
        "pre_h": _passes(fst, bounds["pre_h"]),
        "fst": _passes(fst, bounds["fst"]),
        "main": _passes(m, bounds["main"]),
        "triangle": bool(m <= bounds["triangle"]),
        "neumann": inv.bound_holds,
    }
    inter = {"rule": rule, "nu_bound": c.nu_main, "neumann_residual": inv.composition_residual,
             "pre_h_delta": delta_hat}
    inter.update(_bracket_info(delta_hat ** (1 / nu), nu, alpha2, ctx.a, "pre_h"))
    return HolderReport(x, y, i, d, "main", measured, bounds, passes, inter)


def main_bound_exponent(i: int, ctx: VerificationContext) -> float:
    rule = main_rule(i, ctx.spectrum)
    if rule == "plus":
        return ctx.constants(1).nu_plus
    if rule == "minus":
        return ctx.constants(i - 1).nu_minus
    if rule == "pipeline":
        return ctx.constants(i).nu_main
    return 0.0


# thresholds

def discover_threshold(distances, ok) -> float:
    """Largest ``t`` such that every sampled pair with distance below ``t`` satisfies ``ok``.

    Returns the distance of the closest failing pair, or infinity when none fails.
    """
    distances = np.asarray(distances, dtype=float)
    ok = np.asarray(ok, dtype=bool)
    bad = distances[~ok]
    return float(bad.min()) if bad.size else float("inf")


def pair_preconditions(x, y, i, ctx: VerificationContext) -> dict:
    """Quantities deciding the two closeness thresholds for a pair at level ``i``."""
    d = metric(ctx.system, x, y)
    out = {"distance": d, "delta1_ok": True, "delta2_ok": d ** ctx.nu < 0.25}
    if main_rule(i, ctx.spectrum) != "pipeline":
        return out
    px, mx, py, dplus = _graph_data(x, y, i, ctx)
    out["delta1_ok"] = bool(dplus <= 1.0 / ctx.ell)
    if out["delta1_ok"]:
        nL = graph_operator(px, mx, py).norm_value
        out["delta2_ok"] = bool(out["delta2_ok"] and nL < 0.5)
    else:
        out["delta2_ok"] = False
    return out


# filtration branch

def _log_norm_products(M, kind, num_bases=None, den_basis=None):
    """Running ``log sup ||M_{n-1} ... M_0 c|| / ||c||`` over a batch, shape ``(n+1, P)``."""
    T, P, m, _ = M.shape
    G = np.broadcast_to(np.eye(m), (P, m, m)).copy()
    logs = np.zeros(P)
    out = np.zeros((T + 1, P))
    for t in range(T + 1):
        if t > 0:
            G = M[t - 1] @ G
            sc = np.max(np.abs(G), axis=(-2, -1))
            G = G / sc[:, None, None]
            logs = logs + np.log(sc)
        if kind == "l2":
            sup = np.linalg.svd(G, compute_uv=False)[..., 0]
        else:
            sup = np.array([ratio_extremes(num_bases[t, p] @ G[p], den_basis[p], kind)[0] for p in range(P)])
        out[t] = logs + np.log(sup)
    return out


def filtration_certificates(gen: CocycleGenerator, system: BaseSystem, lattices, spectrum: LyapunovSpectrum,
                            i: int, eps: float, horizon: int, buffer: int = 1024):
    """Per-step margins of the two growth certificates at level ``i``.

    Returns ``(slow, expand)`` of shape ``(horizon + 1, P)``: ``slow[m]`` is
    ``log ||A(x,m)|V_i|| - m (lambda_i + eps)`` (must be <= 0) and
    ``expand[m]`` is ``log conorm(A(x,m)|U_i) - m (lambda_{i-1} - eps)`` (must be >= 0).
    """
    kind = gen.norm
    sweep = OrbitSplittings(gen, system, lattices, spectrum, 0, horizon, buffer, forward=False)
    V = sweep.slow(i)
    U = sweep.complement(i)
    steps = np.arange(horizon + 1)[:, None]
    MV = np.swapaxes(V[1:], -1, -2) @ sweep.A[:-1] @ V[:-1]
    slow = _log_norm_products(MV, kind, V, V[0]) - steps * (spectrum.exponent(i) + eps)
    # conorm on U_i through QR of the pushed basis: inf ||Q R c|| / ||U c|| with R accumulated inversely
    P = sweep.count
    Y = U[0].copy()
    r = U.shape[-1]
    Hinv = np.broadcast_to(np.eye(r), (P, r, r)).copy()
    logs = np.zeros(P)
    expand = np.zeros((horizon + 1, P))
    Q = Y
    for t in range(horizon + 1):
        if t > 0:
            Q, R = _qr(sweep.A[t - 1] @ Q)
            Hinv = Hinv @ np.linalg.inv(R)
            sc = np.max(np.abs(Hinv), axis=(-2, -1))
            Hinv = Hinv / sc[:, None, None]
            logs = logs + np.log(sc)
        if kind == "l2":
            sup = np.linalg.svd(Hinv, compute_uv=False)[..., 0]
        else:
            sup = np.array([ratio_extremes(U[0, p] @ Hinv[p], Q[p], kind)[0] for p in range(P)])
        expand[t] = -(logs + np.log(sup))
    expand = expand - steps * (spectrum.exponent(i - 1) - eps)
    return slow, expand, sweep


def entry_times(slow, expand, tol: float = 1e-12) -> np.ndarray:
    """Smallest ``n`` such that both certificates hold for every ``m`` in ``[n, horizon]``.

    Points failing at the horizon itself get ``horizon + 1``.
    """
    ok = (slow <= tol) & (expand >= -tol)
    T = ok.shape[0]
    bad = ~ok
    out = np.zeros(ok.shape[1], dtype=int)
    for p in range(ok.shape[1]):
        idx = np.nonzero(bad[:, p])[0]
        out[p] = int(idx.max()) + 1 if idx.size else 0
    return np.minimum(out, T)


@dataclass
class FiltrationRegularSet:
    level: int
    n0: int
    horizon: int
    gamma: float
    entry: np.ndarray
    members: dict
    measure_estimate: float
    ell: float


def filtration_entries(gen, system, lattices, spectrum, i: int, eps: float, horizon: int = 256,
                       buffer: int = 1024):
    """Entry times and splitting projection norms for a batch of points at level ``i``."""
    slow, expand, sweep = filtration_certificates(gen, system, lattices, spectrum, i, eps, horizon, buffer)
    U = sweep.complement(i)[0]
    Pu = U @ np.swapaxes(U, -1, -2)
    Pv = np.eye(gen.dimension) - Pu
    ells = np.maximum(operator_norm(Pu, gen.norm), operator_norm(Pv, gen.norm))
    return entry_times(slow, expand), ells


def assemble_filtration_regular_set(level: int, points, n_samples: int, entry, ells, gamma: float,
                                    horizon: int) -> FiltrationRegularSet:
    """Pick ``n0`` from the first ``n_samples`` points; later points only get membership flags."""
    entry = np.asarray(entry)
    sample_entry = np.sort(entry[:n_samples])
    need = math.floor((1 - gamma) * n_samples) + 1
    if need > n_samples or sample_entry[need - 1] > horizon:
        raise UnreachableGamma(f"no n0 <= {horizon} certifies a fraction above {1 - gamma}")
    n0 = int(sample_entry[need - 1])
    members = {tuple(p.lattice): bool(e <= n0) for p, e in zip(points, entry)}
    frac = float(np.mean(entry[:n_samples] <= n0))
    ell = float(max(1.0, np.max(ells)))
    return FiltrationRegularSet(level, n0, horizon, gamma, entry, members, frac, ell)


def build_filtration_regular_set(gen, system, samples, spectrum, i: int, eps: float, gamma: float,
                                 horizon: int = 256, buffer: int = 1024, chunk: int = 32,
                                 extra_points=()) -> FiltrationRegularSet:
    """``Lambda_gamma`` at level ``i``: the smallest ``n0`` whose certified fraction exceeds ``1 - gamma``."""
    pts = list(samples)
    allpts = pts + list(extra_points)
    lat = np.array([p.lattice for p in allpts], dtype=np.int64)
    entries, ells = [], []
    for start in range(0, len(allpts), chunk):
        e, l = filtration_entries(gen, system, lat[start:start + chunk], spectrum, i, eps, horizon, buffer)
        entries.append(e)
        ells.append(l)
    return assemble_filtration_regular_set(i, allpts, len(pts), np.concatenate(entries),
                                           np.concatenate(ells), gamma, horizon)


@dataclass(eq=False)
class FiltrationContext:
    gen: CocycleGenerator
    system: BaseSystem
    spectrum: LyapunovSpectrum
    eps: float
    a: float
    regular: dict  # level -> FiltrationRegularSet
    horizon: int = 1024
    filtrations: dict = field(default_factory=dict)

    @property
    def nu(self) -> float:
        return float(self.gen.holder_exponent)

    def prepare(self, points, chunk: int = 64):
        seen = {}
        for p in points:
            if tuple(p.lattice) not in self.filtrations:
                seen.setdefault(tuple(p.lattice), p)
        todo = list(seen.values())
        for start in range(0, len(todo), chunk):
            lat = np.array([p.lattice for p in todo[start:start + chunk]], dtype=np.int64)
            for f in filtrations_at(self.gen, self.system, lat, self.spectrum, self.horizon):
                self.filtrations[tuple(f.at.lattice)] = f

    def filtration(self, x):
        key = tuple(x.lattice)
        if key not in self.filtrations:
            self.prepare([x])
        return self.filtrations[key]


def filtration_levels(spectrum: LyapunovSpectrum):
    top = spectrum.k + 1 if spectrum.slow_dim else spectrum.k
    return tuple(range(2, top + 1))


def verify_filtration_holder(x: BasePoint, y: BasePoint, i: int, ctx: FiltrationContext) -> HolderReport:
    """``d(V_i(x), V_i(y)) <= C_i d(x,y)^(nu_i)`` for a certified pair."""
    reg = ctx.regular[i]
    for p in (x, y):
        if not reg.members.get(tuple(p.lattice), False):
            raise PairOutsideRegularSet(f"{p} is not in Lambda_gamma at level {i}")
    d = metric(ctx.system, x, y)
    if d == 0:
        raise PairTooFar("x and y coincide")
    C, v = filtration_constants(i, ctx.spectrum, ctx.eps, reg.ell, ctx.a, ctx.nu)
    alpha2 = math.exp(ctx.spectrum.exponent(i) + ctx.eps)
    ratio = alpha2 / ctx.a
    if d ** ctx.nu >= ratio ** reg.n0:
        raise PairTooFar(f"d^nu = {d ** ctx.nu:.4g} is not below (alpha2/a)^n0 = {ratio ** reg.n0:.4g}")
    Vx = ctx.filtration(x).space(i)
    Vy = ctx.filtration(y).space(i)
    m = _dhat(Vx, Vy)
    b = C * d ** v
    inter = _bracket_info(d, ctx.nu, alpha2, ctx.a, "lemma")
    n_prime = inter["lemma_n"]
    inter["n0"] = reg.n0
    inter["n_prime_ge_n0"] = bool(n_prime >= reg.n0)
    inter["n_prime_within_horizon"] = bool(n_prime <= reg.horizon)
    # Holder propagation at the bracketing step
    lat_x = np.asarray(x.lattice, dtype=np.int64)
    lat_y = np.asarray(y.lattice, dtype=np.int64)
    if n_prime > 0:
        Px = np.eye(ctx.gen.dimension)
        Py = np.eye(ctx.gen.dimension)
        for Ax, Ay in zip(_orbit_matrices(ctx.gen, ctx.system, lat_x, n_prime),
                          _orbit_matrices(ctx.gen, ctx.system, lat_y, n_prime)):
            Px, Py = Ax @ Px, Ay @ Py
        diff = float(operator_norm(Px - Py, ctx.gen.norm))
        inter["closeness_ratio"] = diff / (ctx.a ** n_prime * d ** ctx.nu)
    passes = {"filtration": _passes(m, b), "bracket": inter["lemma_bracket_ok"],
              "n_prime_ge_n0": inter["n_prime_ge_n0"]}
    return HolderReport(x, y, i, d, "filtration", {"dhat": m}, {"filtration": b}, passes,
                        dict(inter, nu_bound=v, C_bound=C, ell=reg.ell))


# exponent fit

@dataclass(frozen=True)
class HolderFit:
    fitted_exponent: float
    intercept: float
    r_squared: float
    pair_count: int


def fit_holder_exponent(reports=None, distances=None, measured=None, key: str = "dhat") -> HolderFit:
    """Least-squares slope of ``log dhat`` against ``log d``; zero responses are dropped."""
    if reports is not None:
        distances = [r.base_distance for r in reports]
        measured = [r.measured[key] for r in reports]
    d = np.asarray(distances, dtype=float)
    m = np.asarray(measured, dtype=float)
    keep = (d > 0) & (m > 0)
    d, m = d[keep], m[keep]
    if d.size < 8:
        raise DegenerateDesign(f"only {d.size} pairs with nonzero distance and response")
    X = np.log(d)
    if np.ptp(X) == 0:
        raise DegenerateDesign("all base distances are equal")
    Y = np.log(m)
    design = np.column_stack([X, np.ones_like(X)])
    coef, *_ = np.linalg.lstsq(design, Y, rcond=None)
    resid = Y - design @ coef
    ss = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return HolderFit(float(coef[0]), float(coef[1]), r2, int(d.size))
