"""Subspaces of R^d and the distances between them.

Three distances are provided. The one-sided deviation ``delta(E, F)`` is the
largest distance from a unit vector of E to F. The gap is the symmetrized
deviation. The Hausdorff distance compares the unit spheres of E and F.

Under l2 everything has a closed form through principal angles. Under l1 and
linf the deviation is computed exactly by enumerating vertices of the
polyhedral unit ball (the distance to a subspace is convex, so its maximum
over a polytope sits at a vertex). The sphere-to-sphere distance is not
convex; it is bracketed from a grid on the sphere with a certified resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations, product
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (AmbientMismatch, IllConditionedSplitting, NormMismatch,
                     RankDeficientBasis, SeriesDivergence, TransversalityFailure)
from .norms import check_kind, operator_norm, vector_norm

RANK_CUTOFF = 1e-10
EQUALITY_TOL = 1e-9
SPHERE_SAMPLES = 4096
CONDITION_LIMIT = 1e12


def orthonormalize(vectors: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the column span, with positive R diagonal."""
    V = np.asarray(vectors, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[1] == 0:
        return V.copy()
    s = np.linalg.svd(V, compute_uv=False)
    if s[0] == 0 or s[-1] <= RANK_CUTOFF * s[0]:
        raise RankDeficientBasis(f"basis is rank deficient (singular values {s})")
    Q, R = np.linalg.qr(V)
    sign = np.where(np.diag(R) < 0, -1.0, 1.0)
    return Q * sign


@dataclass(frozen=True, eq=False)
class Subspace:
    """A linear subspace stored by an orthonormal (Euclidean) basis.

    The norm tag selects which vector norm the distance functions use.
    The zero subspace is representable (empty basis) for bookkeeping, but
    the sphere-based distances reject it.
    """

    basis: np.ndarray
    norm: str = "l2"

    @classmethod
    def span(cls, vectors, norm: str = "l2", orthonormal: bool = False) -> "Subspace":
        check_kind(norm)
        V = np.asarray(vectors, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        return cls(V.copy() if orthonormal else orthonormalize(V), norm)

    @classmethod
    def trivial(cls, ambient_dim: int, norm: str = "l2") -> "Subspace":
        return cls(np.zeros((ambient_dim, 0)), norm)

    @classmethod
    def whole(cls, ambient_dim: int, norm: str = "l2") -> "Subspace":
        return cls(np.eye(ambient_dim), norm)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    def projector(self) -> np.ndarray:
        """Orthogonal (Euclidean) projector onto the subspace."""
        return self.basis @ self.basis.T

    def with_norm(self, norm: str) -> "Subspace":
        return Subspace(self.basis, check_kind(norm))

    def image(self, T: np.ndarray) -> "Subspace":
        """The subspace ``T(E)``; T must be injective on E."""
        return Subspace.span(np.asarray(T) @ self.basis, self.norm)

    def to_json(self) -> dict:
        return {"ambient_dim": self.ambient_dim, "norm": self.norm,
                "columns": self.basis.T.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "Subspace":
        cols = np.array(data["columns"], dtype=float).reshape(-1, data["ambient_dim"])
        return cls.span(cols.T, data["norm"])

    def __repr__(self):
        return f"Subspace(dim={self.dim}, ambient={self.ambient_dim}, norm={self.norm})"


def span_sum(parts: Sequence[Subspace]) -> Subspace:
    """Sum of subspaces with independent bases."""
    norm = parts[0].norm
    return Subspace.span(np.hstack([p.basis for p in parts]), norm)


def _check_pair(E: Subspace, F: Subspace):
    if E.ambient_dim != F.ambient_dim:
        raise AmbientMismatch(f"ambient dimensions {E.ambient_dim} and {F.ambient_dim} differ")
    if E.norm != F.norm:
        raise NormMismatch(f"norms {E.norm} and {F.norm} differ")


def _require_nontrivial(*spaces):
    for S in spaces:
        if S.dim == 0:
            raise ValueError("sphere distances are undefined for the zero subspace")


# polyhedral norm machinery

def ball_vertex_coeffs(B: np.ndarray, kind: str) -> np.ndarray:
    """Coefficient vectors ``c`` (rows) such that the directions ``B c`` include
    every vertex of the unit ball of ``span(B)`` for the l1 or linf norm.

    Some returned directions may not be vertices; all are nonzero.
    """
    B = np.asarray(B, dtype=float)
    d, k = B.shape
    if k == 1:
        return np.array([[1.0]])
    if kind == "l1":
        rows = np.array(list(combinations(range(d), k - 1)))
        sub = B[rows]  # (nS, k-1, k)
        _, s, vh = np.linalg.svd(sub, full_matrices=True)
        keep = s[:, -1] > 1e-12 * np.maximum(s[:, 0], 1e-300)
        return vh[keep, -1, :]
    if kind == "linf":
        rows = np.array(list(combinations(range(d), k)))
        sub = B[rows]  # (nS, k, k)
        keep = np.linalg.cond(sub) < CONDITION_LIMIT
        inv = np.linalg.inv(sub[keep])
        signs = np.array(list(product((1.0, -1.0), repeat=k))).T  # (k, 2^k)
        signs = signs[:, signs[0] > 0]  # +/- symmetry
        c = inv @ signs  # (nS, k, 2^(k-1))
        return np.swapaxes(c, 1, 2).reshape(-1, k)
    raise NormMismatch(f"vertex enumeration needs l1 or linf, got {kind!r}")


def unit_vertices(B: np.ndarray, kind: str) -> np.ndarray:
    """Candidate vertex directions of the unit ball of span(B), normalized (rows)."""
    V = ball_vertex_coeffs(B, kind) @ B.T
    return V / vector_norm(V, kind)[:, None]


@lru_cache(maxsize=64)
def _linf_subsets(d: int, k: int) -> np.ndarray:
    return np.array(list(combinations(range(2 * d), k + 1)))


def distance_to_span(V: np.ndarray, B: np.ndarray, kind: str) -> np.ndarray:
    """Exact distances ``min_c ||v - B c||`` for the rows ``v`` of ``V``.

    l2 assumes ``B`` has orthonormal columns. l1 and linf enumerate the
    vertices of the underlying linear program: an l1 optimum interpolates
    ``k`` coordinates, an linf optimum has ``k + 1`` active constraints.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    B = np.asarray(B, dtype=float)
    d, k = B.shape
    if k == 0:
        return vector_norm(V, kind)
    if kind == "l2":
        R = V - (V @ B) @ B.T
        return vector_norm(R, "l2")
    if kind == "l1":
        rows = np.array(list(combinations(range(d), k)))
        sub = B[rows]
        keep = np.linalg.cond(sub) < CONDITION_LIMIT
        rows, sub = rows[keep], sub[keep]
        coef = np.linalg.solve(sub, V.T[rows])  # (nS, k, n)
        resid = V.T[None, :, :] - B[None] @ coef
        return np.min(np.sum(np.abs(resid), axis=1), axis=0)
    if kind == "linf":
        subsets = _linf_subsets(d, k)
        j = subsets % d
        sgn = np.where(subsets < d, 1.0, -1.0)
        M = np.concatenate([sgn[..., None] * B[j], np.ones(j.shape + (1,))], axis=-1)
        keep = np.abs(np.linalg.det(M)) > 1e-12
        M, j, sgn = M[keep], j[keep], sgn[keep]
        rhs = sgn[..., None] * V.T[j]  # (nS, k+1, n)
        sol = np.linalg.solve(M, rhs)
        coef = sol[:, :k, :]
        resid = V.T[None, :, :] - B[None] @ coef
        return np.min(np.max(np.abs(resid), axis=1), axis=0)
    raise NormMismatch(f"unknown norm {kind!r}")


# deviation, gap, Hausdorff distance

def deviation(E: Subspace, F: Subspace) -> float:
    """One-sided deviation ``sup_{v in S_E} dist(v, F)``."""
    _check_pair(E, F)
    if E.dim == 0:
        return 0.0
    if E.norm == "l2":
        R = E.basis - F.basis @ (F.basis.T @ E.basis)
        return float(min(1.0, np.linalg.norm(R, 2)))
    cands = unit_vertices(E.basis, E.norm)
    return float(np.max(distance_to_span(cands, F.basis, E.norm)))


def gap(E: Subspace, F: Subspace) -> float:
    """Symmetric gap ``max(delta(E, F), delta(F, E))``."""
    return max(deviation(E, F), deviation(F, E))


class Bracket(NamedTuple):
    value: float
    lower: float
    upper: float

    @property
    def resolution(self) -> float:
        return self.upper - self.lower


def _l2_sphere_distance(E: Subspace, F: Subspace) -> float:
    if E.dim > F.dim:
        return float(np.sqrt(2.0))
    sin = np.linalg.norm(E.basis - F.basis @ (F.basis.T @ E.basis), 2)
    cos = np.linalg.svd(F.basis.T @ E.basis, compute_uv=False)[-1]
    theta = np.arctan2(sin, cos)
    return float(2.0 * np.sin(theta / 2.0))


def sphere_grid(Q: np.ndarray, kind: str, target: int = SPHERE_SAMPLES):
    """Points covering the unit sphere of span(Q), with their covering radius.

    A uniform grid on the surface of the coefficient cube is mapped through Q
    and normalized. Every unit vector of the subspace lies within the returned
    resolution of some grid point.
    """
    d, k = Q.shape
    if k == 1:
        u = Q[:, 0] / vector_norm(Q[:, 0], kind)
        return np.stack([u, -u]), 0.0
    m = max(2, int((target / (2 * k)) ** (1.0 / (k - 1))))
    g = np.linspace(-1.0, 1.0, m)
    mesh = np.stack(np.meshgrid(*([g] * (k - 1)), indexing="ij"), axis=-1).reshape(-1, k - 1)
    faces = []
    for axis in range(k):
        for s in (1.0, -1.0):
            faces.append(np.insert(mesh, axis, s, axis=1))
    C = np.concatenate(faces)
    W = C @ Q.T
    W /= vector_norm(W, kind)[:, None]
    step = 2.0 / (m - 1)
    corners = np.array(list(product((1.0, -1.0), repeat=k)))
    spread = float(np.max(vector_norm(corners @ Q.T, kind)))  # ||Q||_{inf -> p}
    stretch = np.sqrt(d) if kind == "linf" else 1.0
    return W, spread * step * stretch


def _sampled_one_sided(SE, eta_E, SF, eta_F, kind):
    p = 1 if kind == "l1" else np.inf
    # grid points lie on a low-dimensional sphere; unbalanced, uncompacted trees query much faster there
    tree = cKDTree(SF, balanced_tree=False, compact_nodes=False)
    dist, _ = tree.query(SE, k=1, p=p)
    g = float(np.max(dist))
    return g, max(0.0, g - eta_F), g + eta_E


def hausdorff_bracket(E: Subspace, F: Subspace) -> Bracket:
    """Hausdorff distance between unit spheres with a certified bracket.

    Exact under l2 (``lower == upper``). Under l1/linf the value is the
    grid estimate and ``[lower, upper]`` contains the true distance.
    """
    _check_pair(E, F)
    _require_nontrivial(E, F)
    if E.norm == "l2":
        v = max(_l2_sphere_distance(E, F), _l2_sphere_distance(F, E))
        return Bracket(v, v, v)
    SE, eta_E = sphere_grid(E.basis, E.norm)
    SF, eta_F = sphere_grid(F.basis, F.norm)
    a = _sampled_one_sided(SE, eta_E, SF, eta_F, E.norm)
    b = _sampled_one_sided(SF, eta_F, SE, eta_E, E.norm)
    cap = 2.0
    return Bracket(max(a[0], b[0]), min(cap, max(a[1], b[1])), min(cap, max(a[2], b[2])))


def hausdorff_distance(E: Subspace, F: Subspace) -> float:
    """Hausdorff distance between the unit spheres of E and F."""
    return hausdorff_bracket(E, F).value


def certified_distance(E: Subspace, F: Subspace) -> float:
    """Upper end of the Hausdorff bracket; the value used when checking bounds."""
    return hausdorff_bracket(E, F).upper


# direct sums and projections

@dataclass(frozen=True, eq=False)
class DirectSum:
    parts: tuple
    ambient_dim: int
    condition: float

    @classmethod
    def of(cls, parts: Sequence[Subspace]) -> "DirectSum":
        parts = tuple(p for p in parts)
        d = parts[0].ambient_dim
        for p in parts:
            _check_pair(parts[0], p)
        dims = sum(p.dim for p in parts)
        if dims != d:
            raise AmbientMismatch(f"dimensions of the parts sum to {dims}, not {d}")
        cond = float(np.linalg.cond(np.hstack([p.basis for p in parts])))
        return cls(parts, d, cond)

    @property
    def norm(self) -> str:
        return self.parts[0].norm

    def to_json(self):
        return {"ambient_dim": self.ambient_dim, "condition": self.condition,
                "parts": [p.to_json() for p in self.parts]}


def projections(split: DirectSum) -> list:
    """All projections ``pi_i`` along the other parts."""
    if not np.isfinite(split.condition) or split.condition > CONDITION_LIMIT:
        raise IllConditionedSplitting(f"condition number {split.condition:.3g}")
    B = np.hstack([p.basis for p in split.parts])
    inv = np.linalg.inv(B)
    out, start = [], 0
    for p in split.parts:
        stop = start + p.dim
        out.append(p.basis @ inv[start:stop])
        start = stop
    return out


def projection(split: DirectSum, i: int) -> np.ndarray:
    """Projection onto ``split.parts[i]`` along the remaining parts."""
    if not 0 <= i < len(split.parts):
        raise IndexError(f"part index {i} out of range")
    return projections(split)[i]


# operators restricted to subspaces

def restricted_norm(T: np.ndarray, E: Subspace) -> float:
    """``sup_{u in S_E} ||T u|| / ||u||`` under the subspace's norm."""
    if E.dim == 0:
        return 0.0
    TQ = np.asarray(T, dtype=float) @ E.basis
    if E.norm == "l2":
        return float(np.linalg.svd(TQ, compute_uv=False)[0])
    C = ball_vertex_coeffs(E.basis, E.norm)
    num = vector_norm(C @ TQ.T, E.norm)
    den = vector_norm(C @ E.basis.T, E.norm)
    return float(np.max(num / den))


def restricted_conorm(T: np.ndarray, E: Subspace) -> float:
    """``inf_{u in S_E} ||T u|| / ||u||`` (zero when T is not injective on E)."""
    if E.dim == 0:
        return np.inf
    TQ = np.asarray(T, dtype=float) @ E.basis
    s = np.linalg.svd(TQ, compute_uv=False)
    if E.dim > TQ.shape[0] or s[-1] <= RANK_CUTOFF * max(s[0], 1e-300):
        return 0.0
    if E.norm == "l2":
        return float(s[-1])
    C = ball_vertex_coeffs(TQ, E.norm)  # vertices of the image ball
    num = vector_norm(C @ E.basis.T, E.norm)
    den = vector_norm(C @ TQ.T, E.norm)
    return float(1.0 / np.max(num / den))


def ratio_extremes(num_basis: np.ndarray, den_basis: np.ndarray, kind: str):
    """``sup_c ||N c|| / ||D c||`` and ``inf_c`` of the same ratio.

    ``D`` (d x k) must have full column rank. Used for cocycle growth on a
    subspace given its bases at the two ends of an orbit segment.
    """
    if kind == "l2":
        Qd, Rd = np.linalg.qr(den_basis)
        s = np.linalg.svd(num_basis @ np.linalg.inv(Rd), compute_uv=False)
        return float(s[0]), float(s[-1])
    C = ball_vertex_coeffs(den_basis, kind)
    sup = np.max(vector_norm(C @ num_basis.T, kind) / vector_norm(C @ den_basis.T, kind))
    C2 = ball_vertex_coeffs(num_basis, kind)
    inv_sup = np.max(vector_norm(C2 @ den_basis.T, kind) / vector_norm(C2 @ num_basis.T, kind))
    return float(sup), float(1.0 / inv_sup)


# complementation and graph operators

@dataclass(frozen=True)
class ComplementationCheck:
    hypothesis: bool
    conclusion: bool
    distance: float
    threshold: float

    @property
    def falsified(self) -> bool:
        return self.hypothesis and not self.conclusion


def is_complement(E: Subspace, F: Subspace) -> bool:
    if E.dim + F.dim != E.ambient_dim:
        return False
    s = np.linalg.svd(np.hstack([E.basis, F.basis]), compute_uv=False)
    return bool(s[-1] > RANK_CUTOFF * s[0])


def complementation_persists(E: Subspace, E_prime: Subspace, F: Subspace,
                             proj_norm: float | None = None) -> ComplementationCheck:
    """Check whether a perturbation ``E'`` of E still complements F.

    The hypothesis is ``d(E, E') <= 1 / ||pi_{E//F}||`` (using the certified
    upper end of the distance); the conclusion is that ``E' + F`` is direct
    and spans the ambient space. A true hypothesis with a false conclusion
    flags a defect.
    """
    _check_pair(E, F)
    _check_pair(E, E_prime)
    if proj_norm is None:
        pi = projection(DirectSum.of([E, F]), 0)
        proj_norm = float(operator_norm(pi, E.norm))
    dist = certified_distance(E, E_prime)
    threshold = 1.0 / proj_norm
    return ComplementationCheck(dist <= threshold, is_complement(E_prime, F), dist, threshold)


@dataclass(frozen=True, eq=False)
class GraphOperator:
    """Linear map ``L: domain -> codomain`` whose graph over ``domain`` is ``target``.

    ``matrix`` holds coordinates in the stored bases of domain and codomain;
    ``ambient`` is the d x d operator ``L o pi`` where ``pi`` projects onto
    the domain along the codomain.
    """

    domain: Subspace
    codomain: Subspace
    target: Subspace
    matrix: np.ndarray
    ambient: np.ndarray
    norm_value: float
    graph_residual: float

    def apply(self, u):
        return self.ambient @ np.asarray(u, dtype=float)


def graph_operator(Eplus_x: Subspace, Eminus_x: Subspace, Eplus_y: Subspace) -> GraphOperator:
    """The operator ``L`` with ``Eplus_y = {u + L u : u in Eplus_x}``, ``L`` valued in ``Eminus_x``."""
    _check_pair(Eplus_x, Eminus_x)
    _check_pair(Eplus_x, Eplus_y)
    P, M, Y = Eplus_x.basis, Eminus_x.basis, Eplus_y.basis
    p = P.shape[1]
    if Y.shape[1] != p or p + M.shape[1] != P.shape[0]:
        raise AmbientMismatch("graph operator needs complementary subspaces of matching dimension")
    B = np.hstack([P, M])
    if np.linalg.cond(B) > CONDITION_LIMIT:
        raise IllConditionedSplitting("Eplus_x and Eminus_x are not complementary")
    inv = np.linalg.inv(B)
    coef = inv @ Y
    alpha, beta = coef[:p], coef[p:]
    s = np.linalg.svd(alpha, compute_uv=False)
    if s[-1] <= RANK_CUTOFF:
        raise TransversalityFailure("Eplus_y is not a graph over Eplus_x")
    Lc = beta @ np.linalg.inv(alpha)
    ambient = M @ Lc @ inv[:p]
    norm_value = restricted_norm(ambient, Eplus_x)
    graph = Subspace.span(P + M @ Lc, Eplus_x.norm)
    resid = hausdorff_distance(graph.with_norm("l2"), Eplus_y.with_norm("l2"))
    return GraphOperator(Eplus_x, Eminus_x, Eplus_y, Lc, ambient, norm_value, resid)


def neumann_series(L: np.ndarray, norm: str = "l2", max_terms: int = 100000) -> np.ndarray:
    """``sum_{k>=1} (-L)^k``, so that ``(I + L)^-1 = I + result``."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    nrm = float(operator_norm(L, norm))
    if nrm >= 1.0:
        raise SeriesDivergence(f"||L|| = {nrm:.6g} >= 1")
    return _neumann_sum(L, max_terms)


def _neumann_sum(L, max_terms=100000):
    total = np.zeros_like(L)
    term = np.eye(L.shape[0])
    for _ in range(max_terms):
        term = -L @ term
        total = total + term
        if np.max(np.abs(term)) <= 1e-18 * max(1.0, np.max(np.abs(total))):
            return total
    raise SeriesDivergence("Neumann series did not converge")


@dataclass(frozen=True, eq=False)
class NeumannInverse:
    """``Phi^-1 = I + Lhat`` for ``Phi = I + L`` together with its audits."""

    operator: GraphOperator
    phi_inverse: np.ndarray
    composition_residual: float
    norm_bound: float
    bound_holds: bool


def neumann_inverse(L: GraphOperator) -> NeumannInverse:
    """Invert ``Phi = I + L`` by its Neumann series.

    The returned operator ``Lhat`` maps ``L.target`` into ``L.codomain`` and its
    graph over ``L.target`` is ``L.domain``.
    """
    if L.norm_value >= 1.0:
        raise SeriesDivergence(f"||L|| = {L.norm_value:.6g} >= 1")
    Lhat_amb = _neumann_sum(L.ambient)
    d = L.ambient.shape[0]
    resid = float(np.max(np.abs((np.eye(d) + L.ambient) @ (np.eye(d) + Lhat_amb) - np.eye(d))))
    target = L.target
    coords = L.codomain.basis.T @ (Lhat_amb @ target.basis)
    value = restricted_norm(Lhat_amb, target)
    bound = L.norm_value / (1.0 - L.norm_value)
    graph = Subspace.span(target.basis + Lhat_amb @ target.basis, "l2")
    g_resid = hausdorff_distance(graph, L.domain.with_norm("l2"))
    op = GraphOperator(target, L.codomain, L.domain, coords, Lhat_amb, value, g_resid)
    return NeumannInverse(op, np.eye(d) + Lhat_amb, resid, bound,
                          bool(value <= bound * (1 + 1e-9) + 1e-15))
