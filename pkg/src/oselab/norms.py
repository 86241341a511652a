"""Vector and induced operator norms on R^d."""

import numpy as np

from .errors import NormMismatch

NORM_KINDS = ("l1", "l2", "linf")


def check_kind(kind):
    if kind not in NORM_KINDS:
        raise NormMismatch(f"unknown norm {kind!r}; expected one of {NORM_KINDS}")
    return kind


def vector_norm(v, kind="l2", axis=-1):
    """Norm of ``v`` along ``axis`` (stacks allowed)."""
    v = np.asarray(v, dtype=float)
    if kind == "l2":
        return np.sqrt(np.sum(v * v, axis=axis))
    if kind == "l1":
        return np.sum(np.abs(v), axis=axis)
    if kind == "linf":
        if v.shape[axis] == 0:
            return np.zeros(np.delete(v.shape, axis % v.ndim))
        return np.max(np.abs(v), axis=axis)
    raise NormMismatch(f"unknown norm {kind!r}")


def operator_norm(T, kind="l2"):
    """Induced operator norm of ``T``; the last two axes index the matrix.

    l2 uses the largest singular value, l1 the largest column sum and
    linf the largest row sum.
    """
    T = np.asarray(T, dtype=float)
    if T.ndim < 2:
        return np.abs(T) if kind in NORM_KINDS else check_kind(kind)
    if T.shape[-1] == 0 or T.shape[-2] == 0:
        return np.zeros(T.shape[:-2])
    if kind == "l2":
        return np.linalg.svd(T, compute_uv=False)[..., 0]
    if kind == "l1":
        return np.max(np.sum(np.abs(T), axis=-2), axis=-1)
    if kind == "linf":
        return np.max(np.sum(np.abs(T), axis=-1), axis=-1)
    raise NormMismatch(f"unknown norm {kind!r}")


def equivalence_factor(kind, dim):
    """Constant c with ``||T||_kind <= c * ||T||_2`` for d x d matrices."""
    return 1.0 if kind == "l2" else float(np.sqrt(dim))
