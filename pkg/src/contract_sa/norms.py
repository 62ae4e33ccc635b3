"""Vector norms, smoothness constants, and tight norm-equivalence constants.

Three norm families appear throughout the bound calculus:

* ``lp(p)`` -- the l_p norm with ``p >= 2`` (``lp(2)`` is the Euclidean norm),
* ``linf()`` -- the sup norm,
* ``weighted_l2(w)`` -- ``sqrt(sum_i w_i x_i^2)`` with strictly positive
  weights (typically a stationary distribution, in which case they sum to 1).

Each norm knows the smoothness constant of half its square and, for the
analytically tight pairs used by the bound calculus, the equivalence
constants relating it to another norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Norm",
    "lp",
    "l2",
    "linf",
    "weighted_l2",
    "eval_norm",
    "grad_half_sq",
    "smoothness_constant",
    "EquivalenceConstants",
    "equivalence_constants",
]

_WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True)
class Norm:
    """A norm tag: ``kind`` in {"lp", "linf", "weighted_l2"}.

    ``p`` is set for kind "lp"; ``weights`` (a read-only 1-D array) for kind
    "weighted_l2". Instances are constructed via :func:`lp`, :func:`linf`,
    :func:`weighted_l2`.
    """

    kind: str
    p: float | None = None
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind == "lp":
            if self.p is None or not np.isfinite(self.p) or self.p < 2:
                raise ValueError(f"lp norm requires finite p >= 2, got p={self.p}")
        elif self.kind == "linf":
            if self.p is not None or self.weights is not None:
                raise ValueError("linf norm takes no parameters")
        elif self.kind == "weighted_l2":
            w = self.weights
            if w is None or w.ndim != 1 or w.size == 0 or not np.all(w > 0):
                raise ValueError("weighted_l2 requires a 1-D array of strictly positive weights")
        else:
            raise ValueError(f"unknown norm kind {self.kind!r}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Norm):
            return NotImplemented
        if self.kind != other.kind:
            return False
        if self.kind == "lp":
            return self.p == other.p
        if self.kind == "weighted_l2":
            return (
                self.weights.shape == other.weights.shape
                and bool(np.array_equal(self.weights, other.weights))
            )
        return True

    def __hash__(self) -> int:
        if self.kind == "weighted_l2":
            return hash((self.kind, self.weights.tobytes()))
        return hash((self.kind, self.p))

    def label(self) -> str:
        if self.kind == "lp":
            return f"l{self.p:g}"
        if self.kind == "linf":
            return "linf"
        return f"weighted_l2(d={self.weights.size})"


def lp(p: float) -> Norm:
    """The l_p norm, p >= 2."""
    return Norm(kind="lp", p=float(p))


def l2() -> Norm:
    """The Euclidean norm (l_p with p = 2)."""
    return lp(2.0)


def linf() -> Norm:
    """The sup norm."""
    return Norm(kind="linf")


def weighted_l2(weights: np.ndarray) -> Norm:
    """The weighted Euclidean norm sqrt(sum_i w_i x_i^2), w_i > 0."""
    w = np.asarray(weights, dtype=float).copy()
    w.setflags(write=False)
    return Norm(kind="weighted_l2", weights=w)


def _check_dim(norm: Norm, x: np.ndarray) -> None:
    if norm.kind == "weighted_l2" and x.shape[-1] != norm.weights.size:
        raise ValueError(
            f"dimension mismatch: weighted_l2 has {norm.weights.size} weights, "
            f"vector has last dimension {x.shape[-1]}"
        )


def eval_norm(norm: Norm, x: np.ndarray) -> np.ndarray | float:
    """Evaluate ``norm`` along the last axis of ``x``.

    Returns a scalar for a 1-D input, an array of leading shape otherwise.
    The l_p branch uses the max-factored form m * ||x/m||_p, which is exact
    and avoids overflow for large p.
    """
    x = np.asarray(x, dtype=float)
    _check_dim(norm, x)
    if norm.kind == "linf":
        out = np.max(np.abs(x), axis=-1) if x.shape[-1] else np.zeros(x.shape[:-1])
    elif norm.kind == "weighted_l2":
        out = np.sqrt(np.sum(norm.weights * x * x, axis=-1))
    else:
        p = norm.p
        if p == 2.0:
            out = np.sqrt(np.sum(x * x, axis=-1))
        else:
            a = np.abs(x)
            m = np.max(a, axis=-1, keepdims=True)
            safe = np.where(m > 0, m, 1.0)
            out = np.squeeze(safe, -1) * np.sum((a / safe) ** p, axis=-1) ** (1.0 / p)
            out = np.where(np.squeeze(m, -1) > 0, out, 0.0)
    return float(out) if out.ndim == 0 else out


def grad_half_sq(norm: Norm, x: np.ndarray) -> np.ndarray:
    """Gradient of x -> 1/2 ||x||^2 (zero at the origin).

    For l_p this is ||x||_p^{2-p} sign(x) |x|^{p-1}, computed in the
    ratio-stable form ||x||_p * (|x|/||x||_p)^{p-1} sign(x); for weighted l_2
    it is w * x. The sup norm is not differentiable and raises ValueError.
    """
    x = np.asarray(x, dtype=float)
    _check_dim(norm, x)
    if norm.kind == "linf":
        raise ValueError("half the squared sup norm is not differentiable")
    if norm.kind == "weighted_l2":
        return norm.weights * x
    p = norm.p
    if p == 2.0:
        return x.copy()
    n = eval_norm(norm, x)
    n = np.asarray(n, dtype=float)[..., None]
    safe = np.where(n > 0, n, 1.0)
    g = safe * np.sign(x) * (np.abs(x) / safe) ** (p - 1.0)
    return np.where(n > 0, g, 0.0)


def smoothness_constant(norm: Norm) -> float:
    """Smoothness constant (w.r.t. the norm itself) of x -> 1/2 ||x||^2.

    l_p gives p - 1, weighted l_2 gives 1; half the squared sup norm is not
    smooth and raises ValueError.
    """
    if norm.kind == "lp":
        return norm.p - 1.0
    if norm.kind == "weighted_l2":
        return 1.0
    raise ValueError("half the squared sup norm is not smooth; pick an l_p or weighted l_2 smoothing norm")


@dataclass(frozen=True)
class EquivalenceConstants:
    """Tight constants with lower * ||x||_from <= ||x||_to <= upper * ||x||_from."""

    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not (0.0 < self.lower <= 1.0 <= self.upper):
            raise ValueError(
                f"equivalence constants must satisfy 0 < lower <= 1 <= upper, got ({self.lower}, {self.upper})"
            )


def _is_prob_weights(w: np.ndarray) -> bool:
    return abs(float(np.sum(w)) - 1.0) <= _WEIGHT_SUM_TOL


def equivalence_constants(frm: Norm, to: Norm, dim: int) -> EquivalenceConstants:
    """Tight equivalence constants between two norms in dimension ``dim``.

    Supported pairs: identical norms; linf <-> lp; linf <-> weighted_l2 with
    probability weights. Anything else raises ValueError (constants are only
    emitted when the tight analytic values are known).
    """
    if dim < 1:
        raise ValueError(f"dimension must be >= 1, got {dim}")
    if frm.kind == "weighted_l2" and frm.weights.size != dim:
        raise ValueError("weighted_l2 'from' norm has wrong dimension")
    if to.kind == "weighted_l2" and to.weights.size != dim:
        raise ValueError("weighted_l2 'to' norm has wrong dimension")
    if frm == to:
        return EquivalenceConstants(1.0, 1.0)
    if frm.kind == "linf" and to.kind == "lp":
        return EquivalenceConstants(1.0, dim ** (1.0 / to.p))
    if frm.kind == "lp" and to.kind == "linf":
        return EquivalenceConstants(dim ** (-1.0 / frm.p), 1.0)
    if frm.kind == "linf" and to.kind == "weighted_l2":
        if not _is_prob_weights(to.weights):
            raise ValueError("linf <-> weighted_l2 constants require weights summing to 1")
        return EquivalenceConstants(float(np.sqrt(np.min(to.weights))), 1.0)
    if frm.kind == "weighted_l2" and to.kind == "linf":
        if not _is_prob_weights(frm.weights):
            raise ValueError("linf <-> weighted_l2 constants require weights summing to 1")
        return EquivalenceConstants(1.0, float(1.0 / np.sqrt(np.min(frm.weights))))
    raise ValueError(
        f"no tight equivalence constants implemented for {frm.label()} -> {to.label()}"
    )
