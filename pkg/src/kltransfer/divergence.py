"""Exact KL-divergence objectives and gradients over finite categorical distributions.

Conventions used throughout the package:

* natural log everywhere; entropies are in nats
* ``0 * log 0 == 0``
* "forward" means D_KL(teacher || learner); "backward" means
  D_KL(learner || teacher).  The learner is always ``p``, the teacher ``q``.
* the per-index gradients of the two orders with respect to p(y) are the
  Lagrangian-relaxed forms ``1 - q/p`` (forward) and ``log(p/q)`` (backward)

Top-k truncation restricts a divergence sum to the k indices with the
highest learner probability (ties broken by lowest index) and discards the
rest; the truncated mass is never renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, SupportMismatchError, ZeroProbabilityError

__all__ = [
    "Categorical",
    "DivergenceMode",
    "FORWARD",
    "BACKWARD",
    "TruncationSpec",
    "softmax",
    "entropy",
    "divergence",
    "truncated_divergence",
    "grad_wrt_p",
    "grad_wrt_logits",
    "topk_indices",
    "entropy_rows",
    "softmax_rows",
    "grad_wrt_logits_rows",
]

_SUM_TOL = 1e-9


def _as_prob_vector(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("probability vector must be 1-D and nonempty")
    return arr


@dataclass(frozen=True)
class Categorical:
    """A finite probability distribution over token/action ids.

    Entries must be nonnegative, finite, and sum to 1 within 1e-9.
    """

    probs: np.ndarray

    def __init__(self, probs):
        arr = _as_prob_vector(probs)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("probabilities must be finite")
        if np.any(arr < 0):
            raise ValueError(f"negative probability at index {int(np.argmin(arr))}")
        total = float(arr.sum())
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        arr.flags.writeable = False
        object.__setattr__(self, "probs", arr)

    @property
    def support_size(self) -> int:
        return int(self.probs.shape[0])

    def __len__(self) -> int:
        return self.support_size


@dataclass(frozen=True)
class DivergenceMode:
    """Which KL order to use: forward, backward, or their weighted mixture.

    ``jsd(w)`` is the mixture ``w * forward + (1 - w) * backward``; weight 0.5
    gives the symmetric half/half blend used for the KD/KA comparison.
    """

    kind: str
    weight: float = field(default=0.5)

    def __post_init__(self):
        if self.kind not in ("forward", "backward", "jsd"):
            raise ValueError(f"unknown divergence mode {self.kind!r}")
        if self.kind == "jsd" and not 0.0 <= self.weight <= 1.0:
            raise ValueError("jsd weight must lie in [0, 1]")

    @classmethod
    def jsd(cls, weight: float = 0.5) -> "DivergenceMode":
        return cls("jsd", float(weight))

    def coefficients(self) -> tuple[float, float]:
        """(forward share, backward share) of the objective."""
        if self.kind == "forward":
            return 1.0, 0.0
        if self.kind == "backward":
            return 0.0, 1.0
        return self.weight, 1.0 - self.weight


FORWARD = DivergenceMode("forward")
BACKWARD = DivergenceMode("backward")


@dataclass(frozen=True)
class TruncationSpec:
    """Restrict a divergence sum to the learner's top-k indices."""

    k: int
    by: str = "topk_of_learner"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.by != "topk_of_learner":
            raise ValueError(f"unknown truncation rule {self.by!r}")


def softmax(logits) -> Categorical:
    """Stabilized softmax of an unconstrained logit vector."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("logits must be a nonempty 1-D vector")
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("logits must be finite")
    shifted = z - z.max()
    e = np.exp(shifted)
    return Categorical(e / e.sum())


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise stabilized softmax for a (T, V) logit matrix."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def entropy(p: Categorical) -> float:
    """Shannon entropy in nats; lies in [0, ln(support_size)]."""
    return float(entropy_rows(p.probs[None, :])[0])


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    """Row-wise entropy of a (T, V) matrix of distributions."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0.0, probs * np.log(probs), 0.0)
    return np.maximum(-terms.sum(axis=1), 0.0)


def topk_indices(probs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, ties broken by lowest index.

    The result is sorted ascending by index so the selected set has a
    canonical order.
    """
    p = np.asarray(probs, dtype=np.float64)
    if not 1 <= k <= p.shape[0]:
        raise ValueError(f"k={k} out of range for support size {p.shape[0]}")
    order = np.argsort(-p, kind="stable")  # stable: lowest index wins ties
    return np.sort(order[:k])


def _check_same_support(p: Categorical, q: Categorical) -> None:
    if p.support_size != q.support_size:
        raise SupportMismatchError(
            f"support sizes differ: learner {p.support_size}, teacher {q.support_size}"
        )


def _kl_terms(top: np.ndarray, bottom: np.ndarray, what: str) -> np.ndarray:
    """Elementwise top*log(top/bottom) with the 0*log0 convention.

    Raises when an index has top > 0 but bottom == 0 (the order makes that
    probability mandatory).
    """
    mask = top > 0.0
    bad = mask & (bottom <= 0.0)
    if np.any(bad):
        raise ZeroProbabilityError(
            f"{what} must be positive where the other side has mass",
            int(np.argmax(bad)),
        )
    out = np.zeros_like(top)
    out[mask] = top[mask] * np.log(top[mask] / bottom[mask])
    return out


def _directed_kl(top: np.ndarray, bottom: np.ndarray, what: str) -> float:
    total = float(_kl_terms(top, bottom, what).sum())
    # tiny negative rounding residue from near-identical inputs snaps to zero
    if -1e-12 < total < 0.0:
        return 0.0
    return total


def divergence(learner: Categorical, teacher: Categorical, mode: DivergenceMode) -> float:
    """KL divergence between learner p and teacher q in the requested order.

    Forward is D_KL(q || p), backward is D_KL(p || q), and jsd(w) mixes the
    two.  Nonnegative; zero iff the distributions coincide.
    """
    _check_same_support(learner, teacher)
    wf, wb = mode.coefficients()
    total = 0.0
    if wf:
        total += wf * _directed_kl(teacher.probs, learner.probs, "learner probability")
    if wb:
        total += wb * _directed_kl(learner.probs, teacher.probs, "teacher probability")
    return total


def truncated_divergence(
    learner: Categorical,
    teacher: Categorical,
    trunc: TruncationSpec,
    mode: DivergenceMode,
) -> float:
    """Divergence sum restricted to the learner's top-k indices.

    Only the selected indices are evaluated; the remaining mass is discarded
    without renormalization, so the result may be negative.  Forward order
    uses the same learner-top-k index set.
    """
    _check_same_support(learner, teacher)
    if trunc.k > learner.support_size:
        raise ValueError(f"k={trunc.k} exceeds support size {learner.support_size}")
    idx = topk_indices(learner.probs, trunc.k)
    p, q = learner.probs[idx], teacher.probs[idx]
    wf, wb = mode.coefficients()
    total = 0.0
    if wf:
        total += wf * float(_kl_terms(q, p, "learner probability").sum())
    if wb:
        total += wb * float(_kl_terms(p, q, "teacher probability").sum())
    return total


def _check_strictly_positive(p: np.ndarray, q: np.ndarray) -> None:
    for name, arr in (("learner", p), ("teacher", q)):
        zero = arr <= 0.0
        if np.any(zero):
            raise ZeroProbabilityError(
                f"{name} probability must be strictly positive for gradients",
                int(np.argmax(zero)),
            )


def _relaxed_grads(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-index gradient forms of the two orders: (1 - q/p, log(p/q))."""
    ratio = q / p
    return 1.0 - ratio, -np.log(ratio)


def grad_wrt_p(learner: Categorical, teacher: Categorical, mode: DivergenceMode) -> np.ndarray:
    """Per-index derivative of the divergence with respect to p(y).

    These are the Lagrangian-relaxed forms: forward gives ``1 - q/p``,
    backward gives ``log(p/q)``; jsd(w) returns their weighted sum.  Both
    share the sign of p - q, so the two orders always push each index the
    same way.
    """
    _check_same_support(learner, teacher)
    _check_strictly_positive(learner.probs, teacher.probs)
    g_fwd, g_bwd = _relaxed_grads(learner.probs, teacher.probs)
    wf, wb = mode.coefficients()
    return wf * g_fwd + wb * g_bwd


def grad_wrt_logits(
    logits,
    teacher: Categorical,
    mode: DivergenceMode,
    trunc: TruncationSpec | None = None,
) -> np.ndarray:
    """Gradient of the (truncated) divergence with respect to the logits.

    The learner is softmax(logits).  The top-k index set, when truncation is
    requested, is held fixed at the current point: the per-index gradient
    forms are zeroed outside the set before chaining through the softmax
    Jacobian.  With k equal to the support size (or no truncation) this is
    the exact divergence gradient.
    """
    p_cat = softmax(logits)
    teacher_arr = np.asarray(teacher.probs, dtype=np.float64)
    if p_cat.support_size != teacher.support_size:
        raise SupportMismatchError(
            f"support sizes differ: logits {p_cat.support_size}, teacher {teacher.support_size}"
        )
    p = p_cat.probs
    _check_strictly_positive(p, teacher_arr)
    wf, wb = mode.coefficients()
    g_fwd, g_bwd = _relaxed_grads(p, teacher_arr)
    g = wf * g_fwd + wb * g_bwd
    if trunc is not None:
        if trunc.k > p.shape[0]:
            raise ValueError(f"k={trunc.k} exceeds support size {p.shape[0]}")
        if trunc.k < p.shape[0]:
            keep = topk_indices(p, trunc.k)
            masked = np.zeros_like(g)
            masked[keep] = g[keep]
            g = masked
    return p * g - p * float(np.dot(p, g))


def grad_wrt_logits_rows(
    probs: np.ndarray,
    teacher_rows: np.ndarray,
    mode: DivergenceMode,
    k: int | None = None,
) -> np.ndarray:
    """Row-wise logit gradients for (T, V) learner/teacher distribution pairs.

    ``probs`` must already be the softmax of the logits the gradient is taken
    with respect to.  Semantics match :func:`grad_wrt_logits`; used by the
    training hot path.
    """
    wf, wb = mode.coefficients()
    ratio = teacher_rows / probs
    g = np.zeros_like(probs)
    if wf:
        g += wf * (1.0 - ratio)
    if wb:
        g -= wb * np.log(ratio)
    if k is not None and k < probs.shape[1]:
        # stable argsort per row keeps the lowest-index tie-break
        order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
        masked = np.zeros_like(g)
        np.put_along_axis(masked, order, np.take_along_axis(g, order, axis=1), axis=1)
        g = masked
    inner = np.einsum("tv,tv->t", probs, g)
    return probs * (g - inner[:, None])
