"""Partially observed four-action task: truncated top-k KL descent.

A single softmax layer is trained against a fixed teacher where only the
learner's current top-k entries enter the divergence sum.  Forward order
fits the observed entries quickly and leaves the rest wherever the
truncation transient pushed them; backward order keeps re-selecting which
entries to fit and ends closer to the teacher on the unobserved tail.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .divergence import (
    Categorical,
    DivergenceMode,
    TruncationSpec,
    divergence,
    grad_wrt_logits,
    softmax,
    topk_indices,
    truncated_divergence,
)
from .errors import NumericalDivergenceError, ZeroProbabilityError

__all__ = ["ToyConfig", "ToyTrace", "OrderComparison", "run_toy", "compare_orders"]

DEFAULT_TEACHER = (0.4, 0.3, 0.2, 0.1)
TOLERANCE_BAND = 0.02


@dataclass(frozen=True)
class ToyConfig:
    """Configuration of one truncated-KL descent run.

    init is "uniform" (all-zero logits) or "random_logits" (gaussian logits
    scaled by init_scale, drawn from the seed).
    """

    mode: DivergenceMode
    teacher: tuple[float, ...] = DEFAULT_TEACHER
    k: int = 2
    learning_rate: float = 0.5
    epochs: int = 500
    seed: int = 0
    init: str = "uniform"
    init_scale: float = 1.0

    def __post_init__(self):
        probs = Categorical(np.asarray(self.teacher))  # validates
        if not 1 <= self.k <= probs.support_size:
            raise ValueError(f"k={self.k} out of range for teacher support")
        if self.learning_rate <= 0 or self.epochs < 1:
            raise ValueError("learning_rate must be > 0 and epochs >= 1")
        if self.init not in ("uniform", "random_logits"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class ToyTrace:
    """Per-epoch states; entry 0 is the initial state, so length epochs + 1."""

    mode: DivergenceMode
    seed: int
    epochs: list[int] = field(default_factory=list)
    probs: list[np.ndarray] = field(default_factory=list)
    truncated_losses: list[float] = field(default_factory=list)
    full_losses: list[float] = field(default_factory=list)
    topk_sets: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def final_probs(self) -> np.ndarray:
        return self.probs[-1]

    def to_csv(self, path) -> None:
        """Columns: epoch,p0..p{n-1},truncated_loss,full_loss,topk."""
        n = self.probs[0].shape[0]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch"] + [f"p{i}" for i in range(n)]
                            + ["truncated_loss", "full_loss", "topk"])
            for i, epoch in enumerate(self.epochs):
                writer.writerow([epoch] + [repr(float(v)) for v in self.probs[i]]
                                + [repr(self.truncated_losses[i]),
                                   repr(self.full_losses[i]),
                                   ";".join(str(j) for j in self.topk_sets[i])])


def _initial_logits(config: ToyConfig, dim: int) -> np.ndarray:
    if config.init == "uniform":
        return np.zeros(dim)
    rng = np.random.default_rng(config.seed)
    return rng.normal(0.0, config.init_scale, size=dim)


def run_toy(config: ToyConfig) -> ToyTrace:
    """Full-batch gradient descent on the logits of a single softmax layer.

    Deterministic for a fixed config; the trace records the optimized
    truncated loss plus the untruncated loss for monitoring.
    """
    teacher = Categorical(np.asarray(config.teacher))
    trunc = TruncationSpec(config.k)
    logits = _initial_logits(config, teacher.support_size)
    trace = ToyTrace(mode=config.mode, seed=config.seed)

    def record(epoch: int, z: np.ndarray) -> None:
        p = softmax(z)
        trace.epochs.append(epoch)
        trace.probs.append(p.probs)
        trace.truncated_losses.append(truncated_divergence(p, teacher, trunc, config.mode))
        trace.full_losses.append(divergence(p, teacher, config.mode))
        trace.topk_sets.append(tuple(int(i) for i in topk_indices(p.probs, config.k)))

    record(0, logits)
    for epoch in range(1, config.epochs + 1):
        try:
            grad = grad_wrt_logits(logits, teacher, config.mode, trunc)
        except ZeroProbabilityError as exc:  # softmax underflowed to a hard 0
            raise NumericalDivergenceError(f"learner collapsed ({exc})", epoch) from exc
        logits = logits - config.learning_rate * grad
        if not np.all(np.isfinite(logits)):
            raise NumericalDivergenceError("logits became non-finite", epoch)
        record(epoch, logits)
    return trace


def _first_entry_epochs(trace: ToyTrace, teacher: np.ndarray) -> list[int | None]:
    """Epoch at which each p_i first enters the +/-0.02 band around q_i."""
    n = teacher.shape[0]
    out: list[int | None] = [None] * n
    for i, probs in enumerate(trace.probs):
        for j in range(n):
            if out[j] is None and abs(probs[j] - teacher[j]) <= TOLERANCE_BAND:
                out[j] = trace.epochs[i]
    return out


def _topk_change_epochs(trace: ToyTrace) -> list[int]:
    changes = []
    for i in range(1, len(trace.topk_sets)):
        if trace.topk_sets[i] != trace.topk_sets[i - 1]:
            changes.append(trace.epochs[i])
    return changes


@dataclass(frozen=True)
class OrderComparison:
    forward: ToyTrace
    backward: ToyTrace
    forward_entry_epochs: tuple
    backward_entry_epochs: tuple
    forward_topk_changes: tuple[int, ...]
    backward_topk_changes: tuple[int, ...]
    forward_final_distances: tuple[float, ...]
    backward_final_distances: tuple[float, ...]

    def to_json(self, path=None) -> str:
        payload = json.dumps({
            "forward_entry_epochs": list(self.forward_entry_epochs),
            "backward_entry_epochs": list(self.backward_entry_epochs),
            "forward_topk_changes": list(self.forward_topk_changes),
            "backward_topk_changes": list(self.backward_topk_changes),
            "forward_final_distances": list(self.forward_final_distances),
            "backward_final_distances": list(self.backward_final_distances),
            "forward_final_truncated_loss": self.forward.truncated_losses[-1],
            "backward_final_truncated_loss": self.backward.truncated_losses[-1],
        })
        if path is not None:
            with open(path, "w") as fh:
                fh.write(payload)
        return payload


def compare_orders(base: ToyConfig) -> OrderComparison:
    """Run both orders from identical initialization and summarize.

    Reports when each p_i first enters the tolerance band around q_i, when
    the top-k selection changed (backward's exploration events), and the
    final per-index distances.
    """
    teacher = np.asarray(base.teacher)
    fwd = run_toy(replace(base, mode=DivergenceMode("forward")))
    bwd = run_toy(replace(base, mode=DivergenceMode("backward")))
    return OrderComparison(
        forward=fwd,
        backward=bwd,
        forward_entry_epochs=tuple(_first_entry_epochs(fwd, teacher)),
        backward_entry_epochs=tuple(_first_entry_epochs(bwd, teacher)),
        forward_topk_changes=tuple(_topk_change_epochs(fwd)),
        backward_topk_changes=tuple(_topk_change_epochs(bwd)),
        forward_final_distances=tuple(float(abs(v)) for v in fwd.final_probs - teacher),
        backward_final_distances=tuple(float(abs(v)) for v in bwd.final_probs - teacher),
    )
