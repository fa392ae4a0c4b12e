"""Cross-entropy pre-training and teacher-guided fine-tuning.

Fine-tuning minimizes (1 - lambda) * L_NLL + lambda * sum_t D_KL between the
learner's and the (frozen) teacher's per-position token distributions, both
conditioned on the reference prefix with their own hidden states.  Forward
order is distillation (teacher tells the learner what to produce); backward
order is acquisition (the learner proposes, the teacher scores).  The
expectation over the vocabulary is exact; nothing is sampled.

Losses and gradients are normalized per token so the learning rate is
decoupled from sequence length.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .divergence import (
    DivergenceMode,
    TruncationSpec,
    entropy_rows,
    grad_wrt_logits_rows,
    topk_indices,
)
from .errors import NumericalDivergenceError, SupportMismatchError, ZeroProbabilityError
from .seq.model import ModelParams, SentencePair, backward_pass, forward_pass

__all__ = [
    "TrainConfig",
    "MetricsLog",
    "ModelTeacher",
    "Adam",
    "nll_loss_and_grad",
    "transfer_loss",
    "ce_pretrain",
    "finetune",
    "select_probes",
    "probe_snapshot",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and objective settings for pre-training / fine-tuning."""

    mode: DivergenceMode = DivergenceMode("backward")
    lambda_weight: float = 0.5
    topk: TruncationSpec | None = None
    learning_rate: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.98)
    adam_eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    pretrain_epochs: int = 20
    checkpoint_every: int = 0  # 0 disables checkpointing

    def __post_init__(self):
        if not 0.0 <= self.lambda_weight <= 1.0:
            raise ValueError("lambda_weight must lie in [0, 1]")
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad optimizer settings")


@dataclass
class MetricsLog:
    """Per-epoch training records; serializable as JSON lines and CSV."""

    records: list[dict] = field(default_factory=list)

    _CSV_COLUMNS = ("epoch", "nll_loss", "transfer_loss",
                    "mean_position_entropy", "validation_score")

    def append(self, **fields) -> None:
        self.records.append(fields)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for record in self.records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def to_csv(self, path) -> None:
        """Scalar columns only; top-k probe sets live in the JSONL form."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self._CSV_COLUMNS)
            for record in self.records:
                row = []
                for col in self._CSV_COLUMNS:
                    value = record.get(col)
                    if value is None:
                        row.append("")
                    elif col == "epoch":
                        row.append(value)
                    else:
                        row.append(repr(value))
                writer.writerow(row)


class ModelTeacher:
    """Frozen model wrapper exposing per-position distributions."""

    def __init__(self, params: ModelParams):
        self.params = params

    def token_dists(self, pair: SentencePair) -> np.ndarray:
        return forward_pass(self.params, pair)[3]

    def checksum(self) -> str:
        return self.params.checksum()


class Adam:
    """Plain Adam with bias correction; state serializes exactly."""

    def __init__(self, size: int, learning_rate: float,
                 betas: tuple[float, float], eps: float):
        self.learning_rate = learning_rate
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, flat: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        flat -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self) -> dict:
        return {"m": self.m.tolist(), "v": self.v.tolist(), "t": self.t}

    def load_state(self, state: dict) -> None:
        self.m = np.array(state["m"])
        self.v = np.array(state["v"])
        self.t = int(state["t"])


def nll_loss_and_grad(params: ModelParams, pair: SentencePair,
                      grads: ModelParams | None = None) -> tuple[float, ModelParams]:
    """Teacher-forced negative log-likelihood (summed over positions)."""
    if grads is None:
        grads = params.zeros_like()
    h_enc, h_dec, logits, probs = forward_pass(params, pair)
    rows = np.arange(pair.target_length)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -float(log_probs[rows, pair.target].sum())
    dlogits = probs.copy()
    dlogits[rows, pair.target] -= 1.0
    backward_pass(params, pair, h_enc, h_dec, dlogits, grads)
    return loss, grads


def _transfer_rows(probs: np.ndarray, teacher_rows: np.ndarray,
                   mode: DivergenceMode, k: int | None) -> tuple[float, np.ndarray]:
    """Per-pair transfer loss (summed over positions) and logit gradients.

    The loss is the (optionally learner-top-k truncated) divergence at each
    position; gradients use the same truncation semantics as divergence-core.
    """
    if probs.shape != teacher_rows.shape:
        raise SupportMismatchError(
            f"vocab mismatch: learner {probs.shape}, teacher {teacher_rows.shape}")
    if np.any(teacher_rows <= 0.0):
        bad = np.argwhere(teacher_rows <= 0.0)[0]
        raise ZeroProbabilityError(
            f"teacher distribution is zero at position {bad[0]}; transfer needs "
            "a strictly positive teacher", int(bad[1]))
    wf, wb = mode.coefficients()
    if k is not None and k < probs.shape[1]:
        order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
        p_sel = np.take_along_axis(probs, order, axis=1)
        q_sel = np.take_along_axis(teacher_rows, order, axis=1)
    else:
        p_sel, q_sel = probs, teacher_rows
    loss = 0.0
    if wf:
        loss += wf * float(np.sum(q_sel * np.log(q_sel / p_sel)))
    if wb:
        loss += wb * float(np.sum(p_sel * np.log(p_sel / q_sel)))
    dlogits = grad_wrt_logits_rows(probs, teacher_rows, mode, k)
    return loss, dlogits


def transfer_loss(params: ModelParams, teacher, pair: SentencePair,
                  mode: DivergenceMode, topk: TruncationSpec | None = None,
                  grads: ModelParams | None = None) -> tuple[float, ModelParams]:
    """Per-position divergence against the teacher, summed over positions.

    Both models condition on the reference prefix with their own hidden
    states; gradients flow only through the learner.
    """
    if grads is None:
        grads = params.zeros_like()
    h_enc, h_dec, _, probs = forward_pass(params, pair)
    teacher_rows = teacher.token_dists(pair)
    k = None if topk is None else topk.k
    if k is not None and k > probs.shape[1]:
        raise ValueError(f"top-k {k} exceeds vocab size {probs.shape[1]}")
    loss, dlogits = _transfer_rows(probs, teacher_rows, mode, k)
    backward_pass(params, pair, h_enc, h_dec, dlogits, grads)
    return loss, grads


def _check_finite(flat: np.ndarray, epoch: int, batch: int) -> None:
    if not np.all(np.isfinite(flat)):
        raise NumericalDivergenceError("non-finite parameters", epoch, batch)


def ce_pretrain(params: ModelParams, pairs, config: TrainConfig,
                epochs: int | None = None) -> tuple[ModelParams, MetricsLog]:
    """Adam on the cross-entropy loss over reference targets.

    Returns the trained params (updated in place) and a per-epoch log of the
    mean per-token NLL seen during the pass.
    """
    epochs = config.pretrain_epochs if epochs is None else epochs
    rng = np.random.default_rng(config.seed)
    adam = Adam(params.flat.size, config.learning_rate, config.adam_betas,
                config.adam_eps)
    log = MetricsLog()
    n = len(pairs)
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        epoch_tokens = 0
        for batch_no, start in enumerate(range(0, n, config.batch_size)):
            batch = [pairs[i] for i in order[start:start + config.batch_size]]
            grads = params.zeros_like()
            batch_loss = 0.0
            batch_tokens = sum(p.target_length for p in batch)
            for pair in batch:
                loss, _ = nll_loss_and_grad(params, pair, grads)
                batch_loss += loss
            grads.flat /= batch_tokens
            adam.step(params.flat, grads.flat)
            _check_finite(params.flat, epoch, batch_no)
            epoch_loss += batch_loss
            epoch_tokens += batch_tokens
        log.append(epoch=epoch, nll_loss=epoch_loss / epoch_tokens)
    return params, log


def select_probes(pairs, n_probes: int, seed: int) -> list[tuple[int, int]]:
    """Fixed random sample of (pair index, position) probe points."""
    rng = np.random.default_rng(seed)
    all_positions = [(i, t) for i, pair in enumerate(pairs)
                     for t in range(pair.target_length)]
    if not all_positions:
        return []
    take = min(n_probes, len(all_positions))
    chosen = rng.choice(len(all_positions), size=take, replace=False)
    return [all_positions[int(i)] for i in np.sort(chosen)]


def probe_snapshot(params: ModelParams, pairs, probes,
                   history_k: int) -> tuple[float, list[list[int]]]:
    """Mean entropy and top-k sets of the learner at the probe positions."""
    if not probes:
        return 0.0, []
    entropies = []
    topk_sets = []
    by_pair: dict[int, list[int]] = {}
    for pair_idx, position in probes:
        by_pair.setdefault(pair_idx, []).append(position)
    rows_by_probe: dict[tuple[int, int], np.ndarray] = {}
    for pair_idx, positions in by_pair.items():
        probs = forward_pass(params, pairs[pair_idx])[3]
        for t in positions:
            rows_by_probe[(pair_idx, t)] = probs[t]
    for probe in probes:
        row = rows_by_probe[probe]
        entropies.append(float(entropy_rows(row[None, :])[0]))
        k = min(history_k, row.shape[0])
        topk_sets.append([int(i) for i in topk_indices(row, k)])
    return float(np.mean(entropies)), topk_sets


@dataclass
class _Checkpoint:
    path: str

    def save(self, epoch: int, params: ModelParams, adam: Adam,
             rng: np.random.Generator, log: MetricsLog, tag: str) -> None:
        blob = {
            "format_version": 1,
            "tag": tag,
            "epoch": epoch,
            "flat": params.flat.tolist(),
            "adam": adam.state(),
            "rng_state": rng.bit_generator.state,
            "records": log.records,
        }
        tmp = f"{self.path}.tmp"
        with open(tmp, "w") as fh:
            json.dump(blob, fh)
        os.replace(tmp, self.path)

    def load(self, tag: str) -> dict | None:
        if not os.path.exists(self.path):
            return None
        with open(self.path) as fh:
            blob = json.load(fh)
        if blob.get("tag") != tag or blob.get("format_version") != 1:
            return None
        return blob


def finetune(learner: ModelParams, teacher, pairs, config: TrainConfig,
             probes=None, history_k: int = 16, evaluate=None,
             checkpoint_path=None, checkpoint_tag: str = "") -> tuple[ModelParams, MetricsLog]:
    """Optimize (1 - lambda) * L_NLL + lambda * L_transfer with Adam.

    ``evaluate`` is an optional callable (params -> float) run at every
    epoch boundary for the validation score.  The teacher is frozen; its
    checksum is asserted unchanged.  With ``checkpoint_path`` set, training
    state is saved every ``config.checkpoint_every`` epochs and resumed
    automatically when a matching checkpoint exists.
    """
    probes = probes or []
    lam = config.lambda_weight
    teacher_sum_before = teacher.checksum() if hasattr(teacher, "checksum") else None
    rng = np.random.default_rng(config.seed)
    adam = Adam(learner.flat.size, config.learning_rate, config.adam_betas,
                config.adam_eps)
    log = MetricsLog()
    start_epoch = 0
    checkpoint = _Checkpoint(checkpoint_path) if checkpoint_path else None
    if checkpoint is not None:
        blob = checkpoint.load(checkpoint_tag)
        if blob is not None and blob["epoch"] < config.epochs:
            learner.flat[:] = np.array(blob["flat"])
            adam.load_state(blob["adam"])
            rng.bit_generator.state = blob["rng_state"]
            log.records = blob["records"]
            start_epoch = blob["epoch"]
    n = len(pairs)
    for epoch in range(start_epoch, config.epochs):
        order = rng.permutation(n)
        sums = {"nll": 0.0, "transfer": 0.0, "tokens": 0}
        for batch_no, start in enumerate(range(0, n, config.batch_size)):
            batch = [pairs[i] for i in order[start:start + config.batch_size]]
            grads = learner.zeros_like()
            batch_tokens = sum(p.target_length for p in batch)
            for pair in batch:
                h_enc, h_dec, logits, probs = forward_pass(learner, pair)
                rows = np.arange(pair.target_length)
                shifted = logits - logits.max(axis=1, keepdims=True)
                log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
                sums["nll"] += -float(log_probs[rows, pair.target].sum())
                dlogits_nll = probs.copy()
                dlogits_nll[rows, pair.target] -= 1.0
                teacher_rows = teacher.token_dists(pair)
                k = None if config.topk is None else config.topk.k
                t_loss, dlogits_tr = _transfer_rows(probs, teacher_rows,
                                                    config.mode, k)
                sums["transfer"] += t_loss
                backward_pass(learner, pair, h_enc, h_dec,
                              (1.0 - lam) * dlogits_nll + lam * dlogits_tr, grads)
            grads.flat /= batch_tokens
            adam.step(learner.flat, grads.flat)
            _check_finite(learner.flat, epoch, batch_no)
            sums["tokens"] += batch_tokens
        entropy_mean, topk_sets = probe_snapshot(learner, pairs, probes, history_k)
        score = float(evaluate(learner)) if evaluate is not None else None
        log.append(
            epoch=epoch,
            nll_loss=sums["nll"] / sums["tokens"],
            transfer_loss=sums["transfer"] / sums["tokens"],
            mean_position_entropy=entropy_mean,
            validation_score=score,
            topk_sets=topk_sets,
        )
        if checkpoint is not None and config.checkpoint_every > 0 \
                and (epoch + 1) % config.checkpoint_every == 0:
            checkpoint.save(epoch + 1, learner, adam, rng, log, checkpoint_tag)
    if teacher_sum_before is not None and teacher.checksum() != teacher_sum_before:
        raise RuntimeError("teacher parameters changed during fine-tuning")
    return learner, log
