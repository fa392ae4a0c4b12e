"""Evaluation diagnostics: corpus BLEU, top-k histories and novel-token
counts, the truncation sweep, and dialog-style transfer traces."""

from __future__ import annotations

import csv
import math
import os
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .divergence import DivergenceMode, TruncationSpec, topk_indices
from .seq.model import ModelParams, SentencePair, forward_pass
from .training import TrainConfig, finetune

__all__ = [
    "bleu",
    "TopKHistory",
    "novel_topk_count",
    "topk_accuracy_sweep",
    "dialog_trace",
    "write_fig4a_csv",
    "write_fig4b_csv",
    "write_fig5_csv",
]

_BLEU_EPS = 1e-9


def _ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references, max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100].

    ``references`` holds one reference set (list of token sequences) per
    hypothesis.  Clipped n-gram precisions are combined by geometric mean
    and scaled by the brevity penalty.  Zero higher-order precisions are
    smoothed by 1e-9; a corpus with no unigram overlap at all scores 0.
    Orders longer than every hypothesis are dropped from the mean.
    """
    if len(hypotheses) == 0:
        raise ValueError("cannot score an empty corpus")
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references must align")
    clipped = np.zeros(max_n)
    totals = np.zeros(max_n)
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        if not refs:
            raise ValueError("every hypothesis needs at least one reference")
        hyp = list(hyp)
        hyp_len += len(hyp)
        ref_len += min((len(r) for r in refs),
                       key=lambda L: (abs(L - len(hyp)), L))
        for n in range(1, max_n + 1):
            hyp_counts = _ngram_counts(hyp, n)
            if not hyp_counts:
                continue
            max_ref = Counter()
            for ref in refs:
                for gram, count in _ngram_counts(list(ref), n).items():
                    if count > max_ref[gram]:
                        max_ref[gram] = count
            totals[n - 1] += sum(hyp_counts.values())
            clipped[n - 1] += sum(min(c, max_ref[g]) for g, c in hyp_counts.items())
    if totals[0] == 0 or clipped[0] == 0:
        return 0.0
    log_sum = 0.0
    orders = 0
    for n in range(max_n):
        if totals[n] == 0:
            continue
        precision = clipped[n] / totals[n]
        log_sum += math.log(precision if precision > 0 else _BLEU_EPS)
        orders += 1
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / max(hyp_len, 1))
    return 100.0 * brevity * math.exp(log_sum / orders)


@dataclass(frozen=True)
class TopKHistory:
    """Per-probe-position sequences over epochs of the top-k token-id sets."""

    sets: tuple[tuple[frozenset, ...], ...]  # [probe][epoch]
    k: int

    def __post_init__(self):
        for probe in self.sets:
            for s in probe:
                if len(s) != self.k:
                    raise ValueError(
                        f"top-k set of size {len(s)} in a k={self.k} history")

    @classmethod
    def from_records(cls, records, k: int) -> "TopKHistory":
        """Build from MetricsLog records carrying per-epoch ``topk_sets``."""
        per_epoch = [rec["topk_sets"] for rec in records]
        if not per_epoch or not per_epoch[0]:
            raise ValueError("no probe history in the records")
        n_probes = len(per_epoch[0])
        probes = tuple(
            tuple(frozenset(epoch_sets[p]) for epoch_sets in per_epoch)
            for p in range(n_probes)
        )
        return cls(probes, k)

    @property
    def n_epochs(self) -> int:
        return len(self.sets[0]) if self.sets else 0


def novel_topk_count(history: TopKHistory) -> np.ndarray:
    """Tokens entering a probe's top-k for the first time, summed over probes.

    Epoch 0 is the baseline and counts 0.
    """
    if not history.sets:
        raise ValueError("empty history")
    counts = np.zeros(history.n_epochs, dtype=np.int64)
    for probe in history.sets:
        seen = set(probe[0])
        for epoch in range(1, len(probe)):
            fresh = probe[epoch] - seen
            counts[epoch] += len(fresh)
            seen |= probe[epoch]
    return counts


def _sweep_one(learner: ModelParams, teacher, pairs, config: TrainConfig,
               k: int, evaluate) -> float:
    fresh = learner.copy()
    vocab = learner.tgt_vocab_size
    topk = None if k >= vocab else TruncationSpec(k)
    cfg = replace(config, topk=topk)
    finetune(fresh, teacher, pairs, cfg)
    return float(evaluate(fresh))


def topk_accuracy_sweep(learner: ModelParams, teacher, pairs,
                        config: TrainConfig, ks, evaluate) -> list[tuple[int, str, float]]:
    """Fine-tune a fresh learner copy per truncation level and score it.

    Returns (k, mode, score) rows; k equal to the vocabulary size runs the
    untruncated objective through the identical code path.  Honors
    KLTRANSFER_MAX_WORKERS for parallel rows.
    """
    ks = list(ks)
    if any(not 1 <= k <= learner.tgt_vocab_size for k in ks):
        raise ValueError("every k must lie in [1, target vocab size]")
    workers = int(os.environ.get("KLTRANSFER_MAX_WORKERS", "1"))
    rows = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_one, learner, teacher, pairs,
                                   config, k, evaluate) for k in ks]
            scores = [f.result() for f in futures]
    else:
        scores = [_sweep_one(learner, teacher, pairs, config, k, evaluate)
                  for k in ks]
    for k, score in zip(ks, scores):
        rows.append((k, config.mode.kind, score))
    return rows


def dialog_trace(learner: ModelParams, teacher, pair: SentencePair,
                 position: int, top_m: int = 10, vocab=None) -> str:
    """Aligned proposal/reply text for one target position.

    The acquisition view lists the learner's top proposals with the
    teacher's probability for each; the distillation view lists the
    teacher's top suggestions with the learner's probability.
    """
    if not 0 <= position < pair.target_length:
        raise ValueError(f"position {position} out of range for target "
                         f"length {pair.target_length}")
    p_row = forward_pass(learner, pair)[3][position]
    q_row = teacher.token_dists(pair)[position]
    top_m = min(top_m, p_row.shape[0])

    def name(tok: int) -> str:
        return vocab.token_of(tok) if vocab is not None else str(tok)

    lines = [f"position {position} (reference token {name(int(pair.target[position]))})"]
    lines.append(f"{'learner proposes':<24}{'teacher replies':<20}")
    for tok in topk_indices(p_row, top_m):
        lines.append(f"  {name(int(tok)):<12}p={p_row[tok]:<8.4f}q={q_row[tok]:.4f}")
    lines.append(f"{'teacher suggests':<24}{'learner has':<20}")
    for tok in topk_indices(q_row, top_m):
        lines.append(f"  {name(int(tok)):<12}q={q_row[tok]:<8.4f}p={p_row[tok]:.4f}")
    return "\n".join(lines)


def write_fig4a_csv(path, rows) -> None:
    """rows: iterable of (k, mode, score)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "mode", "score"])
        for k, mode, score in rows:
            writer.writerow([k, mode, repr(float(score))])


def write_fig4b_csv(path, counts_by_mode: dict) -> None:
    """counts_by_mode: mode name -> per-epoch novel-token counts."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mode", "novel_count"])
        for mode in sorted(counts_by_mode):
            for epoch, count in enumerate(counts_by_mode[mode]):
                writer.writerow([epoch, mode, int(count)])


def write_fig5_csv(path, entropy_by_mode: dict) -> None:
    """entropy_by_mode: mode name -> per-epoch mean position entropy."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mode", "entropy"])
        for mode in sorted(entropy_by_mode):
            for epoch, value in enumerate(entropy_by_mode[mode]):
                writer.writerow([epoch, mode, repr(float(value))])
