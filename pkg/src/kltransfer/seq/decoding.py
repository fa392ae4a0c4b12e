"""Greedy and beam-search decoding for the recurrent encoder-decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams, Vocab, encode, transition

__all__ = ["BeamConfig", "Hypothesis", "beam_search", "greedy_decode"]


@dataclass(frozen=True)
class BeamConfig:
    """Beam size, length-penalty exponent, and step budget.

    Hypothesis ranking uses score = logprob / len**length_penalty.
    """

    beam_size: int = 6
    length_penalty: float = 1.0
    max_length: int = 32

    def __post_init__(self):
        if self.beam_size < 1 or self.max_length < 1:
            raise ValueError("beam_size and max_length must be >= 1")


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    score: float  # length-penalized
    logprob: float  # raw cumulative log-probability

    @property
    def finished(self) -> bool:
        return len(self.tokens) > 0 and self.tokens[-1] == Vocab.EOS


def _log_probs(params: ModelParams, hidden: np.ndarray) -> np.ndarray:
    logits = params.w_out @ hidden + params.b_out
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def _penalized(logprob: float, length: int, alpha: float) -> float:
    return logprob / float(length) ** alpha


def beam_search(params: ModelParams, source, cfg: BeamConfig) -> list[Hypothesis]:
    """Top-B hypotheses for a source sentence.

    Maintains the B highest-scoring partials by cumulative log-probability;
    hypotheses that emit EOS keep their beam slot but stop expanding.  Every
    returned hypothesis ends in EOS or has max_length tokens, ranked by the
    length-penalized score (ties broken lexicographically on the token ids).
    """
    source = np.asarray(source, dtype=np.int64)
    if source.size == 0:
        raise ValueError("cannot decode an empty source")
    h_enc = encode(params, source)
    d = params.hidden_dim
    # beam entries: (logprob, tokens, hidden); finished entries have hidden=None
    beam: list[tuple[float, tuple[int, ...], np.ndarray | None]] = [
        (0.0, (), np.zeros(d))
    ]
    for step in range(cfg.max_length):
        if all(hidden is None for _, _, hidden in beam):
            break
        context = h_enc[min(step, h_enc.shape[0] - 1)]
        pool: list[tuple[float, tuple[int, ...], np.ndarray | None]] = []
        for logprob, tokens, hidden in beam:
            if hidden is None:
                pool.append((logprob, tokens, None))
                continue
            prev = tokens[-1] if tokens else Vocab.BOS
            new_hidden = transition(params, hidden, int(prev), context)
            logp = _log_probs(params, new_hidden)
            for tok in range(params.tgt_vocab_size):
                new_tokens = tokens + (tok,)
                pool.append((
                    logprob + float(logp[tok]),
                    new_tokens,
                    None if tok == Vocab.EOS else new_hidden,
                ))
        pool.sort(key=lambda entry: (-entry[0], entry[1]))
        beam = pool[: cfg.beam_size]
    ranked = [
        Hypothesis(tokens, _penalized(logprob, len(tokens), cfg.length_penalty), logprob)
        for logprob, tokens, _ in beam
        if tokens
    ]
    ranked.sort(key=lambda h: (-h.score, h.tokens))
    return ranked


def greedy_decode(params: ModelParams, source, max_length: int) -> tuple[int, ...]:
    """Argmax decoding; stops after EOS or max_length tokens."""
    source = np.asarray(source, dtype=np.int64)
    if source.size == 0:
        raise ValueError("cannot decode an empty source")
    h_enc = encode(params, source)
    hidden = np.zeros(params.hidden_dim)
    prev = Vocab.BOS
    tokens: list[int] = []
    for step in range(max_length):
        context = h_enc[min(step, h_enc.shape[0] - 1)]
        hidden = transition(params, hidden, prev, context)
        logp = _log_probs(params, hidden)
        tok = int(np.argmax(logp))  # lowest index wins exact ties
        tokens.append(tok)
        if tok == Vocab.EOS:
            break
        prev = tok
    return tuple(tokens)
