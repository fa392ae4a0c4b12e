"""Tiny autoregressive encoder-decoder with hand-written gradients, plus
synthetic corpus generation and beam-search decoding."""

from .corpus import Corpus, GenSpec, OracleTeacher, synth_corpus
from .decoding import BeamConfig, Hypothesis, beam_search, greedy_decode
from .model import (
    ModelParams,
    SentencePair,
    Vocab,
    load_checkpoint,
    save_checkpoint,
    sequence_logprob,
    token_dist,
    transition,
)

__all__ = [
    "Vocab",
    "SentencePair",
    "ModelParams",
    "transition",
    "token_dist",
    "sequence_logprob",
    "save_checkpoint",
    "load_checkpoint",
    "BeamConfig",
    "Hypothesis",
    "beam_search",
    "greedy_decode",
    "GenSpec",
    "Corpus",
    "OracleTeacher",
    "synth_corpus",
]
