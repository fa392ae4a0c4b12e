"""Single-layer recurrent encoder-decoder with hand-written gradients.

The decoder realizes the state transition h_t = f(h_{t-1}, y_{t-1}; x): a
tanh recurrence over the previous hidden state, the embedding of the
previous token, and a projection of the encoded source.  The encoder is the
same recurrence over source-token embeddings; its final state is the source
context fed to every decoder step.

All arithmetic is float64.  Gradients are exact (verified against central
finite differences in the test suite).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from ..divergence import Categorical, softmax_rows
from ..errors import NonFiniteError
from . import kernels

CHECKPOINT_FORMAT_VERSION = 1


class Vocab:
    """Ordered token list with reserved PAD/BOS/EOS ids at 0/1/2."""

    PAD = 0
    BOS = 1
    EOS = 2
    _RESERVED = ("<pad>", "<bos>", "<eos>")

    def __init__(self, content_tokens):
        tokens = list(self._RESERVED) + list(content_tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        if len(tokens) < 4:
            raise ValueError("vocabulary needs at least one content token")
        self.tokens = tokens
        self._index = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._index[token]

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def content_ids(self) -> np.ndarray:
        return np.arange(3, len(self.tokens))

    def to_strings(self, ids) -> list[str]:
        return [self.tokens[int(i)] for i in ids]


@dataclass(frozen=True)
class SentencePair:
    """A source/target id-sequence pair; the target ends with EOS."""

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.source, dtype=np.int64)
        tgt = np.asarray(self.target, dtype=np.int64)
        if src.size == 0 or tgt.size == 0:
            raise ValueError("source and target must be nonempty")
        if tgt[-1] != Vocab.EOS:
            raise ValueError("target must end with EOS")
        if np.any(tgt[:-1] == Vocab.PAD) or np.any(src == Vocab.PAD):
            raise ValueError("PAD may not appear inside a sentence")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "target", tgt)

    @property
    def target_length(self) -> int:
        return int(self.target.shape[0])


class ModelParams:
    """Learner/teacher parameter bundle backed by one flat float64 vector.

    Field views share the flat buffer, so optimizers can update ``flat`` in
    place and every matrix sees the change.
    """

    _FIELDS = ("emb_src", "emb_tgt", "w_enc", "b_enc", "w_dec", "w_ctx",
               "b_dec", "w_out", "b_out")

    def __init__(self, src_vocab_size: int, tgt_vocab_size: int, hidden_dim: int,
                 flat: np.ndarray | None = None):
        if min(src_vocab_size, tgt_vocab_size) < 4 or hidden_dim < 1:
            raise ValueError("vocab sizes must be >= 4 and hidden_dim >= 1")
        self.src_vocab_size = src_vocab_size
        self.tgt_vocab_size = tgt_vocab_size
        self.hidden_dim = hidden_dim
        d = hidden_dim
        shapes = {
            "emb_src": (src_vocab_size, d),
            "emb_tgt": (tgt_vocab_size, d),
            "w_enc": (d, d),
            "b_enc": (d,),
            "w_dec": (d, d),
            "w_ctx": (d, d),
            "b_dec": (d,),
            "w_out": (tgt_vocab_size, d),
            "b_out": (tgt_vocab_size,),
        }
        total = sum(int(np.prod(s)) for s in shapes.values())
        if flat is None:
            flat = np.zeros(total)
        else:
            flat = np.ascontiguousarray(flat, dtype=np.float64)
            if flat.shape != (total,):
                raise ValueError(f"flat vector must have {total} entries, got {flat.shape}")
        self.flat = flat
        offset = 0
        for name in self._FIELDS:
            shape = shapes[name]
            size = int(np.prod(shape))
            setattr(self, name, self.flat[offset:offset + size].reshape(shape))
            offset += size

    def __reduce__(self):
        return (ModelParams, (self.src_vocab_size, self.tgt_vocab_size,
                              self.hidden_dim, self.flat.copy()))

    @classmethod
    def random(cls, src_vocab_size: int, tgt_vocab_size: int, hidden_dim: int,
               rng: np.random.Generator, scale: float = 0.1) -> "ModelParams":
        params = cls(src_vocab_size, tgt_vocab_size, hidden_dim)
        params.flat[:] = rng.normal(0.0, scale, size=params.flat.shape)
        return params

    def copy(self) -> "ModelParams":
        return ModelParams(self.src_vocab_size, self.tgt_vocab_size,
                           self.hidden_dim, self.flat.copy())

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.src_vocab_size, self.tgt_vocab_size, self.hidden_dim)

    def checksum(self) -> str:
        return hashlib.sha256(self.flat.tobytes()).hexdigest()

    def validate_finite(self) -> None:
        if not np.all(np.isfinite(self.flat)):
            raise NonFiniteError("model parameters contain NaN/Inf")


def encode(params: ModelParams, source: np.ndarray) -> np.ndarray:
    """Encoder hidden states (S, d); the last row is the source context."""
    src = np.asarray(source, dtype=np.int64)
    if src.size == 0:
        raise ValueError("cannot encode an empty source")
    if src.max() >= params.src_vocab_size or src.min() < 0:
        raise ValueError("source token id out of range")
    u = params.emb_src[src] + params.b_enc
    return kernels.recurrent_forward(params.w_enc, u)


def context_rows(h_enc: np.ndarray, steps: int) -> np.ndarray:
    """Position-aligned source context: encoder state at min(t, S-1).

    A fixed diagonal alignment; the decoder at step t reads the encoder
    state covering the aligned source prefix.
    """
    idx = np.minimum(np.arange(steps), h_enc.shape[0] - 1)
    return h_enc[idx]


def decoder_states(params: ModelParams, h_enc: np.ndarray,
                   prev_tokens: np.ndarray) -> np.ndarray:
    """Decoder hidden states (T, d) for a teacher-forced token prefix row."""
    ctx = context_rows(h_enc, prev_tokens.shape[0])
    u = params.emb_tgt[prev_tokens] + ctx @ params.w_ctx.T + params.b_dec
    return kernels.recurrent_forward(params.w_dec, u)


def output_logits(params: ModelParams, hidden: np.ndarray) -> np.ndarray:
    return hidden @ params.w_out.T + params.b_out


def transition(params: ModelParams, prev_hidden: np.ndarray, prev_token: int,
               source_context: np.ndarray) -> np.ndarray:
    """One decoder step: h_t = tanh(w_dec h_{t-1} + emb(y_{t-1}) + w_ctx c + b)."""
    prev_hidden = np.asarray(prev_hidden, dtype=np.float64)
    source_context = np.asarray(source_context, dtype=np.float64)
    d = params.hidden_dim
    if prev_hidden.shape != (d,) or source_context.shape != (d,):
        raise ValueError(f"hidden/context must have shape ({d},)")
    if not 0 <= prev_token < params.tgt_vocab_size:
        raise ValueError(f"token id {prev_token} out of range")
    return np.tanh(params.w_dec @ prev_hidden + params.emb_tgt[prev_token]
                   + params.w_ctx @ source_context + params.b_dec)


def token_dist(params: ModelParams, hidden: np.ndarray) -> Categorical:
    """Next-token distribution from a decoder hidden state."""
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.shape != (params.hidden_dim,):
        raise ValueError(f"hidden must have shape ({params.hidden_dim},)")
    logits = params.w_out @ hidden + params.b_out
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return Categorical(e / e.sum())


def prev_token_row(target: np.ndarray) -> np.ndarray:
    """Teacher-forced decoder inputs: BOS followed by target[:-1]."""
    return np.concatenate(([Vocab.BOS], target[:-1])).astype(np.int64)


def forward_pass(params: ModelParams, pair: SentencePair):
    """Teacher-forced forward pass.

    Returns (h_enc, h_dec, logits, probs) with logits/probs shaped (T, V).
    """
    h_enc = encode(params, pair.source)
    prev = prev_token_row(pair.target)
    h_dec = decoder_states(params, h_enc, prev)
    logits = output_logits(params, h_dec)
    return h_enc, h_dec, logits, softmax_rows(logits)


def backward_pass(params: ModelParams, pair: SentencePair, h_enc: np.ndarray,
                  h_dec: np.ndarray, dlogits: np.ndarray,
                  grads: ModelParams) -> None:
    """Accumulate parameter gradients given per-position logit gradients.

    ``grads`` is a ModelParams-shaped accumulator updated in place.
    """
    prev = prev_token_row(pair.target)
    grads.b_out += dlogits.sum(axis=0)
    grads.w_out += dlogits.T @ h_dec
    dh_dec = dlogits @ params.w_out
    dw_dec, du_dec = kernels.recurrent_backward(params.w_dec, h_dec, dh_dec)
    grads.w_dec += dw_dec
    np.add.at(grads.emb_tgt, prev, du_dec)
    grads.b_dec += du_dec.sum(axis=0)
    steps = prev.shape[0]
    ctx = context_rows(h_enc, steps)
    grads.w_ctx += du_dec.T @ ctx
    dctx = du_dec @ params.w_ctx
    dh_enc = np.zeros_like(h_enc)
    idx = np.minimum(np.arange(steps), h_enc.shape[0] - 1)
    np.add.at(dh_enc, idx, dctx)
    dw_enc, du_enc = kernels.recurrent_backward(params.w_enc, h_enc, dh_enc)
    grads.w_enc += dw_enc
    np.add.at(grads.emb_src, np.asarray(pair.source, dtype=np.int64), du_enc)
    grads.b_enc += du_enc.sum(axis=0)


def sequence_logprob(params: ModelParams, pair: SentencePair) -> float:
    """Teacher-forced log p(y | x) = sum_t log p(y_t | y_<t, x); always <= 0."""
    _, _, logits, _ = forward_pass(params, pair)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(pair.target_length)
    return float(log_probs[rows, pair.target].sum())


def save_checkpoint(params: ModelParams, path) -> None:
    """Write a versioned JSON checkpoint; float64-exact round trip."""
    blob = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "kltransfer-seq-model",
        "src_vocab_size": params.src_vocab_size,
        "tgt_vocab_size": params.tgt_vocab_size,
        "hidden_dim": params.hidden_dim,
        "flat": params.flat.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)


def load_checkpoint(path) -> ModelParams:
    with open(path) as fh:
        blob = json.load(fh)
    if blob.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('format_version')!r}")
    return ModelParams(blob["src_vocab_size"], blob["tgt_vocab_size"],
                       blob["hidden_dim"], np.array(blob["flat"]))
