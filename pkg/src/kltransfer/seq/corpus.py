"""Synthetic translation task with an exact closed-form teacher.

Source content tokens are partitioned into classes; each class maps to a
target synonym group carrying an emission distribution.  Target position t
aligns with source token t: with probability ``1 - noise`` it follows the
mapped group's emission distribution, otherwise it is uniform over the whole
target vocabulary.  The position one past the content emits EOS through the
same mixture.  The conditional q(y_t | y_<t, x) is therefore available in
closed form, and with noise > 0 it is strictly positive everywhere, which is
what backward-KL training against a full-support learner requires.

Corpus targets are redrawn until they form a valid sentence pair (terminal
EOS, no PAD), so the corpus is the process conditioned on validity; the
exported conditionals are the unconditioned mixture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SentencePair, Vocab

__all__ = ["GenSpec", "Corpus", "OracleTeacher", "synth_corpus",
           "write_corpus_file", "read_corpus_file", "default_genspec"]


@dataclass(frozen=True)
class GenSpec:
    """Generative recipe for the synthetic corpus.

    source_class_sizes: content tokens per source class (consecutive blocks)
    target_group_sizes: synonym tokens per target group (consecutive blocks)
    emissions: per-group distribution over that group's synonyms
    class_map: source class index -> target group index
    length_range: inclusive (lo, hi) content length of a sentence
    noise: probability that a position emits uniformly over the whole
        target vocabulary instead of following the clean rule
    """

    source_class_sizes: tuple[int, ...]
    target_group_sizes: tuple[int, ...]
    emissions: tuple[tuple[float, ...], ...]
    class_map: tuple[int, ...]
    length_range: tuple[int, int]
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.source_class_sizes or min(self.source_class_sizes) < 1:
            raise ValueError("source classes must be nonempty")
        if not self.target_group_sizes or min(self.target_group_sizes) < 1:
            raise ValueError("target groups must be nonempty")
        if len(self.emissions) != len(self.target_group_sizes):
            raise ValueError("one emission distribution per target group required")
        for g, dist in enumerate(self.emissions):
            if len(dist) != self.target_group_sizes[g]:
                raise ValueError(f"emission {g} does not match its group size")
            arr = np.asarray(dist, dtype=np.float64)
            if np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-9:
                raise ValueError(f"emission {g} is not a probability distribution")
        if len(self.class_map) != len(self.source_class_sizes):
            raise ValueError("class_map must cover every source class")
        if any(not 0 <= g < len(self.target_group_sizes) for g in self.class_map):
            raise ValueError("class_map points at a missing target group")
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise ValueError("length_range must satisfy 1 <= lo <= hi")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError("noise must lie in [0, 1)")

    @property
    def source_content_size(self) -> int:
        return int(sum(self.source_class_sizes))

    @property
    def target_content_size(self) -> int:
        return int(sum(self.target_group_sizes))

    @property
    def target_vocab_size(self) -> int:
        return self.target_content_size + 3

    def build_vocabs(self) -> tuple[Vocab, Vocab]:
        src = Vocab([f"s{i}" for i in range(self.source_content_size)])
        tgt = Vocab([f"t{j}" for j in range(self.target_content_size)])
        return src, tgt

    def source_class_of(self, src_token_id: int) -> int:
        content = src_token_id - 3
        if content < 0 or content >= self.source_content_size:
            raise ValueError(f"source id {src_token_id} is not a content token")
        return int(np.searchsorted(np.cumsum(self.source_class_sizes), content,
                                   side="right"))

    def group_token_ids(self, group: int) -> np.ndarray:
        starts = np.concatenate(([0], np.cumsum(self.target_group_sizes)))
        return 3 + np.arange(starts[group], starts[group + 1])


@dataclass(frozen=True)
class Corpus:
    pairs: tuple[SentencePair, ...]
    src_vocab: Vocab
    tgt_vocab: Vocab
    spec: GenSpec

    def splits(self) -> tuple[tuple[SentencePair, ...], ...]:
        """(train, valid, test) split at fixed 80/10/10 ratios."""
        n = len(self.pairs)
        n_train = int(0.8 * n)
        n_valid = int(0.1 * n)
        return (self.pairs[:n_train],
                self.pairs[n_train:n_train + n_valid],
                self.pairs[n_train + n_valid:])


class OracleTeacher:
    """Exact conditional evaluator of the generative process.

    Stands in for a trained teacher: ``conditional`` returns q(y_t | y_<t, x)
    for any prefix the process can produce, and ``token_dists`` stacks those
    rows along a full sentence pair.
    """

    def __init__(self, spec: GenSpec):
        self.spec = spec
        self.vocab_size = spec.target_vocab_size

    def _content_dist(self, src_token_id: int) -> np.ndarray:
        group = self.spec.class_map[self.spec.source_class_of(src_token_id)]
        dist = np.full(self.vocab_size, self.spec.noise / self.vocab_size)
        ids = self.spec.group_token_ids(group)
        dist[ids] += (1.0 - self.spec.noise) * np.asarray(self.spec.emissions[group])
        return dist

    def _eos_dist(self) -> np.ndarray:
        dist = np.full(self.vocab_size, self.spec.noise / self.vocab_size)
        dist[Vocab.EOS] += 1.0 - self.spec.noise
        return dist

    def conditional(self, source, prefix) -> np.ndarray:
        """q(y_t | y_<t, x) where t = len(prefix); validates the prefix."""
        source = np.asarray(source, dtype=np.int64)
        prefix = np.asarray(prefix, dtype=np.int64)
        content_len = int(source.shape[0])
        if prefix.shape[0] > content_len:
            raise ValueError("prefix extends past the end of the target")
        for pos, tok in enumerate(prefix):
            row = self._content_dist(int(source[pos]))
            if not 0 <= tok < self.vocab_size or row[tok] <= 0.0:
                raise ValueError(
                    f"prefix token {int(tok)} at position {pos} is impossible "
                    "under the generative process"
                )
        if prefix.shape[0] == content_len:
            return self._eos_dist()
        return self._content_dist(int(source[prefix.shape[0]]))

    def token_dists(self, pair: SentencePair) -> np.ndarray:
        """(T, V) conditional rows along the reference target."""
        if pair.target_length != pair.source.shape[0] + 1:
            raise ValueError("pair is not length-aligned with the process")
        rows = [self.conditional(pair.source, pair.target[:t])
                for t in range(pair.target_length)]
        return np.stack(rows)

    def sequence_logprob(self, pair: SentencePair) -> float:
        rows = self.token_dists(pair)
        probs = rows[np.arange(pair.target_length), pair.target]
        if np.any(probs <= 0.0):
            raise ValueError("pair is impossible under the generative process")
        return float(np.log(probs).sum())

    def sample_token(self, src_token_id: int | None, rng: np.random.Generator) -> int:
        """Draw one target token via the two-stage process (noise coin first).

        ``src_token_id`` None means the end-of-content position.
        """
        if rng.random() < self.spec.noise:
            return int(rng.integers(0, self.vocab_size))
        if src_token_id is None:
            return Vocab.EOS
        group = self.spec.class_map[self.spec.source_class_of(src_token_id)]
        ids = self.spec.group_token_ids(group)
        return int(rng.choice(ids, p=np.asarray(self.spec.emissions[group])))

    def sample_target(self, source, rng: np.random.Generator) -> np.ndarray:
        """Sample a valid reference target (redraws PAD / non-EOS endings)."""
        source = np.asarray(source, dtype=np.int64)
        while True:
            tokens = [self.sample_token(int(tok), rng) for tok in source]
            tokens.append(self.sample_token(None, rng))
            if tokens[-1] == Vocab.EOS and Vocab.PAD not in tokens:
                return np.asarray(tokens, dtype=np.int64)


def synth_corpus(spec: GenSpec, n_pairs: int) -> Corpus:
    """Deterministic synthetic corpus; split 80/10/10 by position."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    rng = np.random.default_rng(spec.seed)
    teacher = OracleTeacher(spec)
    src_vocab, tgt_vocab = spec.build_vocabs()
    lo, hi = spec.length_range
    n_src_content = spec.source_content_size
    pairs = []
    for _ in range(n_pairs):
        length = int(rng.integers(lo, hi + 1))
        source = 3 + rng.integers(0, n_src_content, size=length)
        target = teacher.sample_target(source, rng)
        pairs.append(SentencePair(source, target))
    return Corpus(tuple(pairs), src_vocab, tgt_vocab, spec)


def write_corpus_file(corpus: Corpus, path) -> None:
    """Line-oriented text: source tokens TAB target tokens (EOS implicit)."""
    with open(path, "w") as fh:
        for pair in corpus.pairs:
            src = " ".join(corpus.src_vocab.to_strings(pair.source))
            tgt = " ".join(corpus.tgt_vocab.to_strings(pair.target[:-1]))
            fh.write(f"{src}\t{tgt}\n")


def read_corpus_file(path, src_vocab: Vocab, tgt_vocab: Vocab,
                     spec: GenSpec) -> Corpus:
    pairs = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            src_text, tgt_text = line.split("\t")
            source = np.array([src_vocab.id_of(t) for t in src_text.split()],
                              dtype=np.int64)
            target = np.array([tgt_vocab.id_of(t) for t in tgt_text.split()]
                              + [Vocab.EOS], dtype=np.int64)
            pairs.append(SentencePair(source, target))
    return Corpus(tuple(pairs), src_vocab, tgt_vocab, spec)


def default_genspec(seed: int = 0) -> GenSpec:
    """Desk-scale default: sharp per-group emissions plus a mild noise floor
    over a 51-token target vocabulary."""
    groups = 12
    return GenSpec(
        source_class_sizes=(2,) * groups,
        target_group_sizes=(4,) * groups,
        emissions=((0.7, 0.15, 0.1, 0.05),) * groups,
        class_map=tuple(range(groups)),
        length_range=(4, 8),
        noise=0.15,
        seed=seed,
    )
