"""
Synthetic translation tasks for desk-scale experiments.

The bijective reversal task maps a random source sentence to its reverse with
every token renamed through a fixed seeded permutation. Solving it needs
cross-attention (content) and position handling (reversal).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch

from dynamic_hat.app_core.logging_config import get_logger
from dynamic_hat.exceptions import CorpusError

logger = get_logger(__name__)

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")
N_SPECIAL = len(SPECIAL_TOKENS)
MAX_SENTENCE_LEN = 64

Pair = Tuple[List[int], List[int]]


@dataclass
class CorpusSettings:
    """Desk corpus defaults: vocab 64, 2000/200/200 pairs, lengths 4-12."""
    vocab_size: int = 64
    n_train: int = 2000
    n_valid: int = 200
    n_test: int = 200
    min_len: int = 4
    max_len: int = 12
    seed: int = 0

    def validate(self) -> List[str]:
        issues = []
        if self.vocab_size < 8:
            issues.append(f"vocab_size must be >= 8, got {self.vocab_size}")
        if not 1 <= self.min_len <= self.max_len <= MAX_SENTENCE_LEN:
            issues.append(f"sentence lengths must satisfy 1 <= min_len <= max_len <= {MAX_SENTENCE_LEN}")
        for name in ("n_train", "n_valid", "n_test"):
            if getattr(self, name) < 1:
                issues.append(f"{name} must be >= 1")
        return issues


@dataclass
class Corpus:
    """Sentence pairs plus the vocabulary they are drawn from."""
    pairs: List[Pair]
    vocab_size: int
    split: str = "train"
    # mapping[i] is the target id for source id i (identity on the reserved ids)
    mapping: Tuple[int, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.pairs)

    def itos(self) -> List[str]:
        return list(SPECIAL_TOKENS) + [f"w{i}" for i in range(N_SPECIAL, self.vocab_size)]

    def vocab(self) -> Dict[str, int]:
        return {token: i for i, token in enumerate(self.itos())}

    def sources(self) -> List[List[int]]:
        return [src for src, _ in self.pairs]

    def targets(self) -> List[List[int]]:
        return [tgt for _, tgt in self.pairs]

    def check(self) -> "Corpus":
        """Raise CorpusError if a pair is empty or holds an out-of-range id."""
        for i, (src, tgt) in enumerate(self.pairs):
            if not src or not tgt:
                raise CorpusError("Corpus contains an empty sentence", {"pair": i, "split": self.split})
            for token in list(src) + list(tgt):
                if not 0 <= token < self.vocab_size:
                    raise CorpusError("Token id outside the vocabulary",
                                      {"pair": i, "token_id": token, "vocab_size": self.vocab_size})
        return self

    def invert_target(self, tgt: Sequence[int]) -> List[int]:
        """Undo the reversal task: map back through the permutation and reverse."""
        inverse = {t: s for s, t in enumerate(self.mapping)}
        return [inverse[t] for t in reversed(tgt)]


def _make_mapping(vocab_size: int, seed: int) -> Tuple[int, ...]:
    rng = np.random.default_rng(seed)
    content = rng.permutation(np.arange(N_SPECIAL, vocab_size))
    return tuple(range(N_SPECIAL)) + tuple(int(t) for t in content)


def generate_bijective_reversal(
    vocab_size: int,
    n_pairs: int,
    len_range: Tuple[int, int] = (4, 12),
    seed: int = 0,
    split: str = "train",
    mapping_seed: Optional[int] = None,
) -> Corpus:
    """Generate `n_pairs` (src, σ(reversed src)) pairs, deterministic per seed.

    Args:
        vocab_size: total ids including the 4 reserved ones (>= 8)
        n_pairs: number of sentence pairs
        len_range: inclusive (min, max) source length within [1, 64]
        seed: sentence seed
        split: split tag stored on the corpus
        mapping_seed: seed of the permutation σ; defaults to `seed`. Splits of one
            task share it.
    """
    lo, hi = len_range
    if vocab_size < 8:
        raise CorpusError(f"vocab_size must be >= 8, got {vocab_size}")
    if not 1 <= lo <= hi <= MAX_SENTENCE_LEN:
        raise CorpusError(f"len_range must lie within [1, {MAX_SENTENCE_LEN}], got {len_range}")
    if n_pairs < 1:
        raise CorpusError(f"n_pairs must be >= 1, got {n_pairs}")

    mapping = _make_mapping(vocab_size, seed if mapping_seed is None else mapping_seed)
    rng = np.random.default_rng(seed)
    pairs: List[Pair] = []
    for _ in range(n_pairs):
        length = int(rng.integers(lo, hi + 1))
        src = [int(t) for t in rng.integers(N_SPECIAL, vocab_size, size=length)]
        tgt = [mapping[t] for t in reversed(src)]
        pairs.append((src, tgt))
    return Corpus(pairs=pairs, vocab_size=vocab_size, split=split, mapping=mapping)


def generate_splits(settings: CorpusSettings) -> Dict[str, Corpus]:
    """Generate train/valid/test corpora sharing one permutation, each from its own sentence seed."""
    children = np.random.SeedSequence(settings.seed).spawn(3)
    sizes = {"train": settings.n_train, "valid": settings.n_valid, "test": settings.n_test}
    splits = {}
    for (split, n_pairs), child in zip(sizes.items(), children):
        sentence_seed = int(child.generate_state(1)[0])
        splits[split] = generate_bijective_reversal(
            settings.vocab_size, n_pairs, (settings.min_len, settings.max_len),
            seed=sentence_seed, split=split, mapping_seed=settings.seed,
        )
    logger.info("Generated corpus splits: " + ", ".join(f"{k}={len(v)}" for k, v in splits.items()))
    return splits


@dataclass
class Batch:
    """Padded id matrices; masks are True at padded positions."""
    src: torch.Tensor            # [B, S]
    src_pad_mask: torch.Tensor   # [B, S]
    tgt_in: torch.Tensor         # [B, T] bos + target
    tgt_out: torch.Tensor        # [B, T] target + eos
    tgt_pad_mask: torch.Tensor   # [B, T]
    indices: List[int]

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def n_tokens(self) -> int:
        return int((~self.tgt_pad_mask).sum().item())


def _pad(rows: Sequence[Sequence[int]]) -> torch.Tensor:
    width = max(len(r) for r in rows)
    out = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
    for i, row in enumerate(rows):
        out[i, :len(row)] = torch.tensor(list(row), dtype=torch.long)
    return out


def make_batch(pairs: Sequence[Pair], indices: Optional[Sequence[int]] = None) -> Batch:
    """Pad a list of pairs into a Batch."""
    src = _pad([p[0] for p in pairs])
    tgt_in = _pad([[BOS_ID] + list(p[1]) for p in pairs])
    tgt_out = _pad([list(p[1]) + [EOS_ID] for p in pairs])
    return Batch(
        src=src,
        src_pad_mask=src.eq(PAD_ID),
        tgt_in=tgt_in,
        tgt_out=tgt_out,
        tgt_pad_mask=tgt_out.eq(PAD_ID),
        indices=list(indices) if indices is not None else list(range(len(pairs))),
    )


def batch_iterator(corpus: Corpus, batch_size: int, seed: int, shuffle: bool = True) -> Iterator[Batch]:
    """One epoch of padded batches; the shuffle order is fixed by `seed`."""
    if batch_size < 1:
        raise CorpusError(f"batch_size must be >= 1, got {batch_size}")
    n = len(corpus)
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        idx = [int(i) for i in order[start:start + batch_size]]
        yield make_batch([corpus.pairs[i] for i in idx], idx)
