"""
Corpus BLEU and token accuracy.

BLEU here is the unsmoothed corpus-level score on pre-tokenized ids with one
reference per candidate. N-gram orders for which the corpus has no candidate
n-grams at all are left out of the geometric mean; any other zero precision
gives 0.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Any, Dict, Hashable, List, Optional, Sequence

from dynamic_hat.app_core.logging_config import get_logger
from dynamic_hat.corpus import Corpus
from dynamic_hat.elastic_model import Model, greedy_translate
from dynamic_hat.exceptions import MetricError
from dynamic_hat.training import validation_loss

logger = get_logger(__name__)

Sentence = Sequence[Hashable]


def _check_corpora(candidates: Sequence[Sentence], references: Sequence[Sentence]) -> None:
    if len(candidates) != len(references):
        raise MetricError("candidate and reference counts differ",
                          {"candidates": len(candidates), "references": len(references)})
    if not candidates:
        raise MetricError("empty corpus")


def _ngrams(tokens: Sentence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_corpus(candidates: Sequence[Sentence], references: Sequence[Sentence], max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100] with brevity penalty exp(min(0, 1 - r/c))."""
    _check_corpora(candidates, references)
    if max_n < 1:
        raise MetricError(f"max_n must be >= 1, got {max_n}")

    matches = [0] * (max_n + 1)
    totals = [0] * (max_n + 1)
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            cand_ngrams = _ngrams(cand, n)
            ref_ngrams = _ngrams(ref, n)
            matches[n] += sum(min(count, ref_ngrams[gram]) for gram, count in cand_ngrams.items())
            totals[n] += max(len(cand) - n + 1, 0)

    if cand_len == 0:
        return 0.0
    orders = [n for n in range(1, max_n + 1) if totals[n] > 0]
    if any(matches[n] == 0 for n in orders):
        return 0.0
    log_precision = math.fsum(math.log(matches[n] / totals[n]) for n in orders) / len(orders)
    brevity = math.exp(min(0.0, 1.0 - ref_len / cand_len))
    return 100.0 * brevity * math.exp(log_precision)


def token_accuracy(candidates: Sequence[Sentence], references: Sequence[Sentence]) -> float:
    """Position-wise exact matches divided by the summed min-length overlap."""
    _check_corpora(candidates, references)
    hits = overlap = 0
    for cand, ref in zip(candidates, references):
        n = min(len(cand), len(ref))
        overlap += n
        hits += sum(1 for i in range(n) if cand[i] == ref[i])
    return hits / overlap if overlap else 0.0


@dataclass
class EvalReport:
    bleu: float
    token_accuracy: float
    n_sentences: int
    val_loss: Optional[float] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.bleu <= 100.0:
            raise MetricError(f"bleu out of range: {self.bleu}")
        if not 0.0 <= self.token_accuracy <= 1.0:
            raise MetricError(f"token_accuracy out of range: {self.token_accuracy}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def translate_corpus(model: Model, corpus: Corpus, max_extra: int = 2) -> List[List[int]]:
    """Greedy translations of every source sentence (length budget: source length + max_extra)."""
    return [greedy_translate(model, src, len(src) + max_extra) for src in corpus.sources()]


def evaluate_model(model: Model, corpus: Corpus, with_loss: bool = True) -> EvalReport:
    """Translate `corpus` greedily and score it against its targets."""
    candidates = translate_corpus(model, corpus)
    references = corpus.targets()
    report = EvalReport(
        bleu=bleu_corpus(candidates, references),
        token_accuracy=token_accuracy(candidates, references),
        n_sentences=len(corpus),
        val_loss=validation_loss(model, corpus) if with_loss else None,
    )
    logger.info(f"Evaluated {report.n_sentences} sentences: BLEU {report.bleu:.2f}, "
                f"accuracy {report.token_accuracy:.3f}")
    return report
