"""
Tests for corpus BLEU, token accuracy and model evaluation.
"""

import math

import pytest

from dynamic_hat.design_space import SubConfig
from dynamic_hat.elastic_model import inherit
from dynamic_hat.eval_metrics import EvalReport, bleu_corpus, evaluate_model, token_accuracy, translate_corpus
from dynamic_hat.exceptions import MetricError


class TestBleu:
    """Corpus BLEU."""

    def test_identical_corpus(self):
        """Candidates equal to references score 100."""
        refs = [[4, 5, 6, 7, 8], [9, 10, 11, 12]]
        assert bleu_corpus(refs, refs) == pytest.approx(100.0)

    def test_disjoint_corpus(self):
        """No shared unigram scores 0."""
        assert bleu_corpus([[1, 2, 3, 4]], [[5, 6, 7, 8]]) == 0.0

    def test_brevity_penalty(self):
        """A correct but short candidate is penalized by exp(1 - r/c)."""
        assert bleu_corpus([[1, 2]], [[1, 2, 3]]) == pytest.approx(100.0 * math.exp(-0.5))

    def test_missing_higher_order_match(self):
        """A zero precision at an order that has candidate n-grams gives 0."""
        assert bleu_corpus([[1, 2, 3, 4]], [[1, 3, 2, 4]]) == 0.0

    def test_corpus_level_pooling(self):
        """Counts are pooled over the corpus before the geometric mean."""
        candidates = [[1, 2, 3, 4], [5, 6]]
        references = [[1, 2, 3, 4], [5, 6]]
        assert bleu_corpus(candidates, references) == pytest.approx(100.0)

    def test_empty_candidate_scores_zero(self):
        """Empty candidates give 0."""
        assert bleu_corpus([[]], [[1, 2]]) == 0.0

    def test_pair_order_does_not_matter(self):
        """Shuffling the sentence pairs leaves the corpus score unchanged."""
        candidates = [[4, 5, 6, 7], [8, 9, 10], [4, 6, 5, 7, 8], [11, 12, 13, 14, 15]]
        references = [[4, 5, 6, 7, 9], [8, 9, 10], [4, 5, 6, 7, 8], [11, 12, 13, 14]]
        order = [2, 0, 3, 1]
        shuffled = bleu_corpus([candidates[i] for i in order], [references[i] for i in order])
        assert shuffled == pytest.approx(bleu_corpus(candidates, references), abs=1e-12)

    def test_brevity_penalty_shrinks_with_length(self):
        """Shorter correct prefixes of one reference score lower, exactly 100·exp(1 - r/c)."""
        reference = list(range(4, 14))
        scores = []
        for k in range(10, 3, -1):
            score = bleu_corpus([reference[:k]], [reference])
            assert score == pytest.approx(100.0 * math.exp(1.0 - 10 / k), abs=1e-9)
            scores.append(score)
        assert all(a > b for a, b in zip(scores, scores[1:]))

    def test_length_mismatch(self):
        """Different corpus sizes raise MetricError."""
        with pytest.raises(MetricError):
            bleu_corpus([[1]], [[1], [2]])

    def test_empty_corpus(self):
        """An empty corpus raises MetricError."""
        with pytest.raises(MetricError):
            bleu_corpus([], [])


class TestTokenAccuracy:
    """Position-wise accuracy."""

    def test_overlap_denominator(self):
        """Only overlapping positions count."""
        assert token_accuracy([[1, 2, 3]], [[1, 5]]) == 0.5

    def test_perfect(self):
        """Exact copies score 1."""
        assert token_accuracy([[4, 5], [6]], [[4, 5], [6]]) == 1.0

    def test_no_overlap(self):
        """Empty candidates give 0."""
        assert token_accuracy([[]], [[1]]) == 0.0


class TestEvaluateModel:
    """Greedy evaluation of a model."""

    def test_report_fields(self, tiny_bank, small_valid):
        """The report holds bounded metrics and the validation loss."""
        view = inherit(tiny_bank, SubConfig(8, 8, (16, 16), (2, 2), 1, (16,), (2,), (-1,)))
        report = evaluate_model(view, small_valid)
        assert 0.0 <= report.bleu <= 100.0
        assert 0.0 <= report.token_accuracy <= 1.0
        assert report.n_sentences == len(small_valid)
        assert math.isfinite(report.val_loss)
        assert set(report.to_dict()) == {"bleu", "token_accuracy", "n_sentences", "val_loss"}

    def test_translation_budget(self, tiny_bank, small_valid):
        """Each translation is at most two tokens longer than its source."""
        view = inherit(tiny_bank, SubConfig(8, 8, (16, 16), (2, 2), 1, (16,), (2,), (-1,)))
        outputs = translate_corpus(view, small_valid)
        assert all(len(out) <= len(src) + 2 for out, src in zip(outputs, small_valid.sources()))

    def test_out_of_range_report(self):
        """EvalReport rejects impossible values."""
        with pytest.raises(MetricError):
            EvalReport(bleu=101.0, token_accuracy=0.5, n_sentences=1)
