"""
Tests for weight-shared training, from-scratch baselines and gradient checks.
"""

import math

import pytest
import torch

from dynamic_hat.corpus import EOS_ID, Corpus, generate_bijective_reversal, make_batch
from dynamic_hat.design_space import DesignSpace, SubConfig, cardinality, reduce_space, validate_config
from dynamic_hat.elastic_model import StandaloneModel, inherit, init_standalone, init_super
from dynamic_hat.exceptions import CorpusError, InvalidSettingError, TrainingDivergedError
from dynamic_hat.training import (
    ComparisonRow,
    SliceAdam,
    TrainSettings,
    analytic_gradients,
    compare_inherited_vs_scratch,
    gradient_check,
    inverse_sqrt_lr,
    rank_agreement,
    token_cross_entropy,
    train_fixed,
    train_from_scratch,
    train_super,
    validation_loss,
)

SMALL = SubConfig(8, 8, (16, 16), (2, 2), 1, (16,), (2,), (-1,))


def quick_settings(**overrides):
    values = dict(steps=4, batch_size=4, learning_rate=1e-3, warmup_steps=2, label_smoothing=0.1, log_every=2)
    values.update(overrides)
    return TrainSettings(**values)


class TestSchedule:
    """Learning-rate schedule and settings."""

    def test_inverse_sqrt_schedule(self):
        """Linear warmup, peak at the warmup step, then 1/sqrt decay."""
        assert inverse_sqrt_lr(200, 1e-3, 400) == pytest.approx(5e-4)
        assert inverse_sqrt_lr(400, 1e-3, 400) == pytest.approx(1e-3)
        assert inverse_sqrt_lr(1600, 1e-3, 400) == pytest.approx(5e-4)

    def test_no_warmup(self):
        """warmup 0 keeps the base rate."""
        assert inverse_sqrt_lr(10, 1e-3, 0) == 1e-3

    def test_settings_validation(self):
        """Bad settings are listed and check() raises."""
        bad = TrainSettings(steps=0, learning_rate=0.0, label_smoothing=1.0)
        assert len(bad.validate()) == 3
        with pytest.raises(InvalidSettingError):
            bad.check()
        assert TrainSettings().validate() == []


class TestSliceAdam:
    """Region-restricted optimizer."""

    def test_only_region_updated(self):
        """Elements outside the region and their moments stay untouched."""
        w = torch.zeros(4, 4)
        w.grad = torch.ones(4, 4)
        opt = SliceAdam({"w": w})
        opt.step({"w": (slice(0, 2), slice(0, 2))}, lr=0.1)
        assert torch.all(w[:2, :2] < 0)
        assert torch.all(w[2:, :] == 0) and torch.all(w[:, 2:] == 0)
        assert opt.step_count["w"].sum().item() == 4

    def test_first_step_magnitude(self):
        """With bias correction the first Adam step has magnitude lr."""
        w = torch.zeros(3)
        w.grad = torch.tensor([0.5, -2.0, 1e-3])
        SliceAdam({"w": w}).step({"w": (slice(0, 3),)}, lr=0.01)
        assert torch.allclose(w.abs(), torch.full((3,), 0.01), rtol=1e-3)


class TestLosses:
    """Token cross-entropy and validation loss."""

    def test_pad_targets_ignored(self):
        """Pad positions do not count."""
        logits = torch.zeros(1, 3, 8)
        targets = torch.tensor([[5, 6, 0]])
        assert token_cross_entropy(logits, targets).item() == pytest.approx(math.log(8))
        total = token_cross_entropy(logits, targets, reduction="sum").item()
        assert total == pytest.approx(2 * math.log(8))

    def test_zero_weights_give_uniform_loss(self, small_valid):
        """A model with all-zero weights scores ln(vocab) per token."""
        model = init_standalone(SMALL, small_valid.vocab_size, seed=0)
        zeros = {k: torch.zeros_like(t) for k, t in model.weights.items()}
        zero_model = StandaloneModel(SMALL, small_valid.vocab_size, zeros)
        assert validation_loss(zero_model, small_valid) == pytest.approx(math.log(12), abs=1e-5)

    def test_duplicated_set_same_loss(self, tiny_bank, small_valid):
        """Validation loss is a per-token mean, so duplicating the set changes nothing."""
        view = inherit(tiny_bank, SMALL)
        doubled = Corpus(small_valid.pairs * 2, small_valid.vocab_size, "valid", small_valid.mapping)
        assert validation_loss(view, doubled) == pytest.approx(validation_loss(view, small_valid), abs=1e-5)

    def test_batch_size_does_not_matter(self, tiny_bank, small_valid):
        """Batching with padding gives the same per-token loss."""
        view = inherit(tiny_bank, SMALL)
        a = validation_loss(view, small_valid, batch_size=1)
        b = validation_loss(view, small_valid, batch_size=8)
        assert a == pytest.approx(b, abs=1e-5)

    def test_hand_built_logits(self, monkeypatch):
        """Three target tokens with known probabilities give the mean of their -log p."""
        corpus = Corpus([([4], [5, 6])], 8)
        logits = torch.zeros(1, 3, 8)
        logits[0, 0, 5] = math.log(7.0)  # p = 1/2
        logits[0, 2, EOS_ID] = math.log(21.0)  # p = 3/4
        monkeypatch.setattr("dynamic_hat.training.forward_logits", lambda *args, **kwargs: logits)
        expected = (math.log(2.0) + math.log(8.0) - math.log(0.75)) / 3
        assert validation_loss(object(), corpus) == pytest.approx(expected, abs=1e-9)

    def test_empty_validation_set(self, tiny_bank):
        """An empty corpus raises CorpusError."""
        with pytest.raises(CorpusError):
            validation_loss(inherit(tiny_bank, SMALL), Corpus([], 12))


class TestTrainSuper:
    """Uniform weight-shared training."""

    def test_untouched_elements_unchanged(self, tiny_space, tiny_bank, small_corpus):
        """Elements outside every sampled config's slice stay bit-identical."""
        before = tiny_bank.clone()
        log = train_super(tiny_bank, tiny_space, small_corpus, quick_settings(steps=3))
        touched = None
        for cfg_dict in log.configs.values():
            masks = inherit(tiny_bank, SubConfig.from_dict(cfg_dict)).touched_masks()
            touched = masks if touched is None else {k: touched[k] | masks[k] for k in masks}
        for name, t in tiny_bank.tensors.items():
            assert torch.equal(t[~touched[name]], before.tensors[name][~touched[name]])
        assert tiny_bank.checksum() != before.checksum()

    def test_same_seed_same_bank(self, tiny_space, small_corpus):
        """Training is deterministic for a seed."""
        checksums = []
        for _ in range(2):
            bank = init_super(tiny_space, small_corpus.vocab_size, seed=0)
            train_super(bank, tiny_space, small_corpus, quick_settings())
            checksums.append(bank.checksum())
        assert checksums[0] == checksums[1]

    def test_log_records(self, tiny_space, tiny_bank, small_corpus, tmp_path):
        """One record per step, every hash resolvable, written as JSONL."""
        log = train_super(tiny_bank, tiny_space, small_corpus, quick_settings())
        assert [r["step"] for r in log.records] == [1, 2, 3, 4]
        assert all(r["config_hash"] in log.configs for r in log.records)
        assert log.write(tmp_path / "train_log.jsonl") == 4

    def test_gradients_released(self, tiny_space, tiny_bank, small_corpus):
        """After training the bank no longer tracks gradients."""
        train_super(tiny_bank, tiny_space, small_corpus, quick_settings(steps=1))
        assert all(not t.requires_grad and t.grad is None for t in tiny_bank.parameters())

    def test_non_finite_loss_raises(self, tiny_space, tiny_bank, small_corpus):
        """A NaN bank stops training with the step and config."""
        with torch.no_grad():
            tiny_bank.tensors["embed"].fill_(float("nan"))
        with pytest.raises(TrainingDivergedError) as exc:
            train_super(tiny_bank, tiny_space, small_corpus, quick_settings())
        assert exc.value.context["step"] == 1
        assert "config_hash" in exc.value.context


class TestTrainFixed:
    """Training through one config."""

    def test_overfits_single_pair(self, tiny_bank):
        """Repeated steps on one pair lower its loss."""
        corpus = Corpus([([4, 5, 6], [7, 8, 9])], 12)
        settings = TrainSettings(steps=50, batch_size=1, learning_rate=3e-3, warmup_steps=0,
                                 label_smoothing=0.0, log_every=25)
        log = train_fixed(tiny_bank, SMALL, corpus, settings)
        assert log.losses[-1] < log.losses[0]
        assert set(log.configs) == {SMALL.config_hash()}

    def test_loss_falls_every_step(self, tiny_bank64):
        """On one repeated pair the loss drops at each of the first 50 steps."""
        corpus = Corpus([([4, 5, 6], [7, 8, 9])], 12)
        settings = TrainSettings(steps=50, batch_size=1, learning_rate=2e-4, warmup_steps=0,
                                 label_smoothing=0.0, log_every=25)
        losses = train_fixed(tiny_bank64, SMALL, corpus, settings).losses
        assert all(b < a for a, b in zip(losses, losses[1:]))


class TestSingleConfigSpace:
    """Weight-shared training when the space holds one config."""

    def test_loss_falls_every_step(self):
        """Sampling always returns the same config, so the loss drops at each of 50 steps."""
        space = DesignSpace((8,), (8,), (16,), (2,), (1,), (-1,), encoder_layers=2)
        bank = init_super(space, 12, seed=0, dtype=torch.float64)
        corpus = Corpus([([4, 5, 6], [7, 8, 9])], 12)
        settings = TrainSettings(steps=50, batch_size=1, learning_rate=2e-4, warmup_steps=0,
                                 label_smoothing=0.0, log_every=25)
        log = train_super(bank, space, corpus, settings)
        assert set(log.configs) == {SMALL.config_hash()}
        assert all(b < a for a, b in zip(log.losses, log.losses[1:]))


class TestTrainFromScratch:
    """Standalone baselines."""

    def test_returns_sized_model(self, small_corpus):
        """The model owns weights sized to the config and the log has every step."""
        model, log = train_from_scratch(SMALL, small_corpus, quick_settings(steps=3))
        assert tuple(model.weights["dec.0.ffn.w1"].shape) == (8, 16)
        assert len(log.records) == 3
        assert math.isfinite(validation_loss(model, small_corpus))

    def test_same_seed_same_weights(self, small_corpus):
        """Two runs with one seed end on identical weights."""
        a, _ = train_from_scratch(SMALL, small_corpus, quick_settings(steps=5))
        b, _ = train_from_scratch(SMALL, small_corpus, quick_settings(steps=5))
        c, _ = train_from_scratch(SMALL, small_corpus, quick_settings(steps=5, seed=1))
        assert a.checksum() == b.checksum()
        assert a.checksum() != c.checksum()


class TestGradientCheck:
    """Autograd against finite differences."""

    def test_gradients_match_finite_differences(self, sample_batch):
        """200 sampled touched parameters agree within 1e-4; untouched gradients are zero."""
        cfg = SubConfig(4, 4, (8, 8), (2, 2), 1, (8,), (2,), (1,))
        report = gradient_check(cfg, sample_batch, vocab_size=12)
        assert report.n_checked == 200
        assert report.max_rel_error < 1e-4
        assert report.max_untouched_abs_grad == 0.0

    def test_gradients_scale_linearly(self, tiny_bank64, sample_batch):
        """Doubling the loss doubles every gradient."""
        one = analytic_gradients(tiny_bank64, SMALL, sample_batch)
        two = analytic_gradients(tiny_bank64, SMALL, sample_batch, loss_scale=2.0)
        for name in one:
            assert torch.allclose(two[name], 2 * one[name], rtol=1e-10, atol=0)

    def test_untouched_gradient_is_zero(self, tiny_bank64, sample_batch):
        """The unused third decoder layer gets an exactly zero gradient."""
        grads = analytic_gradients(tiny_bank64, SMALL, sample_batch)
        assert torch.count_nonzero(grads["dec.2.ffn.w1"]) == 0
        assert torch.count_nonzero(grads["dec.0.ffn.w1"]) > 0


class TestComparison:
    """Inherited vs from-scratch ranking."""

    def test_rank_agreement(self):
        """Identical orders agree everywhere; a reversed triple only in the middle."""
        rows = [ComparisonRow(SMALL, a, b) for a, b in [(1.0, 2.0), (2.0, 3.0), (3.0, 4.0)]]
        assert rank_agreement(rows) == 3
        reversed_rows = [ComparisonRow(SMALL, a, b) for a, b in [(1.0, 4.0), (2.0, 3.0), (3.0, 2.0)]]
        assert rank_agreement(reversed_rows) == 1
        assert rows[0].gap == -1.0
        assert rows[0].to_dict()["config_hash"] == SMALL.config_hash()

    @pytest.mark.slow
    def test_compare_rows(self, tiny_space, tiny_bank, small_corpus, small_valid):
        """One finite row per config."""
        configs = [SMALL, SubConfig(16, 16, (32, 32), (4, 4), 2, (32, 32), (4, 4), (1, -1))]
        rows = compare_inherited_vs_scratch(tiny_bank, configs, small_corpus, small_valid, quick_settings(steps=2))
        assert [r.config for r in rows] == configs
        assert all(math.isfinite(r.inherited_loss) and math.isfinite(r.scratch_loss) for r in rows)


def desk_settings(**overrides):
    values = dict(steps=300, batch_size=16, learning_rate=3e-3, warmup_steps=20, label_smoothing=0.1, log_every=100)
    values.update(overrides)
    return TrainSettings(**values)


@pytest.mark.slow
class TestSharedTrainingQuality:
    """Direction of the inherited, from-scratch and reduced-space comparisons."""

    @pytest.fixture
    def task(self):
        train = generate_bijective_reversal(vocab_size=16, n_pairs=200, len_range=(3, 6), seed=0)
        valid = generate_bijective_reversal(vocab_size=16, n_pairs=50, len_range=(3, 6), seed=1, mapping_seed=0)
        return train, valid

    def test_scratch_no_worse_than_inherited(self, tiny_space, task):
        """With equal step budgets a dedicated model is within 0.05 nats of the shared one or better."""
        train, valid = task
        bank = init_super(tiny_space, train.vocab_size, seed=0)
        train_super(bank, tiny_space, train, desk_settings())
        configs = [
            SMALL,
            SubConfig(16, 8, (32, 32), (4, 4), 2, (16, 32), (2, 4), (-1, 1)),
            SubConfig(16, 16, (32, 32), (4, 4), 3, (32, 32, 32), (4, 4, 4), (1, 1, -1)),
        ]
        rows = compare_inherited_vs_scratch(bank, configs, train, valid, desk_settings())
        for row in rows:
            assert row.scratch_loss <= row.inherited_loss + 0.05

    def test_reduced_space_trains_top_configs_better(self, tiny_space, task):
        """Retraining on the reduced space lowers the loss of most top configs."""
        train, valid = task
        top = [
            SubConfig(16, 16, (32, 32), (4, 4), 1, (32,), (4,), (-1,)),
            SubConfig(16, 16, (32, 32), (4, 4), 2, (32, 32), (4, 4), (-1, -1)),
            SubConfig(16, 16, (32, 32), (4, 4), 2, (32, 32), (4, 4), (1, -1)),
            SubConfig(16, 16, (32, 32), (4, 4), 3, (32, 32, 32), (4, 4, 4), (-1, -1, -1)),
            SubConfig(16, 16, (32, 32), (4, 4), 3, (32, 32, 32), (4, 4, 4), (1, 1, -1)),
        ]
        reduced = reduce_space(tiny_space, top)
        assert cardinality(reduced) < cardinality(tiny_space)
        assert all(validate_config(reduced, cfg) == [] for cfg in top)

        original_bank = init_super(tiny_space, train.vocab_size, seed=0)
        train_super(original_bank, tiny_space, train, desk_settings())
        reduced_bank = init_super(reduced, train.vocab_size, seed=0)
        train_super(reduced_bank, reduced, train, desk_settings())
        better = sum(
            validation_loss(inherit(reduced_bank, cfg), valid) <= validation_loss(inherit(original_bank, cfg), valid)
            for cfg in top
        )
        assert better >= 3
