"""
SuperTransformer training, from-scratch baselines and gradient verification.

Weight-shared training samples one SubConfig per step and updates only the
leading sub-blocks that config touches. The optimizer keeps its moments per
element and advances them only inside the touched region, so a step on one
config leaves every other bank element bit-identical.
"""

from __future__ import annotations

import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from dynamic_hat.actions_log import write_jsonl
from dynamic_hat.app_core.logging_config import get_logger
from dynamic_hat.corpus import PAD_ID, Batch, Corpus, batch_iterator
from dynamic_hat.design_space import DesignSpace, SubConfig, sample_uniform
from dynamic_hat.elastic_model import (
    Model,
    StandaloneModel,
    SuperWeights,
    forward_logits,
    inherit,
    init_standalone,
    init_super,
    leading_region,
)
from dynamic_hat.exceptions import CorpusError, InvalidSettingError, TrainingDivergedError

logger = get_logger(__name__)

ADAM_BETAS = (0.9, 0.98)
ADAM_EPS = 1e-8
# gradients below this magnitude are compared absolutely
GRAD_FLOOR = 1e-4

Region = Tuple[slice, ...]


@dataclass
class TrainSettings:
    """Optimizer and schedule settings shared by weight-shared and from-scratch training."""
    steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 5e-4
    warmup_steps: int = 400
    label_smoothing: float = 0.1
    gradient_clip_norm: float = 1.0
    seed: int = 0
    log_every: int = 100

    def validate(self) -> List[str]:
        issues = []
        for name in ("steps", "batch_size"):
            if getattr(self, name) < 1:
                issues.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            issues.append(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.warmup_steps < 0:
            issues.append(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if not 0.0 <= self.label_smoothing < 1.0:
            issues.append(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")
        if self.gradient_clip_norm <= 0:
            issues.append(f"gradient_clip_norm must be > 0, got {self.gradient_clip_norm}")
        return issues

    def check(self) -> "TrainSettings":
        issues = self.validate()
        if issues:
            raise InvalidSettingError("Invalid training settings: " + "; ".join(issues), config_key="train")
        return self


@dataclass
class TrainingLog:
    """Per-step records {step, config_hash, loss} plus the configs they refer to."""
    records: List[Dict[str, Any]] = field(default_factory=list)
    configs: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def add(self, step: int, cfg: SubConfig, loss: float) -> None:
        config_hash = cfg.config_hash()
        self.configs.setdefault(config_hash, cfg.to_dict())
        self.records.append({"step": step, "config_hash": config_hash, "loss": loss})

    @property
    def losses(self) -> List[float]:
        return [r["loss"] for r in self.records]

    def final_loss(self, window: int = 50) -> float:
        tail = self.losses[-window:]
        return math.fsum(tail) / len(tail) if tail else float("nan")

    def write(self, path: Union[str, Path]) -> int:
        return write_jsonl(path, self.records)


def inverse_sqrt_lr(step: int, base_lr: float, warmup_steps: int) -> float:
    """Linear warmup to base_lr, then inverse square-root decay (step is 1-based)."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(step / warmup_steps, math.sqrt(warmup_steps / step))


class SliceAdam:
    """Adam over a fixed set of tensors, updating only a given leading region per step.

    Moments and step counts are kept per element, so an element's bias
    correction depends only on how often it has itself been trained.
    """

    def __init__(self, tensors: Mapping[str, torch.Tensor],
                 betas: Tuple[float, float] = ADAM_BETAS, eps: float = ADAM_EPS):
        self.tensors = tensors
        self.betas = betas
        self.eps = eps
        self.exp_avg = {name: torch.zeros_like(t) for name, t in tensors.items()}
        self.exp_avg_sq = {name: torch.zeros_like(t) for name, t in tensors.items()}
        self.step_count = {name: torch.zeros_like(t) for name, t in tensors.items()}

    @torch.no_grad()
    def step(self, regions: Mapping[str, Region], lr: float) -> None:
        beta1, beta2 = self.betas
        for name, region in regions.items():
            param = self.tensors[name]
            if param.grad is None:
                continue
            grad = param.grad[region]
            m = self.exp_avg[name][region]
            v = self.exp_avg_sq[name][region]
            t = self.step_count[name][region]
            m.mul_(beta1).add_(grad, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
            t.add_(1)
            m_hat = m / (1 - torch.pow(beta1, t))
            v_hat = v / (1 - torch.pow(beta2, t))
            param[region].sub_(lr * m_hat / (v_hat.sqrt() + self.eps))


# ============================================================================
# Losses
# ============================================================================

def token_cross_entropy(logits: torch.Tensor, targets: torch.Tensor, label_smoothing: float = 0.0,
                        reduction: str = "mean") -> torch.Tensor:
    """Token-level cross-entropy; positions whose target is pad are excluded."""
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), targets.reshape(-1),
        ignore_index=PAD_ID, label_smoothing=label_smoothing, reduction=reduction,
    )


def batch_loss(model: Model, batch: Batch, label_smoothing: float = 0.0) -> torch.Tensor:
    logits = forward_logits(model, batch.src, batch.tgt_in, batch.src_pad_mask)
    return token_cross_entropy(logits, batch.tgt_out, label_smoothing)


def validation_loss(model: Model, corpus: Corpus, batch_size: int = 64) -> float:
    """Mean nats per target token under teacher forcing (pads excluded, no smoothing)."""
    if len(corpus) == 0:
        raise CorpusError("validation corpus is empty", {"split": corpus.split})
    total, tokens = 0.0, 0
    with torch.no_grad():
        for batch in batch_iterator(corpus, batch_size, seed=0, shuffle=False):
            logits = forward_logits(model, batch.src, batch.tgt_in, batch.src_pad_mask)
            total += float(token_cross_entropy(logits, batch.tgt_out, reduction="sum").double())
            tokens += batch.n_tokens
    return total / tokens


def _endless_batches(corpus: Corpus, batch_size: int, seed: int) -> Iterator[Batch]:
    epoch = 0
    while True:
        yield from batch_iterator(corpus, batch_size, seed=seed + epoch)
        epoch += 1


def _train_loop(
    tensors: Mapping[str, torch.Tensor],
    corpus: Corpus,
    settings: TrainSettings,
    pick: Callable[[int], Tuple[SubConfig, Model]],
    is_finite: Callable[[], bool],
) -> TrainingLog:
    settings.check()
    if len(corpus) == 0:
        raise CorpusError("training corpus is empty", {"split": corpus.split})

    params = list(tensors.values())
    for t in params:
        t.requires_grad_(True)
    optimizer = SliceAdam(tensors)
    batches = _endless_batches(corpus, settings.batch_size, settings.seed)
    log = TrainingLog()
    try:
        for step in range(1, settings.steps + 1):
            cfg, model = pick(step)
            batch = next(batches)
            for t in params:
                t.grad = None
            loss = batch_loss(model, batch, settings.label_smoothing)
            loss_value = float(loss.detach())
            if not math.isfinite(loss_value):
                raise TrainingDivergedError(
                    f"Non-finite loss at step {step}", step=step, config_hash=cfg.config_hash(), loss=loss_value)
            loss.backward()
            torch.nn.utils.clip_grad_norm_([t for t in params if t.grad is not None], settings.gradient_clip_norm)
            regions = {name: leading_region(tuple(w.shape)) for name, w in model.weights.items()}
            optimizer.step(regions, inverse_sqrt_lr(step, settings.learning_rate, settings.warmup_steps))
            log.add(step, cfg, loss_value)

            if step % settings.log_every == 0 or step == settings.steps:
                if not is_finite():
                    raise TrainingDivergedError(
                        f"Non-finite weights after step {step}", step=step, config_hash=cfg.config_hash(),
                        loss=loss_value)
                logger.info(f"step {step}/{settings.steps} loss {log.final_loss(settings.log_every):.4f}")
    finally:
        for t in params:
            t.grad = None
            t.requires_grad_(False)
    return log


def train_super(bank: SuperWeights, space: DesignSpace, corpus: Corpus, settings: TrainSettings) -> TrainingLog:
    """Uniform weight-shared training: one freshly sampled SubConfig per step."""
    rng = random.Random(settings.seed)

    def pick(step: int) -> Tuple[SubConfig, Model]:
        cfg = sample_uniform(space, rng)
        return cfg, inherit(bank, cfg)

    logger.info(f"Training SuperTransformer for {settings.steps} steps ({bank.numel()} parameters)")
    return _train_loop(bank.tensors, corpus, settings, pick, bank.is_finite)


def train_fixed(bank: SuperWeights, cfg: SubConfig, corpus: Corpus, settings: TrainSettings) -> TrainingLog:
    """Train the bank through a single fixed config (overfit checks, fine-tuning one point)."""
    # views must be taken after the bank starts tracking gradients
    return _train_loop(bank.tensors, corpus, settings, lambda step: (cfg, inherit(bank, cfg)), bank.is_finite)


def train_from_scratch(cfg: SubConfig, corpus: Corpus, settings: TrainSettings,
                       dtype: torch.dtype = torch.float32) -> Tuple[StandaloneModel, TrainingLog]:
    """Train freshly initialized weights sized exactly to cfg."""
    model = init_standalone(cfg, corpus.vocab_size, settings.seed, dtype)

    def is_finite() -> bool:
        return all(bool(torch.isfinite(t).all()) for t in model.weights.values())

    logger.info(f"Training {cfg.short_repr()} from scratch for {settings.steps} steps")
    log = _train_loop(model.weights, corpus, settings, lambda step: (cfg, model), is_finite)
    return model, log


# ============================================================================
# Gradient verification
# ============================================================================

def analytic_gradients(bank: SuperWeights, cfg: SubConfig, batch: Batch, loss_scale: float = 1.0,
                       label_smoothing: float = 0.0) -> Dict[str, torch.Tensor]:
    """Autograd gradients of loss_scale·loss w.r.t. every bank tensor (zeros where untouched)."""
    view = inherit(bank, cfg)
    for t in bank.parameters():
        t.grad = None
        t.requires_grad_(True)
    try:
        loss = loss_scale * batch_loss(view, batch, label_smoothing)
        loss.backward()
        return {
            name: (t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t))
            for name, t in bank.tensors.items()
        }
    finally:
        for t in bank.parameters():
            t.grad = None
            t.requires_grad_(False)


@dataclass
class GradientCheckReport:
    max_rel_error: float
    n_checked: int
    n_resampled: int
    max_untouched_abs_grad: float
    worst_parameter: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _envelope_space(cfg: SubConfig) -> DesignSpace:
    """A space just large enough that cfg leaves some bank elements untouched."""
    return DesignSpace(
        encoder_embed_choices=(cfg.encoder_embed_dim, 2 * cfg.encoder_embed_dim),
        decoder_embed_choices=(cfg.decoder_embed_dim, 2 * cfg.decoder_embed_dim),
        ffn_dim_choices=set(cfg.encoder_ffn_dims + cfg.decoder_ffn_dims) | {2 * max(cfg.decoder_ffn_dims)},
        head_choices=set(cfg.encoder_heads + cfg.decoder_heads),
        decoder_layer_choices=range(1, cfg.n_decoder_layers + 2),
        enc_dec_attn_choices=set(cfg.enc_dec_attn),
        encoder_layers=len(cfg.encoder_ffn_dims),
    )


def gradient_check(
    cfg: SubConfig,
    probe_batch: Batch,
    space: Optional[DesignSpace] = None,
    vocab_size: Optional[int] = None,
    n_params: int = 200,
    step: float = 1e-4,
    seed: int = 0,
    label_smoothing: float = 0.0,
) -> GradientCheckReport:
    """Compare autograd against central finite differences on sampled touched parameters.

    Runs in float64. Relative error is |a - n| / max(|a|, |n|, GRAD_FLOOR). A sample
    whose central difference disagrees with the half-step difference sits on a
    ReLU kink and is replaced by another sample.
    """
    space = space or _envelope_space(cfg)
    if vocab_size is None:
        vocab_size = max(8, int(max(probe_batch.src.max(), probe_batch.tgt_out.max())) + 1)
    bank = init_super(space, vocab_size, seed, dtype=torch.float64)
    view = inherit(bank, cfg)
    grads = analytic_gradients(bank, cfg, probe_batch, label_smoothing=label_smoothing)

    masks = view.touched_masks()
    untouched = [float(grads[name][~mask].abs().max()) for name, mask in masks.items() if (~mask).any()]
    candidates: List[Tuple[str, Tuple[int, ...]]] = []
    for name, mask in masks.items():
        candidates.extend((name, tuple(int(i) for i in idx)) for idx in torch.nonzero(mask))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(candidates))

    def loss_at() -> float:
        with torch.no_grad():
            return float(batch_loss(view, probe_batch, label_smoothing))

    def central(tensor: torch.Tensor, idx: Tuple[int, ...], h: float) -> float:
        original = float(tensor[idx])
        tensor[idx] = original + h
        plus = loss_at()
        tensor[idx] = original - h
        minus = loss_at()
        tensor[idx] = original
        return (plus - minus) / (2 * h)

    max_rel, worst, checked, resampled = 0.0, "", 0, 0
    for position in order:
        if checked >= n_params:
            break
        name, idx = candidates[int(position)]
        tensor = bank.tensors[name]
        numeric = central(tensor, idx, step)
        refined = central(tensor, idx, step / 2)
        if abs(numeric - refined) > 1e-5 * max(abs(numeric), abs(refined), GRAD_FLOOR):
            resampled += 1
            continue
        analytic = float(grads[name][idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), GRAD_FLOOR)
        if rel > max_rel:
            max_rel, worst = rel, f"{name}{list(idx)}"
        checked += 1

    report = GradientCheckReport(
        max_rel_error=max_rel,
        n_checked=checked,
        n_resampled=resampled,
        max_untouched_abs_grad=max(untouched, default=0.0),
        worst_parameter=worst,
    )
    logger.info(f"Gradient check: {checked} parameters, max relative error {max_rel:.2e}")
    return report


# ============================================================================
# Inherited vs from-scratch comparison
# ============================================================================

@dataclass
class ComparisonRow:
    config: SubConfig
    inherited_loss: float
    scratch_loss: float

    @property
    def gap(self) -> float:
        return self.inherited_loss - self.scratch_loss

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash(),
            "inherited_loss": self.inherited_loss,
            "scratch_loss": self.scratch_loss,
            "gap": self.gap,
        }


def compare_inherited_vs_scratch(bank: SuperWeights, configs: Sequence[SubConfig], train: Corpus, valid: Corpus,
                                 settings: TrainSettings) -> List[ComparisonRow]:
    """Validation loss of each config inherited from the bank vs trained alone with the same budget."""
    rows = []
    for cfg in configs:
        inherited = validation_loss(inherit(bank, cfg), valid)
        model, _ = train_from_scratch(cfg, train, settings)
        scratch = validation_loss(model, valid)
        rows.append(ComparisonRow(cfg, inherited, scratch))
        logger.info(f"{cfg.short_repr()}: inherited {inherited:.4f} vs scratch {scratch:.4f}")
    return rows


def rank_agreement(rows: Sequence[ComparisonRow]) -> int:
    """Number of configs holding the same rank under inherited and from-scratch loss."""
    by_inherited = sorted(range(len(rows)), key=lambda i: rows[i].inherited_loss)
    by_scratch = sorted(range(len(rows)), key=lambda i: rows[i].scratch_loss)
    return sum(1 for a, b in zip(by_inherited, by_scratch) if a == b)
