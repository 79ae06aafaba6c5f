"""
Latency-constrained architecture search.

Evolutionary search keeps a population of configs whose predicted latency
meets the constraint and breeds it by per-field crossover and mutation over
fixed-length genes (decoder fields padded to the maximum depth). An
exhaustive search serves as the oracle on small spaces.
"""

from __future__ import annotations

import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Tuple

from dynamic_hat.app_core.logging_config import get_logger, is_debug_enabled
from dynamic_hat.design_space import (
    DesignSpace,
    SubConfig,
    attended_layers,
    cardinality,
    enumerate_configs,
    sample_uniform,
    smallest_config,
)
from dynamic_hat.exceptions import InfeasibleConstraintError, InvalidSettingError, SpaceTooLargeError
from dynamic_hat.runtime import OperatingLibrary, OperatingPoint

logger = get_logger(__name__)

EXHAUSTIVE_LIMIT = 100_000

LossFn = Callable[[SubConfig], float]
MeasureFn = Callable[[SubConfig], float]


class Predictor(Protocol):
    def predict(self, cfg: SubConfig) -> float: ...


@dataclass
class SearchSettings:
    population_size: int = 50
    n_iterations: int = 15
    parent_fraction: float = 0.25
    crossover_fraction: float = 0.5
    mutation_fraction: float = 0.5
    mutation_prob: float = 0.3
    seed: int = 0
    max_retries: int = 50
    max_workers: int = 1

    def validate(self) -> List[str]:
        issues = []
        if self.population_size < 4:
            issues.append(f"population_size must be >= 4, got {self.population_size}")
        if self.n_iterations < 1:
            issues.append(f"n_iterations must be >= 1, got {self.n_iterations}")
        for name in ("parent_fraction", "crossover_fraction", "mutation_fraction"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                issues.append(f"{name} must lie in (0, 1], got {value}")
        if self.crossover_fraction + self.mutation_fraction > 1.0 + 1e-12:
            issues.append("crossover_fraction + mutation_fraction must be <= 1")
        if not 0.0 < self.mutation_prob < 1.0:
            issues.append(f"mutation_prob must lie in (0, 1), got {self.mutation_prob}")
        if self.max_retries < 1:
            issues.append(f"max_retries must be >= 1, got {self.max_retries}")
        if self.max_workers < 1:
            issues.append(f"max_workers must be >= 1, got {self.max_workers}")
        return issues

    def check(self) -> "SearchSettings":
        issues = self.validate()
        if issues:
            raise InvalidSettingError("Invalid search settings: " + "; ".join(issues), config_key="search")
        return self


@dataclass
class SearchResult:
    best: Optional[SubConfig]
    best_loss: float
    constraint_ms: float
    predicted_ms: Optional[float] = None
    history: List[float] = field(default_factory=list)
    n_evaluations: int = 0

    @property
    def feasible(self) -> bool:
        return self.best is not None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "feasible": self.feasible,
            "constraint_ms": self.constraint_ms,
            "config": self.best.to_dict() if self.best else None,
            "best_loss": self.best_loss if self.feasible else None,
            "predicted_ms": self.predicted_ms,
            "history": list(self.history),
            "n_evaluations": self.n_evaluations,
        }


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def surrogate_loss(space: DesignSpace) -> LossFn:
    """Analytic stand-in for validation loss: deeper and wider is better, depth matters most."""
    max_attended = max(attended_layers(a) for a in space.enc_dec_attn_choices)

    def loss(cfg: SubConfig) -> float:
        return (
            4.0
            + 1.6 / cfg.n_decoder_layers
            + 0.5 * (1 - cfg.decoder_embed_dim / space.max_decoder_embed)
            + 0.3 * (1 - cfg.encoder_embed_dim / space.max_encoder_embed)
            + 0.4 * (1 - _mean(cfg.decoder_ffn_dims) / space.max_ffn)
            + 0.2 * (1 - _mean(cfg.encoder_ffn_dims) / space.max_ffn)
            + 0.05 * (1 - _mean([attended_layers(a) for a in cfg.enc_dec_attn]) / max_attended)
            + 0.05 * (1 - _mean(cfg.decoder_heads) / space.max_heads)
        )
    return loss


# ============================================================================
# Genes
# ============================================================================

def _gene_choices(space: DesignSpace) -> List[Tuple[int, ...]]:
    le, lm = space.encoder_layers, space.max_decoder_layers
    return (
        [space.encoder_embed_choices, space.decoder_embed_choices]
        + [space.ffn_dim_choices] * le + [space.head_choices] * le
        + [space.decoder_layer_choices]
        + [space.ffn_dim_choices] * lm + [space.head_choices] * lm + [space.enc_dec_attn_choices] * lm
    )


def to_gene(space: DesignSpace, cfg: SubConfig) -> List[int]:
    """Flatten cfg; decoder slots past its depth take the smallest choice."""
    lm = space.max_decoder_layers

    def pad(values: Tuple[int, ...], filler: int) -> List[int]:
        return list(values) + [filler] * (lm - len(values))

    return (
        [cfg.encoder_embed_dim, cfg.decoder_embed_dim]
        + list(cfg.encoder_ffn_dims) + list(cfg.encoder_heads)
        + [cfg.n_decoder_layers]
        + pad(cfg.decoder_ffn_dims, space.ffn_dim_choices[0])
        + pad(cfg.decoder_heads, space.head_choices[0])
        + pad(cfg.enc_dec_attn, space.enc_dec_attn_choices[0])
    )


def from_gene(space: DesignSpace, gene: Sequence[int]) -> SubConfig:
    le, lm = space.encoder_layers, space.max_decoder_layers
    encoder = gene[2:2 + 2 * le]
    depth = gene[2 + 2 * le]
    decoder = gene[3 + 2 * le:]
    return SubConfig(
        gene[0], gene[1], tuple(encoder[:le]), tuple(encoder[le:]), depth,
        tuple(decoder[:depth]), tuple(decoder[lm:lm + depth]), tuple(decoder[2 * lm:2 * lm + depth]),
    )


def mutate(space: DesignSpace, cfg: SubConfig, prob: float, rng: random.Random) -> SubConfig:
    """Resample each gene field from its choice set with probability `prob`."""
    gene = to_gene(space, cfg)
    for i, choices in enumerate(_gene_choices(space)):
        if rng.random() < prob:
            gene[i] = rng.choice(choices)
    return from_gene(space, gene)


def crossover(space: DesignSpace, a: SubConfig, b: SubConfig, rng: random.Random) -> SubConfig:
    """Per-field uniform choice between two parents."""
    gene_a, gene_b = to_gene(space, a), to_gene(space, b)
    return from_gene(space, [x if rng.random() < 0.5 else y for x, y in zip(gene_a, gene_b)])


# ============================================================================
# Search engines
# ============================================================================

class _FitnessCache:
    """Memoized loss evaluation; a batch is evaluated concurrently but reduced in input order."""

    def __init__(self, loss_fn: LossFn, max_workers: int):
        self.loss_fn = loss_fn
        self.max_workers = max_workers
        self.values: Dict[str, float] = {}

    def evaluate(self, configs: Sequence[SubConfig]) -> List[float]:
        pending: Dict[str, SubConfig] = {}
        for cfg in configs:
            key = cfg.key()
            if key not in self.values and key not in pending:
                pending[key] = cfg
        if pending:
            if self.max_workers > 1:
                with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                    losses = list(pool.map(self.loss_fn, pending.values()))
            else:
                losses = [self.loss_fn(cfg) for cfg in pending.values()]
            self.values.update(zip(pending.keys(), (float(v) for v in losses)))
        return [self.values[cfg.key()] for cfg in configs]


def evolutionary_search(space: DesignSpace, constraint_ms: float, predictor: Predictor, loss_fn: LossFn,
                        settings: Optional[SearchSettings] = None) -> SearchResult:
    """Return the lowest-loss config found whose predicted latency is <= constraint_ms.

    An infeasible result (best is None) is returned when no feasible config
    turns up within population_size·100 random draws.
    """
    settings = (settings or SearchSettings()).check()
    rng = random.Random(settings.seed)
    pop_size = settings.population_size

    def feasible(cfg: SubConfig) -> bool:
        return predictor.predict(cfg) <= constraint_ms

    population: List[SubConfig] = []
    seed_cfg = smallest_config(space)
    if feasible(seed_cfg):
        population.append(seed_cfg)
    draws = 0
    while len(population) < pop_size and draws < pop_size * 100:
        cfg = sample_uniform(space, rng)
        draws += 1
        if feasible(cfg):
            population.append(cfg)
    if not population:
        logger.info(f"No feasible config for {constraint_ms} ms after {draws} draws")
        return SearchResult(None, math.inf, constraint_ms)

    fitness = _FitnessCache(loss_fn, settings.max_workers)
    best: Optional[SubConfig] = None
    best_loss = math.inf
    history: List[float] = []

    def feasible_child(make: Callable[[], SubConfig], fallback: SubConfig) -> SubConfig:
        for _ in range(settings.max_retries):
            child = make()
            if feasible(child):
                return child
        return fallback

    for generation in range(settings.n_iterations + 1):
        losses = fitness.evaluate(population)
        ranked = sorted(zip(population, losses), key=lambda item: (item[1], item[0].key()))
        top_cfg, top_loss = ranked[0]
        if top_loss < best_loss or (top_loss == best_loss and best is not None and top_cfg.key() < best.key()):
            best, best_loss = top_cfg, top_loss
        history.append(best_loss)
        if is_debug_enabled():
            logger.debug(f"generation {generation}: best loss {best_loss:.5f} ({best.short_repr()})")
        if generation == settings.n_iterations:
            break

        n_parents = min(len(ranked), max(2, int(round(settings.parent_fraction * pop_size))))
        parents = [cfg for cfg, _ in ranked[:n_parents]]
        slots = pop_size - n_parents
        n_mutation = int(round(settings.mutation_fraction * slots))
        n_crossover = min(int(round(settings.crossover_fraction * slots)), slots - n_mutation)

        children: List[SubConfig] = []
        for _ in range(n_mutation):
            parent = rng.choice(parents)
            children.append(feasible_child(lambda: mutate(space, parent, settings.mutation_prob, rng), parent))
        for _ in range(n_crossover):
            a, b = rng.choice(parents), rng.choice(parents)
            children.append(feasible_child(lambda: crossover(space, a, b, rng), a))
        while len(children) < slots:
            children.append(feasible_child(lambda: sample_uniform(space, rng), rng.choice(parents)))
        population = parents + children

    return SearchResult(
        best=best,
        best_loss=best_loss,
        constraint_ms=constraint_ms,
        predicted_ms=predictor.predict(best),
        history=history,
        n_evaluations=len(fitness.values),
    )


def exhaustive_search(space: DesignSpace, constraint_ms: float, predictor: Predictor, loss_fn: LossFn,
                      limit: int = EXHAUSTIVE_LIMIT) -> SearchResult:
    """Enumerate the whole space; ties go to the lexicographically smallest serialized config."""
    size = cardinality(space)
    if size > limit:
        raise SpaceTooLargeError(f"space has {size} configs; exhaustive search allows at most {limit}",
                                 cardinality=size, limit=limit)
    best: Optional[SubConfig] = None
    best_rank: Tuple[float, str] = (math.inf, "")
    for cfg in enumerate_configs(space):
        if predictor.predict(cfg) > constraint_ms:
            continue
        rank = (float(loss_fn(cfg)), cfg.key())
        if best is None or rank < best_rank:
            best, best_rank = cfg, rank
    if best is None:
        raise InfeasibleConstraintError(f"no config meets {constraint_ms} ms", constraint_ms=constraint_ms)
    return SearchResult(best, best_rank[0], constraint_ms, predictor.predict(best), [best_rank[0]], size)


def build_operating_library(
    space: DesignSpace,
    constraints: Sequence[float],
    predictor: Predictor,
    loss_fn: LossFn,
    measure_fn: MeasureFn,
    settings: Optional[SearchSettings] = None,
    hardware_id: str = "unknown",
    bleu_fn: Optional[Callable[[SubConfig], float]] = None,
) -> OperatingLibrary:
    """Search each constraint, measure the winner and collect the operating points.

    Infeasible constraints are recorded as gaps. `loss_fn` doubles as the
    recorded validation loss.
    """
    if not constraints:
        raise InfeasibleConstraintError("no latency constraints given")
    settings = settings or SearchSettings()
    points: List[OperatingPoint] = []
    gaps: List[float] = []
    for constraint in sorted(float(c) for c in constraints):
        result = evolutionary_search(space, constraint, predictor, loss_fn, settings)
        if not result.feasible:
            gaps.append(constraint)
            logger.warning(f"Constraint {constraint} ms is infeasible; recorded as a gap")
            continue
        measured = float(measure_fn(result.best))
        points.append(OperatingPoint(
            config=result.best,
            measured_latency_ms=measured,
            val_loss=result.best_loss,
            bleu=bleu_fn(result.best) if bleu_fn else None,
            constraint_ms=constraint,
            predicted_ms=result.predicted_ms,
        ))
        logger.info(f"{constraint} ms -> {result.best.short_repr()} "
                    f"(predicted {result.predicted_ms:.2f} ms, measured {measured:.2f} ms, loss {result.best_loss:.4f})")
    if not points:
        raise InfeasibleConstraintError("every latency constraint is infeasible",
                                        constraint_ms=max(float(c) for c in constraints))
    return OperatingLibrary(points, gaps, hardware_id)
