"""
Latency measurement protocol, latency datasets and the linear latency predictor.

Measurement: translate a fixed 30-token sentence into exactly 30 tokens,
repeat 300 times after a few discarded warm-up runs, drop the fastest and
slowest 10% and average the rest.

Simulated hardware ("sim-gpu", "sim-cpu") replaces a device with an analytic
CostModel driven through a virtual clock, so whole pipelines stay
deterministic on a desk machine.
"""

from __future__ import annotations

import math
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from sklearn.linear_model import LinearRegression, Ridge
from sklearn.metrics import mean_squared_error
from sklearn.model_selection import train_test_split

from dynamic_hat.app_core.logging_config import get_logger
from dynamic_hat.corpus import N_SPECIAL
from dynamic_hat.design_space import (
    DEFAULT_SOURCE_POSITIONS,
    FEATURE_NAMES,
    DesignSpace,
    SubConfig,
    attended_layers,
    encode_features,
    largest_config,
    sample_uniform,
    smallest_config,
)
from dynamic_hat.elastic_model import Model, SuperWeights, greedy_translate, inherit
from dynamic_hat.exceptions import InvalidSettingError, MeasurementError, PredictorError

logger = get_logger(__name__)

FORMAT_VERSION = 1
HARDWARE_CHOICES = ("real", "sim-gpu", "sim-cpu")
RIDGE_ALPHA = 1e-3

# Full-width costs (ms) per hardware: base, per decoder layer, all FFNs at max
# width, all embeddings at max width, per attended encoder layer.
_PRESETS: Dict[str, Tuple[float, float, float, float, float]] = {
    "sim-gpu": (60.0, 300.0, 90.0, 60.0, 6.0),
    "sim-cpu": (300.0, 1000.0, 2400.0, 1600.0, 30.0),
}


@dataclass
class LatencySettings:
    repeats: int = 300
    trim: float = 0.1
    sentence_len: int = DEFAULT_SOURCE_POSITIONS
    warmup: int = 5
    hardware: str = "sim-gpu"
    n_samples: int = 200
    noise_sd_ms: float = 0.0
    seed: int = 0

    def validate(self) -> List[str]:
        issues = []
        if self.repeats < 3:
            issues.append(f"repeats must be >= 3, got {self.repeats}")
        if not 0.0 <= self.trim < 0.5:
            issues.append(f"trim must lie in [0, 0.5), got {self.trim}")
        if self.sentence_len < 1:
            issues.append(f"sentence_len must be >= 1, got {self.sentence_len}")
        if self.warmup < 0:
            issues.append(f"warmup must be >= 0, got {self.warmup}")
        if self.hardware not in HARDWARE_CHOICES:
            issues.append(f"hardware must be one of {', '.join(HARDWARE_CHOICES)}, got {self.hardware!r}")
        if self.n_samples < 1:
            issues.append(f"n_samples must be >= 1, got {self.n_samples}")
        if self.noise_sd_ms < 0:
            issues.append(f"noise_sd_ms must be >= 0, got {self.noise_sd_ms}")
        return issues

    def check(self) -> "LatencySettings":
        issues = self.validate()
        if issues:
            raise InvalidSettingError("Invalid latency settings: " + "; ".join(issues), config_key="latency")
        return self


# ============================================================================
# Trimmed mean
# ============================================================================

def trim_count(n: int, trim_frac: float) -> int:
    """Samples dropped from EACH end: round-half-up of trim_frac·n, keeping at least one."""
    return min(int(math.floor(trim_frac * n + 0.5)), (n - 1) // 2)


def trimmed_mean_latency(samples: Sequence[float], trim_frac: float = 0.1) -> float:
    """Sort, drop trim_count(n) values from each end, average the rest."""
    n = len(samples)
    if n < 3:
        raise MeasurementError(f"trimmed mean needs at least 3 samples, got {n}", {"n_samples": n})
    if not 0.0 <= trim_frac < 0.5:
        raise MeasurementError(f"trim_frac must lie in [0, 0.5), got {trim_frac}", {"trim_frac": trim_frac})
    k = trim_count(n, trim_frac)
    kept = np.sort(np.asarray(samples, dtype=np.float64))[k:n - k]
    if kept[0] == kept[-1]:
        return float(kept[0])
    return math.fsum(kept.tolist()) / len(kept)


# ============================================================================
# Clocks and runners
# ============================================================================

class Clock(Protocol):
    def start(self) -> None: ...

    def elapsed_ms(self) -> float: ...


class PerfCounterClock:
    """Wall clock backed by time.perf_counter_ns."""

    def __init__(self) -> None:
        self._t0 = time.perf_counter_ns()

    def start(self) -> None:
        self._t0 = time.perf_counter_ns()

    def elapsed_ms(self) -> float:
        return (time.perf_counter_ns() - self._t0) / 1e6


class VirtualClock:
    """Clock that only moves when advanced; elapsed time is the sum of advances since start."""

    def __init__(self) -> None:
        self._elapsed = 0.0

    def start(self) -> None:
        self._elapsed = 0.0

    def advance(self, ms: float) -> None:
        self._elapsed += ms

    def elapsed_ms(self) -> float:
        return self._elapsed


class Runner(Protocol):
    clock: Clock

    def run(self, sentence_len: int) -> None: ...


@dataclass(frozen=True)
class CostModel:
    """Analytic latency of a config on a simulated device (ms at the reference sentence length)."""
    base_ms: float
    per_decoder_layer_ms: float
    per_ffn_unit_ms: float
    per_embed_unit_ms: float
    per_attended_layer_ms: float
    noise_sd_ms: float = 0.0
    name: str = "custom"

    def __post_init__(self) -> None:
        for key in ("base_ms", "per_decoder_layer_ms", "per_ffn_unit_ms", "per_embed_unit_ms",
                    "per_attended_layer_ms", "noise_sd_ms"):
            if getattr(self, key) < 0:
                raise InvalidSettingError(f"CostModel.{key} must be >= 0", config_key=key)

    @classmethod
    def preset(cls, name: str, space: DesignSpace, noise_sd_ms: float = 0.0) -> "CostModel":
        """sim-gpu (depth-dominated, width-cheap) or sim-cpu (width-expensive), scaled to the space."""
        if name not in _PRESETS:
            raise InvalidSettingError(f"Unknown simulated hardware {name!r}", config_key="hardware")
        base, layer, ffn_full, embed_full, attended = _PRESETS[name]
        n_layers = space.encoder_layers + space.max_decoder_layers
        return cls(
            base_ms=base,
            per_decoder_layer_ms=layer,
            per_ffn_unit_ms=ffn_full / (space.max_ffn * n_layers),
            per_embed_unit_ms=embed_full / (space.max_embed * n_layers),
            per_attended_layer_ms=attended,
            noise_sd_ms=noise_sd_ms,
            name=name,
        )

    def latency_ms(self, cfg: SubConfig) -> float:
        n_enc = len(cfg.encoder_ffn_dims)
        return (
            self.base_ms
            + self.per_decoder_layer_ms * cfg.n_decoder_layers
            + self.per_ffn_unit_ms * (sum(cfg.encoder_ffn_dims) + sum(cfg.decoder_ffn_dims))
            + self.per_embed_unit_ms * (cfg.encoder_embed_dim * n_enc + cfg.decoder_embed_dim * cfg.n_decoder_layers)
            + self.per_attended_layer_ms * sum(attended_layers(a) for a in cfg.enc_dec_attn)
        )

    def predict(self, cfg: SubConfig) -> float:
        return self.latency_ms(cfg)

    def feature_coefficients(self, encoder_layers: int,
                             source_positions: int = DEFAULT_SOURCE_POSITIONS) -> Tuple[float, List[float]]:
        """(intercept, coefficients) of this model over encode_features, in FEATURE_NAMES order."""
        by_name = {
            "encoder_embed_dim": self.per_embed_unit_ms * encoder_layers,
            "n_decoder_layers": self.per_decoder_layer_ms,
            "encoder_ffn_sum": self.per_ffn_unit_ms,
            "decoder_ffn_sum": self.per_ffn_unit_ms,
            "cross_attention_span": self.per_attended_layer_ms / source_positions,
            "decoder_embed_x_layers": self.per_embed_unit_ms,
        }
        return self.base_ms, [by_name.get(name, 0.0) for name in FEATURE_NAMES]


class SimulatedRunner:
    """Fake runner: each run advances a virtual clock by the cost model's latency (plus noise)."""

    def __init__(self, cost: CostModel, cfg: SubConfig, seed: int = 0):
        self.cost = cost
        self.cfg = cfg
        self.clock = VirtualClock()
        self._rng = np.random.default_rng(seed)
        self._latency = cost.latency_ms(cfg)

    def run(self, sentence_len: int) -> None:
        ms = self._latency * (sentence_len / DEFAULT_SOURCE_POSITIONS)
        if self.cost.noise_sd_ms > 0:
            ms = max(ms + float(self._rng.normal(0.0, self.cost.noise_sd_ms)), 1e-6)
        self.clock.advance(ms)


class ModelRunner:
    """Times real greedy translations of a fixed source sentence through a model or view."""

    def __init__(self, model: Model, sentence_len: int = DEFAULT_SOURCE_POSITIONS, seed: int = 0):
        self.model = model
        self.clock = PerfCounterClock()
        rng = np.random.default_rng(seed)
        self._source = [int(t) for t in rng.integers(N_SPECIAL, model.vocab_size, size=sentence_len)]

    def run(self, sentence_len: int) -> None:
        src = (self._source * (sentence_len // len(self._source) + 1))[:sentence_len]
        out = greedy_translate(self.model, src, sentence_len, force_length=True)
        if len(out) != sentence_len:
            raise MeasurementError(f"runner produced {len(out)} tokens, expected {sentence_len}")


def measure_model_latency(runner: Runner, sentence_len: int = DEFAULT_SOURCE_POSITIONS, repeats: int = 300,
                          trim_frac: float = 0.10, warmup: int = 5) -> float:
    """Trimmed-mean latency (ms) of `repeats` timed translations after `warmup` untimed ones."""
    samples: List[float] = []
    try:
        for _ in range(warmup):
            runner.run(sentence_len)
        for _ in range(repeats):
            runner.clock.start()
            runner.run(sentence_len)
            samples.append(runner.clock.elapsed_ms())
    except MeasurementError:
        raise
    except Exception as e:
        raise MeasurementError(f"Runner failed: {e}", {"completed_runs": len(samples)}) from e
    return trimmed_mean_latency(samples, trim_frac)


# ============================================================================
# Latency datasets
# ============================================================================

@dataclass
class LatencySample:
    config: SubConfig
    features: List[float]
    latency_ms: float
    hardware_id: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "hardware_id": self.hardware_id,
            "config": self.config.to_dict(),
            "features": list(self.features),
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LatencySample":
        return cls(
            config=SubConfig.from_dict(data["config"]),
            features=[float(v) for v in data["features"]],
            latency_ms=float(data["latency_ms"]),
            hardware_id=str(data["hardware_id"]),
        )


@dataclass
class LatencyDataset:
    samples: List[LatencySample]
    hardware_id: str
    n_failed: int = 0

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[LatencySample]:
        return iter(self.samples)

    def __getitem__(self, i: int) -> LatencySample:
        return self.samples[i]


MeasureFn = Callable[[SubConfig], float]


def build_latency_dataset(space: DesignSpace, n_samples: int, measure_fn: MeasureFn, seed: int,
                          hardware_id: str = "sim-gpu", max_workers: int = 1) -> LatencyDataset:
    """Measure n_samples uniformly sampled configs; failed measurements are skipped and counted.

    max_workers > 1 runs measurements in a thread pool; use it only with the
    deterministic simulated backends, real timing must stay serial.
    """
    if n_samples < 1:
        raise MeasurementError(f"n_samples must be >= 1, got {n_samples}")
    rng = random.Random(seed)
    configs = [sample_uniform(space, rng) for _ in range(n_samples)]

    def measure(cfg: SubConfig) -> Optional[float]:
        try:
            ms = float(measure_fn(cfg))
        except Exception as e:
            logger.warning(f"Measurement failed for {cfg.config_hash()}: {e}")
            return None
        if not ms > 0 or not math.isfinite(ms):
            logger.warning(f"Discarding non-positive latency {ms} for {cfg.config_hash()}")
            return None
        return ms

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            latencies = list(pool.map(measure, configs))
    else:
        latencies = [measure(cfg) for cfg in configs]

    samples = [
        LatencySample(cfg, encode_features(cfg), ms, hardware_id)
        for cfg, ms in zip(configs, latencies) if ms is not None
    ]
    n_failed = n_samples - len(samples)
    if n_failed:
        logger.warning(f"{n_failed} of {n_samples} latency measurements failed and were skipped")
    logger.info(f"Collected {len(samples)} latency samples on {hardware_id}")
    return LatencyDataset(samples, hardware_id, n_failed)


def simulated_measure_fn(cost: CostModel, settings: LatencySettings) -> MeasureFn:
    """measure_fn running the full protocol on a SimulatedRunner."""
    def measure(cfg: SubConfig) -> float:
        seed = int(cfg.config_hash(), 16) ^ settings.seed
        runner = SimulatedRunner(cost, cfg, seed=seed)
        return measure_model_latency(runner, settings.sentence_len, settings.repeats, settings.trim, settings.warmup)
    return measure


def model_measure_fn(bank: SuperWeights, settings: LatencySettings) -> MeasureFn:
    """measure_fn timing real greedy translation through views inherited from `bank`."""
    def measure(cfg: SubConfig) -> float:
        runner = ModelRunner(inherit(bank, cfg), settings.sentence_len, settings.seed)
        return measure_model_latency(runner, settings.sentence_len, settings.repeats, settings.trim, settings.warmup)
    return measure


def matched_budget(cost: CostModel, space: DesignSpace, fraction: float = 0.5) -> float:
    """Budget at `fraction` of the way from the cheapest to the most expensive config."""
    low = cost.latency_ms(smallest_config(space))
    high = cost.latency_ms(largest_config(space))
    return low + fraction * (high - low)


# ============================================================================
# Predictor
# ============================================================================

@dataclass
class LatencyPredictor:
    """Linear model over encode_features with intercept."""
    intercept: float
    coefficients: List[float]
    hardware_id: str = "sim-gpu"
    holdout_rmse_ms: float = 0.0
    n_samples: int = 0
    rank_deficient: bool = False
    source_positions: int = DEFAULT_SOURCE_POSITIONS
    feature_names: List[str] = field(default_factory=lambda: list(FEATURE_NAMES))

    def predict(self, cfg: SubConfig) -> float:
        x = np.asarray(encode_features(cfg, self.source_positions), dtype=np.float64)
        return float(self.intercept + np.dot(np.asarray(self.coefficients, dtype=np.float64), x))

    def coefficient(self, feature: str) -> float:
        return self.coefficients[self.feature_names.index(feature)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "hardware_id": self.hardware_id,
            "intercept": self.intercept,
            "coefficients": list(self.coefficients),
            "feature_names": list(self.feature_names),
            "holdout_rmse_ms": self.holdout_rmse_ms,
            "n_samples": self.n_samples,
            "rank_deficient": self.rank_deficient,
            "source_positions": self.source_positions,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LatencyPredictor":
        return cls(
            intercept=float(data["intercept"]),
            coefficients=[float(c) for c in data["coefficients"]],
            hardware_id=str(data.get("hardware_id", "unknown")),
            holdout_rmse_ms=float(data.get("holdout_rmse_ms", 0.0)),
            n_samples=int(data.get("n_samples", 0)),
            rank_deficient=bool(data.get("rank_deficient", False)),
            source_positions=int(data.get("source_positions", DEFAULT_SOURCE_POSITIONS)),
            feature_names=list(data.get("feature_names", FEATURE_NAMES)),
        )


def fit_predictor(dataset: Sequence[LatencySample], holdout_frac: float = 0.2, seed: int = 0) -> LatencyPredictor:
    """Least-squares fit; held-out RMSE from a split, final coefficients from all samples.

    Rank-deficient designs (e.g. a space with a single embed choice) fall back
    to ridge regression and set `rank_deficient`.
    """
    samples = list(dataset)
    n_features = len(FEATURE_NAMES)
    if len(samples) < 2 * n_features:
        raise PredictorError(f"need at least {2 * n_features} samples to fit, got {len(samples)}",
                             n_samples=len(samples), n_features=n_features)
    X = np.asarray([s.features for s in samples], dtype=np.float64)
    y = np.asarray([s.latency_ms for s in samples], dtype=np.float64)

    rank_deficient = int(np.linalg.matrix_rank(X - X.mean(axis=0))) < n_features
    if rank_deficient:
        logger.warning("Latency features are rank-deficient; fitting with ridge damping")

    def make_model():
        return Ridge(alpha=RIDGE_ALPHA) if rank_deficient else LinearRegression()

    X_train, X_test, y_train, y_test = train_test_split(X, y, test_size=holdout_frac, random_state=seed)
    holdout = make_model().fit(X_train, y_train)
    rmse = math.sqrt(mean_squared_error(y_test, holdout.predict(X_test)))

    final = make_model().fit(X, y)
    hardware_ids = {s.hardware_id for s in samples}
    predictor = LatencyPredictor(
        intercept=float(final.intercept_),
        coefficients=[float(c) for c in final.coef_],
        hardware_id=hardware_ids.pop() if len(hardware_ids) == 1 else "mixed",
        holdout_rmse_ms=rmse,
        n_samples=len(samples),
        rank_deficient=rank_deficient,
    )
    logger.info(f"Fitted latency predictor on {len(samples)} samples: held-out RMSE {rmse:.4f} ms")
    return predictor
