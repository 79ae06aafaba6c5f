"""
Elastic architecture space for the SuperTransformer.

A DesignSpace lists the allowed values of every elastic dimension; a SubConfig
is one point in it. FFN width, head count and encoder-decoder attention span
are chosen per layer. Encoder depth is fixed by the space.

Arbitrary encoder-decoder attention is encoded as -1/1/2 meaning the last
1/2/3 encoder layers are attended.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import random
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Iterator, List, Sequence, Tuple, Union

from dynamic_hat.exceptions import DesignSpaceError, InvalidConfigError, InvalidSpaceError

ATTN_CHOICES = (-1, 1, 2)

# Number of source positions assumed by the latency features (30-token sentences)
DEFAULT_SOURCE_POSITIONS = 30

CHOICE_FIELDS = (
    "encoder_embed_choices",
    "decoder_embed_choices",
    "ffn_dim_choices",
    "head_choices",
    "decoder_layer_choices",
    "enc_dec_attn_choices",
)

FEATURE_NAMES = (
    "encoder_embed_dim",
    "decoder_embed_dim",
    "n_decoder_layers",
    "encoder_ffn_sum",
    "decoder_ffn_sum",
    "decoder_heads_sum",
    "cross_attention_span",
    "encoder_heads_sum",
    "decoder_embed_x_layers",
)


def attended_layers(attn: int) -> int:
    """Number of trailing encoder layers a decoder layer attends to."""
    if attn not in ATTN_CHOICES:
        raise DesignSpaceError(f"enc_dec_attn value {attn} not in {set(ATTN_CHOICES)}")
    return 1 if attn == -1 else attn + 1


def _fmt_set(values: Iterable[int]) -> str:
    return "{" + ",".join(str(v) for v in values) + "}"


@dataclass(frozen=True)
class DesignSpace:
    """Allowed choices per elastic dimension. Choice sets are stored sorted and de-duplicated."""

    encoder_embed_choices: Tuple[int, ...]
    decoder_embed_choices: Tuple[int, ...]
    ffn_dim_choices: Tuple[int, ...]
    head_choices: Tuple[int, ...]
    decoder_layer_choices: Tuple[int, ...]
    enc_dec_attn_choices: Tuple[int, ...]
    encoder_layers: int = 6

    def __post_init__(self) -> None:
        for name in CHOICE_FIELDS:
            values = tuple(sorted({int(v) for v in getattr(self, name)}))
            object.__setattr__(self, name, values)
        object.__setattr__(self, "encoder_layers", int(self.encoder_layers))

    # ------------------------------------------------------------------ presets

    @classmethod
    def full(cls) -> "DesignSpace":
        """The full translation space: embeds {512,640}, FFN {1024,2048,3072}, heads {4,8}."""
        return cls(
            encoder_embed_choices=(512, 640),
            decoder_embed_choices=(512, 640),
            ffn_dim_choices=(1024, 2048, 3072),
            head_choices=(4, 8),
            decoder_layer_choices=(1, 2, 3, 4, 5, 6),
            enc_dec_attn_choices=(-1, 1, 2),
            encoder_layers=6,
        )

    @classmethod
    def gpu_reduced(cls) -> "DesignSpace":
        """The space left after removing what the GPU's top configurations never used."""
        return cls(
            encoder_embed_choices=(512,),
            decoder_embed_choices=(512,),
            ffn_dim_choices=(2048, 3072),
            head_choices=(4, 8),
            decoder_layer_choices=(1, 2, 3, 4, 5, 6),
            enc_dec_attn_choices=(-1, 1),
            encoder_layers=6,
        )

    @classmethod
    def desk(cls) -> "DesignSpace":
        """Desk-scale space that trains on a CPU in minutes."""
        return cls(
            encoder_embed_choices=(32, 64),
            decoder_embed_choices=(32, 64),
            ffn_dim_choices=(64, 128),
            head_choices=(2, 4),
            decoder_layer_choices=(1, 2, 3, 4, 5, 6),
            enc_dec_attn_choices=(-1, 1, 2),
            encoder_layers=3,
        )

    # --------------------------------------------------------------- maxima

    @property
    def max_encoder_embed(self) -> int:
        return self.encoder_embed_choices[-1]

    @property
    def max_decoder_embed(self) -> int:
        return self.decoder_embed_choices[-1]

    @property
    def max_embed(self) -> int:
        return max(self.max_encoder_embed, self.max_decoder_embed)

    @property
    def max_ffn(self) -> int:
        return self.ffn_dim_choices[-1]

    @property
    def max_heads(self) -> int:
        return self.head_choices[-1]

    @property
    def max_decoder_layers(self) -> int:
        return self.decoder_layer_choices[-1]

    # ----------------------------------------------------------- validation

    def problems(self) -> List[str]:
        """Return every broken space invariant as a message (empty list if valid)."""
        issues: List[str] = []
        for name in CHOICE_FIELDS:
            if not getattr(self, name):
                issues.append(f"{name} is empty")
        if self.encoder_layers < 1:
            issues.append(f"encoder_layers must be >= 1, got {self.encoder_layers}")
        for name in ("encoder_embed_choices", "decoder_embed_choices", "ffn_dim_choices", "head_choices"):
            bad = [v for v in getattr(self, name) if v <= 0]
            if bad:
                issues.append(f"{name} must be positive, got {bad}")
        bad_layers = [v for v in self.decoder_layer_choices if v < 1]
        if bad_layers:
            issues.append(f"decoder_layer_choices must be >= 1, got {bad_layers}")
        bad_attn = [v for v in self.enc_dec_attn_choices if v not in ATTN_CHOICES]
        if bad_attn:
            issues.append(f"enc_dec_attn_choices {bad_attn} not in {_fmt_set(ATTN_CHOICES)}")
        else:
            too_deep = [v for v in self.enc_dec_attn_choices if attended_layers(v) > self.encoder_layers]
            if too_deep:
                issues.append(
                    f"enc_dec_attn_choices {too_deep} attend more than {self.encoder_layers} encoder layers"
                )
        for embed in set(self.encoder_embed_choices) | set(self.decoder_embed_choices):
            for heads in self.head_choices:
                if heads > 0 and embed % heads:
                    issues.append(f"embed {embed} not divisible by heads {heads}")
        return issues

    def check(self) -> "DesignSpace":
        """Raise InvalidSpaceError if any invariant is broken; return self otherwise."""
        issues = self.problems()
        if issues:
            raise InvalidSpaceError("Invalid design space: " + "; ".join(issues), issues)
        return self

    # -------------------------------------------------------- serialization

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {name: list(getattr(self, name)) for name in CHOICE_FIELDS}
        data["encoder_layers"] = self.encoder_layers
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DesignSpace":
        try:
            return cls(
                **{name: tuple(data[name]) for name in CHOICE_FIELDS},
                encoder_layers=int(data.get("encoder_layers", 6)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidSpaceError(f"Malformed design space description: {e}") from e


@dataclass(frozen=True)
class SubConfig:
    """One fully specified SubTransformer architecture."""

    encoder_embed_dim: int
    decoder_embed_dim: int
    encoder_ffn_dims: Tuple[int, ...]
    encoder_heads: Tuple[int, ...]
    n_decoder_layers: int
    decoder_ffn_dims: Tuple[int, ...]
    decoder_heads: Tuple[int, ...]
    enc_dec_attn: Tuple[int, ...]

    def __post_init__(self) -> None:
        for name in ("encoder_ffn_dims", "encoder_heads", "decoder_ffn_dims", "decoder_heads", "enc_dec_attn"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        object.__setattr__(self, "encoder_embed_dim", int(self.encoder_embed_dim))
        object.__setattr__(self, "decoder_embed_dim", int(self.decoder_embed_dim))
        object.__setattr__(self, "n_decoder_layers", int(self.n_decoder_layers))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "encoder_embed_dim": self.encoder_embed_dim,
            "decoder_embed_dim": self.decoder_embed_dim,
            "encoder_ffn_dims": list(self.encoder_ffn_dims),
            "encoder_heads": list(self.encoder_heads),
            "n_decoder_layers": self.n_decoder_layers,
            "decoder_ffn_dims": list(self.decoder_ffn_dims),
            "decoder_heads": list(self.decoder_heads),
            "enc_dec_attn": list(self.enc_dec_attn),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SubConfig":
        try:
            return cls(
                encoder_embed_dim=data["encoder_embed_dim"],
                decoder_embed_dim=data["decoder_embed_dim"],
                encoder_ffn_dims=tuple(data["encoder_ffn_dims"]),
                encoder_heads=tuple(data["encoder_heads"]),
                n_decoder_layers=data["n_decoder_layers"],
                decoder_ffn_dims=tuple(data["decoder_ffn_dims"]),
                decoder_heads=tuple(data["decoder_heads"]),
                enc_dec_attn=tuple(data["enc_dec_attn"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidConfigError(f"Malformed SubConfig description: {e}") from e

    def key(self) -> str:
        """Canonical serialized form; used for tie-breaking and de-duplication."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha1(self.key().encode("utf-8")).hexdigest()[:12]

    def short_repr(self) -> str:
        return (
            f"E{self.encoder_embed_dim}/D{self.decoder_embed_dim} "
            f"L{self.n_decoder_layers} "
            f"dffn={list(self.decoder_ffn_dims)} attn={list(self.enc_dec_attn)}"
        )


@dataclass(frozen=True)
class Violation:
    """One broken SubConfig invariant."""

    dimension: str
    value: Any
    message: str = field(default="")

    def __str__(self) -> str:
        return self.message or f"{self.dimension} {self.value}"


def _membership(dimension: str, values: Sequence[int], allowed: Tuple[int, ...]) -> List[Violation]:
    out = []
    for value in values:
        if value not in allowed:
            out.append(Violation(dimension, value, f"{dimension} {value} ∉ {_fmt_set(allowed)}"))
    return out


def _length(name: str, values: Sequence[int], expected: int) -> List[Violation]:
    if len(values) != expected:
        return [Violation(name, len(values),
                          f"length mismatch: {name} has {len(values)} entries, expected {expected}")]
    return []


def validate_config(space: DesignSpace, cfg: SubConfig) -> List[Violation]:
    """Check cfg against space. An empty list means the config is valid."""
    violations: List[Violation] = []
    violations += _membership("encoder_embed_dim", [cfg.encoder_embed_dim], space.encoder_embed_choices)
    violations += _membership("decoder_embed_dim", [cfg.decoder_embed_dim], space.decoder_embed_choices)
    violations += _membership("n_decoder_layers", [cfg.n_decoder_layers], space.decoder_layer_choices)
    violations += _membership("ffn_dim", list(cfg.encoder_ffn_dims) + list(cfg.decoder_ffn_dims),
                              space.ffn_dim_choices)
    violations += _membership("heads", list(cfg.encoder_heads) + list(cfg.decoder_heads), space.head_choices)
    violations += _membership("enc_dec_attn", cfg.enc_dec_attn, space.enc_dec_attn_choices)

    violations += _length("encoder_ffn_dims", cfg.encoder_ffn_dims, space.encoder_layers)
    violations += _length("encoder_heads", cfg.encoder_heads, space.encoder_layers)
    violations += _length("decoder_ffn_dims", cfg.decoder_ffn_dims, cfg.n_decoder_layers)
    violations += _length("decoder_heads", cfg.decoder_heads, cfg.n_decoder_layers)
    violations += _length("enc_dec_attn", cfg.enc_dec_attn, cfg.n_decoder_layers)

    for stack, embed, heads in (
        ("encoder", cfg.encoder_embed_dim, cfg.encoder_heads),
        ("decoder", cfg.decoder_embed_dim, cfg.decoder_heads),
    ):
        for h in sorted(set(heads)):
            if h <= 0 or embed % h:
                violations.append(Violation(
                    f"{stack}_heads", h, f"{stack}_embed_dim {embed} not divisible by heads {h}"))
    return violations


def require_valid(space: DesignSpace, cfg: SubConfig) -> SubConfig:
    """Raise InvalidConfigError listing every violation; return cfg when valid."""
    violations = validate_config(space, cfg)
    if violations:
        raise InvalidConfigError(
            "SubConfig violates the design space: " + "; ".join(str(v) for v in violations),
            violations,
        )
    return cfg


def sample_uniform(space: DesignSpace, seed: Union[int, random.Random]) -> SubConfig:
    """Draw each field independently and uniformly from its choice set.

    `seed` may be an int (fresh generator) or a caller-owned random.Random.
    """
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    enc_embed = rng.choice(space.encoder_embed_choices)
    dec_embed = rng.choice(space.decoder_embed_choices)
    enc_ffn = tuple(rng.choice(space.ffn_dim_choices) for _ in range(space.encoder_layers))
    enc_heads = tuple(rng.choice(space.head_choices) for _ in range(space.encoder_layers))
    n_layers = rng.choice(space.decoder_layer_choices)
    dec_ffn = tuple(rng.choice(space.ffn_dim_choices) for _ in range(n_layers))
    dec_heads = tuple(rng.choice(space.head_choices) for _ in range(n_layers))
    attn = tuple(rng.choice(space.enc_dec_attn_choices) for _ in range(n_layers))
    return SubConfig(enc_embed, dec_embed, enc_ffn, enc_heads, n_layers, dec_ffn, dec_heads, attn)


def smallest_config(space: DesignSpace) -> SubConfig:
    """The config taking the smallest value in every dimension."""
    n = space.decoder_layer_choices[0]
    return SubConfig(
        space.encoder_embed_choices[0], space.decoder_embed_choices[0],
        (space.ffn_dim_choices[0],) * space.encoder_layers, (space.head_choices[0],) * space.encoder_layers,
        n, (space.ffn_dim_choices[0],) * n, (space.head_choices[0],) * n, (space.enc_dec_attn_choices[0],) * n,
    )


def largest_config(space: DesignSpace) -> SubConfig:
    """The config taking the largest value in every dimension."""
    n = space.max_decoder_layers
    return SubConfig(
        space.max_encoder_embed, space.max_decoder_embed,
        (space.max_ffn,) * space.encoder_layers, (space.max_heads,) * space.encoder_layers,
        n, (space.max_ffn,) * n, (space.max_heads,) * n, (space.enc_dec_attn_choices[-1],) * n,
    )


def cardinality(space: DesignSpace) -> int:
    """Exact number of configs under per-layer elasticity (Python ints never overflow)."""
    n_f, n_h, n_a = len(space.ffn_dim_choices), len(space.head_choices), len(space.enc_dec_attn_choices)
    encoder = (n_f * n_h) ** space.encoder_layers
    decoder = sum((n_f * n_h * n_a) ** depth for depth in space.decoder_layer_choices)
    return len(space.encoder_embed_choices) * len(space.decoder_embed_choices) * encoder * decoder


def enumerate_configs(space: DesignSpace) -> Iterator[SubConfig]:
    """Yield every config of the space in a fixed order. Only sensible for small spaces."""
    enc_layer = list(itertools.product(space.ffn_dim_choices, space.head_choices))
    dec_layer = list(itertools.product(space.ffn_dim_choices, space.head_choices, space.enc_dec_attn_choices))
    for enc_embed, dec_embed in itertools.product(space.encoder_embed_choices, space.decoder_embed_choices):
        for enc_genes in itertools.product(enc_layer, repeat=space.encoder_layers):
            enc_ffn = tuple(g[0] for g in enc_genes)
            enc_heads = tuple(g[1] for g in enc_genes)
            for depth in space.decoder_layer_choices:
                for dec_genes in itertools.product(dec_layer, repeat=depth):
                    yield SubConfig(
                        enc_embed, dec_embed, enc_ffn, enc_heads, depth,
                        tuple(g[0] for g in dec_genes),
                        tuple(g[1] for g in dec_genes),
                        tuple(g[2] for g in dec_genes),
                    )


def reduce_space(space: DesignSpace, top_configs: Sequence[SubConfig]) -> DesignSpace:
    """Keep only the choice values used by at least one of the top configs.

    Decoder depth keeps every original depth up to the deepest one used, so
    the run-time controller can still scale down.
    """
    if not top_configs:
        raise DesignSpaceError("reduce_space needs at least one top configuration")
    for cfg in top_configs:
        require_valid(space, cfg)

    max_depth = max(cfg.n_decoder_layers for cfg in top_configs)
    reduced = DesignSpace(
        encoder_embed_choices={cfg.encoder_embed_dim for cfg in top_configs},
        decoder_embed_choices={cfg.decoder_embed_dim for cfg in top_configs},
        ffn_dim_choices={v for cfg in top_configs for v in cfg.encoder_ffn_dims + cfg.decoder_ffn_dims},
        head_choices={v for cfg in top_configs for v in cfg.encoder_heads + cfg.decoder_heads},
        decoder_layer_choices=[d for d in space.decoder_layer_choices if d <= max_depth],
        enc_dec_attn_choices={v for cfg in top_configs for v in cfg.enc_dec_attn},
        encoder_layers=space.encoder_layers,
    )
    return reduced.check()


def encode_features(cfg: SubConfig, source_positions: int = DEFAULT_SOURCE_POSITIONS) -> List[float]:
    """Fixed-length numeric encoding for the latency predictor (order as FEATURE_NAMES)."""
    span = sum(attended_layers(a) * source_positions for a in cfg.enc_dec_attn)
    return [
        float(cfg.encoder_embed_dim),
        float(cfg.decoder_embed_dim),
        float(cfg.n_decoder_layers),
        float(sum(cfg.encoder_ffn_dims)),
        float(sum(cfg.decoder_ffn_dims)),
        float(sum(cfg.decoder_heads)),
        float(span),
        float(sum(cfg.encoder_heads)),
        float(cfg.decoder_embed_dim * cfg.n_decoder_layers),
    ]
