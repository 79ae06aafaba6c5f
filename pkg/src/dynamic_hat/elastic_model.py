"""
The SuperTransformer weight bank and zero-retraining inheritance.

Every SubConfig is realized by front-slicing the bank: leading e×e (or e×f)
sub-blocks of each matrix and the first L decoder layers. Head count only
repartitions the sliced width into h groups; it never selects weights.
Slices are torch views, so inheriting copies no weight element and gradients
flow straight back into the bank.

Blocks are pre-norm residual; positions are sinusoidal; one embedding table
serves encoder input, decoder input and the (tied) output projection.
Weight matrices follow the ``x @ W`` convention, i.e. W is [in × out].
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from dynamic_hat.app_core.logging_config import get_logger
from dynamic_hat.corpus import BOS_ID, EOS_ID, N_SPECIAL, PAD_ID
from dynamic_hat.design_space import ATTN_CHOICES, DesignSpace, SubConfig, Violation, attended_layers
from dynamic_hat.exceptions import CheckpointError, EmptyInputError, InvalidConfigError, VocabularyError

logger = get_logger(__name__)

CHECKPOINT_MAGIC = b"DHATBANK"
CHECKPOINT_VERSION = 1
MASK_VALUE = -1e9
LN_EPS = 1e-5

Shape = Tuple[int, ...]


# ============================================================================
# Tensor layout
# ============================================================================

def _encoder_layer_shapes(i: int, e: int, f: int) -> List[Tuple[str, Shape]]:
    p = f"enc.{i}"
    return [
        (f"{p}.ln1.g", (e,)), (f"{p}.ln1.b", (e,)),
        (f"{p}.attn.q", (e, e)), (f"{p}.attn.k", (e, e)), (f"{p}.attn.v", (e, e)), (f"{p}.attn.o", (e, e)),
        (f"{p}.ln2.g", (e,)), (f"{p}.ln2.b", (e,)),
        (f"{p}.ffn.w1", (e, f)), (f"{p}.ffn.w2", (f, e)),
    ]


def _decoder_layer_shapes(j: int, e: int, e_enc: int, f: int) -> List[Tuple[str, Shape]]:
    p = f"dec.{j}"
    return [
        (f"{p}.ln1.g", (e,)), (f"{p}.ln1.b", (e,)),
        (f"{p}.self.q", (e, e)), (f"{p}.self.k", (e, e)), (f"{p}.self.v", (e, e)), (f"{p}.self.o", (e, e)),
        (f"{p}.ln2.g", (e,)), (f"{p}.ln2.b", (e,)),
        (f"{p}.cross.q", (e, e)), (f"{p}.cross.k", (e_enc, e)), (f"{p}.cross.v", (e_enc, e)),
        (f"{p}.cross.o", (e, e)),
        (f"{p}.ln3.g", (e,)), (f"{p}.ln3.b", (e,)),
        (f"{p}.ffn.w1", (e, f)), (f"{p}.ffn.w2", (f, e)),
    ]


def declare_tensors(space: DesignSpace, vocab_size: int) -> "OrderedDict[str, Shape]":
    """Bank tensor names and shapes in declaration (= checkpoint) order."""
    e_enc, e_dec, f = space.max_encoder_embed, space.max_decoder_embed, space.max_ffn
    shapes: "OrderedDict[str, Shape]" = OrderedDict()
    shapes["embed"] = (vocab_size, space.max_embed)
    for i in range(space.encoder_layers):
        shapes.update(_encoder_layer_shapes(i, e_enc, f))
    shapes["enc.ln_out.g"] = (e_enc,)
    shapes["enc.ln_out.b"] = (e_enc,)
    for j in range(space.max_decoder_layers):
        shapes.update(_decoder_layer_shapes(j, e_dec, e_enc, f))
    shapes["dec.ln_out.g"] = (e_dec,)
    shapes["dec.ln_out.b"] = (e_dec,)
    return shapes


def slice_shapes(cfg: SubConfig, vocab_size: int) -> "OrderedDict[str, Shape]":
    """Shapes of the leading sub-blocks a config touches (bank declaration order)."""
    e_enc, e_dec = cfg.encoder_embed_dim, cfg.decoder_embed_dim
    shapes: "OrderedDict[str, Shape]" = OrderedDict()
    shapes["embed"] = (vocab_size, max(e_enc, e_dec))
    for i, f in enumerate(cfg.encoder_ffn_dims):
        shapes.update(_encoder_layer_shapes(i, e_enc, f))
    shapes["enc.ln_out.g"] = (e_enc,)
    shapes["enc.ln_out.b"] = (e_enc,)
    for j, f in enumerate(cfg.decoder_ffn_dims):
        shapes.update(_decoder_layer_shapes(j, e_dec, e_enc, f))
    shapes["dec.ln_out.g"] = (e_dec,)
    shapes["dec.ln_out.b"] = (e_dec,)
    return shapes


def param_count(cfg: SubConfig, vocab_size: int) -> int:
    """Distinct scalars an inherited view touches; the tied embedding counts once."""
    return sum(math.prod(shape) for shape in slice_shapes(cfg, vocab_size).values())


def leading_region(shape: Shape) -> Tuple[slice, ...]:
    return tuple(slice(0, n) for n in shape)


def _is_gain(name: str) -> bool:
    return name.endswith(".g")


def _is_bias(name: str) -> bool:
    return name.endswith(".b")


def _init_tensors(shapes: Mapping[str, Shape], seed: int, dtype: torch.dtype) -> "OrderedDict[str, torch.Tensor]":
    generator = torch.Generator().manual_seed(seed)
    tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    for name, shape in shapes.items():
        if _is_gain(name):
            tensors[name] = torch.ones(shape, dtype=dtype)
        elif _is_bias(name):
            tensors[name] = torch.zeros(shape, dtype=dtype)
        else:
            # embed is [vocab × e] and used as e -> vocab; matrices are [in × out]
            fan_in = shape[1] if name == "embed" else shape[0]
            tensors[name] = torch.randn(shape, generator=generator, dtype=dtype) / math.sqrt(fan_in)
    return tensors


def _check_vocab(vocab_size: int) -> None:
    if vocab_size < N_SPECIAL:
        raise VocabularyError(f"vocab_size must be >= {N_SPECIAL} (pad/bos/eos/unk)", vocab_size=vocab_size)


# ============================================================================
# Weight containers
# ============================================================================

class SuperWeights:
    """Max-dimension shared weight bank for one design space."""

    def __init__(self, space: DesignSpace, vocab_size: int, tensors: "OrderedDict[str, torch.Tensor]"):
        self.space = space
        self.vocab_size = vocab_size
        self.tensors = tensors

    @property
    def dtype(self) -> torch.dtype:
        return self.tensors["embed"].dtype

    def parameters(self) -> List[torch.Tensor]:
        return list(self.tensors.values())

    def requires_grad_(self, flag: bool = True) -> "SuperWeights":
        for t in self.tensors.values():
            t.requires_grad_(flag)
        return self

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def numel(self) -> int:
        return sum(t.numel() for t in self.tensors.values())

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(t).all()) for t in self.tensors.values())

    def checksum(self) -> str:
        """SHA-256 over all tensors in declaration order."""
        digest = hashlib.sha256()
        for name, t in self.tensors.items():
            digest.update(name.encode("utf-8"))
            digest.update(t.detach().cpu().contiguous().numpy().tobytes())
        return digest.hexdigest()

    def clone(self) -> "SuperWeights":
        return SuperWeights(self.space, self.vocab_size,
                            OrderedDict((k, t.detach().clone()) for k, t in self.tensors.items()))


@dataclass(frozen=True)
class SubModelView:
    """Read-only realization of one SubConfig as views into a SuperWeights bank."""
    config: SubConfig
    bank: SuperWeights
    weights: Mapping[str, torch.Tensor]

    @property
    def vocab_size(self) -> int:
        return self.bank.vocab_size

    def touched_regions(self) -> Dict[str, Tuple[slice, ...]]:
        return {name: leading_region(tuple(t.shape)) for name, t in self.weights.items()}

    def touched_masks(self) -> Dict[str, torch.Tensor]:
        """Boolean masks over each bank tensor marking the elements this view uses."""
        regions = self.touched_regions()
        masks = {}
        for name, bank_tensor in self.bank.tensors.items():
            mask = torch.zeros(bank_tensor.shape, dtype=torch.bool)
            if name in regions:
                mask[regions[name]] = True
            masks[name] = mask
        return masks


@dataclass(frozen=True)
class StandaloneModel:
    """A SubTransformer that owns weights sized exactly to its config."""
    config: SubConfig
    vocab_size: int
    weights: Mapping[str, torch.Tensor]

    @classmethod
    def from_view(cls, view: SubModelView) -> "StandaloneModel":
        """Copy-construct from a view (every sliced element copied)."""
        weights = OrderedDict((k, t.detach().clone().contiguous()) for k, t in view.weights.items())
        return cls(view.config, view.vocab_size, weights)

    def parameters(self) -> List[torch.Tensor]:
        return list(self.weights.values())

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, t in self.weights.items():
            digest.update(name.encode("utf-8"))
            digest.update(t.detach().cpu().contiguous().numpy().tobytes())
        return digest.hexdigest()


Model = Union[SubModelView, StandaloneModel]


def init_super(space: DesignSpace, vocab_size: int, seed: int, dtype: torch.dtype = torch.float32) -> SuperWeights:
    """Fresh bank: N(0, 1/fan_in) matrices, unit norm gains, zero norm biases."""
    space.check()
    _check_vocab(vocab_size)
    tensors = _init_tensors(declare_tensors(space, vocab_size), seed, dtype)
    bank = SuperWeights(space, vocab_size, tensors)
    logger.debug(f"Initialized SuperWeights: {bank.numel()} parameters, seed {seed}")
    return bank


def init_standalone(cfg: SubConfig, vocab_size: int, seed: int,
                    dtype: torch.dtype = torch.float32) -> StandaloneModel:
    """Fresh weights sized exactly to one config (for from-scratch training)."""
    _check_vocab(vocab_size)
    tensors = _init_tensors(slice_shapes(cfg, vocab_size), seed, dtype)
    return StandaloneModel(cfg, vocab_size, tensors)


def fit_violations(space: DesignSpace, cfg: SubConfig) -> List[Violation]:
    """Structural checks for slicing cfg out of a bank built for `space`."""
    out: List[Violation] = []
    limits = (
        ("encoder_embed_dim", cfg.encoder_embed_dim, space.max_encoder_embed),
        ("decoder_embed_dim", cfg.decoder_embed_dim, space.max_decoder_embed),
        ("n_decoder_layers", cfg.n_decoder_layers, space.max_decoder_layers),
    )
    for name, value, limit in limits:
        if not 1 <= value <= limit:
            out.append(Violation(name, value, f"{name} {value} exceeds bank maximum {limit}"))
    for f in cfg.encoder_ffn_dims + cfg.decoder_ffn_dims:
        if not 1 <= f <= space.max_ffn:
            out.append(Violation("ffn_dim", f, f"ffn_dim {f} exceeds bank maximum {space.max_ffn}"))
    if len(cfg.encoder_ffn_dims) != space.encoder_layers or len(cfg.encoder_heads) != space.encoder_layers:
        out.append(Violation("encoder_layers", len(cfg.encoder_ffn_dims),
                             f"length mismatch: bank has {space.encoder_layers} encoder layers"))
    n = cfg.n_decoder_layers
    if not len(cfg.decoder_ffn_dims) == len(cfg.decoder_heads) == len(cfg.enc_dec_attn) == n:
        out.append(Violation("n_decoder_layers", n, "length mismatch in decoder layer lists"))
    for embed, heads in ((cfg.encoder_embed_dim, cfg.encoder_heads), (cfg.decoder_embed_dim, cfg.decoder_heads)):
        for h in heads:
            if h <= 0 or embed % h:
                out.append(Violation("heads", h, f"embed {embed} not divisible by heads {h}"))
    for a in cfg.enc_dec_attn:
        if a not in ATTN_CHOICES or attended_layers(a) > space.encoder_layers:
            out.append(Violation("enc_dec_attn", a, f"enc_dec_attn {a} not supported by the bank"))
    return out


def inherit(bank: SuperWeights, cfg: SubConfig) -> SubModelView:
    """Slice a SubModelView out of the bank. No weight element is copied or mutated."""
    violations = fit_violations(bank.space, cfg)
    if violations:
        raise InvalidConfigError(
            "SubConfig does not fit the weight bank: " + "; ".join(str(v) for v in violations), violations)
    weights = OrderedDict(
        (name, bank.tensors[name][leading_region(shape)])
        for name, shape in slice_shapes(cfg, bank.vocab_size).items()
    )
    return SubModelView(cfg, bank, weights)


# ============================================================================
# Forward pass
# ============================================================================

def sinusoidal_positions(length: int, dim: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """[length × dim] sine/cosine position table."""
    position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div_term = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div_term)
    table[:, 1::2] = torch.cos(position * div_term)[:, : dim // 2]
    return table.to(dtype)


def _layer_norm(x: torch.Tensor, w: Mapping[str, torch.Tensor], prefix: str) -> torch.Tensor:
    gain, bias = w[prefix + ".g"], w[prefix + ".b"]
    return F.layer_norm(x, (gain.shape[0],), gain, bias, eps=LN_EPS)


def attention_probs(q: torch.Tensor, k: torch.Tensor, key_pad_mask: Optional[torch.Tensor] = None,
                    causal: bool = False) -> torch.Tensor:
    """Softmax attention weights [B, h, Tq, Tk] from per-head queries/keys [B, h, T, d]."""
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if key_pad_mask is not None:
        scores = scores.masked_fill(key_pad_mask[:, None, None, :], MASK_VALUE)
    if causal:
        t_q, t_k = scores.shape[-2], scores.shape[-1]
        future = torch.triu(torch.ones(t_q, t_k, dtype=torch.bool), diagonal=1)
        scores = scores.masked_fill(future, MASK_VALUE)
    # softmax in at least float32
    compute_dtype = torch.promote_types(scores.dtype, torch.float32)
    return torch.softmax(scores.to(compute_dtype), dim=-1).to(scores.dtype)


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    batch, length, width = x.shape
    return x.reshape(batch, length, heads, width // heads).transpose(1, 2)


def _multi_head(x_q: torch.Tensor, x_kv: torch.Tensor, w: Mapping[str, torch.Tensor], prefix: str, heads: int,
                key_pad_mask: Optional[torch.Tensor] = None, causal: bool = False) -> torch.Tensor:
    q = _split_heads(x_q @ w[prefix + ".q"], heads)
    k = _split_heads(x_kv @ w[prefix + ".k"], heads)
    v = _split_heads(x_kv @ w[prefix + ".v"], heads)
    ctx = attention_probs(q, k, key_pad_mask, causal) @ v
    batch, _, length, _ = ctx.shape
    return ctx.transpose(1, 2).reshape(batch, length, -1) @ w[prefix + ".o"]


def _ffn(x: torch.Tensor, w: Mapping[str, torch.Tensor], prefix: str) -> torch.Tensor:
    return F.relu(x @ w[prefix + ".w1"]) @ w[prefix + ".w2"]


def _embed(model: Model, ids: torch.Tensor, width: int) -> torch.Tensor:
    table = model.weights["embed"][:, :width]
    x = F.embedding(ids, table) * math.sqrt(width)
    return x + sinusoidal_positions(ids.shape[1], width, x.dtype)


def _check_ids(model: Model, ids: torch.Tensor) -> None:
    if ids.numel() == 0:
        raise EmptyInputError("Empty token input")
    low, high = int(ids.min()), int(ids.max())
    if low < 0 or high >= model.vocab_size:
        raise VocabularyError("Token id outside the vocabulary", vocab_size=model.vocab_size,
                              token_id=high if high >= model.vocab_size else low)


def encode_batch(model: Model, src: torch.Tensor, src_pad_mask: Optional[torch.Tensor] = None) -> List[torch.Tensor]:
    """Run the encoder on [B, S] ids; returns every layer's output [B, S, e_enc]."""
    cfg, w = model.config, model.weights
    _check_ids(model, src)
    x = _embed(model, src, cfg.encoder_embed_dim)
    outputs = []
    for i, heads in enumerate(cfg.encoder_heads):
        p = f"enc.{i}"
        h = _layer_norm(x, w, f"{p}.ln1")
        x = x + _multi_head(h, h, w, f"{p}.attn", heads, key_pad_mask=src_pad_mask)
        x = x + _ffn(_layer_norm(x, w, f"{p}.ln2"), w, f"{p}.ffn")
        outputs.append(x)
    return outputs


def decode_batch(model: Model, tgt_in: torch.Tensor, encoder_outputs: Sequence[torch.Tensor],
                 src_pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Teacher-forced decoder pass; returns logits [B, T, vocab].

    Only the trailing encoder outputs named by each layer's enc_dec_attn are
    read, so callers may pass just the layers they need.
    """
    cfg, w = model.config, model.weights
    _check_ids(model, tgt_in)
    # enc_out normalization applied once per attended encoder layer
    normed: Dict[int, torch.Tensor] = {}

    def memory(span: int) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        parts = []
        for back in range(span, 0, -1):
            if back not in normed:
                normed[back] = _layer_norm(encoder_outputs[-back], w, "enc.ln_out")
            parts.append(normed[back])
        mask = None if src_pad_mask is None else torch.cat([src_pad_mask] * span, dim=1)
        return torch.cat(parts, dim=1), mask

    x = _embed(model, tgt_in, cfg.decoder_embed_dim)
    for j, (heads, attn) in enumerate(zip(cfg.decoder_heads, cfg.enc_dec_attn)):
        p = f"dec.{j}"
        h = _layer_norm(x, w, f"{p}.ln1")
        x = x + _multi_head(h, h, w, f"{p}.self", heads, causal=True)
        mem, mem_mask = memory(attended_layers(attn))
        x = x + _multi_head(_layer_norm(x, w, f"{p}.ln2"), mem, w, f"{p}.cross", heads, key_pad_mask=mem_mask)
        x = x + _ffn(_layer_norm(x, w, f"{p}.ln3"), w, f"{p}.ffn")
    x = _layer_norm(x, w, "dec.ln_out")
    return x @ w["embed"][:, :cfg.decoder_embed_dim].transpose(0, 1)


def forward_logits(model: Model, src: torch.Tensor, tgt_in: torch.Tensor,
                   src_pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Full teacher-forced forward: [B, S] source, [B, T] decoder input -> [B, T, vocab] logits."""
    encoder_outputs = encode_batch(model, src, src_pad_mask)
    return decode_batch(model, tgt_in, encoder_outputs, src_pad_mask)


def _as_ids(tokens: Sequence[int]) -> torch.Tensor:
    if len(tokens) == 0:
        raise EmptyInputError("Source sentence is empty")
    return torch.tensor([list(tokens)], dtype=torch.long)


def encode_source(model: Model, src_tokens: Sequence[int], mask_padding: bool = True) -> List[torch.Tensor]:
    """Encode one sentence; returns one [src_len × e_enc] output per encoder layer."""
    src = _as_ids(src_tokens)
    mask = src.eq(PAD_ID) if mask_padding else None
    with torch.no_grad():
        return [out[0] for out in encode_batch(model, src, mask)]


def greedy_translate(model: Model, src_tokens: Sequence[int], max_len: int, force_length: bool = False) -> List[int]:
    """Greedy autoregressive decoding from bos until eos or `max_len` tokens.

    With force_length the eos logit is suppressed so exactly `max_len` tokens
    are produced (latency runs). The returned list never contains eos.
    """
    if max_len < 1:
        raise EmptyInputError(f"max_len must be >= 1, got {max_len}")
    src = _as_ids(src_tokens)
    src_mask = src.eq(PAD_ID)
    output: List[int] = []
    with torch.no_grad():
        encoder_outputs = encode_batch(model, src, src_mask)
        ys = [BOS_ID]
        for _ in range(max_len):
            logits = decode_batch(model, torch.tensor([ys], dtype=torch.long), encoder_outputs, src_mask)[0, -1]
            if force_length:
                logits = logits.clone()
                logits[EOS_ID] = float("-inf")
            token = int(torch.argmax(logits))
            if token == EOS_ID:
                break
            output.append(token)
            ys.append(token)
    return output


# ============================================================================
# Checkpoints
# ============================================================================

def save_checkpoint(bank: SuperWeights, path: Union[str, Path]) -> None:
    """Write the documented binary format.

    Layout: 8-byte magic "DHATBANK", uint32 format version, uint32 length +
    UTF-8 JSON space descriptor, uint32 vocab size, then every tensor in
    declaration order as row-major little-endian float32. All integers are
    little-endian.
    """
    path = Path(path)
    space_json = json.dumps(bank.space.to_dict(), sort_keys=True).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(struct.pack("<8sI", CHECKPOINT_MAGIC, CHECKPOINT_VERSION))
            f.write(struct.pack("<I", len(space_json)))
            f.write(space_json)
            f.write(struct.pack("<I", bank.vocab_size))
            for name in declare_tensors(bank.space, bank.vocab_size):
                array = bank.tensors[name].detach().cpu().numpy().astype("<f4", copy=False)
                f.write(np.ascontiguousarray(array).tobytes())
    except OSError as e:
        raise CheckpointError(f"Failed to write checkpoint: {e}", file_path=str(path)) from e
    logger.info(f"Saved checkpoint {path} ({bank.numel()} parameters)")


def load_checkpoint(path: Union[str, Path], dtype: torch.dtype = torch.float32) -> SuperWeights:
    """Read a checkpoint written by save_checkpoint."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Failed to read checkpoint: {e}", file_path=str(path)) from e

    try:
        magic, version = struct.unpack_from("<8sI", data, 0)
        offset = struct.calcsize("<8sI")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError("Not a Dynamic-HAT checkpoint (bad magic)", file_path=str(path))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"Unsupported checkpoint version {version}", file_path=str(path))
        (space_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        space = DesignSpace.from_dict(json.loads(data[offset:offset + space_len].decode("utf-8")))
        offset += space_len
        (vocab_size,) = struct.unpack_from("<I", data, offset)
        offset += 4
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Corrupt checkpoint header: {e}", file_path=str(path)) from e

    tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    for name, shape in declare_tensors(space, vocab_size).items():
        count = math.prod(shape)
        if offset + 4 * count > len(data):
            raise CheckpointError(f"Checkpoint truncated at tensor {name}", file_path=str(path))
        array = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        tensors[name] = torch.from_numpy(array.astype(np.float32)).to(dtype)
        offset += 4 * count
    if offset != len(data):
        raise CheckpointError(f"Checkpoint has {len(data) - offset} trailing bytes", file_path=str(path))
    return SuperWeights(space, vocab_size, tensors)
