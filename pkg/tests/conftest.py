"""
Shared fixtures: tiny design spaces, corpora and banks that run in seconds on a CPU.
"""

import pytest
import torch

from dynamic_hat.corpus import generate_bijective_reversal, make_batch
from dynamic_hat.design_space import DesignSpace, SubConfig
from dynamic_hat.elastic_model import init_super
from dynamic_hat.runtime import OperatingLibrary, OperatingPoint

# Measured GPU latency (ms), validation loss and decoder depth of six searched operating points
TABLE_GPU_ROWS = [
    (356.11, 4.8229, 1),
    (608.95, 4.3821, 2),
    (854.85, 4.2310, 3),
    (994.96, 4.1550, 4),
    (1255.38, 4.1177, 5),
    (1526.54, 4.1048, 6),
]
TABLE_GPU_BLEU = [23.66, 26.23, 26.17, 26.67, 26.52, 26.53]


@pytest.fixture
def tiny_space():
    """Small elastic space: every dimension has two choices, depth 1-3, 2 encoder layers."""
    return DesignSpace(
        encoder_embed_choices=(8, 16),
        decoder_embed_choices=(8, 16),
        ffn_dim_choices=(16, 32),
        head_choices=(2, 4),
        decoder_layer_choices=(1, 2, 3),
        enc_dec_attn_choices=(-1, 1),
        encoder_layers=2,
    )


@pytest.fixture
def oracle_space():
    """160-config space small enough for exhaustive search."""
    return DesignSpace(
        encoder_embed_choices=(8,),
        decoder_embed_choices=(4, 8),
        ffn_dim_choices=(8, 16),
        head_choices=(2,),
        decoder_layer_choices=(1, 2),
        enc_dec_attn_choices=(-1, 1),
        encoder_layers=2,
    )


@pytest.fixture
def depth_space():
    """Fixed widths, depth 1-6: one config per depth via depth_config()."""
    return DesignSpace(
        encoder_embed_choices=(8,),
        decoder_embed_choices=(8,),
        ffn_dim_choices=(16,),
        head_choices=(2,),
        decoder_layer_choices=range(1, 7),
        enc_dec_attn_choices=(-1,),
        encoder_layers=2,
    )


def depth_config(depth: int) -> SubConfig:
    return SubConfig(8, 8, (16, 16), (2, 2), depth, (16,) * depth, (2,) * depth, (-1,) * depth)


@pytest.fixture
def small_corpus():
    return generate_bijective_reversal(vocab_size=12, n_pairs=24, len_range=(2, 5), seed=3)


@pytest.fixture
def small_valid():
    return generate_bijective_reversal(vocab_size=12, n_pairs=8, len_range=(2, 5), seed=4, mapping_seed=3)


@pytest.fixture
def sample_batch(small_corpus):
    return make_batch(small_corpus.pairs[:3])


@pytest.fixture
def tiny_bank(tiny_space, small_corpus):
    return init_super(tiny_space, small_corpus.vocab_size, seed=0)


@pytest.fixture
def tiny_bank64(tiny_space, small_corpus):
    return init_super(tiny_space, small_corpus.vocab_size, seed=0, dtype=torch.float64)


@pytest.fixture
def depth_bank(depth_space):
    return init_super(depth_space, 12, seed=1)


@pytest.fixture
def gpu_library():
    """Operating library built from the six GPU rows, one depth per row."""
    points = [
        OperatingPoint(depth_config(depth), latency, loss, bleu=bleu)
        for (latency, loss, depth), bleu in zip(TABLE_GPU_ROWS, TABLE_GPU_BLEU)
    ]
    return OperatingLibrary(points, hardware_id="sim-gpu")


@pytest.fixture
def make_depth_config():
    return depth_config
