"""Samples, the channel-group catalog, synthetic data and the GLEO format."""

from galileo.data.catalog import ChannelGroupSpec, canonical_channel_groups
from galileo.data.io import load_dataset, read_sample, write_dataset, write_sample
from galileo.data.sample import (
    NormStats,
    Sample,
    augment,
    compute_stats,
    normalize,
    subsample_shape,
)
from galileo.data.synthetic import generate_corpus, generate_synthetic_sample

__all__ = [
    "ChannelGroupSpec",
    "NormStats",
    "Sample",
    "augment",
    "canonical_channel_groups",
    "compute_stats",
    "generate_corpus",
    "generate_synthetic_sample",
    "load_dataset",
    "normalize",
    "read_sample",
    "subsample_shape",
    "write_dataset",
    "write_sample",
]
