from pathlib import Path

import pytest

from flowsleuth.dataset import SyntheticConfig, make_synthetic_corpus, load_all_splits
from flowsleuth.pipeline import EncodingPipeline


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Small separable corpus shared by training/eval/CLI tests.

    8 + 8 videos of 6 frames at 48 px: large enough for the residual branch
    to hit high validation accuracy within a few epochs, small enough to
    preprocess in seconds. Split 4/2/2 per class.
    """
    root = tmp_path_factory.mktemp("toy_corpus")
    cfg = SyntheticConfig(
        out_dir=root,
        real_count=8,
        fake_count=8,
        image_size=48,
        frame_count=6,
        seed=23,
        jitter_std=1.0,
        val_fraction=0.25,
        test_fraction=0.25,
    )
    make_synthetic_corpus(cfg)
    return root / "manifest.tsv"


@pytest.fixture(scope="session")
def toy_splits(toy_corpus):
    return load_all_splits(toy_corpus)


@pytest.fixture(scope="session")
def toy_pipeline(tmp_path_factory):
    """One cached pipeline per session so toy-corpus flows are solved once."""
    cache = tmp_path_factory.mktemp("toy_cache")
    return EncodingPipeline(input_size=24, cache_dir=cache)
