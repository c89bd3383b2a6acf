"""Shared fixtures: micro-sized models and region sets for fast tests."""

import numpy as np
import pytest

from paragen.config import PRESETS, Dims
from paragen.critics import CriticPair
from paragen.generator import GeneratorParams, RegionSet

MICRO: Dims = PRESETS["micro"]
VOCAB = 9  # 4 specials + 5 words


@pytest.fixture
def micro_params():
    return GeneratorParams.create(MICRO, VOCAB, seed=0)


@pytest.fixture
def micro_critics():
    return CriticPair.create(MICRO, VOCAB, seed=1)


def make_regions(rng: np.random.Generator, m: int = 3, feat_dim: int = MICRO.feat,
                 vocab_size: int = VOCAB) -> RegionSet:
    feats = [rng.uniform(-1.0, 1.0, feat_dim) for _ in range(m)]
    phrases = [[int(t) for t in rng.integers(4, vocab_size, size=int(rng.integers(1, 4)))]
               for _ in range(m)]
    return RegionSet(features=feats, phrases=phrases)


@pytest.fixture
def micro_regions():
    return make_regions(np.random.default_rng(42))


def zero_all(collection) -> None:
    for _, t in collection.items():
        t.data[:] = 0.0


def random_paragraph(rng: np.random.Generator, vocab_size: int = VOCAB,
                     end_id: int = 2) -> list:
    """1..3 sentences of 1..4 real words, each terminated with the end token."""
    sents = []
    for _ in range(int(rng.integers(1, 4))):
        words = [int(t) for t in rng.integers(4, vocab_size, size=int(rng.integers(1, 5)))]
        sents.append(words + [end_id])
    return sents
