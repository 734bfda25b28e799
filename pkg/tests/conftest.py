import json

import numpy as np
import pytest

from parley.model import DialogModel, ModelConfig
from parley.tensor import RngState
from parley.vocab import Vocabulary


@pytest.fixture
def tiny_config():
    return ModelConfig(vocab_size=50, hidden_size=16, num_encoder_layers=2,
                       num_decoder_layers=2, num_heads=2, ff_size=32, latent_size=4,
                       ngram=2, max_positions=32, max_turns=8)


@pytest.fixture
def tiny_model(tiny_config):
    return DialogModel(tiny_config, RngState(7))


@pytest.fixture
def small_vocab():
    return Vocabulary([f"w{i}" for i in range(20)])


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def toy_corpus(n_instances=12, n_words=8, seed=0, turn_len=4, n_turns=3):
    rng = np.random.default_rng(seed)
    words = [f"tok{i}" for i in range(n_words)]
    rows = []
    for _ in range(n_instances):
        turns = [" ".join(rng.choice(words, size=turn_len).tolist()) for _ in range(n_turns)]
        rows.append({"turns": turns})
    return rows
