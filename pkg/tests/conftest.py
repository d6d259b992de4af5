import numpy as np
import pytest

from glotgen.model import ModelConfig, init_parameters
from glotgen.scene import load_builtin_lexicons
from glotgen.vocab import UnifiedVocab


@pytest.fixture(scope="session")
def lexicons():
    return load_builtin_lexicons()


@pytest.fixture(scope="session")
def vocab(lexicons):
    return UnifiedVocab.from_lexicons(lexicons.values())


@pytest.fixture(scope="session")
def tiny_model_config(vocab):
    # full sequence geometry but a small transformer: fast generation tests
    return ModelConfig(vocab_size=vocab.size, max_seq_len=5 + 32 + 256,
                       n_layers=1, n_heads=2, d_model=32, rng_seed=11)


@pytest.fixture(scope="session")
def tiny_params(tiny_model_config):
    return init_parameters(tiny_model_config)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
