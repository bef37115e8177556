import numpy as np
import pytest
import torch

from provhunt.neural import GraphTextModel, ModelConfig
from provhunt.sampling import SamplingConfig, sample_activity_subgraphs
from provhunt.synthesis import synthesize_pairs
from provhunt.synthetic import make_graph
from provhunt.training.trainer import build_tokenizer

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def graph200():
    return make_graph(200, seed=0)


@pytest.fixture(scope="session")
def subgraphs200(graph200):
    return sample_activity_subgraphs(graph200, SamplingConfig(rng_seed=0))


@pytest.fixture(scope="session")
def pairs(subgraphs200):
    return synthesize_pairs(subgraphs200[:8])


@pytest.fixture(scope="session")
def tokenizer(pairs):
    return build_tokenizer(pairs, max_len=64)


def tiny_model(tokenizer, d=8, dropout=0.0, dtype=torch.float64, seed=0):
    torch.manual_seed(seed)
    cfg = ModelConfig(d=d, heads=2, text_layers=1, gin_layers=3, fusion_layers=1, max_len=tokenizer.max_len,
                      dropout=dropout)
    return GraphTextModel(tokenizer, cfg).to(dtype).eval()


@pytest.fixture
def model64(tokenizer):
    return tiny_model(tokenizer)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One 16-pair memorization run, shared by the hunting tests and the acceptance suite.
OVERFIT_TRAIN = dict(batch_size=16, epochs=500, warmup_epochs=35, lr=2e-3, min_lr=1e-4, seed=0)
OVERFIT_MODEL = dict(d=32, heads=2, text_layers=1, gin_layers=3, fusion_layers=1, dropout=0.0)


@pytest.fixture(scope="session")
def overfit_run():
    import time

    from provhunt.training import TrainConfig, train

    sgs = sample_activity_subgraphs(make_graph(1000, seed=0), SamplingConfig(rng_seed=0))
    pairs16 = synthesize_pairs(sgs[:16])
    start = time.perf_counter()
    result = train(pairs16, TrainConfig(**OVERFIT_TRAIN), ModelConfig(**OVERFIT_MODEL))
    return pairs16, result, time.perf_counter() - start


# -- acceptance summary --------------------------------------------------------

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    import re

    lines = dict(config.stash.get(ACCEPTANCE, {}))
    for key in ("failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", getattr(rep, "nodeid", ""))
            if m and int(m.group(1)) not in lines:
                lines[int(m.group(1))] = f"criterion {int(m.group(1))}: FAIL (raised before a verdict)"
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
