import sys
import numpy as np
import pytest

from cmdse.semantics import load_description_bank, load_vocabulary
from cmdse.synthgen import GeneratorSpec, generate


@pytest.fixture(scope="session")
def vocab():
    return load_vocabulary()


@pytest.fixture(scope="session")
def bank(vocab):
    return load_description_bank(vocab=vocab)


@pytest.fixture(scope="session")
def small_dataset(vocab, bank):
    return generate(GeneratorSpec(num_train=24, num_test=12), seed=3, vocab=vocab, bank=bank)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
