import numpy as np
import pytest

from jsqa.corpus import Corpus
from jsqa.synth import toy_clips

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_corpora():
    clean, noise = toy_clips(n_clean=16, n_noise=5, seed=0, clean_seconds=1.5, noise_seconds=3.0)
    return Corpus.from_clips(clean), Corpus.from_clips(noise)
