import numpy as np
import pytest
from hypothesis import settings

from csphmm.corpus import standard_split
from csphmm.synth import SynthConfig, synth_corpus

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus():
    """Three well-separated synthetic speakers with three repetitions each."""
    manifest, truth, store = synth_corpus(SynthConfig(n_speakers=3, n_reps=3, seed=7))
    return manifest, truth, store, standard_split(manifest)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
