import numpy as np
import pytest

from bcpredict.corpus import SynthConfig, synth_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_listener_corpus():
    return synth_corpus(SynthConfig(rule="audio_plus_listener", n_instances=300,
                                    split_sizes=(180, 60, 60), seed=3))


@pytest.fixture(scope="session")
def small_audio_corpus():
    return synth_corpus(SynthConfig(rule="audio_only", n_instances=240, split_sizes=(160, 40, 40), seed=4))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines.values()):
            terminalreporter.write_line(line)
