from pathlib import Path

import numpy as np
import pytest

from glrsed import data


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> Path:
    """Eight 1 s synthetic clips, six train and two test, written to disk once."""
    out = tmp_path_factory.mktemp("synth")
    spec = data.SynthSpec(clip_duration=1.0, event_duration=(0.2, 0.8), seed=3)
    clips = data.synth_generate(spec, 8, out)
    data.write_annotations(out / "train.tsv", clips[:6])
    data.write_annotations(out / "test.tsv", clips[6:])
    return out


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
