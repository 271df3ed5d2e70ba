import sys

import numpy as np
import pytest

from leafgrasp.scene import SynthesisParams, synthesize_scene

SMALL = SynthesisParams(width=200, height=160, leaf_size=(12, 22), leaf_count=(2, 4))


@pytest.fixture(scope="session")
def small_params():
    return SMALL


@pytest.fixture(scope="session")
def small_scenes():
    return [synthesize_scene(SynthesisParams(**{**SMALL.__dict__, "seed": s}), scene_id=f"small-{s}") for s in range(6)]


@pytest.fixture(scope="session")
def scene():
    return synthesize_scene(SynthesisParams(seed=3), scene_id="default-3")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance suite's PASS/FAIL lines (its prints are captured)."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
