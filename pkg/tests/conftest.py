import numpy as np
import pytest

from dpotsim.data import generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth():
    """Four classes of 8x8 images, 30 per class."""
    return generate_synthetic(4, 30, (8, 8), noise_sigma=0.3, seed=5)


ACCEPTANCE = {}  # criterion number -> (passed, detail); filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
