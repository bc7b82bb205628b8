import numpy as np
import pytest

from semges.data import synth_dataset
from semges.generator import Stage2Config, train_stage2
from semges.vqvae import Stage1Config, train_stage1


@pytest.fixture(scope="session")
def small_data():
    return synth_dataset(0, n_clips=16, n_speakers=2)


@pytest.fixture(scope="session")
def small_priors(small_data):
    hp = Stage1Config(steps=30)
    return (
        train_stage1(small_data, "hands", hp, seed=0).prior,
        train_stage1(small_data, "body", hp, seed=0).prior,
    )


@pytest.fixture(scope="session")
def small_model(small_data, small_priors):
    return train_stage2(small_data, *small_priors, Stage2Config(steps=10), seed=0).model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
