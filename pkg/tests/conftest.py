import numpy as np
import pytest

from smmpc.plant import PAPER_PLANT, NoiseSpec, generate_data, tf_to_ss
from smmpc.signal_matrix import build


@pytest.fixture(scope="session")
def paper_ss():
    return tf_to_ss(PAPER_PLANT)


@pytest.fixture(scope="session")
def ex1_data(paper_ss):
    return generate_data(paper_ss, 50, NoiseSpec(0.1, 0.1), seed=0)


@pytest.fixture(scope="session")
def ex1_sm(ex1_data):
    return build(ex1_data, 4, 10)


@pytest.fixture(scope="session")
def clean_sm(paper_ss):
    data = generate_data(paper_ss, 60, NoiseSpec(0.0, 0.0), seed=3)
    return build(data, 4, 10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary so they
# show up regardless of output capturing
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance_report():
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
