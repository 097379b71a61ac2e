import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from hvrs.tasks.dataset import generate_dataset, split_pretraining  # noqa: E402
from hvrs.tasks.layouts import standard_layouts  # noqa: E402


@pytest.fixture(scope="session")
def small_tasks():
    return generate_dataset(standard_layouts(), 8, 4, seed=0)


@pytest.fixture(scope="session")
def train_tasks(small_tasks):
    return [t for t in small_tasks if t.split == "train"]


@pytest.fixture(scope="session")
def singles(train_tasks):
    return split_pretraining(train_tasks)


# one line per acceptance criterion, printed after the run whatever the capture mode
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
