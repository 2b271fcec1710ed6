import logging

import numpy as np
import pytest
import torch

from dcngan.synthetic import synthetic_sequence, texture

torch.set_num_threads(1)
logging.getLogger("dcngan").setLevel(logging.ERROR)


@pytest.fixture
def natural_frame():
    """64x64 textured frame with edges; block-aligned."""
    return texture(64, 64, seed=7).astype(np.float32)


@pytest.fixture(scope="session")
def short_sequence():
    return synthetic_sequence(4, 64, 64, seed=3)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
