import logging
import pathlib

import numpy as np
import pytest

import iterlog

CONFIGS = pathlib.Path(__file__).parent.parent / "configs"
SCHEMAS = pathlib.Path(__file__).parent.parent / "schemas"

#: Representative mass vectors per chamber of the five-segment cycle, with D1 and D2.
chamber_points = pytest.mark.parametrize(
    ["masses", "d1", "d2", "chamber"],
    [
        ((1, 1, 1, 1, 1), 3, 3, iterlog.Chamber.MIDDLE),
        ((4, 2, 1, 1, 1), -1, 21, iterlog.Chamber.LEFT),
        ((1, 1, 1, 4, 2), 21, -3, iterlog.Chamber.RIGHT),
        ((1, 1.2, 0.6, 1.2, 1), 3, 3, iterlog.Chamber.MIDDLE),
        ((3, 2, 1, 1, 1), 0, 16, iterlog.Chamber.WALL1),
    ],
)


@pytest.fixture(autouse=True)
def debug_logging(caplog):
    caplog.set_level(logging.DEBUG, logger="iterlog")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def a2():
    """Factory for the two-vertex quiver 0 -> 1 with unit masses and arrow map a."""

    def make(rho=(0.0, 0.0), a=1.0):
        q = iterlog.QuiverData(
            (1, 1),
            (1.0, 1.0),
            (iterlog.Arrow(0, 1, np.array([[a]], dtype=complex)),),
            rho,
        )
        return iterlog.build_from_quiver(q)

    return make


@pytest.fixture
def middle_cycle():
    return iterlog.five_cycle([1, 1, 1, 1, 1])
