from pathlib import Path

import pytest

from marcq import WorkloadSpec, exponential_class

SPECS = Path(__file__).resolve().parents[1] / "specs"


def make_spec(k, parts):
    """``parts`` is a list of (need, prob, rate) for exponential classes."""
    return WorkloadSpec(k, tuple(exponential_class(n, p, r) for n, p, r in parts))


@pytest.fixture
def running():
    return make_spec(2, [(1, 2 / 3, 1.0), (2, 1 / 3, 0.5)])


@pytest.fixture
def specs_dir():
    return SPECS
