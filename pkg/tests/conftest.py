import numpy as np
import pytest

from awunfold import catalog
from awunfold.certify import ShapeRefSet, certify
from awunfold.model import assemble_closed_loop


@pytest.fixture(scope="session")
def plant():
    return catalog.benchmark_plant()


@pytest.fixture(scope="session")
def learned(plant):
    return assemble_closed_loop(plant, catalog.learned_controller())


@pytest.fixture(scope="session")
def initial(plant):
    return assemble_closed_loop(plant, catalog.initial_controller())


@pytest.fixture(scope="session")
def ref1():
    return ShapeRefSet.from_partial(catalog.REFERENCE_VERTICES, 4)


@pytest.fixture(scope="session")
def learned_cert(learned, ref1):
    return certify(learned, ref1)


@pytest.fixture(scope="session")
def initial_cert(initial, ref1):
    return certify(initial, ref1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
