import math

import numpy as np
import pytest

from erm_fdr.divergence import make_generator, parse_generator
from erm_fdr.learning import DataGeneratingLaw
from erm_fdr.model_space import LossTable, ModelSupport

ALL_KEYS = ("kl", "reverse_kl", "chi_squared", "hellinger_sq", "alpha:0.5", "alpha:2", "alpha:-1", "alpha:3")

SIGMA = 1.0 / (1.0 + math.exp(-1.0))


@pytest.fixture(params=ALL_KEYS)
def any_gen(request):
    return parse_generator(request.param)


@pytest.fixture
def kl():
    return make_generator("kl")


@pytest.fixture
def chi2():
    return make_generator("chi_squared")


@pytest.fixture
def three_atoms():
    """Uniform Q on three atoms with L = (0, 1, 2)."""
    return ModelSupport.uniform(3), np.array([0.0, 1.0, 2.0])


@pytest.fixture
def reference_world():
    """Two atoms, two equiprobable datasets with mirrored losses."""
    support = ModelSupport.uniform(2)
    law = DataGeneratingLaw(("z1", "z2"), [0.5, 0.5])
    tables = [LossTable([0.0, 1.0], "z1"), LossTable([1.0, 0.0], "z2")]
    return support, law, tables


def random_instance(rng, n, loss_scale=1.0):
    q = rng.dirichlet(np.ones(n))
    return ModelSupport.finite(q), rng.uniform(0.0, loss_scale, n)
