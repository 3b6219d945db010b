import os

# must run before config/database are imported
os.environ['SDHT_LAB_DATABASE_URL'] = 'sqlite://'
os.environ.setdefault('SDHT_LAB_RECORD_RUNS', 'true')
os.environ.setdefault('SDHT_LAB_THREADS', '1')

import numpy as np
import pytest

from prob_core import FiniteDistribution


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def ber():
    return FiniteDistribution.bernoulli
