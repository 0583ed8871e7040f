import json
from importlib import resources

import numpy as np
import pytest
from hypothesis import strategies as st

from qnet.model import NetworkSpec
from qnet.scenarios import RoutedScenario


def gallery(name):
    data = json.loads((resources.files("qnet") / "gallery" / f"{name}.json").read_text())
    if "routes" in data:
        return RoutedScenario.from_dict(data)
    return NetworkSpec.from_dict(data)


def random_spec(rng, J, A, single_rate=False, lam=None, open_mass=0.9):
    """A valid open spec: routing rows are scaled below ``open_mass``."""
    r = rng.random((J, J)) * (rng.random((J, J)) < 0.6)
    rows = r.sum(axis=1, keepdims=True)
    scale = rng.uniform(0.1, open_mass, size=(J, 1))
    r = np.divide(r, rows, out=np.zeros_like(r), where=rows > 0) * scale
    q = rng.random((A, J)) * (rng.random((A, J)) < 0.7)
    if q.sum() == 0:
        q[0, 0] = 1.0
    q = q / q.sum()
    if single_rate:
        mu = np.full((A, J), rng.uniform(0.5, 3.0))
    else:
        mu = rng.uniform(0.5, 5.0, size=(A, J))
    lam = rng.uniform(0.1, 3.0) if lam is None else lam
    return NetworkSpec(J, A, lam, q, mu, r)


@st.composite
def specs(draw, max_servers=5, max_classes=3, single_rate=False):
    J = draw(st.integers(1, max_servers))
    A = draw(st.integers(1, max_classes))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_spec(np.random.default_rng(seed), J, A, single_rate)


@pytest.fixture
def mm1():
    return gallery("mm1")


@pytest.fixture
def tandem():
    return gallery("tandem")
