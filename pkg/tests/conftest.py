import numpy as np
import pytest

from metricsmooth.embedding import EmbeddingKernel
from metricsmooth.grid import build_chart_domain, sample_metric


@pytest.fixture(scope="session")
def dom120():
    return build_chart_domain(2, 1.0, 120)


@pytest.fixture(scope="session")
def flat120(dom120):
    return sample_metric({"kind": "flat"}, dom120)


@pytest.fixture(scope="session")
def sphere120(dom120):
    return sample_metric({"kind": "sphere", "rho": 1.0, "coord_scale": 0.5},
                         dom120)


@pytest.fixture(scope="session")
def flat_kernel120(flat120):
    return EmbeddingKernel(flat120, 0.2)


@pytest.fixture(scope="session")
def sphere_kernel120(sphere120):
    return EmbeddingKernel(sphere120, 0.2)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260823)
