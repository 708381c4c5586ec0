"""Shared fixtures: small lattices, a default model and a short noisy record."""

import numpy as np
import pytest

from nsjump.integrator import simulate
from nsjump.levy import SubordinatorConfig, sample_noise_increments, sample_subordinator
from nsjump.spectral import ModelConfig, WavenumberLattice


ACCEPTANCE_LINES = []


def pytest_collection_modifyitems(config, items):
    # acceptance runs are long; keep them last so unit failures surface first
    items.sort(key=lambda it: it.get_closest_marker("acceptance") is not None)


def pytest_terminal_summary(terminalreporter):
    # plain -v hides captured prints of passing tests; repeat the criterion lines here
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def lat3():
    return WavenumberLattice(3)


@pytest.fixture(scope="session")
def lat4():
    return WavenumberLattice(4)


@pytest.fixture(scope="session")
def model():
    return ModelConfig(nu=0.1)


@pytest.fixture(scope="session")
def sub():
    return SubordinatorConfig(family="tempered", alpha=1.0, aleph=1.0, eps=1e-2)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20261019)


@pytest.fixture(scope="session")
def record(lat4, model, sub):
    """One noisy trajectory on [0, 1] with h = 1e-2 and a breakpoint at 0.5."""
    path = sample_subordinator(sub, 1.0, 11)
    noise = sample_noise_increments(path, model.d, 11, h_max=1e-2, breakpoints=(0.5,))
    w0 = 0.5 * (lat4.basis((1, 0)) + lat4.basis((0, 1)) - lat4.basis((-1, 1)))
    return simulate(w0, model, noise, lat4)
