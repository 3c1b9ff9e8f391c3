"""Shared fixtures: converged benchmark states, solved once per session."""

import numpy as np
import pytest

from mks.config import RunConfig
from mks.harness import run_single

_STATES = {}


def converged_state(name):
    """Converged SCF state of a bundled benchmark, cached for the session."""
    if name not in _STATES:
        _STATES[name] = run_single(RunConfig.from_file(name))
    return _STATES[name]


@pytest.fixture(scope="session")
def free1d_state():
    return converged_state("free1d")


@pytest.fixture(scope="session")
def si1d_state():
    return converged_state("si1d")


@pytest.fixture(scope="session")
def rhf1d_state():
    return converged_state("rhf1d")


@pytest.fixture(scope="session")
def tiny3d_state():
    return converged_state("tiny3d")


def random_density_matrix(basis, m, seed, occupations=None):
    """Random orthonormal orbitals with given (or random) occupations."""
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((basis.size, m)) + 1j * rng.standard_normal(
        (basis.size, m)
    )
    q, _ = np.linalg.qr(raw)
    if occupations is None:
        occupations = rng.uniform(0.05, 0.95, size=m)
    from mks.density_matrix import DensityMatrix

    return DensityMatrix(basis, q, np.asarray(occupations, dtype=float))
