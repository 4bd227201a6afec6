"""Shared fixtures and the acceptance summary printed at the end of a run."""
import math

import numpy as np
import pytest

from diracsea.fock import BosonSpace, QuantumState, build_single_particle_basis, enumerate_sector, field_creation
from diracsea.modes import build_mode_lattice, single_species

ACCEPTANCE = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_basis():
    """1D, L = 2 pi, three momenta, one species of mass 1: six modes."""
    lat = build_mode_lattice(1, 2 * np.pi, 1.5)
    return build_single_particle_basis(lat, single_species(1.0))


@pytest.fixture(scope="session")
def five_mode_basis():
    lat = build_mode_lattice(1, 2 * np.pi, 2.5)
    return build_single_particle_basis(lat, single_species(1.0))


def random_state(sector, boson, rng):
    dim = sector.dim * boson.size
    return QuantumState.normalized(sector, boson, rng.normal(size=dim) + 1j * rng.normal(size=dim))


@pytest.fixture
def one_fermion(five_mode_basis):
    return enumerate_sector(five_mode_basis, 1), BosonSpace()


def vacuum_chain(basis, n):
    return [enumerate_sector(basis, k) for k in range(n + 1)]


def position_state(sectors, xs, comps):
    """(n!)^(-1/2) psi+_{c1}(x1) ... psi+_{cn}(xn) |0>, as a vector in sector n."""
    vec = np.ones(1, dtype=complex)
    n = len(xs)
    for step, k in enumerate(reversed(range(n))):
        op = field_creation(sectors[step], sectors[step + 1], np.atleast_1d(xs[k]), comps[k])
        vec = op @ vec
    return vec / math.sqrt(math.factorial(n))
