"""Property-based checks over randomly drawn parameters."""
import math

import numpy as np
import pytest

hypothesis = pytest.importorskip("hypothesis")
from hypothesis import given, settings
from hypothesis import strategies as st

from diracsea import fluct
from diracsea.config import config_hash, parse_config
from diracsea.fock import BosonSpace, QuantumState, enumerate_sector, lift_one_body, number_operator
from diracsea.modes import build_mode_lattice, delta_cutoff, dirac_algebra, dirac_spinors
from diracsea.position import velocity

FAST = settings(max_examples=40, deadline=None)


@FAST
@given(
    dim=st.sampled_from([1, 3]),
    length=st.floats(1.0, 20.0),
    cutoff=st.floats(0.1, 4.0),
)
def test_lattice_is_symmetric_and_inside_cutoff(dim, length, cutoff):
    if dim == 3 and cutoff * length / (2 * math.pi) > 4:
        cutoff = 4 * 2 * math.pi / length
    lat = build_mode_lattice(dim, length, cutoff)
    assert np.all(np.linalg.norm(lat.momenta, axis=1) <= cutoff * (1 + 1e-12))
    keys = {tuple(n) for n in lat.integers}
    assert keys == {tuple(-np.array(n)) for n in keys}
    assert (0,) * dim in keys
    # nothing just outside the ball was dropped
    nmax = cutoff * length / (2 * math.pi)
    k = int(nmax)
    outside = (k + 1,) + (0,) * (dim - 1)
    assert (outside in keys) == ((k + 1) <= nmax * (1 + 1e-12))


@FAST
@given(
    p=st.lists(st.floats(-50, 50), min_size=3, max_size=3),
    m=st.floats(0.0, 50.0),
)
def test_spinor_residuals(p, m):
    alg = dirac_algebra(3)
    s = dirac_spinors(m, p, alg)
    h = alg.hamiltonian(p, m)
    scale = max(1.0, s.energy)
    for u in s.u:
        assert np.abs(h @ u - s.energy * u).max() < 1e-12 * scale
    for v in s.v:
        assert np.abs(h @ v + s.energy * v).max() < 1e-12 * scale


@FAST
@given(
    p=st.floats(1e-3, 1e4),
    ratio=st.floats(0.2, 5.0),
    m=st.floats(0.0, 1e3),
)
def test_symmetric_integrand_matches_naive_where_stable(p, ratio, m):
    e = math.hypot(p, m)
    q = ratio * e
    naive = fluct.variance_integrand(p, q, m) + fluct.variance_integrand(p, -q, m)
    scale = abs(fluct.variance_integrand(p, q, m)) + abs(fluct.variance_integrand(p, -q, m))
    assert abs(float(fluct.symmetric_integrand(p, q, m)) - float(naive)) <= 1e-10 * scale + 1e-300


@FAST
@given(
    p=st.floats(1e-3, 1e4),
    q=st.floats(0.0, 1e4),
    m=st.floats(0.0, 1e3),
)
def test_symmetric_integrand_is_even_in_q(p, q, m):
    assert fluct.symmetric_integrand(p, q, m) == fluct.symmetric_integrand(p, -q, m)


@FAST
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 6))
def test_lifted_one_body_is_hermitian_and_conserves_number(small_basis, seed, n):
    rng = np.random.default_rng(seed)
    M = small_basis.size
    w = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    w = w + w.conj().T
    sector = enumerate_sector(small_basis, n)
    op = lift_one_body(sector, w)
    assert abs(op - op.conj().T).max() < 1e-13 if op.nnz else True
    f = number_operator(sector)
    c = op @ f - f @ op
    assert (abs(c).max() if c.nnz else 0.0) < 1e-12


@FAST
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 2))
def test_velocity_bound_random_states(five_mode_basis, seed, n):
    rng = np.random.default_rng(seed)
    sector = enumerate_sector(five_mode_basis, n)
    amps = rng.normal(size=sector.dim) + 1j * rng.normal(size=sector.dim)
    state = QuantumState.normalized(sector, BosonSpace(), amps)
    v, _ = velocity(state, rng.uniform(0, 2 * math.pi, size=(50, n, 1)), floor=0.0)
    assert np.all(np.abs(v) <= 1 + 1e-12)


@FAST
@given(x=st.floats(-20, 20))
def test_delta_cutoff_is_even_and_periodic(x):
    lat = build_mode_lattice(1, 2 * math.pi, 2.5)
    a = delta_cutoff(x, lat)
    assert a == pytest.approx(delta_cutoff(-x, lat), abs=1e-12)
    assert a == pytest.approx(delta_cutoff(x + lat.length, lat), abs=1e-12)


@FAST
@given(seed=st.integers(0, 1000), fmt=st.sampled_from(["csv", "json"]))
def test_config_hash_ignores_key_order(seed, fmt):
    a = parse_config(f"seed: {seed}\noutput:\n  format: {fmt}\n  dir: x\n")
    b = parse_config(f"output:\n  dir: y\n  format: {fmt}\nseed: {seed}\n")
    assert config_hash(a) == config_hash(b)
