import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy import stats

from conftest import random_state
from diracsea.dynamics import (
    MAX_HALVINGS,
    EvolutionPlan,
    GridModel,
    GuidanceField,
    RingParticle,
    SamplingError,
    ScenarioError,
    StateSchedule,
    StepSizeError,
    TrajectorySet,
    branch_overlap,
    evolve_state,
    integrate_ensemble,
    integrate_trajectory,
    jump_ensemble,
    measurement_scenario,
    minimal_jump_step,
    one_body_density_matrix,
    rate_matrix,
    refinement_study,
    run_ensemble,
    sample_configurations,
    sample_sites,
    slab_probabilities,
    tv_distance,
)
from diracsea.fock import (
    BosonSpace,
    GridRegion,
    InteractionKernel,
    Interval,
    QuantumState,
    build_free_hamiltonian,
    build_hamiltonian,
    build_interaction,
    build_single_particle_basis,
    enumerate_sector,
    expectation,
    region_number_operator,
)
from diracsea.modes import InvalidParameterError, build_mode_lattice, single_species
from diracsea.position import density


def test_rabi_oscillation():
    omega = 0.7
    plan = EvolutionPlan.build(sp.csr_matrix(np.array([[0, omega], [omega, 0]], dtype=complex)))
    for t in (0.0, 0.3, 2.0, -1.1):
        out = plan.propagate(np.array([1.0, 0.0]), t)
        assert np.allclose(out, [math.cos(omega * t), -1j * math.sin(omega * t)], atol=1e-14)


def test_dense_and_sparse_propagators_agree(small_basis, rng):
    boson = BosonSpace(2)
    sector = enumerate_sector(small_basis, 2, boson.size)
    h = build_hamiltonian(sector, boson, InteractionKernel("yukawa", 0.4))
    dense = EvolutionPlan.build(h)
    sparse = EvolutionPlan.build(h, dense_limit=0)
    assert dense.dense and not sparse.dense
    st = random_state(sector, boson, rng)
    for t in (0.5, -2.0):
        assert np.allclose(dense.propagate(st.amplitudes, t), sparse.propagate(st.amplitudes, t), atol=1e-10)
    with pytest.raises(InvalidParameterError):
        dense.propagate(np.ones(3), 1.0)


def test_evolution_conserves_norm_and_energy(small_basis, rng):
    boson = BosonSpace(3, 0.8)
    sector = enumerate_sector(small_basis, 2, boson.size)
    h = build_hamiltonian(sector, boson, InteractionKernel("em", 0.5))
    plan = EvolutionPlan.build(h)
    st = random_state(sector, boson, rng)
    later = evolve_state(plan, st, 3.3)
    assert later.time == pytest.approx(3.3)
    assert expectation(h, later) == pytest.approx(expectation(h, st), abs=1e-10)
    back = evolve_state(plan, later, -3.3)
    assert np.allclose(back.amplitudes, st.amplitudes, atol=1e-12)


def test_state_schedule_caches(small_basis, rng):
    sector = enumerate_sector(small_basis, 1)
    st = random_state(sector, BosonSpace(), rng)
    sched = StateSchedule(EvolutionPlan.build(build_free_hamiltonian(sector, BosonSpace())), st, cache_size=2)
    a = sched.at(0.5)
    assert sched.at(0.5) is a
    sched.at(0.6)
    sched.at(0.7)
    assert sched.at(0.5) is not a
    assert np.allclose(sched.at(0.5).amplitudes, a.amplitudes)


def beating_system(coefficients=(0.5, 0.8 + 0.3j, 1.0, 0.6j, 0.4)):
    lat = build_mode_lattice(1, 2 * math.pi, 2.5)
    basis = build_single_particle_basis(lat, single_species(1.0))
    sector = enumerate_sector(basis, 1)
    amps = np.zeros(sector.dim, dtype=complex)
    for n, c in zip((-2, -1, 0, 1, 2), coefficients):
        amps[sector.index([1 << basis.find(0, 0, 0, n)])[0]] = c
    st = QuantumState.normalized(sector, BosonSpace(), amps)
    h = build_free_hamiltonian(sector, BosonSpace())
    return st, EvolutionPlan.build(h)


def test_time_reversal_returns_trajectories():
    st, plan = beating_system()
    fld = GuidanceField(StateSchedule(plan, st))
    X0 = np.linspace(0.1, 6.0, 25).reshape(-1, 1, 1)
    fwd = integrate_ensemble(fld, X0, 0.0, 2.0, 0.01)
    end = X0 + fwd.displacement[-1]
    back = integrate_ensemble(fld, end, 2.0, 0.0, -0.01)
    assert not fwd.aborted.any() and not back.aborted.any()
    assert np.abs(end + back.displacement[-1] - X0).max() < 1e-8


def test_rk4_step_refinement():
    st, plan = beating_system()
    fld = GuidanceField(StateSchedule(plan, st))
    x0 = [1.3]
    ref = integrate_trajectory(fld, x0, 0.0, 1.0, 0.1 / 16)[1][-1]
    e1 = abs(integrate_trajectory(fld, x0, 0.0, 1.0, 0.1)[1][-1] - ref).max()
    e2 = abs(integrate_trajectory(fld, x0, 0.0, 1.0, 0.05)[1][-1] - ref).max()
    assert e1 < 1e-5
    assert e2 < e1 / 8


class AlwaysNode:
    """Field whose density is zero everywhere: every step must abort."""

    n, dim, length, floor = 1, 1, 1.0, 1e-12

    def evaluate(self, t, X):
        return np.zeros_like(X), np.zeros(len(X))


def test_stub_field_aborts_after_halvings():
    X0 = np.array([[[0.2]], [[0.4]]])
    out = integrate_ensemble(AlwaysNode(), X0, 0.0, 0.3, 0.1)
    assert out.aborted.all()
    assert np.all(out.positions[-1] == X0)
    assert MAX_HALVINGS == 10


def test_integrate_rejects_bad_shapes():
    with pytest.raises(InvalidParameterError):
        integrate_ensemble(AlwaysNode(), np.zeros((3, 1)), 0.0, 1.0, 0.1)


def test_trajectories_follow_ring_velocity():
    ring = RingParticle(2 * math.pi, 1.0, (0, 1), (1.0, 0.5))
    x = np.array([0.3, 1.0, 2.5])
    v, rho = ring.evaluate(0.0, x)
    k = np.array([0.0, 1.0])
    c = np.array(ring.coefficients)
    psi = np.exp(1j * np.outer(x, k)) @ c / math.sqrt(2 * math.pi)
    dpsi = np.exp(1j * np.outer(x, k)) @ (1j * k * c) / math.sqrt(2 * math.pi)
    assert np.allclose(v[:, 0, 0], np.imag(dpsi / psi))
    assert np.allclose(rho, np.abs(psi) ** 2)


def test_ring_lattice_model():
    ring = RingParticle(2 * math.pi, 1.0, (0, 1, -1), (1.0, 0.45, 0.2j))
    model = ring.lattice_model(32)
    h = model.hamiltonian.toarray()
    assert np.allclose(h, h.conj().T)
    assert np.allclose(h.sum(axis=1), 0)
    assert model.probabilities(0.3).sum() == pytest.approx(1.0)


def test_sampler_reproduces_density(rng):
    st, _ = beating_system()
    X, stats_ = sample_configurations(lambda X: density(st, X), 20000, 1, 1, 2 * math.pi, rng)
    assert stats_["violations"] == 0
    edges = np.linspace(0, 2 * math.pi, 41)
    exact = slab_probabilities(st, edges)
    emp = np.histogram(X[:, 0, 0], edges)[0]
    chi2 = stats.chisquare(emp, exact * len(X))
    assert chi2.pvalue > 1e-3


def test_sampler_reports_low_acceptance(rng):
    L = 2 * math.pi
    centre = 10.5 * L / 64

    def peaked(X):
        return np.exp(-(((X[:, 0, 0] - centre) / 1e-5) ** 2))

    with pytest.raises(SamplingError):
        sample_configurations(peaked, 10, 1, 1, L, rng)


def test_one_body_density_matrix(small_basis, rng):
    sector = enumerate_sector(small_basis, 2)
    st = random_state(sector, BosonSpace(), rng)
    gamma = one_body_density_matrix(st)
    assert np.trace(gamma).real == pytest.approx(2.0)
    assert np.allclose(gamma, gamma.conj().T)
    assert np.all(np.linalg.eigvalsh(gamma) > -1e-12)
    p = slab_probabilities(st, np.linspace(0, 2 * math.pi, 9))
    assert p.sum() == pytest.approx(1.0)
    op = region_number_operator(sector, Interval(0, math.pi / 4))
    assert p[0] == pytest.approx(expectation(op, st) / 2)


def test_rate_matrix_for_diagonal_hamiltonian_is_zero(rng):
    psi = rng.normal(size=6) + 1j * rng.normal(size=6)
    psi /= np.linalg.norm(psi)
    rates, flux, prob = rate_matrix(psi, sp.diags(rng.normal(size=6)))
    assert rates.nnz == 0 and flux.nnz == 0
    assert prob.sum() == pytest.approx(1.0)


def test_rates_satisfy_the_master_equation():
    ring = RingParticle(2 * math.pi, 1.0, (0, 1, -1), (1.0, 0.45, 0.2j))
    model = ring.lattice_model(24)
    t, dt = 0.4, 1e-5
    dp = (model.probabilities(t + dt) - model.probabilities(t - dt)) / (2 * dt)
    rates, flux, prob = model.rates(t)
    assert abs(flux + flux.T).max() < 1e-14
    gain = rates @ prob
    loss = np.asarray(rates.sum(axis=0)).ravel() * prob
    assert np.allclose(gain - loss, dp, atol=1e-8)
    assert np.all(rates.data >= 0)


def test_step_size_error():
    rates = sp.csc_matrix(np.array([[0, 5.0], [5.0, 0]]))
    with pytest.raises(StepSizeError):
        minimal_jump_step(rates, np.array([0, 1]), 0.1, np.random.default_rng(0))


def test_jump_counts_match_rate():
    rng = np.random.default_rng(7)
    r = 1.0
    rates = sp.csc_matrix(np.array([[0, r], [r, 0]]))
    sites = np.zeros(20000, dtype=int)
    total, dt, steps = 0, 0.05, 100
    for _ in range(steps):
        sites, owner, frm, to, when = minimal_jump_step(rates, sites, dt, rng)
        assert np.all(frm != to) and np.all((when >= 0) & (when < dt))
        total += len(frm)
    expected = len(sites) * r * dt * steps
    assert abs(total / expected - 1) < 0.05


def test_grid_model_from_fock_matches_cell_measure(rng):
    lat = build_mode_lattice(1, 2 * math.pi, 2.5)
    basis = build_single_particle_basis(lat, single_species(1.0))
    boson = BosonSpace(2)
    sector = enumerate_sector(basis, 1, boson.size)
    h = build_hamiltonian(sector, boson, InteractionKernel("yukawa", 0.5, (1,)), resolution=lat.size)
    st = random_state(sector, boson, rng)
    model = GridModel.from_fock(st, h)
    N = lat.size
    for g in range(N):
        cell = np.zeros(N)
        cell[g] = 1.0
        op = region_number_operator(sector, GridRegion(cell), boson)
        assert model.probabilities(0.0)[g] == pytest.approx(expectation(op, st), abs=1e-12)
    later = evolve_state(EvolutionPlan.build(h), st, 0.7)
    assert np.allclose(model.probabilities(0.7), GridModel.from_fock(later, h).probabilities(0.0), atol=1e-12)


def test_grid_model_requires_full_resolution(rng):
    lat = build_mode_lattice(3, 2 * math.pi, 1.2)
    basis = build_single_particle_basis(lat, single_species(1.0))
    sector = enumerate_sector(basis, 1)
    st = random_state(sector, BosonSpace(), rng)
    with pytest.raises(InvalidParameterError):
        GridModel.from_fock(st, build_free_hamiltonian(sector, BosonSpace()))


def test_jump_ensemble_stays_in_equilibrium():
    ring = RingParticle(2 * math.pi, 1.0, (0, 1, -1), (1.0, 0.45, 0.2j))
    model = ring.lattice_model(16)
    rng = np.random.default_rng(3)
    s0 = sample_sites(model.probabilities(0.0), 20000, rng)
    traj = jump_ensemble(model, s0, 0.0, 2.0, 0.01, rng, record_every=50)
    assert len(traj.jumps["from"]) > 1000
    for s, t in enumerate(traj.times):
        counts = np.bincount(traj.sites[s], minlength=16) / traj.count
        assert tv_distance(counts, model.probabilities(t)) < 3 * math.sqrt(16 / 20000)


def test_deterministic_ensemble_is_equivariant():
    st, plan = beating_system()
    traj, rep = run_ensemble(plan, st, 6000, seed=1, t_end=1.5, step=0.05, record_every=10, bins=20)
    assert traj.count == 6000 and not traj.aborted.any()
    assert np.max(rep.tv) < 3 * rep.noise_band


def test_uniform_start_is_detected():
    st, plan = beating_system()
    _, rep = run_ensemble(plan, st, 6000, seed=1, t_end=0.1, step=0.05, bins=20, initial="uniform")
    assert rep.tv[0] > 0.3


def test_correction_velocity_keeps_equivariance():
    lat = build_mode_lattice(1, 2 * math.pi, 2.5)
    basis = build_single_particle_basis(lat, single_species(1.0))
    boson = BosonSpace(3, 1.0)
    sector = enumerate_sector(basis, 1, boson.size)
    kernel = InteractionKernel("yukawa", 1.5, (1,))
    rng = np.random.default_rng(5)
    st = random_state(sector, boson, rng)
    h = build_hamiltonian(sector, boson, kernel)
    hi = build_interaction(sector, boson, kernel)
    plan = EvolutionPlan.build(h)
    _, rep = run_ensemble(
        plan, st, 6000, 2, t_end=1.0, step=0.05, record_every=10, bins=20,
        correction=True, interaction=hi, boson_mode=1,
    )
    assert np.max(rep.tv) < 3 * rep.noise_band


def test_ensemble_independent_of_worker_count():
    st, plan = beating_system()
    a, _ = run_ensemble(plan, st, 600, seed=9, t_end=0.3, chunk=128, workers=1)
    b, _ = run_ensemble(plan, st, 600, seed=9, t_end=0.3, chunk=128, workers=3)
    c, _ = run_ensemble(plan, st, 600, seed=10, t_end=0.3, chunk=128, workers=1)
    assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)


def test_jump_mode_ensemble():
    lat = build_mode_lattice(1, 2 * math.pi, 2.5)
    basis = build_single_particle_basis(lat, single_species(1.0))
    boson = BosonSpace(2)
    sector = enumerate_sector(basis, 1, boson.size)
    rng = np.random.default_rng(4)
    st = random_state(sector, boson, rng)
    h = build_hamiltonian(sector, boson, InteractionKernel("yukawa", 0.5, (1,)), resolution=lat.size)
    traj, rep = run_ensemble(EvolutionPlan.build(h), st, 5000, 3, "jump", 1.0, 0.002, record_every=100)
    assert traj.mode == "jump" and traj.sites.shape == (len(traj.times), 5000)
    assert np.max(rep.tv) < 3 * rep.noise_band
    with pytest.raises(InvalidParameterError):
        run_ensemble(EvolutionPlan.build(h), st, 10, 0, "bohm")


def test_merged_sets_offset_jump_owners():
    a = TrajectorySet(np.zeros(1), np.zeros((1, 2, 1, 1)), np.zeros((1, 2, 1, 1)), np.zeros(2, bool),
                      jumps={"trajectory": np.array([1])})
    b = TrajectorySet(np.zeros(1), np.zeros((1, 3, 1, 1)), np.zeros((1, 3, 1, 1)), np.zeros(3, bool),
                      jumps={"trajectory": np.array([0, 2])})
    m = a.merged(b)
    assert m.count == 5 and m.jumps["trajectory"].tolist() == [1, 2, 4]


def packet_branches(width=1.0):
    lat = build_mode_lattice(1, 8 * math.pi, 3.5)
    basis = build_single_particle_basis(lat, single_species(1.0))
    sector = enumerate_sector(basis, 1)
    L = lat.length

    def packet(c):
        amps = np.zeros(sector.dim, dtype=complex)
        for n, p in zip(lat.integers[:, 0], lat.momenta[:, 0]):
            amps[sector.index([1 << basis.find(0, 0, 0, n)])[0]] = np.exp(-((p * width) ** 2) - 1j * p * c)
        return QuantumState.normalized(sector, BosonSpace(), amps)

    h = build_free_hamiltonian(sector, BosonSpace())
    return [packet(L / 4), packet(3 * L / 4)], [Interval(0, L / 2), Interval(L / 2, L)], EvolutionPlan.build(h)


def test_branch_overlap_and_scenario_guard():
    branches, regions, plan = packet_branches()
    assert branch_overlap(branches, regions) < 1e-5
    wide, _, wide_plan = packet_branches(width=0.2)
    with pytest.raises(ScenarioError):
        measurement_scenario(wide_plan, wide, [0.6, 0.8], regions, 100, 0, threshold=1e-3)
    with pytest.raises(InvalidParameterError):
        measurement_scenario(plan, branches, [1.0], regions, 100, 0)


def test_measurement_scenario_small():
    branches, regions, plan = packet_branches()
    rep = measurement_scenario(plan, branches, [math.sqrt(0.5), math.sqrt(0.5)], regions, 2000, 4)
    assert rep.within_3sigma and rep.count == 2000
    assert rep.outside < 0.01


def test_refinement_study_shape():
    ring = RingParticle(2 * math.pi, 1.0, (0, 1, -1), (1.0, 0.45, 0.2j))
    out = refinement_study(ring, levels=(16, 64), count=2000, t_end=0.5, seed=1)
    assert [o["sites"] for o in out] == [16, 64]
    assert all(0 <= o["tv"] <= 1 and o["jumps"] > 0 for o in out)


def test_tv_distance():
    assert tv_distance([0.5, 0.5], [1.0, 0.0]) == 0.5
    assert tv_distance([0.2, 0.8], [0.2, 0.8]) == 0
