"""Invariant suite behind the ``check`` subcommand.

Each check returns a :class:`CheckResult` with the measured deviation and
the tolerance it was held to. The suite is small-lattice and runs in seconds.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fluct
from .dynamics import EvolutionPlan, evolve_state
from .fock import (
    BosonSpace,
    InteractionKernel,
    Interval,
    QuantumState,
    annihilation_matrix,
    build_free_hamiltonian,
    build_hamiltonian,
    build_single_particle_basis,
    commutator_norm,
    creation_matrix,
    enumerate_sector,
    fermion_operator,
    hermiticity_error,
    number_operator,
    region_number_operator,
)
from .modes import (
    build_mode_lattice,
    delta_cutoff,
    dirac_algebra,
    dirac_spinors,
    single_species,
    standard_species_table,
)
from .position import amplitudes, currents, density_rate


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool

    def to_dict(self):
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance, "passed": self.passed}


def _result(name, value, tol, below=True):
    value = float(value)
    ok = value <= tol if below else value >= tol
    return CheckResult(name, value, tol, bool(ok and math.isfinite(value)))


def check_dirac_algebra():
    worst = 0.0
    for d in (1, 3):
        alg = dirac_algebra(d)
        eye = np.eye(alg.spinor_dim)
        mats = list(alg.alphas) + [alg.beta]
        for i, a in enumerate(mats):
            worst = max(worst, np.abs(a - a.conj().T).max())
            for j, b in enumerate(mats):
                target = 2 * eye if i == j else 0 * eye
                worst = max(worst, np.abs(a @ b + b @ a - target).max())
    return _result("dirac algebra anticommutators", worst, 1e-14)


def check_spinors():
    worst = 0.0
    rng = np.random.default_rng(0)
    for d in (1, 3):
        alg = dirac_algebra(d)
        for _ in range(20):
            p = rng.normal(size=d) * 3
            m = float(rng.uniform(0, 2))
            s = dirac_spinors(m, p, alg)
            h = alg.hamiltonian(p, m)
            for u in s.u:
                worst = max(worst, np.abs(h @ u - s.energy * u).max())
            for v in s.v:
                worst = max(worst, np.abs(h @ v + s.energy * v).max())
            allv = np.vstack([s.u, s.v])
            worst = max(worst, np.abs(allv.conj() @ allv.T - np.eye(len(allv))).max())
    return _result("spinor eigen residual and orthonormality", worst, 1e-12)


def check_delta():
    lat = build_mode_lattice(1, 2 * np.pi, 3.5)
    N = 64
    x = np.arange(N) * lat.length / N
    f = 0.3 + np.cos(2 * x) - 0.7 * np.sin(3 * x)
    y = 1.234
    val = np.sum(f * delta_cutoff(x - y, lat)) * lat.length / N
    exact = 0.3 + np.cos(2 * y) - 0.7 * np.sin(3 * y)
    total = np.sum(delta_cutoff(x, lat)) * lat.length / N
    return _result("cut-off delta reproduces band-limited functions", max(abs(val - exact), abs(total - 1)), 1e-10)


def check_anticommutators():
    lat = build_mode_lattice(1, 2 * np.pi, 1.5)
    basis = build_single_particle_basis(lat, single_species(1.0))
    sectors = [enumerate_sector(basis, n) for n in range(basis.size + 1)]
    dims = [s.dim for s in sectors]
    offs = np.concatenate([[0], np.cumsum(dims)])
    total = offs[-1]

    def full(i):
        a = sp.lil_matrix((total, total), dtype=complex)
        for n in range(1, len(sectors)):
            block = annihilation_matrix(i, sectors[n], sectors[n - 1])
            a[offs[n - 1] : offs[n], offs[n] : offs[n + 1]] = block
        return a.tocsr()

    ops = [full(i) for i in range(basis.size)]
    worst = 0.0
    eye = sp.identity(total, format="csr")
    for i, j in itertools.product(range(basis.size), repeat=2):
        ai, aj = ops[i], ops[j]
        anti = ai @ aj.conj().T + aj.conj().T @ ai - (eye if i == j else 0 * eye)
        worst = max(worst, abs(anti).max() if anti.nnz else 0.0)
        anti2 = ai @ aj + aj @ ai
        worst = max(worst, abs(anti2).max() if anti2.nnz else 0.0)
    return _result("canonical anticommutation relations", worst, 1e-14)


def _small_system():
    lat = build_mode_lattice(1, 2 * np.pi, 1.5)
    basis = build_single_particle_basis(lat, single_species(1.0))
    sector = enumerate_sector(basis, 3)
    boson = BosonSpace(2, 1.0)
    return lat, basis, sector, boson


def check_hamiltonians():
    _, _, sector, boson = _small_system()
    f = number_operator(sector, boson)
    herm, comm = 0.0, 0.0
    for kind in ("yukawa", "em"):
        h = build_hamiltonian(sector, boson, InteractionKernel(kind, 0.3))
        herm = max(herm, hermiticity_error(h))
        comm = max(comm, commutator_norm(f, h))
    return [
        _result("Hamiltonian Hermiticity", herm, 1e-12),
        _result("fermion number conservation [F, H]", comm, 1e-12),
    ]


def check_additivity():
    lat, _, sector, _ = _small_system()
    a = region_number_operator(sector, Interval(0.0, 2.0))
    b = region_number_operator(sector, Interval(2.0, lat.length))
    f = number_operator(sector)
    dev = abs(a + b - f).max()
    n_dev = abs(f - sector.n * sp.identity(sector.dim)).max()
    return _result("F(B) + F(complement) = F = n", max(dev, n_dev), 1e-12)


def _random_state(sector, boson, rng):
    v = rng.normal(size=sector.dim * boson.size) + 1j * rng.normal(size=sector.dim * boson.size)
    return QuantumState.normalized(sector, boson, v)


def check_antisymmetry():
    lat = build_mode_lattice(1, 2 * np.pi, 1.5)
    basis = build_single_particle_basis(lat, single_species(1.0))
    sector = enumerate_sector(basis, 2)
    rng = np.random.default_rng(1)
    st = _random_state(sector, BosonSpace(), rng)
    x = rng.uniform(0, lat.length, size=(5, 2, 1))
    a = amplitudes(st, x)
    b = amplitudes(st, x[:, ::-1])
    dev = np.abs(a + np.swapaxes(b, 1, 2)).max()
    return _result("amplitude antisymmetry", dev, 1e-12)


def check_velocity_bound():
    lat = build_mode_lattice(1, 2 * np.pi, 2.5)
    basis = build_single_particle_basis(lat, single_species(0.7))
    rng = np.random.default_rng(2)
    worst = 0.0
    for n in (1, 2):
        st = _random_state(enumerate_sector(basis, n), BosonSpace(), rng)
        x = rng.uniform(0, lat.length, size=(200, n, 1))
        rho, j = currents(st, x)
        worst = max(worst, float(np.max(np.abs(j) / rho[:, None, None])))
    return _result("velocity bound |v| <= 1", worst, 1 + 1e-9)


def check_continuity():
    lat = build_mode_lattice(1, 2 * np.pi, 1.5)
    basis = build_single_particle_basis(lat, single_species(1.0))
    sector = enumerate_sector(basis, 1)
    boson = BosonSpace()
    rng = np.random.default_rng(3)
    st = _random_state(sector, boson, rng)
    h = build_free_hamiltonian(sector, boson)
    N = 32
    x = (np.arange(N) * lat.length / N).reshape(-1, 1, 1)
    rate = density_rate(st, h, x)
    _, j = currents(st, x)
    jk = np.fft.fft(j[:, 0, 0])
    k = np.fft.fftfreq(N, d=1 / N) * 2 * np.pi / lat.length
    div = np.real(np.fft.ifft(1j * k * jk))
    return _result("continuity d(rho)/dt + div(j) = 0", np.sqrt(np.mean((rate + div) ** 2)), 1e-8)


def check_unitarity():
    _, _, sector, boson = _small_system()
    h = build_hamiltonian(sector, boson, InteractionKernel("yukawa", 0.3))
    plan = EvolutionPlan.build(h)
    st = _random_state(sector, boson, np.random.default_rng(4))
    out = evolve_state(plan, st, 2.7)
    e0 = np.vdot(st.amplitudes, h @ st.amplitudes).real
    e1 = np.vdot(out.amplitudes, h @ out.amplitudes).real
    norm = abs(np.linalg.norm(plan.propagate(st.amplitudes, 2.7)) - 1)
    return [_result("evolution unitarity", norm, 1e-12), _result("energy conservation", abs(e1 - e0), 1e-10)]


def check_fluct(quick=False):
    table = standard_species_table()
    n0 = fluct.n0(fluct.FluctuationSpec(1.0, volume=1.0, species=table))
    out = [_result("n0 = (8/pi^2) Lambda^3 V", abs(n0 / (8 / math.pi**2) - 1), 1e-12)]
    b = fluct.distinguishability_radius(fluct.GRAPHITE_DENSITY, fluct.PLANCK_CUTOFF)
    out.append(_result("graphite radius within [2.3, 2.9] um", abs(b - 2.6e-6) / 0.3e-6, 1.0))
    var, _ = fluct.species_variance(1e4, 1.0, 0.0, rtol=1e-7)
    out.append(
        _result(
            "massless variance vs asymptote at b Lambda = 1e4",
            abs(var / fluct.asymptotic_species_variance(1e4, 1.0) - 1),
            0.02,
        )
    )
    if not quick:
        coeff = fluct.stddev_coefficient(24 * var / 1e4, 1.0, 4 * math.pi / 3)
        out.append(_result("24-species stddev coefficient", abs(coeff / fluct.DELTA0_COEFFICIENT - 1), 0.01))
    return out


def run_checks(quick=False):
    """Run every invariant; returns a list of :class:`CheckResult`."""
    results = []
    for fn in (
        check_dirac_algebra,
        check_spinors,
        check_delta,
        check_anticommutators,
        check_hamiltonians,
        check_additivity,
        check_antisymmetry,
        check_velocity_bound,
        check_continuity,
        check_unitarity,
    ):
        r = fn()
        results.extend(r if isinstance(r, list) else [r])
    results.extend(check_fluct(quick))
    return results
