"""Fixed fermion-number Fock sectors and operator assembly.

Single-particle modes are plane waves ``exp(i p.x) / sqrt(L^d)`` times the
unit spinors of :mod:`diracsea.modes`, one per (species, band, helicity,
momentum). That tuple order is the global Jordan-Wigner order: basis
state ``|s>`` with occupied modes ``o_1 < ... < o_n`` is
``a+_{o_1} ... a+_{o_n} |0_D>``.

The full Hilbert space is the fermion sector tensored with one truncated
boson oscillator, flattened fermion-major (``index = f * N_b + xi``).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import hybrid_io
from .modes import (
    InvalidParameterError,
    ModeLattice,
    SpeciesTable,
    dirac_algebra,
    dirac_spinors,
)

MAX_BASIS_STATES = 5_000_000
POSITIVE, NEGATIVE = 0, 1


@dataclass(frozen=True, eq=False)
class SingleParticleBasis:
    lattice: ModeLattice
    species: SpeciesTable
    species_index: np.ndarray = field(repr=False)
    band: np.ndarray = field(repr=False)
    helicity: np.ndarray = field(repr=False)
    momentum_index: np.ndarray = field(repr=False)
    spinors: np.ndarray = field(repr=False)
    energies: np.ndarray = field(repr=False)

    @property
    def size(self):
        return len(self.band)

    @cached_property
    def algebra(self):
        return dirac_algebra(self.lattice.dim)

    @property
    def spinor_dim(self):
        return self.spinors.shape[1]

    @property
    def internal_dim(self):
        """Number of (species, spinor) components of a field value."""
        return self.species.count * self.spinor_dim

    @property
    def negative_modes(self):
        return np.nonzero(self.band == NEGATIVE)[0]

    @property
    def positive_modes(self):
        return np.nonzero(self.band == POSITIVE)[0]

    def find(self, species=0, band=POSITIVE, helicity=0, n=0):
        """Index of the mode with the given labels (``n`` is the integer momentum)."""
        k = self.lattice.index_of(n)
        if k is None:
            raise InvalidParameterError(f"momentum {n} not on the lattice")
        hit = np.nonzero(
            (self.species_index == species)
            & (self.band == band)
            & (self.helicity == helicity)
            & (self.momentum_index == k)
        )[0]
        if not len(hit):
            raise InvalidParameterError("no such mode")
        return int(hit[0])

    def mode_values(self, x):
        """Mode functions at points ``x`` of shape ``(P, d)``.

        Returns ``(P, internal_dim, size)``: entry ``[q, c, i]`` is component
        ``c = species * spinor_dim + a`` of mode ``i`` at point ``q``.
        """
        x = np.asarray(x, dtype=float).reshape(-1, self.lattice.dim)
        phase = np.exp(1j * (x @ self.lattice.momenta.T)) / np.sqrt(self.lattice.volume)
        plane = phase[:, self.momentum_index]
        k = self.spinor_dim
        out = np.zeros((len(x), self.internal_dim, self.size), dtype=complex)
        cols = np.arange(self.size)
        for a in range(k):
            out[:, self.species_index * k + a, cols] = plane * self.spinors[:, a]
        return out


def build_single_particle_basis(lattice, species):
    algebra = dirac_algebra(lattice.dim)
    k = algebra.spinor_dim
    nh = k // 2
    rows = []
    for lam, sp_entry in enumerate(species):
        spinors = [dirac_spinors(sp_entry.mass, p, algebra) for p in lattice.momenta]
        for band in (POSITIVE, NEGATIVE):
            for s in range(nh):
                for kidx, ms in enumerate(spinors):
                    vec = ms.u[s] if band == POSITIVE else ms.v[s]
                    sign = 1.0 if band == POSITIVE else -1.0
                    rows.append((lam, band, s, kidx, vec, sign * ms.energy))
    arr = lambda j, dt: np.array([r[j] for r in rows], dtype=dt)
    return SingleParticleBasis(
        lattice,
        species,
        arr(0, int),
        arr(1, int),
        arr(2, int),
        arr(3, int),
        np.array([r[4] for r in rows], dtype=complex),
        arr(5, float),
    )


@dataclass(frozen=True, eq=False)
class FockSector:
    basis: SingleParticleBasis
    n: int
    states: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return len(self.states)

    @property
    def modes(self):
        return self.basis.size

    def index(self, states):
        states = np.asarray(states, dtype=np.int64)
        idx = np.searchsorted(self.states, states)
        idx = np.minimum(idx, self.dim - 1)
        if not np.all(self.states[idx] == states):
            raise InvalidParameterError("state not in sector")
        return idx

    def occupations(self, i):
        """Occupied mode indices (ascending) of basis state ``i``."""
        s = int(self.states[i])
        return [j for j in range(self.modes) if (s >> j) & 1]


def enumerate_sector(basis, n, boson_size=1):
    total = basis.size
    if not 0 <= n <= total:
        raise InvalidParameterError(f"fermion number {n} outside [0, {total}]")
    if total > 62:
        raise InvalidParameterError(f"{total} single-particle modes exceed the 62-bit occupation word")
    dim = math.comb(total, n)
    if dim * boson_size > MAX_BASIS_STATES:
        raise InvalidParameterError(
            f"sector dimension {dim} x {boson_size} exceeds the {MAX_BASIS_STATES} basis-state budget"
        )
    weights = np.int64(1) << np.arange(total, dtype=np.int64)
    if n == 0:
        states = np.zeros(1, dtype=np.int64)
    else:
        combos = np.fromiter(
            itertools.chain.from_iterable(itertools.combinations(range(total), n)),
            dtype=np.int64,
            count=dim * n,
        ).reshape(dim, n)
        states = np.sort(weights[combos].sum(axis=1))
    states.setflags(write=False)
    return FockSector(basis, n, states)


def _parity_below(states, i):
    """(-1)^(number of occupied modes with index < i)."""
    mask = np.int64((1 << i) - 1)
    return 1 - 2 * (np.bitwise_count(states & mask) & 1).astype(np.int64)


def creation_matrix(i, source, target):
    """Matrix of ``a+_i`` from sector ``n`` to sector ``n + 1``."""
    if target.n != source.n + 1 or target.basis is not source.basis:
        raise InvalidParameterError("target must be the n+1 sector over the same basis")
    bit = np.int64(1) << np.int64(i)
    s = source.states
    cols = np.nonzero((s & bit) == 0)[0]
    rows = target.index(s[cols] | bit)
    data = _parity_below(s[cols], i).astype(complex)
    return sp.csr_matrix((data, (rows, cols)), shape=(target.dim, source.dim))


def annihilation_matrix(i, source, target):
    """Matrix of ``a_i`` from sector ``n`` to sector ``n - 1``."""
    return creation_matrix(i, target, source).conj().T.tocsr()


def lift_one_body(sector, weights, tol=1e-12):
    """``sum_ij w_ij a+_i a_j`` restricted to ``sector`` (fermion part only)."""
    w = np.asarray(weights, dtype=complex)
    if w.shape != (sector.modes, sector.modes):
        raise InvalidParameterError(f"weights must be {sector.modes}x{sector.modes}")
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if np.abs(w - w.conj().T).max(initial=0.0) > tol * scale:
        raise InvalidParameterError("one-body weights are not Hermitian")
    s = sector.states
    rows, cols, data = [], [], []
    ii, jj = np.nonzero(w)
    for i, j in zip(ii.tolist(), jj.tolist()):
        bj = np.int64(1) << np.int64(j)
        bi = np.int64(1) << np.int64(i)
        if i == j:
            sel = np.nonzero(s & bj)[0]
            rows.append(sel)
            cols.append(sel)
            data.append(np.full(len(sel), w[i, j]))
            continue
        sel = np.nonzero(((s & bj) != 0) & ((s & bi) == 0))[0]
        src = s[sel]
        mid = src ^ bj
        sign = _parity_below(src, j) * _parity_below(mid, i)
        rows.append(sector.index(mid | bi))
        cols.append(sel)
        data.append(w[i, j] * sign)
    if not rows:
        return sp.csr_matrix((sector.dim, sector.dim), dtype=complex)
    rows, cols, data = map(np.concatenate, (rows, cols, data))
    return sp.csr_matrix((data, (rows, cols)), shape=(sector.dim, sector.dim))


@dataclass(frozen=True)
class BosonSpace:
    """One truncated oscillator with free Hamiltonian ``frequency * b+ b``."""

    size: int = 1
    frequency: float = 1.0

    def __post_init__(self):
        if self.size < 1:
            raise InvalidParameterError("boson truncation must be >= 1")

    @property
    def annihilation(self):
        return sp.diags(np.sqrt(np.arange(1, self.size)), 1, shape=(self.size, self.size), dtype=complex)

    @property
    def coupling(self):
        """``(b + b+) / sqrt(2)``."""
        b = self.annihilation
        return ((b + b.T) / np.sqrt(2)).tocsr()

    @property
    def number(self):
        return sp.diags(np.arange(self.size, dtype=float), 0, dtype=complex)

    def hamiltonian(self):
        return (self.frequency * self.number).tocsr()


def fermion_operator(op, boson):
    """``op (x) 1_boson`` on the full sector space."""
    return sp.kron(op, sp.identity(boson.size, dtype=complex), format="csr")


@dataclass(frozen=True)
class QuantumState:
    sector: FockSector
    boson: BosonSpace
    amplitudes: np.ndarray = field(repr=False)
    time: float = 0.0

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).ravel()
        if amps.size != self.sector.dim * self.boson.size:
            raise InvalidParameterError(
                f"amplitude vector has length {amps.size}, expected {self.sector.dim * self.boson.size}"
            )
        norm = np.linalg.norm(amps)
        if abs(norm - 1) > 1e-12:
            raise InvalidParameterError(f"state is not normalised (norm {norm:.15g})")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def normalized(cls, sector, boson, amplitudes, time=0.0):
        amps = np.asarray(amplitudes, dtype=complex).ravel()
        return cls(sector, boson, amps / np.linalg.norm(amps), time)

    @property
    def matrix(self):
        """Amplitudes reshaped to ``(sector.dim, boson.size)``."""
        return self.amplitudes.reshape(self.sector.dim, self.boson.size)

    def with_amplitudes(self, amplitudes, time):
        return QuantumState(self.sector, self.boson, amplitudes, time)


def dirac_sea_state(sector, boson=None):
    boson = boson or BosonSpace()
    neg = sector.basis.negative_modes
    if sector.n != len(neg):
        raise InvalidParameterError(
            f"sea state needs n = {len(neg)} (number of negative-band modes), sector has n = {sector.n}"
        )
    mask = int(np.sum(np.int64(1) << neg.astype(np.int64)))
    amps = np.zeros((sector.dim, boson.size), dtype=complex)
    amps[sector.index([mask])[0], 0] = 1.0
    return QuantumState(sector, boson, amps)


def occupation_state(sector, modes, boson=None, xi=0):
    """Single occupation basis state with the given occupied modes."""
    boson = boson or BosonSpace()
    modes = sorted(set(int(m) for m in modes))
    if len(modes) != sector.n:
        raise InvalidParameterError(f"need {sector.n} occupied modes, got {len(modes)}")
    mask = sum(1 << m for m in modes)
    amps = np.zeros((sector.dim, boson.size), dtype=complex)
    amps[sector.index([mask])[0], xi] = 1.0
    return QuantumState(sector, boson, amps)


# ---------------------------------------------------------------------------
# one-body weights


def plane_wave_overlaps(basis):
    """``(spinor_i . spinor_j)`` with species delta, the momentum-independent factor."""
    w = basis.spinors
    gram = w.conj() @ w.T
    same = basis.species_index[:, None] == basis.species_index[None, :]
    return np.where(same, gram, 0.0)


def number_weights(basis):
    return np.eye(basis.size, dtype=complex)


def charge_weights(basis):
    return np.diag(basis.species.charges[basis.species_index].astype(complex))


@dataclass(frozen=True)
class Interval:
    """``[lower, upper)`` in 1D, measured on the unwrapped line (periodic integrand)."""

    lower: float
    upper: float

    @property
    def volume(self):
        return self.upper - self.lower


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.upper, self.lower)))


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    @property
    def volume(self):
        return 4 * np.pi * self.radius**3 / 3


@dataclass(frozen=True)
class GridRegion:
    """Region given by a 0/1 (or weighted) field sampled on an ``N^d`` grid."""

    values: np.ndarray

    @property
    def resolution(self):
        return self.values.shape[0]


def _interval_integral(dk, lo, hi):
    out = np.empty(dk.shape, dtype=complex)
    zero = dk == 0
    out[zero] = hi - lo
    d = dk[~zero]
    out[~zero] = (np.exp(1j * d * hi) - np.exp(1j * d * lo)) / (1j * d)
    return out


def _region_plane_integrals(lattice, region):
    """``(1/L^d) int_B exp(i (p_j - p_i).x)`` for all lattice pairs."""
    p = lattice.momenta
    dp = p[None, :, :] - p[:, None, :]
    if isinstance(region, Interval):
        if lattice.dim != 1:
            raise InvalidParameterError("Interval regions are 1D")
        return _interval_integral(dp[..., 0], region.lower, region.upper) / lattice.volume
    if isinstance(region, Box):
        out = np.ones(dp.shape[:2], dtype=complex)
        for ax in range(lattice.dim):
            out *= _interval_integral(dp[..., ax], region.lower[ax], region.upper[ax])
        return out / lattice.volume
    if isinstance(region, Ball):
        if lattice.dim != 3:
            raise InvalidParameterError("Ball regions are 3D")
        if 2 * region.radius > lattice.length:
            raise InvalidParameterError("ball does not fit in the box")
        kappa = np.linalg.norm(dp, axis=-1)
        r = region.radius
        kr = kappa * r
        with np.errstate(invalid="ignore", divide="ignore"):
            radial = 4 * np.pi * (np.sin(kr) - kr * np.cos(kr)) / kappa**3
        small = kr < 1e-3
        # series of the radial form factor near zero
        radial[small] = 4 * np.pi * r**3 / 3 * (1 - kr[small] ** 2 / 10 + kr[small] ** 4 / 280)
        return radial * np.exp(1j * dp @ np.asarray(region.center, dtype=float)) / lattice.volume
    if isinstance(region, GridRegion):
        return grid_plane_integrals(lattice, region.values)
    raise InvalidParameterError(f"unsupported region {region!r}")


def grid_plane_integrals(lattice, values):
    """Grid-sum analogue ``(1/N^d) sum_g f(x_g) exp(i (p_j - p_i).x_g)``.

    With ``N`` grid points per axis equal to the number of lattice momenta per
    axis this is a unitary change of basis of the diagonal field ``f``.
    """
    values = np.asarray(values, dtype=float)
    n_grid = values.shape[0]
    fhat = np.fft.fftn(values) / values.size
    dn = lattice.integers[None, :, :] - lattice.integers[:, None, :]
    idx = tuple(np.mod(-dn[..., ax], n_grid) for ax in range(lattice.dim))
    return fhat[idx]


def region_weights(basis, region):
    """One-body weights ``int_B phi_i^+ phi_j`` of the fermion number in ``region``."""
    g = _region_plane_integrals(basis.lattice, region)
    k = basis.momentum_index
    return plane_wave_overlaps(basis) * g[np.ix_(k, k)]


def grid_points(lattice, resolution):
    """Uniform grid ``x_g = g L / N`` of shape ``(N^d, d)`` in C order."""
    ax = np.arange(resolution) * lattice.length / resolution
    mesh = np.meshgrid(*([ax] * lattice.dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def build_one_body_operator(sector, weights, boson=None):
    op = lift_one_body(sector, weights)
    return op if boson is None else fermion_operator(op, boson)


def number_operator(sector, boson=None):
    return build_one_body_operator(sector, number_weights(sector.basis), boson)


def charge_operator(sector, boson=None):
    return build_one_body_operator(sector, charge_weights(sector.basis), boson)


def region_number_operator(sector, region, boson=None):
    return build_one_body_operator(sector, region_weights(sector.basis, region), boson)


# ---------------------------------------------------------------------------
# Hamiltonians


def build_free_hamiltonian(sector, boson=None):
    """``sum_i E_i n_i`` with ``+E`` for positive and ``-E`` for negative bands."""
    s = sector.states
    diag = np.zeros(sector.dim)
    for i, e in enumerate(sector.basis.energies):
        diag += e * ((s >> i) & 1)
    op = sp.diags(diag.astype(complex), 0, format="csr")
    return op if boson is None else fermion_operator(op, boson)


def build_boson_hamiltonian(sector, boson):
    return sp.kron(sp.identity(sector.dim, dtype=complex), boson.hamiltonian(), format="csr")


KERNEL_KINDS = ("yukawa", "em", "flavor-flip", "custom")


@dataclass(frozen=True)
class InteractionKernel:
    """Fermion-boson vertex ``f(x) Gamma (b + b+)/sqrt(2)``.

    ``Gamma`` acts on (species x spinor) and is ``g beta`` per species
    (yukawa), ``g q_lambda 1`` (em) or ``g beta`` coupling the two species in
    ``flip`` (flavor-flip). ``f(x) = cos(2 pi n_b . x / L)`` is the boson mode
    profile with integer wave vector ``boson_mode``; 0 gives a uniform mode.
    """

    kind: str = "yukawa"
    coupling: float = 0.0
    boson_mode: tuple = (1,)
    flip: tuple = (0, 1)
    matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise InvalidParameterError(f"kernel kind must be one of {KERNEL_KINDS}")
        object.__setattr__(self, "boson_mode", tuple(np.atleast_1d(self.boson_mode).astype(int).tolist()))

    def vertex(self, species, algebra):
        """The (species x spinor) matrix ``Gamma``."""
        S, k = species.count, algebra.spinor_dim
        g = self.coupling
        if self.kind == "yukawa":
            gamma = np.kron(np.eye(S), algebra.beta) * g
        elif self.kind == "em":
            gamma = np.kron(np.diag(species.charges), np.eye(k)) * g
        elif self.kind == "flavor-flip":
            a, b = self.flip
            if not (0 <= a < S and 0 <= b < S and a != b):
                raise InvalidParameterError(f"flavor-flip needs two distinct species, got {self.flip}")
            mix = np.zeros((S, S))
            mix[a, b] = mix[b, a] = 1.0
            gamma = np.kron(mix, algebra.beta) * g
        else:
            gamma = np.asarray(self.matrix, dtype=complex)
            if gamma.shape != (S * k, S * k):
                raise InvalidParameterError(f"custom vertex must be {S * k}x{S * k}")
        gamma = np.asarray(gamma, dtype=complex)
        if np.abs(gamma - gamma.conj().T).max() > 1e-12 * max(1.0, np.abs(gamma).max()):
            raise InvalidParameterError("interaction kernel is not Hermitian")
        return gamma


def _profile_integrals(lattice, boson_mode, resolution):
    nb = np.zeros(lattice.dim, dtype=int)
    nb[: len(boson_mode)] = boson_mode[: lattice.dim]
    dn = lattice.integers[None, :, :] - lattice.integers[:, None, :]
    if resolution is None:
        hit = lambda shift: np.all(dn + shift == 0, axis=-1)
    else:
        hit = lambda shift: np.all(np.mod(dn + shift, resolution) == 0, axis=-1)
    if not np.any(nb):
        return hit(0).astype(complex)
    return 0.5 * (hit(nb).astype(complex) + hit(-nb).astype(complex))


def kernel_weights(basis, kernel, resolution=None):
    """Single-particle matrix ``<phi_i| f Gamma |phi_j>`` of the interaction.

    ``resolution=None`` integrates over the continuum box; an integer ``N``
    uses the ``N``-point grid sum instead (aliasing included).
    """
    gamma = kernel.vertex(basis.species, basis.algebra)
    k = basis.spinor_dim
    comp = basis.species_index[:, None] * k + np.arange(k)[None, :]
    w = basis.spinors
    big = np.zeros((basis.size, basis.internal_dim), dtype=complex)
    np.put_along_axis(big, comp, w, axis=1)
    spin = big.conj() @ gamma @ big.T
    prof = _profile_integrals(basis.lattice, kernel.boson_mode, resolution)
    kk = basis.momentum_index
    return spin * prof[np.ix_(kk, kk)]


def build_interaction(sector, boson, kernel, resolution=None):
    """``H_I = sum_ij <i|h|j> a+_i a_j (x) (b + b+)/sqrt(2)``."""
    w = kernel_weights(sector.basis, kernel, resolution)
    fermion = lift_one_body(sector, w)
    return sp.kron(fermion, boson.coupling, format="csr")


def build_hamiltonian(sector, boson, kernel=None, resolution=None):
    """``H_0^F (x) 1 + 1 (x) H_B + H_I``."""
    h = build_free_hamiltonian(sector, boson) + build_boson_hamiltonian(sector, boson)
    if kernel is not None and kernel.coupling != 0:
        h = h + build_interaction(sector, boson, kernel, resolution)
    return h.tocsr()


# ---------------------------------------------------------------------------
# expectation values


def expectation(op, state):
    psi = state.amplitudes if isinstance(state, QuantumState) else np.asarray(state)
    if op.shape[1] != psi.size:
        raise InvalidParameterError(f"operator is {op.shape}, state has length {psi.size}")
    val = complex(np.vdot(psi, op @ psi))
    if abs(val.imag) <= 1e-10 * max(1.0, abs(val.real)):
        return val.real
    return val


def variance(op, state):
    psi = state.amplitudes if isinstance(state, QuantumState) else np.asarray(state)
    if op.shape[1] != psi.size:
        raise InvalidParameterError(f"operator is {op.shape}, state has length {psi.size}")
    a_psi = op @ psi
    mean = np.vdot(psi, a_psi)
    return float(np.vdot(a_psi, a_psi).real - abs(mean) ** 2)


def commutator_norm(a, b):
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise InvalidParameterError(f"commutator of {a.shape} and {b.shape}")
    c = a @ b - b @ a
    if sp.issparse(c):
        return float(sp.linalg.norm(c))
    return float(np.linalg.norm(c))


def hermiticity_error(op):
    d = op - op.conj().T
    if sp.issparse(d):
        return float(abs(d).max()) if d.nnz else 0.0
    return float(np.abs(d).max(initial=0.0))


# ---------------------------------------------------------------------------
# field operators


def field_annihilation(source, target, x, component):
    """``psi_c(x) = sum_i phi_{i,c}(x) a_i`` from sector ``n`` to ``n - 1``."""
    phi = source.basis.mode_values(np.atleast_2d(x))[0, component]
    out = sp.csr_matrix((target.dim, source.dim), dtype=complex)
    for i in np.nonzero(phi)[0]:
        out = out + phi[i] * annihilation_matrix(int(i), source, target)
    return out


def field_creation(source, target, x, component):
    return field_annihilation(target, source, x, component).conj().T.tocsr()


# ---------------------------------------------------------------------------
# serialisation


def _basis_descriptor(sector, boson):
    lat = sector.basis.lattice
    return {
        "lattice": {"dim": lat.dim, "length": lat.length, "cutoff": lat.cutoff, "modes": lat.size},
        "species": [
            {"id": s.id, "mass": repr(s.mass), "charge": repr(s.charge)} for s in sector.basis.species
        ],
        "fermion_number": sector.n,
        "sector_dim": sector.dim,
        "boson_size": boson.size,
        "boson_frequency": boson.frequency,
        "index_order": ["species", "band", "helicity", "momentum"],
    }


def save_operator(path, op, sector, boson, name="operator"):
    coo = sp.coo_matrix(op)
    desc = _basis_descriptor(sector, boson)
    desc.update({"kind": "operator", "name": name, "shape": list(coo.shape), "nnz": int(coo.nnz)})
    hybrid_io.write(
        path,
        desc,
        {
            "states": np.asarray(sector.states),
            "row": coo.row.astype(np.int64),
            "col": coo.col.astype(np.int64),
            "data": coo.data.astype(complex),
        },
    )


def load_operator(path):
    desc, arrays = hybrid_io.read(path)
    if desc.get("kind") != "operator":
        raise InvalidParameterError(f"{path} does not hold an operator")
    op = sp.csr_matrix((arrays["data"], (arrays["row"], arrays["col"])), shape=tuple(desc["shape"]))
    return op, desc


def save_state(path, state):
    desc = _basis_descriptor(state.sector, state.boson)
    desc.update({"kind": "state", "time": state.time})
    hybrid_io.write(path, desc, {"states": np.asarray(state.sector.states), "amplitudes": state.amplitudes})


def load_state(path, sector, boson):
    desc, arrays = hybrid_io.read(path)
    if desc.get("kind") != "state":
        raise InvalidParameterError(f"{path} does not hold a state")
    if not np.array_equal(arrays["states"], sector.states) or desc["boson_size"] != boson.size:
        raise InvalidParameterError(f"{path}: basis does not match the given sector")
    return QuantumState(sector, boson, arrays["amplitudes"], desc["time"])
