"""Momentum lattice, Dirac algebra, plane-wave spinors and the cut-off delta.

Units are natural (hbar = c = 1): lengths in meters (or any fixed length
unit), momenta and masses in inverse length.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path

import numpy as np
import yaml

# hbar * c in eV * m
HBAR_C_EV_M = 1.973269804e-7


class InvalidParameterError(ValueError):
    """Raised when an input violates a documented precondition."""


def ev_to_inverse_length(energy_ev):
    """Convert an energy in eV into the natural-unit inverse length [1/m]."""
    return np.asarray(energy_ev, dtype=float) / HBAR_C_EV_M


def inverse_length_to_ev(k):
    return np.asarray(k, dtype=float) * HBAR_C_EV_M


@dataclass(frozen=True)
class Species:
    id: str
    mass: float
    charge: float = 0.0


@dataclass(frozen=True)
class SpeciesTable:
    entries: tuple

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise InvalidParameterError("species table is empty")
        ids = [s.id for s in entries]
        if len(set(ids)) != len(ids):
            raise InvalidParameterError(f"duplicate species ids in {ids}")
        for s in entries:
            if not np.isfinite(s.mass) or s.mass < 0:
                raise InvalidParameterError(f"species {s.id!r}: mass must be >= 0, got {s.mass}")

    @property
    def count(self):
        return len(self.entries)

    @property
    def masses(self):
        return np.array([s.mass for s in self.entries], dtype=float)

    @property
    def charges(self):
        return np.array([s.charge for s in self.entries], dtype=float)

    @property
    def ids(self):
        return [s.id for s in self.entries]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


# Masses in eV. Quarks carry three colour copies each.
_QUARKS = [
    ("u", 2.16e6, 2 / 3),
    ("d", 4.67e6, -1 / 3),
    ("s", 93.4e6, -1 / 3),
    ("c", 1.27e9, 2 / 3),
    ("b", 4.18e9, -1 / 3),
    ("t", 172.69e9, 2 / 3),
]
_CHARGED_LEPTONS = [("e", 0.51099895e6, -1.0), ("mu", 105.6583755e6, -1.0), ("tau", 1776.86e6, -1.0)]
_NEUTRINOS = ["nu_e", "nu_mu", "nu_tau"]


def standard_species_table(neutrino_mass_ev=0.0):
    """The 24 fermion species (6 quarks x 3 colours + 6 leptons), masses in 1/m.

    Neutrino masses are not fixed by anything computed here, so they are an
    input (default massless).
    """
    entries = []
    for name, mass_ev, charge in _QUARKS:
        for colour in ("r", "g", "b"):
            entries.append(Species(f"{name}_{colour}", float(ev_to_inverse_length(mass_ev)), charge))
    for name, mass_ev, charge in _CHARGED_LEPTONS:
        entries.append(Species(name, float(ev_to_inverse_length(mass_ev)), charge))
    for name in _NEUTRINOS:
        entries.append(Species(name, float(ev_to_inverse_length(neutrino_mass_ev)), 0.0))
    return SpeciesTable(tuple(entries))


def single_species(mass=1.0, charge=-1.0, id="f"):
    return SpeciesTable((Species(id, float(mass), float(charge)),))


def _decimal(value, what):
    try:
        return float(Decimal(str(value).strip()))
    except (InvalidOperation, ValueError) as exc:
        raise InvalidParameterError(f"{what}: not a decimal number: {value!r}") from exc


def species_table_from_records(records):
    """Build a table from ``[{id, mass, charge}, ...]`` with decimal-string values."""
    entries = []
    for i, rec in enumerate(records):
        unknown = set(rec) - {"id", "mass", "charge"}
        if unknown:
            raise InvalidParameterError(f"species[{i}]: unknown keys {sorted(unknown)}")
        if "id" not in rec or "mass" not in rec:
            raise InvalidParameterError(f"species[{i}]: 'id' and 'mass' are required")
        entries.append(
            Species(
                str(rec["id"]),
                _decimal(rec["mass"], f"species[{i}].mass"),
                _decimal(rec.get("charge", "0"), f"species[{i}].charge"),
            )
        )
    return SpeciesTable(tuple(entries))


def load_species_table(path):
    """Load a species table from a YAML file holding a list under ``species``."""
    data = yaml.safe_load(Path(path).read_text())
    if isinstance(data, dict):
        data = data.get("species")
    if not isinstance(data, list):
        raise InvalidParameterError(f"{path}: expected a list of species records")
    return species_table_from_records(data)


@dataclass(frozen=True)
class ModeLattice:
    """Momenta ``p = 2 pi n / L`` of a periodic box with ``|p| <= cutoff``.

    ``integers`` holds the integer vectors ``n`` in lexicographic order;
    ``momenta`` the corresponding ``p``.
    """

    dim: int
    length: float
    cutoff: float
    integers: np.ndarray = field(repr=False)
    momenta: np.ndarray = field(repr=False)

    @property
    def size(self):
        return len(self.momenta)

    @property
    def volume(self):
        return self.length**self.dim

    def index_of(self, n):
        """Position of the integer vector ``n`` in the lattice, or ``None``."""
        n = np.atleast_1d(np.asarray(n, dtype=int))
        hits = np.nonzero(np.all(self.integers == n, axis=1))[0]
        return int(hits[0]) if len(hits) else None

    def wrap(self, x):
        return np.mod(np.asarray(x, dtype=float), self.length)


def build_mode_lattice(dim, length, cutoff):
    if dim not in (1, 3):
        raise InvalidParameterError(f"dim must be 1 or 3, got {dim}")
    if not (length > 0 and np.isfinite(length)):
        raise InvalidParameterError(f"box length must be positive, got {length}")
    if not (cutoff > 0 and np.isfinite(cutoff)):
        raise InvalidParameterError(f"cutoff must be positive, got {cutoff}")
    nmax = cutoff * length / (2 * np.pi)
    kmax = int(np.floor(nmax * (1 + 1e-12)))
    rng = range(-kmax, kmax + 1)
    ints = np.array(list(itertools.product(rng, repeat=dim)), dtype=int).reshape(-1, dim)
    keep = np.sum(ints.astype(float) ** 2, axis=1) <= nmax**2 * (1 + 1e-12)
    ints = ints[keep]
    momenta = 2 * np.pi * ints / length
    ints.setflags(write=False)
    momenta.setflags(write=False)
    return ModeLattice(dim, float(length), float(cutoff), ints, momenta)


@dataclass(frozen=True)
class DiracAlgebra:
    alphas: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return len(self.alphas)

    @property
    def spinor_dim(self):
        return self.beta.shape[0]

    def hamiltonian(self, p, mass):
        """Single-particle Dirac matrix ``alpha . p + beta m``."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        return np.tensordot(p, self.alphas, axes=(0, 0)) + mass * self.beta


_SIGMA = np.array(
    [[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]], dtype=complex
)


def dirac_algebra(dim):
    """``alpha = sigma_1, beta = sigma_3`` in 1D; standard Dirac representation in 3D."""
    if dim == 1:
        return DiracAlgebra(_SIGMA[0][None].copy(), _SIGMA[2].copy())
    if dim == 3:
        zero = np.zeros((2, 2), dtype=complex)
        eye = np.eye(2, dtype=complex)
        alphas = np.array([np.block([[zero, s], [s, zero]]) for s in _SIGMA])
        beta = np.block([[eye, zero], [zero, -eye]])
        return DiracAlgebra(alphas, beta)
    raise InvalidParameterError(f"dim must be 1 or 3, got {dim}")


@dataclass(frozen=True)
class ModeSpinors:
    """Unit-normalised eigenvectors of ``alpha . p + beta m`` at one momentum.

    ``u[s]`` has eigenvalue ``+energy``; ``v[s]`` (the negative-band spinor,
    written ``v_s(-p)`` in the field expansion) has eigenvalue ``-energy``.
    """

    momentum: np.ndarray
    mass: float
    energy: float
    u: np.ndarray
    v: np.ndarray


def _fix_phase(vec):
    k = int(np.argmax(np.abs(vec) - 1e-12 * np.arange(len(vec))))
    return vec * (abs(vec[k]) / vec[k])


def _band_basis(projector, seeds):
    cols = projector @ seeds
    q, _ = np.linalg.qr(cols)
    return np.array([_fix_phase(c) for c in q.T])


def dirac_spinors(mass, p, algebra):
    if mass < 0:
        raise InvalidParameterError(f"mass must be >= 0, got {mass}")
    p = np.atleast_1d(np.asarray(p, dtype=float))
    h = algebra.hamiltonian(p, mass)
    k = algebra.spinor_dim
    energy = float(np.sqrt(p @ p + mass**2))
    eye = np.eye(k, dtype=complex)
    upper, lower = eye[:, : k // 2], eye[:, k // 2 :]
    if energy == 0.0:
        # massless zero mode: bands degenerate, fall back on the beta eigenbasis
        u, v = upper.T.copy(), lower.T.copy()
    else:
        u = _band_basis((eye + h / energy) / 2, upper)
        v = _band_basis((eye - h / energy) / 2, lower)
    return ModeSpinors(p, float(mass), energy, u, v)


def delta_cutoff(x, lattice):
    """Band-limited delta ``(1/L^d) sum_p exp(i p.x)`` at displacement(s) ``x``.

    ``x`` has shape ``(..., d)`` (a bare scalar or 1-D array is accepted for
    ``d = 1``).
    """
    x = np.asarray(x, dtype=float)
    if lattice.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    x = lattice.wrap(x)
    phases = x @ lattice.momenta.T
    return np.cos(phases).sum(axis=-1) / lattice.volume
