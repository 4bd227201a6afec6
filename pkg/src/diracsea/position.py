"""Position representation: amplitudes, beable density, velocity, g-term and
the correction velocity.

Amplitudes are ``psi_{c_1..c_n, xi}(x_1..x_n) = <x_1 c_1; ..; x_n c_n| (x) <xi| psi>``
with ``|x_1 c_1; ..> = (n!)^{-1/2} psi+_{c_1}(x_1) .. psi+_{c_n}(x_n) |0_D>``,
so an occupation basis state contributes ``(n!)^{-1/2} det[phi_{o_j, c_k}(x_k)]``.
Here ``c = species * spinor_dim + a`` and ``|0_D>`` is the empty Fock state.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .fock import QuantumState, grid_points
from .modes import InvalidParameterError


class NearNodeError(ArithmeticError):
    """Density at or below the node floor; the velocity is undefined there."""

    def __init__(self, configs, rho, floor):
        self.configs = np.asarray(configs)
        self.rho = np.asarray(rho)
        self.floor = floor
        super().__init__(f"density {np.min(rho):.3e} <= floor {floor:.3e} near a node")


class CorrectionInconsistentError(ArithmeticError):
    """The g-term does not integrate to zero, so no torus Poisson solution exists."""


@dataclass(frozen=True)
class Configuration:
    positions: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "positions", np.atleast_2d(np.asarray(self.positions, dtype=float)))

    @property
    def n(self):
        return self.positions.shape[0]

    def wrapped(self, length):
        return Configuration(np.mod(self.positions, length), self.time)


def node_floor(sector):
    """``1e-12`` times the box-averaged density ``1 / L^(n d)``."""
    lat = sector.basis.lattice
    return 1e-12 / lat.volume**sector.n


def _as_configs(sector, configs):
    d = sector.basis.lattice.dim
    x = np.asarray(configs.positions if isinstance(configs, Configuration) else configs, dtype=float)
    if x.size % (sector.n * d):
        raise InvalidParameterError(f"configuration does not hold {sector.n} particles in {d}D")
    return x.reshape(-1, sector.n, d)


def _occupied(sector, rows):
    """``(len(rows), n)`` occupied mode indices of the given basis states."""
    s = sector.states[rows]
    bits = (s[:, None] >> np.arange(sector.modes, dtype=np.int64)[None, :]) & 1
    return np.nonzero(bits)[1].reshape(len(rows), sector.n)


def vector_amplitudes(sector, boson_size, vector, configs, chunk=4096):
    """Amplitude tensors of an arbitrary sector vector at many configurations.

    Returns ``(P, C, ..., C, N_b)`` with ``n`` axes of size ``C = internal_dim``.
    """
    x = _as_configs(sector, configs)
    P, n, d = x.shape
    basis = sector.basis
    C = basis.internal_dim
    coeff = np.asarray(vector, dtype=complex).reshape(sector.dim, boson_size)
    rows = np.nonzero(np.any(coeff != 0, axis=1))[0]
    vals = basis.mode_values(x.reshape(-1, d)).reshape(P, n, C, basis.size)
    if n == 1:
        occ = _occupied(sector, rows)[:, 0]
        out = vals[:, 0][:, :, occ] @ coeff[rows]
        return out
    assign = np.array(list(itertools.product(range(C), repeat=n)))
    out = np.zeros((P, len(assign), boson_size), dtype=complex)
    k_idx = np.arange(n)
    step = max(1, chunk // max(1, P * len(assign)))
    for start in range(0, len(rows), step):
        sel = rows[start : start + step]
        occ = _occupied(sector, sel)
        # mats[p, a, b, k, j] = phi_{occ[b, j], assign[a, k]}(x_{p, k})
        mats = vals[:, k_idx[None, None, :, None], assign[None, :, :, None], occ[:, None, None, :]]
        mats = mats.reshape(P, len(sel), len(assign), n, n).transpose(0, 2, 1, 3, 4)
        dets = np.linalg.det(mats)
        out += np.einsum("pab,bx->pax", dets, coeff[sel])
    out /= math.sqrt(math.factorial(n))
    return out.reshape((P,) + (C,) * n + (boson_size,))


def amplitudes(state, configs):
    return vector_amplitudes(state.sector, state.boson.size, state.amplitudes, configs)


def amplitude(state, config):
    """Amplitude tensor ``(C,)*n + (N_b,)`` at a single configuration."""
    x = _as_configs(state.sector, config)
    if len(x) != 1:
        raise InvalidParameterError("amplitude() takes a single configuration")
    return amplitudes(state, x)[0]


def _sum_tail(a, start=1):
    return a.reshape(a.shape[0], -1).sum(axis=1) if a.ndim > start else a


def density(state, configs):
    """``rho = sum |psi|^2`` at each configuration (shape ``(P,)``)."""
    amp = amplitudes(state, configs)
    return _sum_tail(np.abs(amp) ** 2)


def _alpha_internal(basis):
    eye = np.eye(basis.species.count)
    return np.array([np.kron(eye, a) for a in basis.algebra.alphas])


def currents(state, configs, amp=None):
    """Density and ``j_k = sum psi^+ alpha^(k) psi`` for each particle.

    Returns ``(rho, j)`` with ``rho`` of shape ``(P,)`` and ``j`` of shape
    ``(P, n, d)``.
    """
    sector = state.sector
    x = _as_configs(sector, configs)
    if amp is None:
        amp = amplitudes(state, x)
    P, n, d = x.shape
    rho = _sum_tail(np.abs(amp) ** 2)
    alphas = _alpha_internal(sector.basis)
    j = np.empty((P, n, d))
    for k in range(n):
        moved = np.moveaxis(amp, 1 + k, -1)
        for i in range(d):
            a_amp = moved @ alphas[i].T
            j[:, k, i] = _sum_tail(np.real(moved.conj() * a_amp))
    return rho, j


def velocity(state, configs, floor=None):
    """``v_k = sum psi^+ alpha^(k) psi / rho`` at each configuration.

    Returns ``(v, rho)``; ``v`` has shape ``(P, n, d)``. Raises
    :class:`NearNodeError` where ``rho`` is at or below the node floor.
    """
    x = _as_configs(state.sector, configs)
    rho, j = currents(state, x)
    floor = node_floor(state.sector) if floor is None else floor
    bad = rho <= floor
    if np.any(bad):
        raise NearNodeError(x[bad], rho[bad], floor)
    return j / rho[:, None, None], rho


def density_rate(state, hamiltonian, configs):
    """``d rho / dt = 2 Im sum conj(psi) (H psi)`` at each configuration."""
    amp = amplitudes(state, configs)
    h_amp = vector_amplitudes(state.sector, state.boson.size, hamiltonian @ state.amplitudes, configs)
    return _sum_tail(2 * np.imag(amp.conj() * h_amp))


def g_term(state, interaction, configs):
    """``g = <psi| i [P(dx), H_I] |psi> / dx = -2 Im sum conj(psi) (H_I psi)``.

    ``interaction`` is the assembled interaction matrix on the full sector
    space (``None`` or an all-zero matrix gives ``g = 0``).
    """
    x = _as_configs(state.sector, configs)
    if interaction is None or interaction.nnz == 0:
        return np.zeros(len(x))
    return -density_rate(state, interaction, x)


def _wave_numbers(lattice, resolution):
    freq = np.fft.fftfreq(resolution, d=1.0 / resolution) * 2 * np.pi / lattice.length
    return np.meshgrid(*([freq] * lattice.dim), indexing="ij")


@dataclass(frozen=True)
class CorrectionField:
    """Correction velocity ``v~ = grad(lap^-1 g) / rho`` on a uniform grid.

    ``flux`` is ``grad(lap^-1 g)`` (shape ``(d,) + (N,)*d``); its Fourier
    coefficients ``flux_hat`` give exact spectral interpolation because the
    flux is band-limited.
    """

    state: QuantumState = field(repr=False)
    resolution: int
    points: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)
    flux: np.ndarray = field(repr=False)
    flux_hat: np.ndarray = field(repr=False)
    residual: float = 0.0
    g_mean: float = 0.0

    @property
    def velocity(self):
        return self.flux / self.rho[None]

    def interpolate_flux(self, x):
        """Flux at arbitrary points ``x`` of shape ``(P, d)``."""
        lat = self.state.sector.basis.lattice
        x = np.asarray(x, dtype=float).reshape(-1, lat.dim)
        N = self.resolution
        ints = np.fft.fftfreq(N, d=1.0 / N)
        mesh = np.stack(np.meshgrid(*([ints] * lat.dim), indexing="ij"), axis=-1).reshape(-1, lat.dim)
        phase = np.exp(1j * (2 * np.pi / lat.length) * (x @ mesh.T))
        coef = self.flux_hat.reshape(lat.dim, -1) / N**lat.dim
        return np.real(phase @ coef.T)

    def velocity_at(self, x, rho=None):
        if rho is None:
            rho = density(self.state, x)
        return self.interpolate_flux(x) / rho[:, None]


def _check_resolution(state, resolution, interaction_modes=0):
    lat = state.sector.basis.lattice
    kmax = int(np.abs(lat.integers).max(initial=0))
    need = max(8 * kmax, 2 * (2 * kmax + interaction_modes) + 1, 4)
    if resolution is None:
        return need
    if resolution < need:
        raise InvalidParameterError(f"grid resolution {resolution} below the required {need}")
    return int(resolution)


def poisson_flux(lattice, g, tol=1e-9):
    """Spectral solve of ``lap u = g`` on the torus; returns ``grad u``.

    ``g`` is sampled on the uniform ``N^d`` grid. The zero mode is projected
    out after checking that ``int g`` vanishes to ``tol`` (relative to
    ``int |g|``). Returns ``(flux, flux_hat, residual, g_mean)`` where
    ``residual`` is the largest deviation of ``div(grad u)`` from ``g``.
    """
    g = np.asarray(g, dtype=float)
    N = g.shape[0]
    cell = (lattice.length / N) ** lattice.dim
    g_mean = float(g.sum() * cell)
    scale = max(1.0, float(np.abs(g).sum() * cell))
    if abs(g_mean) > tol * scale:
        raise CorrectionInconsistentError(f"integral of g is {g_mean:.3e}, not zero")
    ks = _wave_numbers(lattice, N)
    k2 = sum(k**2 for k in ks)
    g_hat = np.fft.fftn(g)
    u_hat = np.zeros_like(g_hat)
    nz = k2 > 0
    u_hat[nz] = -g_hat[nz] / k2[nz]
    flux_hat = np.array([1j * k * u_hat for k in ks])
    flux = np.real(np.fft.ifftn(flux_hat, axes=tuple(range(1, lattice.dim + 1))))
    div = np.real(np.fft.ifftn(sum(1j * k * fh for k, fh in zip(ks, flux_hat))))
    residual = float(np.abs(div - g).max(initial=0.0))
    return flux, flux_hat, residual, g_mean


def correction_velocity(state, interaction, resolution=None, boson_mode=0, tol=1e-9):
    """Solve ``lap u = g`` on the torus and return ``v~ = grad u / rho``.

    Single-fermion sectors only. ``boson_mode`` is the largest integer wave
    number of the interaction profile (used to size the grid).
    """
    sector = state.sector
    if sector.n != 1:
        raise InvalidParameterError("the correction velocity is defined for n = 1 only")
    lat = sector.basis.lattice
    N = _check_resolution(state, resolution, int(np.max(np.abs(boson_mode))))
    pts = grid_points(lat, N)
    shape = (N,) * lat.dim
    amp = amplitudes(state, pts)
    rho = _sum_tail(np.abs(amp) ** 2).reshape(shape)
    if interaction is None or interaction.nnz == 0:
        g = np.zeros(shape)
    else:
        h_amp = vector_amplitudes(sector, state.boson.size, interaction @ state.amplitudes, pts)
        g = (-2 * _sum_tail(np.imag(amp.conj() * h_amp))).reshape(shape)
    flux, flux_hat, residual, g_mean = poisson_flux(lat, g, tol)
    return CorrectionField(state, N, pts, rho, g, flux, flux_hat, residual, g_mean)


def grid_fields(state, interaction=None, resolution=None, boson_mode=0):
    """Columns ``x, rho, v, g, v~`` on a uniform grid (``n = 1``), as a dict of arrays."""
    corr = correction_velocity(state, interaction, resolution, boson_mode)
    lat = state.sector.basis.lattice
    rho, j = currents(state, corr.points)
    v = j[:, 0, :] / rho[:, None]
    out = {}
    for ax, name in enumerate("xyz"[: lat.dim]):
        out[name] = corr.points[:, ax]
    out["rho"] = rho
    for ax, name in enumerate("xyz"[: lat.dim]):
        out[f"v_{name}" if lat.dim > 1 else "v"] = v[:, ax]
    out["g"] = corr.g.ravel()
    vt = corr.velocity.reshape(lat.dim, -1)
    for ax, name in enumerate("xyz"[: lat.dim]):
        out[f"vt_{name}" if lat.dim > 1 else "vt"] = vt[ax]
    return out
