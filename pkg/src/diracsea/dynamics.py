"""State evolution, beable trajectories, the minimal jump process and
ensemble experiments.

Deterministic trajectories follow ``dx/dt = v`` (plus the correction
velocity when enabled) with a vectorised RK4 that halves the step for
trajectories whose density drops more than tenfold within a step. The jump
process lives on a spatial grid: its beable is a grid site and it jumps from
``y`` to ``x`` with rate ``max(0, J_xy) / P_y`` where
``J_xy = 2 Im <psi|P(x) H P(y)|psi>``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .fock import (
    Box,
    Interval,
    QuantumState,
    annihilation_matrix,
    enumerate_sector,
    expectation,
    region_weights,
    region_number_operator,
)
from .modes import InvalidParameterError
from .position import correction_velocity, currents, density, node_floor

DENSE_LIMIT = 4000
MAX_HALVINGS = 10
RATE_STEP_LIMIT = 0.1
MIN_ACCEPTANCE = 1e-4


class StepSizeError(ArithmeticError):
    """The jump step is too long for the current total rate."""


class SamplingError(ArithmeticError):
    """The rejection sampler's acceptance rate fell below the floor."""


class ScenarioError(ValueError):
    """A measurement scenario violates its preconditions."""


# ---------------------------------------------------------------------------
# state evolution


@dataclass(frozen=True, eq=False)
class EvolutionPlan:
    """Propagator for a fixed Hermitian Hamiltonian.

    Dimensions up to ``DENSE_LIMIT`` use a cached dense eigendecomposition;
    larger ones use the sparse action of the matrix exponential.
    """

    hamiltonian: object = field(repr=False)
    energies: np.ndarray | None = field(default=None, repr=False)
    vectors: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def build(cls, hamiltonian, dense_limit=DENSE_LIMIT):
        h = sp.csr_matrix(hamiltonian)
        if h.shape[0] != h.shape[1]:
            raise InvalidParameterError(f"Hamiltonian must be square, got {h.shape}")
        if h.shape[0] <= dense_limit:
            e, v = la.eigh(h.toarray())
            return cls(h, e, v)
        return cls(h)

    @property
    def dim(self):
        return self.hamiltonian.shape[0]

    @property
    def dense(self):
        return self.energies is not None

    def propagate(self, vector, t):
        """``exp(-i H t) vector``."""
        vector = np.asarray(vector, dtype=complex)
        if vector.shape[0] != self.dim:
            raise InvalidParameterError(f"state has length {vector.shape[0]}, Hamiltonian is {self.dim}")
        if t == 0:
            return vector.copy()
        if self.dense:
            c = self.vectors.conj().T @ vector
            phase = np.exp(-1j * self.energies * t)
            return self.vectors @ (phase[:, None] * c if c.ndim == 2 else phase * c)
        return expm_multiply(-1j * t * self.hamiltonian, vector)


def evolve_state(plan, state, t):
    """``psi(t0 + t) = exp(-i H t) psi(t0)``."""
    amps = plan.propagate(state.amplitudes, t)
    return QuantumState.normalized(state.sector, state.boson, amps, state.time + t)


class StateSchedule:
    """``psi(t)`` on demand from an initial state, with a small time cache."""

    def __init__(self, plan, state, cache_size=64):
        self.plan = plan
        self.initial = state
        self._cache = {}
        self._cache_size = cache_size

    def at(self, t):
        t = float(t)
        hit = self._cache.get(t)
        if hit is None:
            hit = evolve_state(self.plan, self.initial, t - self.initial.time)
            if len(self._cache) >= self._cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[t] = hit
        return hit


# ---------------------------------------------------------------------------
# guidance fields


class GuidanceField:
    """Velocity field of a Fock-sector state, optionally with the correction term.

    ``evaluate(t, X)`` takes configurations ``X`` of shape ``(P, n, d)`` and
    returns ``(v, rho)``; ``v`` is zero where ``rho`` is at or below the node
    floor (the integrator handles those).
    """

    def __init__(self, schedule, correction=False, interaction=None, resolution=None, boson_mode=0):
        sector = schedule.initial.sector
        if correction and sector.n != 1:
            raise InvalidParameterError("the correction velocity is available for n = 1 only")
        self.schedule = schedule
        self.correction = correction
        self.interaction = interaction
        self.resolution = resolution
        self.boson_mode = boson_mode
        self.n = sector.n
        self.dim = sector.basis.lattice.dim
        self.length = sector.basis.lattice.length
        self.floor = node_floor(sector)
        self._corr = {}

    def density(self, t, X):
        return density(self.schedule.at(t), X)

    def _correction(self, t):
        c = self._corr.get(t)
        if c is None:
            c = correction_velocity(
                self.schedule.at(t), self.interaction, self.resolution, self.boson_mode
            )
            if len(self._corr) > 64:
                self._corr.pop(next(iter(self._corr)))
            self._corr[t] = c
        return c

    def evaluate(self, t, X):
        state = self.schedule.at(t)
        rho, j = currents(state, X)
        ok = rho > self.floor
        v = np.zeros_like(j)
        v[ok] = j[ok] / rho[ok, None, None]
        if self.correction:
            flux = self._correction(float(t)).interpolate_flux(X.reshape(-1, self.dim))
            v[ok, 0, :] += flux[ok] / rho[ok, None]
        return v, rho


@dataclass(frozen=True)
class RingParticle:
    """Nonrelativistic free particle on a ring, ``psi = sum_k c_k exp(i k x - i k^2 t / 2m)``.

    ``modes`` are integer wave numbers (in units of ``2 pi / L``); the
    wavefunction is normalised to 1 over the ring.
    """

    length: float
    mass: float
    modes: tuple
    coefficients: tuple

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex)
        object.__setattr__(self, "coefficients", tuple(c / np.linalg.norm(c)))
        object.__setattr__(self, "modes", tuple(int(k) for k in self.modes))

    n = 1
    dim = 1

    @property
    def floor(self):
        return 1e-12 / self.length

    def _parts(self, t, x):
        k = 2 * np.pi * np.asarray(self.modes) / self.length
        c = np.asarray(self.coefficients) * np.exp(-1j * k**2 * t / (2 * self.mass))
        ph = np.exp(1j * np.asarray(x, dtype=float).reshape(-1)[:, None] * k[None, :])
        psi = ph @ c / math.sqrt(self.length)
        dpsi = ph @ (1j * k * c) / math.sqrt(self.length)
        return psi, dpsi

    def density(self, t, X):
        psi, _ = self._parts(t, X)
        return np.abs(psi) ** 2

    def evaluate(self, t, X):
        psi, dpsi = self._parts(t, X)
        rho = np.abs(psi) ** 2
        v = np.zeros(rho.shape)
        ok = rho > self.floor
        v[ok] = np.imag(dpsi[ok] / psi[ok]) / self.mass
        return v.reshape(-1, 1, 1), rho

    def lattice_model(self, sites):
        """Nearest-neighbour hopping discretisation on ``sites`` points."""
        a = self.length / sites
        hop = 1 / (2 * self.mass * a * a)
        off = np.full(sites, -hop)
        h = sp.diags([off[:-1], off[:-1]], [1, -1], shape=(sites, sites), format="lil")
        h[0, sites - 1] = h[sites - 1, 0] = -hop
        h = (h + sp.identity(sites) * 2 * hop).tocsr().astype(complex)
        x = np.arange(sites) * a
        psi, _ = self._parts(0.0, x)
        return GridModel(x[:, None], h, psi / np.linalg.norm(psi), 1, self.length)


# ---------------------------------------------------------------------------
# deterministic integration


@dataclass
class TrajectorySet:
    """Recorded ensemble: ``positions[s, i, k, :]`` is particle ``k`` of
    trajectory ``i`` at ``times[s]`` (wrapped); ``displacement`` tracks the
    unwrapped motion since the start. Sites are recorded for jump runs.
    """

    times: np.ndarray
    positions: np.ndarray
    displacement: np.ndarray
    aborted: np.ndarray
    seed: int | None = None
    mode: str = "deterministic"
    sites: np.ndarray | None = None
    jumps: dict = field(default_factory=dict)

    @property
    def count(self):
        return self.positions.shape[1]

    def merged(self, other):
        offset = self.count
        jumps = {}
        for key in set(self.jumps) | set(other.jumps):
            a = self.jumps.get(key, np.zeros(0))
            b = other.jumps.get(key, np.zeros(0))
            if key == "trajectory":
                b = b + offset
            jumps[key] = np.concatenate([a, b])
        return TrajectorySet(
            self.times,
            np.concatenate([self.positions, other.positions], axis=1),
            np.concatenate([self.displacement, other.displacement], axis=1),
            np.concatenate([self.aborted, other.aborted]),
            self.seed,
            self.mode,
            None if self.sites is None else np.concatenate([self.sites, other.sites], axis=1),
            jumps,
        )


def _rk4(field, t, X, h):
    v1, r0 = field.evaluate(t, X)
    v2, ra = field.evaluate(t + h / 2, X + h / 2 * v1)
    v3, rb = field.evaluate(t + h / 2, X + h / 2 * v2)
    v4, rc = field.evaluate(t + h, X + h * v3)
    Xn = X + h / 6 * (v1 + 2 * v2 + 2 * v3 + v4)
    _, r1 = field.evaluate(t + h, Xn)
    low = np.minimum.reduce([ra, rb, rc, r1])
    ok = (low > field.floor) & (r0 > field.floor) & (r1 * 10 >= r0)
    return Xn, ok


def _advance(field, t, X, h, depth=0):
    """One step of size ``h`` with recursive halving; returns ``(X, aborted)``."""
    Xn, ok = _rk4(field, t, X, h)
    aborted = np.zeros(len(X), dtype=bool)
    bad = np.nonzero(~ok)[0]
    if len(bad):
        if depth >= MAX_HALVINGS:
            aborted[bad] = True
            Xn[bad] = X[bad]
        else:
            Xa, ab1 = _advance(field, t, X[bad], h / 2, depth + 1)
            Xb, ab2 = _advance(field, t + h / 2, Xa, h / 2, depth + 1)
            Xn[bad] = Xb
            aborted[bad] = ab1 | ab2
    return Xn, aborted


def integrate_ensemble(field, X0, t0, t1, step, record_every=1):
    """RK4 integration of all configurations in ``X0`` (shape ``(N, n, d)``).

    ``step`` is the nominal step; the interval is split into an integer
    number of equal steps (negative direction allowed). Aborted trajectories
    are frozen and flagged.
    """
    X = np.asarray(X0, dtype=float).copy()
    if X.ndim != 3:
        raise InvalidParameterError("configurations must have shape (N, n, d)")
    span = t1 - t0
    steps = max(1, int(math.ceil(abs(span) / abs(step) - 1e-9))) if span else 0
    h = span / steps if steps else 0.0
    aborted = np.zeros(len(X), dtype=bool)
    times, frames = [t0], [X.copy()]
    for s in range(steps):
        t = t0 + s * h
        live = np.nonzero(~aborted)[0]
        if len(live):
            Xn, ab = _advance(field, t, X[live], h)
            X[live] = Xn
            aborted[live[ab]] = True
        if (s + 1) % record_every == 0 or s == steps - 1:
            times.append(t0 + (s + 1) * h)
            frames.append(X.copy())
    frames = np.array(frames)
    return TrajectorySet(
        np.array(times),
        np.mod(frames, field.length),
        frames - frames[0][None],
        aborted,
    )


def integrate_trajectory(field, x0, t0, t1, step, record_every=1):
    """Single-trajectory convenience wrapper; returns ``(times, positions, aborted)``."""
    X0 = np.asarray(x0, dtype=float).reshape(1, field.n, field.dim)
    ts = integrate_ensemble(field, X0, t0, t1, step, record_every)
    unwrapped = X0[None] + ts.displacement
    return ts.times, unwrapped[:, 0], bool(ts.aborted[0])


# ---------------------------------------------------------------------------
# sampling


def _coarse_envelope(density_fn, n, d, length, resolution, rng, probes=200_000):
    dims = n * d
    if resolution**dims <= probes:
        ax = (np.arange(resolution) + 0.5) * length / resolution
        mesh = np.meshgrid(*([ax] * dims), indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
    else:
        pts = rng.uniform(0, length, size=(probes, dims))
    return float(np.max(density_fn(pts.reshape(-1, n, d))))


def sample_configurations(density_fn, count, n, d, length, rng, resolution=64, safety=1.2, batch=65536):
    """Rejection-sample ``count`` configurations from ``density_fn`` on the box.

    The envelope is ``safety`` times the maximum over a coarse grid. Returns
    ``(X, stats)`` where ``stats`` reports acceptance and envelope violations.
    """
    env = safety * _coarse_envelope(density_fn, n, d, length, resolution, rng)
    if not env > 0:
        raise SamplingError("density vanishes on the coarse grid")
    out, proposed, violations = [], 0, 0
    got = 0
    while got < count:
        X = rng.uniform(0, length, size=(batch, n, d))
        rho = density_fn(X)
        violations += int(np.sum(rho > env))
        keep = rng.uniform(0, env, size=batch) < rho
        out.append(X[keep])
        got += int(keep.sum())
        proposed += batch
        if proposed >= 1_000_000 and got / proposed < MIN_ACCEPTANCE:
            raise SamplingError(
                f"acceptance {got / proposed:.2e} below {MIN_ACCEPTANCE:.0e} (envelope {env:.3e})"
            )
    X = np.concatenate(out)[:count]
    return X, {"acceptance": count / proposed, "envelope": env, "violations": violations}


def uniform_configurations(count, n, d, length, rng):
    return rng.uniform(0, length, size=(count, n, d))


# ---------------------------------------------------------------------------
# jump process


@dataclass(frozen=True, eq=False)
class GridModel:
    """Quantum state on a position grid: ``positions`` of shape ``(G, d)``,
    Hamiltonian on ``G * internal`` components (site-major), initial vector.
    """

    positions: np.ndarray = field(repr=False)
    hamiltonian: object = field(repr=False)
    psi0: np.ndarray = field(repr=False)
    internal: int = 1
    length: float = 1.0
    plan: EvolutionPlan | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.plan is None:
            object.__setattr__(self, "plan", EvolutionPlan.build(self.hamiltonian))

    @property
    def sites(self):
        return len(self.positions)

    def psi(self, t):
        return self.plan.propagate(self.psi0, t)

    def probabilities(self, t):
        return (np.abs(self.psi(t)) ** 2).reshape(self.sites, self.internal).sum(axis=1)

    def rates(self, t):
        return rate_matrix(self.psi(t), self.hamiltonian, self.internal)

    @classmethod
    def from_fock(cls, state, hamiltonian):
        """Grid representation of a one-fermion state at full lattice resolution.

        Requires the lattice integers to be a complete residue system modulo
        ``N`` with ``N^d`` equal to the number of momenta, so the grid states
        ``sqrt(L^d / N^d) psi+_c(x_g)|0_D>`` form an orthonormal basis.
        """
        sector = state.sector
        if sector.n != 1:
            raise InvalidParameterError("grid representation needs n = 1")
        basis = sector.basis
        lat = basis.lattice
        N = round(lat.size ** (1 / lat.dim))
        res = np.mod(lat.integers, N)
        if N**lat.dim != lat.size or len(np.unique(res, axis=0)) != lat.size:
            raise InvalidParameterError("lattice is not a full-resolution grid")
        from .fock import grid_points

        pts = grid_points(lat, N)
        vals = basis.mode_values(pts) * math.sqrt(lat.volume / len(pts))  # (G, C, modes)
        mode_of_state = np.log2(sector.states).round().astype(int)
        # U[(g, c), s] maps sector basis state s to grid component (g, c)
        U = vals[:, :, mode_of_state].reshape(-1, sector.dim)
        nb = state.boson.size
        Ufull = np.kron(U, np.eye(nb))
        if np.abs(Ufull.conj().T @ Ufull - np.eye(Ufull.shape[1])).max() > 1e-10:
            raise InvalidParameterError("grid transform is not unitary")
        H = sp.csr_matrix(hamiltonian).toarray()
        Hg = Ufull @ H @ Ufull.conj().T
        Hg = sp.csr_matrix(np.where(np.abs(Hg) > 1e-13 * max(1.0, np.abs(Hg).max()), Hg, 0))
        psi = Ufull @ state.amplitudes
        return cls(pts, Hg, psi, basis.internal_dim * nb, lat.length)


def rate_matrix(psi, hamiltonian, internal=1):
    """Minimal jump rates between sites.

    Returns ``(rates, flux, prob)``: ``rates[x, y]`` is the rate of ``y -> x``
    (CSC), ``flux[x, y] = J_xy`` (antisymmetric) and ``prob`` the site
    probabilities.
    """
    psi = np.asarray(psi, dtype=complex)
    h = sp.csr_matrix(hamiltonian)
    G = len(psi) // internal
    full = sp.csr_matrix(h.multiply(psi[None, :]).multiply(psi.conj()[:, None]))
    full.data = 2 * np.imag(full.data)
    if internal > 1:
        agg = sp.kron(sp.identity(G), np.ones((1, internal)), format="csr")
        flux = (agg @ full @ agg.T).tocsr()
    else:
        flux = full
    flux.setdiag(0)
    flux.eliminate_zeros()
    prob = (np.abs(psi) ** 2).reshape(G, internal).sum(axis=1)
    pos = flux.maximum(0).tocsc()
    cols = np.repeat(np.arange(G), np.diff(pos.indptr))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(prob > 0, 1 / prob, 0.0)
    pos.data = pos.data * scale[cols]
    pos.eliminate_zeros()
    return pos, flux, prob


def minimal_jump_step(rates, sites, dt, rng, dt_check=True):
    """Advance grid beables ``sites`` by ``dt`` with frozen ``rates``.

    Waiting times are exponential with the total rate of the current site;
    several jumps per step are allowed. Returns
    ``(new_sites, owner, from, to, when)`` where the last four list the jumps
    (``owner`` is the trajectory index, ``when`` is relative to step start).
    """
    rates = rates.tocsc()
    total = np.asarray(rates.sum(axis=0)).ravel()
    if dt_check and np.any(total[np.unique(sites)] * dt > RATE_STEP_LIMIT):
        worst = float(np.max(total[np.unique(sites)]))
        raise StepSizeError(f"total rate {worst:.3e} times dt {dt:.3e} exceeds {RATE_STEP_LIMIT}")
    cum = np.cumsum(rates.data)
    base = np.concatenate([[0.0], cum])[rates.indptr[:-1]]
    sites = np.array(sites, copy=True)
    clock = np.zeros(len(sites))
    active = np.arange(len(sites))
    log_owner, log_from, log_to, log_when = [], [], [], []
    while len(active):
        r = total[sites[active]]
        wait = np.full(len(active), np.inf)
        pos = r > 0
        wait[pos] = rng.exponential(1 / r[pos])
        jump = clock[active] + wait < dt
        active = active[jump]
        if not len(active):
            break
        clock[active] += wait[jump]
        y = sites[active]
        target = base[y] + rng.uniform(0, 1, len(active)) * total[y]
        k = np.searchsorted(cum, target, side="right")
        k = np.clip(k, rates.indptr[y], rates.indptr[y + 1] - 1)
        x = rates.indices[k]
        log_owner.append(active.copy())
        log_from.append(y)
        log_to.append(x)
        log_when.append(clock[active].copy())
        sites[active] = x
    cat = lambda parts, dt_: np.concatenate(parts) if parts else np.zeros(0, dtype=dt_)
    return sites, cat(log_owner, int), cat(log_from, int), cat(log_to, int), cat(log_when, float)


def jump_ensemble(model, sites0, t0, t1, dt, rng, record_every=1):
    """Minimal jump process on ``model``'s grid.

    Rates are frozen at the step midpoint. Returns a :class:`TrajectorySet`
    whose ``sites`` and ``jumps`` are filled.
    """
    sites = np.asarray(sites0, dtype=int).copy()
    span = t1 - t0
    steps = max(1, int(math.ceil(abs(span) / dt - 1e-9)))
    h = span / steps
    pos = np.asarray(model.positions, dtype=float)
    unwrapped = pos[sites].copy()
    frames, disp, site_frames, times = [pos[sites]], [np.zeros_like(unwrapped)], [sites.copy()], [t0]
    log = {"trajectory": [], "time": [], "from": [], "to": []}
    start = unwrapped.copy()
    for s in range(steps):
        t = t0 + s * h
        rates, _, _ = model.rates(t + h / 2)
        new, owner, frm, to, when = minimal_jump_step(rates, sites, h, rng)
        if len(frm):
            # minimum-image displacement of every jump
            step_disp = pos[to] - pos[frm]
            step_disp -= model.length * np.round(step_disp / model.length)
            np.add.at(unwrapped, owner, step_disp)
            log["trajectory"].append(owner)
            log["time"].append(t + when)
            log["from"].append(frm)
            log["to"].append(to)
        sites = new
        if (s + 1) % record_every == 0 or s == steps - 1:
            times.append(t0 + (s + 1) * h)
            frames.append(pos[sites])
            disp.append(unwrapped - start)
            site_frames.append(sites.copy())
    jumps = {k: (np.concatenate(v) if v else np.zeros(0)) for k, v in log.items()}
    return TrajectorySet(
        np.array(times),
        np.array(frames)[:, :, None, :],
        np.array(disp)[:, :, None, :],
        np.zeros(len(sites), dtype=bool),
        mode="jump",
        sites=np.array(site_frames),
        jumps=jumps,
    )


def sample_sites(probabilities, count, rng):
    p = np.asarray(probabilities, dtype=float)
    return rng.choice(len(p), size=count, p=p / p.sum())


# ---------------------------------------------------------------------------
# equilibrium diagnostics


def one_body_density_matrix(state):
    """``gamma[i, j] = <a+_i a_j>`` summed over the boson index."""
    sector = state.sector
    if sector.n == 0:
        return np.zeros((sector.modes, sector.modes), dtype=complex)
    lower = enumerate_sector(sector.basis, sector.n - 1)
    psi = state.matrix
    reduced = np.array([annihilation_matrix(i, sector, lower) @ psi for i in range(sector.modes)])
    flat = reduced.reshape(sector.modes, -1)
    return flat.conj() @ flat.T


def slab_probabilities(state, edges, axis=0):
    """Probability that a uniformly chosen particle lies in each slab
    ``edges[k] <= x_axis < edges[k+1]`` (exact, from the one-body density)."""
    basis = state.sector.basis
    lat = basis.lattice
    gamma = one_body_density_matrix(state)
    out = np.empty(len(edges) - 1)
    for k, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        if lat.dim == 1:
            region = Interval(a, b)
        else:
            lo = [0.0] * lat.dim
            hi = [lat.length] * lat.dim
            lo[axis], hi[axis] = a, b
            region = Box(tuple(lo), tuple(hi))
        w = region_weights(basis, region)
        out[k] = np.real(np.sum(w * gamma)) / state.sector.n
    return out


def tv_distance(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def empirical_marginal(positions, edges, axis=0):
    x = positions[..., axis].ravel()
    counts, _ = np.histogram(x, bins=edges)
    return counts / len(x)


@dataclass
class EquilibriumReport:
    times: np.ndarray
    tv: np.ndarray
    bins: int
    samples: int

    @property
    def noise_band(self):
        """Typical TV from sampling noise alone, ``~ sqrt(bins / N)``."""
        return math.sqrt(self.bins / self.samples)

    def to_dict(self):
        return {
            "bins": self.bins,
            "samples": self.samples,
            "noise_band": self.noise_band,
            "times": self.times.tolist(),
            "tv": self.tv.tolist(),
            "max_tv": float(np.max(self.tv)),
        }


def equilibrium_report(trajectories, exact_fn, length, bins=50, axis=0):
    """TV distance per recorded slice between the ensemble marginal and
    ``exact_fn(t, edges)`` (exact bin probabilities)."""
    edges = np.linspace(0, length, bins + 1)
    live = ~trajectories.aborted
    tv = []
    for s, t in enumerate(trajectories.times):
        emp = empirical_marginal(trajectories.positions[s, live], edges, axis)
        tv.append(tv_distance(emp, exact_fn(t, edges)))
    return EquilibriumReport(trajectories.times, np.array(tv), bins, int(live.sum()))


def grid_equilibrium_report(trajectories, model):
    """TV distance between site occupation and the exact site probabilities."""
    tv = []
    for s, t in enumerate(trajectories.times):
        counts = np.bincount(trajectories.sites[s], minlength=model.sites) / trajectories.count
        tv.append(tv_distance(counts, model.probabilities(t)))
    return EquilibriumReport(trajectories.times, np.array(tv), model.sites, trajectories.count)


# ---------------------------------------------------------------------------
# ensembles


def _chunks(count, chunk):
    return [(i, min(chunk, count - i)) for i in range(0, count, chunk)]


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_ensemble(
    plan,
    state,
    count,
    seed,
    mode="deterministic",
    t_end=1.0,
    step=0.05,
    record_every=1,
    bins=50,
    initial="equilibrium",
    correction=False,
    interaction=None,
    resolution=None,
    boson_mode=0,
    chunk=2048,
    workers=1,
):
    """Sample ``count`` configurations at ``state.time`` and propagate them.

    Each chunk of ``chunk`` trajectories draws from its own stream spawned
    from ``seed``, so the result does not depend on ``workers``. Returns
    ``(TrajectorySet, EquilibriumReport)``.
    """
    if mode not in ("deterministic", "jump"):
        raise InvalidParameterError(f"mode must be deterministic or jump, got {mode!r}")
    if initial not in ("equilibrium", "uniform"):
        raise InvalidParameterError(f"initial must be equilibrium or uniform, got {initial!r}")
    streams = np.random.SeedSequence(seed).spawn(len(_chunks(count, chunk)))
    t0 = state.time
    if mode == "deterministic":
        schedule = StateSchedule(plan, state)
        fld = GuidanceField(schedule, correction, interaction, resolution, boson_mode)
        lat = state.sector.basis.lattice
        K = int(np.abs(lat.integers).max(initial=0))
        dens = lambda X: fld.density(t0, X)

        def work(arg):
            (start, size), ss = arg
            rng = np.random.default_rng(ss)
            if initial == "equilibrium":
                X0, _ = sample_configurations(dens, size, fld.n, fld.dim, fld.length, rng, 8 * (2 * K + 1))
            else:
                X0 = uniform_configurations(size, fld.n, fld.dim, fld.length, rng)
            return integrate_ensemble(fld, X0, t0, t0 + t_end, step, record_every)

        parts = _map(work, list(zip(_chunks(count, chunk), streams)), workers)
        traj = parts[0]
        for p in parts[1:]:
            traj = traj.merged(p)
        traj.seed = seed
        report = equilibrium_report(
            traj, lambda t, e: slab_probabilities(schedule.at(t), e), fld.length, bins
        )
        return traj, report

    model = GridModel.from_fock(state, plan.hamiltonian)

    def work_jump(arg):
        (start, size), ss = arg
        rng = np.random.default_rng(ss)
        if initial == "equilibrium":
            s0 = sample_sites(model.probabilities(0.0), size, rng)
        else:
            s0 = rng.integers(0, model.sites, size)
        return jump_ensemble(model, s0, t0, t0 + t_end, step, rng, record_every)

    parts = _map(work_jump, list(zip(_chunks(count, chunk), streams)), workers)
    traj = parts[0]
    for p in parts[1:]:
        traj = traj.merged(p)
    traj.seed = seed
    shifted = _TimeShift(model, t0)
    return traj, grid_equilibrium_report(traj, shifted)


class _TimeShift:
    def __init__(self, model, t0):
        self.model, self.t0 = model, t0
        self.sites = model.sites

    def probabilities(self, t):
        return self.model.probabilities(t - self.t0)


# ---------------------------------------------------------------------------
# effective collapse


@dataclass
class BranchReport:
    weights: np.ndarray
    occupancy: np.ndarray
    sigma: np.ndarray
    outside: float
    overlap: float
    count: int

    @property
    def within_3sigma(self):
        return bool(np.all(np.abs(self.occupancy - self.weights) <= 3 * self.sigma))

    def to_dict(self):
        return {
            "weights": self.weights.tolist(),
            "occupancy": self.occupancy.tolist(),
            "sigma": self.sigma.tolist(),
            "outside": self.outside,
            "overlap": self.overlap,
            "count": self.count,
            "within_3sigma": self.within_3sigma,
        }


def branch_overlap(branches, regions):
    """Largest probability of any branch state lying outside its own region."""
    worst = 0.0
    for psi, reg in zip(branches, regions):
        op = region_number_operator(psi.sector, reg, psi.boson)
        inside = expectation(op, psi) / psi.sector.n
        worst = max(worst, 1.0 - float(np.real(inside)))
    return worst


def measurement_scenario(
    plan,
    branches,
    coefficients,
    regions,
    count,
    seed,
    t_end=1.0,
    step=0.05,
    threshold=1e-3,
    chunk=2048,
    workers=1,
):
    """Sample the superposition ``sum_k c_k psi_k``, evolve the ensemble and
    count trajectories in each branch's region at ``t_end``.

    Branches must be one-fermion states whose supports lie in the given
    regions up to ``threshold`` of probability (checked at ``t = 0`` and
    ``t_end``).
    """
    if len(branches) != len(coefficients) or len(branches) != len(regions):
        raise InvalidParameterError("branches, coefficients and regions must match")
    overlap = branch_overlap(branches, regions)
    later = [evolve_state(plan, b, t_end) for b in branches]
    overlap = max(overlap, branch_overlap(later, regions))
    if overlap > threshold:
        raise ScenarioError(f"branch supports overlap: {overlap:.3e} > {threshold:.1e}")
    c = np.asarray(coefficients, dtype=complex)
    amps = sum(ck * b.amplitudes for ck, b in zip(c, branches))
    state = QuantumState.normalized(branches[0].sector, branches[0].boson, amps, branches[0].time)
    weights = np.abs(c) ** 2 / np.sum(np.abs(c) ** 2)
    traj, _ = run_ensemble(
        plan, state, count, seed, "deterministic", t_end, step, record_every=10**9, chunk=chunk, workers=workers
    )
    final = traj.positions[-1, ~traj.aborted, 0, :]
    occ = np.array([np.mean(_in_region(final, r)) for r in regions])
    n = len(final)
    sigma = np.sqrt(weights * (1 - weights) / n)
    return BranchReport(weights, occ, sigma, float(1 - occ.sum()), overlap, n)


def _in_region(x, region):
    if isinstance(region, Interval):
        return (x[:, 0] >= region.lower) & (x[:, 0] < region.upper)
    if isinstance(region, Box):
        lo, hi = np.asarray(region.lower), np.asarray(region.upper)
        return np.all((x >= lo) & (x < hi), axis=1)
    raise InvalidParameterError(f"unsupported region {region!r}")


# ---------------------------------------------------------------------------
# jump-process continuum trend


def refinement_study(particle, levels=(32, 128, 512), count=20000, t_end=1.0, seed=0, bins=24, step=None):
    """TV distance between jump-process and deterministic-guidance displacement
    histograms at each lattice refinement level.

    Both ensembles start from ``|psi(0)|^2`` (lattice probabilities for the
    jump process). Returns a list of dicts with level, TV and jump counts.
    """
    root = np.random.SeedSequence(seed)
    det_ss, *jump_ss = root.spawn(1 + len(levels))
    rng = np.random.default_rng(det_ss)
    X0, _ = sample_configurations(lambda X: particle.density(0.0, X), count, 1, 1, particle.length, rng)
    det = integrate_ensemble(particle, X0, 0.0, t_end, 0.01)
    ref = det.displacement[-1, :, 0, 0]
    lo, hi = ref.min(), ref.max()
    pad = 0.25 * (hi - lo) + 1e-3
    edges = np.linspace(lo - pad, hi + pad, bins + 1)
    p_ref = np.histogram(ref, edges)[0] / count
    out = []
    for sites, ss in zip(levels, jump_ss):
        r = np.random.default_rng(ss)
        model = particle.lattice_model(sites)
        rates, _, _ = model.rates(0.0)
        rmax = float(np.asarray(rates.sum(axis=0)).max())
        dt = step or min(0.01, 0.5 * RATE_STEP_LIMIT / max(rmax, 1e-300))
        s0 = sample_sites(model.probabilities(0.0), count, r)
        traj = jump_ensemble(model, s0, 0.0, t_end, dt, r, record_every=10**9)
        disp = traj.displacement[-1, :, 0, 0]
        p = np.histogram(np.clip(disp, edges[0], edges[-1] - 1e-12), edges)[0] / count
        out.append({"sites": sites, "tv": tv_distance(p, p_ref), "jumps": int(len(traj.jumps["from"]))})
    return out
