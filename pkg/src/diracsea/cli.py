"""Command-line front end: ``diracsea <scenario> [--config PATH] ...``.

Exit codes: 0 success, 1 numerical or invariant failure, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, fluct, hybrid_io
from .checks import run_checks
from .config import SCENARIOS, ConfigError, config_hash, load_config, parse_config
from .dynamics import (
    EvolutionPlan,
    SamplingError,
    ScenarioError,
    StepSizeError,
    evolve_state,
    measurement_scenario,
    run_ensemble,
)
from .fock import (
    POSITIVE,
    BosonSpace,
    InteractionKernel,
    Interval,
    QuantumState,
    build_hamiltonian,
    build_interaction,
    build_single_particle_basis,
    dirac_sea_state,
    enumerate_sector,
    expectation,
    number_operator,
    save_state,
)
from .modes import (
    InvalidParameterError,
    build_mode_lattice,
    single_species,
    species_table_from_records,
    standard_species_table,
)
from .position import CorrectionInconsistentError, NearNodeError, grid_fields
from .quadrature import QuadratureError

NUMERIC_ERRORS = (
    QuadratureError,
    SamplingError,
    StepSizeError,
    NearNodeError,
    CorrectionInconsistentError,
    ScenarioError,
    FloatingPointError,
    np.linalg.LinAlgError,
)


class RunFailure(RuntimeError):
    """A scenario finished but an invariant or tolerance failed."""


# ---------------------------------------------------------------------------
# building blocks


def species_from_config(cfg):
    sp_cfg = cfg["species"]
    preset = sp_cfg["preset"]
    if preset == "standard":
        return standard_species_table(sp_cfg["neutrino_mass_ev"])
    if preset == "custom":
        recs = [{k: str(v) for k, v in r.items()} for r in sp_cfg["records"]]
        return species_table_from_records(recs)
    return single_species(sp_cfg["mass"], sp_cfg["charge"])


def build_system(cfg):
    """Lattice, basis, sector, boson space, kernel and initial state from a config."""
    lat_cfg = cfg["lattice"]
    lattice = build_mode_lattice(lat_cfg["dim"], lat_cfg["length"], lat_cfg["cutoff"])
    basis = build_single_particle_basis(lattice, species_from_config(cfg))
    boson = BosonSpace(cfg["sector"]["boson_size"], cfg["sector"]["boson_frequency"])
    k = cfg["kernel"]
    kernel = InteractionKernel(k["kind"], k["coupling"], tuple(k["boson_mode"]), tuple(k["flip"]))
    st = cfg["state"]
    if st["kind"] == "sea":
        sector = enumerate_sector(basis, len(basis.negative_modes), boson.size)
        state = dirac_sea_state(sector, boson)
    else:
        sector = enumerate_sector(basis, 1, boson.size)
        if st["kind"] == "superposition":
            coeffs = {int(n): complex(*c) for n, c in zip(st["momenta"], st["coefficients"])}
        else:
            if lattice.dim != 1:
                raise ConfigError("state: packet states are available in 1D only")
            coeffs = {
                int(n[0]): np.exp(-((p[0] * st["width"]) ** 2) - 1j * p[0] * st["center"])
                for n, p in zip(lattice.integers, lattice.momenta)
            }
        state = packet_state(sector, boson, coeffs, POSITIVE if st["band"] == "positive" else 1)
    return lattice, basis, sector, boson, kernel, state


def packet_state(sector, boson, coeffs, band=POSITIVE):
    """One-fermion superposition ``sum_n c_n |species 0, band, p = 2 pi n / L>``."""
    basis = sector.basis
    amps = np.zeros((sector.dim, boson.size), dtype=complex)
    for n, c in coeffs.items():
        vec = np.zeros(basis.lattice.dim, dtype=int)
        vec[0] = n
        mode = basis.find(0, band, 0, vec)
        amps[sector.index([1 << mode])[0], 0] += c
    if not np.any(amps):
        raise InvalidParameterError("state has no amplitude on the lattice")
    return QuantumState.normalized(sector, boson, amps)


def _interaction_args(cfg, sector, boson, kernel):
    if kernel.coupling == 0:
        return None
    return build_interaction(sector, boson, kernel, cfg["kernel"].get("resolution"))


# ---------------------------------------------------------------------------
# output helpers


def _meta(cfg):
    return {
        "scenario": cfg["scenario"],
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "version": __version__,
    }


def _write_json(path, cfg, payload):
    # the output directory is left out so reruns elsewhere give identical bytes
    shown = {**cfg, "output": {k: v for k, v in cfg["output"].items() if k != "dir"}}
    doc = {"meta": _meta(cfg), "config": shown, "result": payload}
    hybrid_io.atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_csv(path, cfg, columns, rows):
    buf = io.StringIO()
    meta = _meta(cfg)
    for k in ("scenario", "config_hash", "seed", "version"):
        buf.write(f"# {k}={meta[k]}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    hybrid_io.atomic_write_text(path, buf.getvalue())


def _emit(out, name, cfg, payload, columns=None, rows=None):
    fmt = cfg["output"]["format"]
    if fmt == "csv" and columns is not None:
        path = out / f"{name}.csv"
        _write_csv(path, cfg, columns, rows)
    else:
        path = out / f"{name}.json"
        _write_json(path, cfg, payload)
    return path


# ---------------------------------------------------------------------------
# scenarios


def _fluct_spec(cfg, radius=None, cutoff=None):
    q = cfg["quadrature"]
    graphite = q["preset"] == "graphite"
    cutoff = cutoff or q.get("cutoff") or (fluct.PLANCK_CUTOFF if graphite else None)
    if cutoff is None:
        raise ConfigError("quadrature.cutoff is required")
    if graphite and cfg["species"]["preset"] == "single":
        # the graphite preset is about the full fermion content
        table = standard_species_table(cfg["species"]["neutrino_mass_ev"])
    else:
        table = species_from_config(cfg)
    kwargs = {"cutoff": cutoff, "species": table, "rtol": q["rtol"], "case": q["case"]}
    if radius is not None:
        kwargs["radius"] = radius
    elif "radius" in q:
        kwargs["radius"] = q["radius"]
    elif "volume" in q:
        kwargs["volume"] = q["volume"]
    elif graphite or "fermion_density" in q:
        rho = q.get("fermion_density", fluct.GRAPHITE_DENSITY)
        kwargs["radius"] = fluct.distinguishability_radius(rho, cutoff)
    else:
        raise ConfigError("quadrature: give radius, volume or fermion_density")
    return fluct.FluctuationSpec(**kwargs)


def scenario_fluct(cfg, out, workers):
    spec = _fluct_spec(cfg)
    res = fluct.fluctuation_statistics(spec, cfg["quadrature"]["method"])
    payload = res.to_dict(spec)
    q = cfg["quadrature"]
    if q["preset"] == "graphite" or "fermion_density" in q:
        rho = q.get("fermion_density", fluct.GRAPHITE_DENSITY)
        payload["fermion_density"] = rho
        payload["distinguishability_radius"] = fluct.distinguishability_radius(rho, spec.cutoff)
        payload["distinguishability_volume"] = fluct.distinguishability_volume(rho, spec.cutoff)
    payload["stddev_coefficient"] = fluct.stddev_coefficient(res.variance_total, spec.cutoff, spec.ball_volume)
    cols = ["cutoff", "radius", "n0", "stddev", "asymptotic_stddev", "distinguishability_radius"]
    row = [spec.cutoff, spec.radius, res.n0, res.stddev, math.sqrt(res.asymptotic_total),
           payload.get("distinguishability_radius", float("nan"))]
    return [_emit(out, "fluct", cfg, payload, cols, [row])]


def scenario_fluct_sweep(cfg, out, workers):
    rows, records = [], []
    for cutoff in cfg["sweep"]["cutoffs"]:
        for radius in cfg["sweep"]["radii"]:
            spec = _fluct_spec(cfg, radius=radius, cutoff=cutoff)
            res = fluct.fluctuation_statistics(spec, cfg["quadrature"]["method"])
            asym = math.sqrt(res.asymptotic_total)
            rel = res.stddev / asym - 1 if asym > 0 else 0.0
            rows.append([radius, cutoff, res.n0, res.stddev, asym, rel, "|".join(sorted(set(res.cases)))])
            records.append(res.to_dict(spec))
    cols = ["b", "cutoff", "n0", "stddev", "asymptotic_stddev", "relative_difference", "cases"]
    return [_emit(out, "fluct_sweep", cfg, {"points": records}, cols, rows)]


def scenario_evolve(cfg, out, workers):
    lattice, basis, sector, boson, kernel, state = build_system(cfg)
    h = build_hamiltonian(sector, boson, kernel, cfg["kernel"].get("resolution"))
    plan = EvolutionPlan.build(h)
    f = number_operator(sector, boson)
    ev = cfg["evolve"]
    times = np.linspace(0.0, ev["t_end"], ev["slices"] + 1)
    rows = []
    current = state
    for t in times:
        current = evolve_state(plan, state, t)
        rows.append([t, expectation(h, current), expectation(f, current), np.linalg.norm(current.amplitudes)])
    cols = ["t", "energy", "fermion_number", "norm"]
    paths = [_emit(out, "evolve", cfg, {"columns": cols, "rows": rows}, cols, rows)]
    state_path = out / "state.dsea"
    save_state(state_path, current)
    paths.append(state_path)
    if sector.n == 1:
        inter = _interaction_args(cfg, sector, boson, kernel)
        fields = grid_fields(current, inter, max(ev["grid"], _min_grid(lattice, kernel)), kernel.boson_mode)
        cols = list(fields)
        paths.append(
            _emit(out, "fields", cfg, {k: v.tolist() for k, v in fields.items()}, cols, zip(*fields.values()))
        )
    return paths


def _min_grid(lattice, kernel):
    kmax = int(np.abs(lattice.integers).max(initial=0))
    nb = int(np.max(np.abs(kernel.boson_mode)))
    return max(8 * kmax, 2 * (2 * kmax + nb) + 1, 4)


def scenario_ensemble(cfg, out, workers):
    lattice, basis, sector, boson, kernel, state = build_system(cfg)
    h = build_hamiltonian(sector, boson, kernel, cfg["kernel"].get("resolution"))
    plan = EvolutionPlan.build(h)
    ig = cfg["integrator"]
    inter = _interaction_args(cfg, sector, boson, kernel) if ig["correction"] else None
    traj, report = run_ensemble(
        plan,
        state,
        ig["trajectories"],
        cfg["seed"],
        ig["mode"],
        ig["t_end"],
        ig["step"],
        ig["record_every"],
        ig["bins"],
        ig["initial"],
        ig["correction"],
        inter,
        cfg["kernel"].get("resolution"),
        kernel.boson_mode,
        ig["chunk"],
        workers,
    )
    payload = report.to_dict()
    payload.update(
        {
            "trajectories": int(traj.count),
            "aborted": int(traj.aborted.sum()),
            "jumps": int(len(traj.jumps.get("from", []))),
            "mode": ig["mode"],
        }
    )
    paths = [out / "report.json"]
    _write_json(paths[0], cfg, payload)
    if cfg["output"]["trajectory_frames"]:
        arrays = {"times": traj.times, "positions": traj.positions, "aborted": traj.aborted}
        if traj.sites is not None:
            arrays["sites"] = traj.sites
            for k, v in traj.jumps.items():
                arrays[f"jump_{k}"] = np.asarray(v)
        desc = {"kind": "trajectories", "meta": _meta(cfg), "layout": "positions[slice, trajectory, particle, axis]"}
        paths.append(out / "trajectories.dsea")
        hybrid_io.write(paths[-1], desc, arrays)
        if cfg["output"]["format"] == "csv":
            d = traj.positions.shape[-1]
            cols = ["trajectory", "particle", "t"] + ["x", "y", "z"][:d]
            rows = (
                [i, k, traj.times[s]] + list(traj.positions[s, i, k])
                for i in range(traj.count)
                for s in range(len(traj.times))
                for k in range(traj.positions.shape[2])
            )
            paths.append(out / "trajectories.csv")
            _write_csv(paths[-1], cfg, cols, rows)
    return paths


def scenario_measure(cfg, out, workers):
    lattice, basis, sector, boson, kernel, _ = build_system(
        {**cfg, "state": {**cfg["state"], "kind": "superposition"}}
    )
    if lattice.dim != 1:
        raise ConfigError("measure: the two-branch scenario is 1D")
    m = cfg["measure"]
    L = lattice.length
    sector = enumerate_sector(basis, 1, boson.size)

    def packet(center):
        coeffs = {
            int(n[0]): np.exp(-((p[0] * m["width"]) ** 2) - 1j * p[0] * center)
            for n, p in zip(lattice.integers, lattice.momenta)
        }
        return packet_state(sector, boson, coeffs)

    branches = [packet(L / 4), packet(3 * L / 4)]
    regions = [Interval(0.0, L / 2), Interval(L / 2, L)]
    h = build_hamiltonian(sector, boson, kernel, cfg["kernel"].get("resolution"))
    plan = EvolutionPlan.build(h)
    reports = []
    for i, w in enumerate(m["weights"]):
        if w > 1:
            raise ConfigError(f"measure.weights[{i}]: must be <= 1")
        rep = measurement_scenario(
            plan,
            branches,
            [math.sqrt(w), math.sqrt(1 - w)],
            regions,
            m["trajectories"],
            cfg["seed"] + i,
            m["t_end"],
            m["step"],
            m["threshold"],
            workers=workers,
        )
        reports.append(rep.to_dict())
    cols = ["weight", "occupancy", "sigma", "within_3sigma"]
    rows = [[r["weights"][0], r["occupancy"][0], r["sigma"][0], r["within_3sigma"]] for r in reports]
    path = _emit(out, "measure", cfg, {"scenarios": reports}, cols, rows)
    if not all(r["within_3sigma"] for r in reports):
        raise RunFailure("branch occupancy outside 3 sigma of |c_1|^2")
    return [path]


def scenario_check(cfg, out, workers):
    results = run_checks(cfg["check"]["quick"])
    path = out / "check.json"
    _write_json(path, cfg, {"checks": [r.to_dict() for r in results]})
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise RunFailure("invariant failed: " + "; ".join(failed))
    return [path]


SCENARIO_RUNNERS = {
    "fluct": scenario_fluct,
    "fluct-sweep": scenario_fluct_sweep,
    "evolve": scenario_evolve,
    "ensemble": scenario_ensemble,
    "measure": scenario_measure,
    "check": scenario_check,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="diracsea", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="scenario", required=True)
    for name in SCENARIOS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML scenario config")
        p.add_argument("--seed", type=int, help="master RNG seed (overrides the config)")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker threads")
        p.add_argument("--format", choices=("csv", "json"), help="tabular output format")
    return parser


def run(argv=None):
    """Parse arguments, run the scenario and return the exit status."""
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else parse_config("")
        cfg["scenario"] = args.scenario
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be >= 0")
            cfg["seed"] = args.seed
        if args.out is not None:
            cfg["output"]["dir"] = str(args.out)
        if args.format is not None:
            cfg["output"]["format"] = args.format
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        out = Path(cfg["output"]["dir"])
        paths = SCENARIO_RUNNERS[args.scenario](cfg, out, args.workers)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"diracsea: configuration error: {exc}", file=sys.stderr)
        return 2
    except RunFailure as exc:
        print(f"diracsea: {exc}", file=sys.stderr)
        return 1
    except NUMERIC_ERRORS as exc:
        print(f"diracsea: numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
