"""Scenario configuration: YAML parsing, schema validation and defaults.

Configs are YAML mappings. Every key is checked against a fixed schema;
unknown keys and wrongly typed values are rejected with the line number of
the offending node. Numbers may be written as YAML numbers or as decimal
strings (``"1e35"``); complex coefficients are strings such as ``"0.8+0.3j"``.
"""
from __future__ import annotations

import copy
import hashlib
import json
from decimal import Decimal, InvalidOperation
from pathlib import Path

import yaml

SCENARIOS = ("fluct", "fluct-sweep", "evolve", "ensemble", "measure", "check")


class ConfigError(ValueError):
    """Schema violation; the message names the field and line."""


class _Num:
    def __init__(self, kind, positive=False, nonneg=False):
        self.kind, self.positive, self.nonneg = kind, positive, nonneg

    def check(self, value, where):
        if isinstance(value, bool):
            raise ConfigError(f"{where}: expected a number, got a boolean")
        if isinstance(value, str):
            try:
                value = Decimal(value.strip())
            except InvalidOperation:
                raise ConfigError(f"{where}: not a number: {value!r}") from None
        if self.kind is int:
            if isinstance(value, float) or (isinstance(value, Decimal) and value != value.to_integral_value()):
                raise ConfigError(f"{where}: expected an integer, got {value}")
            if not isinstance(value, (int, Decimal)):
                raise ConfigError(f"{where}: expected an integer")
            value = int(value)
        else:
            if not isinstance(value, (int, float, Decimal)):
                raise ConfigError(f"{where}: expected a number")
            value = float(value)
        if self.positive and not value > 0:
            raise ConfigError(f"{where}: must be > 0, got {value}")
        if self.nonneg and not value >= 0:
            raise ConfigError(f"{where}: must be >= 0, got {value}")
        return value


class _Choice:
    def __init__(self, *options):
        self.options = options

    def check(self, value, where):
        if value not in self.options:
            raise ConfigError(f"{where}: must be one of {list(self.options)}, got {value!r}")
        return value


class _Bool:
    def check(self, value, where):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true or false")
        return value


class _Str:
    def check(self, value, where):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value


class _Complex:
    def check(self, value, where):
        if isinstance(value, bool):
            raise ConfigError(f"{where}: expected a complex number")
        try:
            c = complex(str(value).replace(" ", ""))
        except ValueError:
            raise ConfigError(f"{where}: not a complex number: {value!r}") from None
        return [c.real, c.imag]


class _List:
    def __init__(self, item, min_len=0):
        self.item, self.min_len = item, min_len


class _Records:
    """List of mappings with a fixed key schema (species records)."""

    def __init__(self, schema):
        self.schema = schema


POS_FLOAT = _Num(float, positive=True)
NONNEG_FLOAT = _Num(float, nonneg=True)
FLOAT = _Num(float)
POS_INT = _Num(int, positive=True)
NONNEG_INT = _Num(int, nonneg=True)
INT = _Num(int)

SCHEMA = {
    "scenario": _Choice(*SCENARIOS),
    "seed": NONNEG_INT,
    "output": {"dir": _Str(), "format": _Choice("csv", "json"), "trajectory_frames": _Bool()},
    "lattice": {"dim": _Choice(1, 3), "length": POS_FLOAT, "cutoff": POS_FLOAT},
    "species": {
        "preset": _Choice("single", "standard", "custom"),
        "mass": NONNEG_FLOAT,
        "charge": FLOAT,
        "neutrino_mass_ev": NONNEG_FLOAT,
        "records": _Records({"id": _Str(), "mass": NONNEG_FLOAT, "charge": FLOAT}),
    },
    "sector": {"boson_size": POS_INT, "boson_frequency": FLOAT},
    "state": {
        "kind": _Choice("superposition", "sea", "packet"),
        "momenta": _List(INT),
        "coefficients": _List(_Complex()),
        "center": FLOAT,
        "width": POS_FLOAT,
        "band": _Choice("positive", "negative"),
    },
    "kernel": {
        "kind": _Choice("yukawa", "em", "flavor-flip"),
        "coupling": FLOAT,
        "boson_mode": _List(INT, 1),
        "flip": _List(NONNEG_INT, 2),
        "resolution": POS_INT,
    },
    "evolve": {"t_end": FLOAT, "slices": POS_INT, "grid": POS_INT},
    "integrator": {
        "mode": _Choice("deterministic", "jump"),
        "trajectories": POS_INT,
        "t_end": FLOAT,
        "step": POS_FLOAT,
        "record_every": POS_INT,
        "bins": POS_INT,
        "correction": _Bool(),
        "initial": _Choice("equilibrium", "uniform"),
        "chunk": POS_INT,
    },
    "quadrature": {
        "preset": _Choice("none", "graphite"),
        "cutoff": POS_FLOAT,
        "radius": POS_FLOAT,
        "volume": POS_FLOAT,
        "rtol": POS_FLOAT,
        "case": _Choice("auto", "case1", "case2", "case3"),
        "method": _Choice("quadrature", "asymptotic"),
        "fermion_density": POS_FLOAT,
    },
    "sweep": {"radii": _List(POS_FLOAT, 1), "cutoffs": _List(POS_FLOAT, 1)},
    "measure": {
        "weights": _List(_Num(float, nonneg=True), 1),
        "width": POS_FLOAT,
        "trajectories": POS_INT,
        "t_end": FLOAT,
        "step": POS_FLOAT,
        "threshold": POS_FLOAT,
    },
    "check": {"quick": _Bool()},
}

DEFAULTS = {
    "scenario": "check",
    "seed": 0,
    "output": {"dir": "out", "format": "json", "trajectory_frames": True},
    "lattice": {"dim": 1, "length": 6.283185307179586, "cutoff": 2.5},
    "species": {"preset": "single", "mass": 1.0, "charge": -1.0, "neutrino_mass_ev": 0.0},
    "sector": {"boson_size": 1, "boson_frequency": 1.0},
    "state": {
        "kind": "superposition",
        "momenta": [-2, -1, 0, 1, 2],
        "coefficients": [[0.5, 0.0], [0.8, 0.3], [1.0, 0.0], [0.0, 0.6], [0.4, 0.0]],
        "center": 3.141592653589793,
        "width": 0.3,
        "band": "positive",
    },
    "kernel": {"kind": "yukawa", "coupling": 0.0, "boson_mode": [1], "flip": [0, 1]},
    "evolve": {"t_end": 1.0, "slices": 10, "grid": 64},
    "integrator": {
        "mode": "deterministic",
        "trajectories": 2000,
        "t_end": 1.0,
        "step": 0.05,
        "record_every": 5,
        "bins": 50,
        "correction": False,
        "initial": "equilibrium",
        "chunk": 2048,
    },
    "quadrature": {"preset": "none", "rtol": 1e-6, "case": "auto", "method": "quadrature"},
    "sweep": {"radii": [1e-9, 1e-8, 1e-7, 1e-6], "cutoffs": [1e35]},
    "measure": {"weights": [0.5], "width": 1.0, "trajectories": 10000, "t_end": 1.0, "step": 0.05, "threshold": 1e-3},
    "check": {"quick": False},
}


def _line(node):
    return node.start_mark.line + 1 if node is not None else "?"


def _validate(spec, node, value, path):
    where = f"{path} (line {_line(node)})"
    if isinstance(spec, dict):
        if not isinstance(node, yaml.MappingNode):
            raise ConfigError(f"{where}: expected a mapping")
        out = {}
        for knode, vnode in node.value:
            key = knode.value
            if key not in spec:
                raise ConfigError(
                    f"{path}.{key} (line {_line(knode)}): unknown key; allowed: {sorted(spec)}".lstrip(".")
                )
            out[key] = _validate(spec[key], vnode, value[key], f"{path}.{key}".lstrip("."))
        return out
    if isinstance(spec, _List):
        if not isinstance(node, yaml.SequenceNode):
            raise ConfigError(f"{where}: expected a list")
        if len(node.value) < spec.min_len:
            raise ConfigError(f"{where}: needs at least {spec.min_len} entries")
        return [_validate(spec.item, n, v, f"{path}[{i}]") for i, (n, v) in enumerate(zip(node.value, value))]
    if isinstance(spec, _Records):
        if not isinstance(node, yaml.SequenceNode):
            raise ConfigError(f"{where}: expected a list of records")
        out = []
        for i, (n, v) in enumerate(zip(node.value, value)):
            rec = _validate(spec.schema, n, v, f"{path}[{i}]")
            if "id" not in rec or "mass" not in rec:
                raise ConfigError(f"{path}[{i}] (line {_line(n)}): 'id' and 'mass' are required")
            out.append(rec)
        return out
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{where}: expected a scalar")
    return spec.check(value, where)


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_config(text, source="<config>"):
    """Validate YAML ``text`` and merge it over the defaults."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: YAML syntax error: {exc}") from None
    if node is None:
        return copy.deepcopy(DEFAULTS)
    try:
        checked = _validate(SCHEMA, node, data, "")
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    resolved = _merge(DEFAULTS, checked)
    _cross_checks(resolved, source)
    return resolved


def _cross_checks(cfg, source):
    q = cfg["quadrature"]
    if "radius" in q and "volume" in q:
        raise ConfigError(f"{source}: quadrature: give radius or volume, not both")
    st = cfg["state"]
    if st["kind"] == "superposition" and len(st["momenta"]) != len(st["coefficients"]):
        raise ConfigError(f"{source}: state: momenta and coefficients differ in length")
    if cfg["species"]["preset"] == "custom" and not cfg["species"].get("records"):
        raise ConfigError(f"{source}: species: preset 'custom' needs records")


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))


def config_hash(cfg):
    """sha256 of the canonical JSON form of a resolved config.

    The output directory is left out: where results land does not change them.
    """
    trimmed = copy.deepcopy(cfg)
    trimmed.get("output", {}).pop("dir", None)
    blob = json.dumps(trimmed, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()
