"""Experiment configuration: presets, file parsing, validation, manifest.

Configs are nested key-value text (YAML). An empty file resolves to the
full default preset; unknown keys are rejected with their dotted path, and
all validation problems are reported in one pass. Power-like quantities
cross this boundary in dBm / dB; everything past it is linear watts.
"""

import copy
import hashlib
import math
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .bench import Scheme, parse_scheme
from .channel import FadingParams, Geometry
from .model import SystemParams
from .pebcd import PebcdOptions


class ConfigError(ValueError):
    pass


def dbm_to_watts(dbm):
    return 10.0 ** ((float(dbm) - 30.0) / 10.0)


def watts_to_dbm(watts):
    if watts <= 0:
        raise ValueError("power must be positive to express in dBm")
    return 10.0 * math.log10(watts) + 30.0


def _pebcd_defaults():
    # every scalar option is configurable; the solver seam is code-only
    out = {}
    for f in fields(PebcdOptions):
        if f.name == "solver":
            continue
        out[f.name] = f.default
    return out


DEFAULTS = {
    "system": {
        "n_r": 32,
        "l": 8,
        "n": 64,
        "b_bits": 2,
        "p_dbm": 10.0,
        "k_t": 0.08,
        "k_r": 0.08,
        "sigma_a2_dbm": -80.0,
        "sigma_b2_dbm": -80.0,
        "mu_min": 1.0,
    },
    "geometry": {
        "bs": [0.0, 80.0, 5.0],
        "ris": [50.0, 50.0, 15.0],
        "user": [0.0, 0.0, 2.0],
    },
    "fading": {
        "beta0_db": -30.0,
        "alpha_direct": 3.5,
        "alpha_user_ris": 2.2,
        "alpha_ris_bs": 2.2,
        "rician_factor": 0.75,
        "rician_interpretation": "fraction",
    },
    "schemes": ["DHRIS", "FHRIS:16", "ActiveRIS", "PassiveRIS", "DHRISNoAS"],
    "p_hris_grid_dbm": [-20.0, -10.0, 0.0, 10.0, 20.0],
    "seeds": {"base": 0, "count": 50},
    "pebcd": _pebcd_defaults(),
    "sim_samples": 100_000,
    "output_dir": "runs",
}

# named partial configs; "paper" is the plain default
PRESETS = {
    "paper": {},
    "desk": {
        "system": {"n_r": 16, "l": 4, "n": 32},
        "schemes": ["DHRIS", "FHRIS:8", "ActiveRIS", "PassiveRIS",
                    "DHRISNoAS"],
        "pebcd": {"qp_max_iter": 30},
        "output_dir": "runs/desk",
    },
    "tiny": {
        "system": {"n_r": 4, "l": 2, "n": 3, "b_bits": 1},
        "schemes": ["DHRIS"],
        "p_hris_grid_dbm": [10.0],
        "seeds": {"base": 0, "count": 10},
        "pebcd": {"qp_max_iter": 30},
        "sim_samples": 20_000,
        "output_dir": "runs/tiny",
    },
}


@dataclass
class RunConfig:
    """Fully resolved experiment description."""

    system: SystemParams
    geometry: Geometry
    fading: FadingParams
    schemes: tuple
    p_hris_grid_dbm: tuple
    seeds: tuple
    pebcd: PebcdOptions
    sim_samples: int
    output_dir: str
    resolved: dict           # the merged key-value tree behind everything

    @property
    def p_hris_grid_watts(self):
        return tuple(dbm_to_watts(x) for x in self.p_hris_grid_dbm)

    def manifest(self):
        """Stable text echo of the resolved config, seeds expanded."""
        tree = copy.deepcopy(self.resolved)
        tree["seeds"] = list(self.seeds)
        return yaml.safe_dump(tree, sort_keys=True, default_flow_style=False)

    def manifest_hash(self):
        return hashlib.sha256(self.manifest().encode()).hexdigest()


def _deep_merge(base, override, path, problems):
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            problems.append(f"unknown key: {here}")
            continue
        if isinstance(base[key], dict) and key != "seeds":
            if not isinstance(value, dict):
                problems.append(f"{here}: expected a mapping")
                continue
            _deep_merge(base[key], value, here, problems)
        else:
            base[key] = value


def _parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, _, raw = text.partition("=")
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as err:
        raise ConfigError(f"override {text!r}: unparseable value ({err})")
    tree = value
    for part in reversed(key.split(".")):
        tree = {part: tree}
    return tree


def _expand_seeds(spec, problems):
    if isinstance(spec, dict):
        extra = set(spec) - {"base", "count"}
        if extra:
            problems.append(
                "seeds: unknown keys " + ", ".join(sorted(extra))
            )
            return ()
        base, count = spec.get("base", 0), spec.get("count", 0)
        if not (isinstance(base, int) and isinstance(count, int)):
            problems.append("seeds: base and count must be integers")
            return ()
        if count < 1:
            problems.append("seeds: count must be >= 1")
            return ()
        return tuple(range(base, base + count))
    if isinstance(spec, (list, tuple)):
        if not spec:
            problems.append("seeds: list must be non-empty")
            return ()
        if not all(isinstance(s, int) for s in spec):
            problems.append("seeds: entries must be integers")
            return ()
        return tuple(spec)
    problems.append("seeds: expected a list or {base, count}")
    return ()


def _position(tree, name, problems):
    value = tree[name]
    ok = (isinstance(value, (list, tuple)) and len(value) == 3
          and all(isinstance(v, (int, float)) for v in value))
    if not ok:
        problems.append(f"geometry.{name}: expected [x, y, z] in meters")
        return (0.0, 0.0, 0.0)
    return tuple(float(v) for v in value)


def resolve(tree):
    """Validate a merged key-value tree and build the RunConfig.

    Problems are collected exhaustively and raised together.
    """
    problems = []
    merged = copy.deepcopy(DEFAULTS)
    if tree:
        if not isinstance(tree, dict):
            raise ConfigError(
                f"config root must be a mapping, got {type(tree).__name__}"
            )
        _deep_merge(merged, tree, "", problems)

    seeds = _expand_seeds(merged["seeds"], problems)

    grid = merged["p_hris_grid_dbm"]
    if not isinstance(grid, (list, tuple)) or not grid:
        problems.append("p_hris_grid_dbm: expected a non-empty list")
        grid = [10.0]
    elif not all(isinstance(v, (int, float)) for v in grid):
        problems.append("p_hris_grid_dbm: entries must be numbers")
        grid = [10.0]

    tokens = merged["schemes"]
    schemes = []
    if not isinstance(tokens, (list, tuple)) or not tokens:
        problems.append("schemes: expected a non-empty list")
    else:
        for token in tokens:
            try:
                schemes.append(parse_scheme(str(token)))
            except ValueError as err:
                problems.append(f"schemes: {err}")

    sy = merged["system"]
    system = None
    try:
        system = SystemParams(
            n_r=sy["n_r"], l=sy["l"], n=sy["n"], b_bits=sy["b_bits"],
            p=dbm_to_watts(sy["p_dbm"]),
            k_t=sy["k_t"], k_r=sy["k_r"],
            sigma_a2=dbm_to_watts(sy["sigma_a2_dbm"]),
            sigma_b2=dbm_to_watts(sy["sigma_b2_dbm"]),
            p_hris=dbm_to_watts(grid[0]),
            mu_min=sy["mu_min"],
        )
    except (TypeError, ValueError) as err:
        problems.append(f"system: {err}")

    ge = merged["geometry"]
    geometry = Geometry(
        bs=_position(ge, "bs", problems),
        ris=_position(ge, "ris", problems),
        user=_position(ge, "user", problems),
    )

    fading = None
    try:
        fading = FadingParams(**merged["fading"])
        fading.los_fraction()
    except (TypeError, ValueError) as err:
        problems.append(f"fading: {err}")

    pebcd = None
    try:
        pebcd = PebcdOptions(**merged["pebcd"])
    except TypeError as err:
        problems.append(f"pebcd: {err}")

    sim = merged["sim_samples"]
    if not isinstance(sim, int) or sim < 0:
        problems.append("sim_samples: expected a nonnegative integer")
        sim = 0

    # FHRIS patterns must fit the surface; checkable only with both in hand
    if system is not None:
        for scheme in schemes:
            if scheme.kind == "FHRIS" and scheme.n_active_fixed > system.n:
                problems.append(
                    f"schemes: {scheme.label()} exceeds n={system.n} elements"
                )

    if problems:
        raise ConfigError(
            "invalid config:\n  " + "\n  ".join(problems)
        )
    return RunConfig(
        system=system,
        geometry=geometry,
        fading=fading,
        schemes=tuple(schemes),
        p_hris_grid_dbm=tuple(float(v) for v in grid),
        seeds=seeds,
        pebcd=pebcd,
        sim_samples=sim,
        output_dir=str(merged["output_dir"]),
        resolved=merged,
    )


def parse_config(source=None, overrides=()):
    """Load a preset name or config file, apply overrides, validate.

    source None (or an empty file) resolves to the default preset.
    Overrides are dotted assignments like system.n_r=16; values are parsed
    as the same key-value syntax the file uses.
    """
    if source is None:
        tree = {}
    elif str(source) in PRESETS:
        tree = copy.deepcopy(PRESETS[str(source)])
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(
                f"config {source!r} is neither a preset "
                f"({', '.join(sorted(PRESETS))}) nor a file"
            )
        try:
            tree = yaml.safe_load(path.read_text())
        except yaml.YAMLError as err:
            raise ConfigError(f"parse error in {path}: {err}")
        if tree is None:
            tree = {}
    for text in overrides:
        patch = _parse_override(text)
        if not isinstance(tree, dict):
            raise ConfigError("config root must be a mapping")
        _merge_override(tree, patch)
    return resolve(tree)


def _merge_override(tree, patch):
    for key, value in patch.items():
        if isinstance(value, dict) and isinstance(tree.get(key), dict):
            _merge_override(tree[key], value)
        else:
            tree[key] = value
