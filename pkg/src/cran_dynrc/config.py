"""JSON run configuration: defaults, schema validation, dotted-path
overrides, and construction of an ExperimentPlan."""

import copy
import json

import jsonschema

from . import compute
from .cbd import CbdOptions
from .dynrc import DynRcOptions
from .expharness import ExperimentPlan


class ConfigError(ValueError):
    """Invalid run configuration; carries per-field messages."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


DEFAULT_CONFIG = {
    "seed": 1,
    "log_level": "INFO",
    "network": {
        "grid_rows": 4,
        "grid_cols": 4,
        "isd_km": 1.0,
        "n_antennas": 4,
        "p_dbm": 10.0,
        "noise_psd_dbm_hz": -100.0,
        "bandwidth_hz": 10e6,
        "shadowing_std_db": 8.0,
        "spectral_eff": 1.0,
        "coding_eff": 1.0,
        "scenario": "uniform",
        "cell_load_map": None,
    },
    "compute": {
        "gamma": {"kind": "identity", "params": {}},
        "capacity_centralized_mbps": None,
        "capacity_per_rrh_mbps": None,
        "resource_mode": "none",
    },
    "experiment": {
        "num_drops": 50,
        "power_sweep_dbm": None,
        "v_max_sweep": None,
        "v_max": 7,
        "weight_policy": "random_uniform",
        "rate_units": "normalized",
        "workers": 1,
        "timing": False,
        "monitor_users": [],
        "sca_tol": 1e-4,
        "sca_max": 30,
        "solver_tol": 1e-8,
        "solver_max_iters": 200,
        "solver_backend": None,
        "conv_tol": 1e-4,
        "max_outer": 20,
        "inner_sca_max": 8,
    },
}

SCHEMA = {
    "type": "object",
    "required": ["seed", "network", "experiment"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "log_level": {"enum": ["DEBUG", "INFO", "WARNING", "ERROR"]},
        "network": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grid_rows": {"type": "integer", "minimum": 1},
                "grid_cols": {"type": "integer", "minimum": 1},
                "isd_km": {"type": "number", "exclusiveMinimum": 0},
                "n_antennas": {"type": "integer", "minimum": 1},
                "p_dbm": {"type": "number"},
                "noise_psd_dbm_hz": {"type": "number"},
                "bandwidth_hz": {"type": "number", "exclusiveMinimum": 0},
                "shadowing_std_db": {"type": "number", "minimum": 0},
                "spectral_eff": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "coding_eff": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "scenario": {"enum": ["uniform", "intermixed", "grouped", "custom"]},
                "cell_load_map": {
                    "type": ["array", "null"],
                    "items": {"enum": ["light", "medium", "heavy"]},
                },
            },
        },
        "compute": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma": {
                    "type": "object",
                    "properties": {
                        "kind": {"enum": ["identity", "linear", "piecewise"]},
                        "params": {"type": "object"},
                    },
                },
                "capacity_centralized_mbps": {"type": ["number", "null"], "minimum": 0},
                "capacity_per_rrh_mbps": {"type": ["number", "null"], "minimum": 0},
                "resource_mode": {"enum": ["none", "centralized", "distributed", "both"]},
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "num_drops": {"type": "integer", "minimum": 1},
                "power_sweep_dbm": {"type": ["array", "null"], "items": {"type": "number"}, "minItems": 1},
                "v_max_sweep": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "v_max": {"type": "integer", "minimum": 1},
                "weight_policy": {"enum": ["random_uniform", "proportional_fair", "fixed"]},
                "rate_units": {"enum": ["normalized", "mbps"]},
                "workers": {"type": "integer", "minimum": 1},
                "timing": {"type": "boolean"},
                "monitor_users": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "sca_tol": {"type": "number", "exclusiveMinimum": 0},
                "sca_max": {"type": "integer", "minimum": 1},
                "solver_tol": {"type": "number", "exclusiveMinimum": 0},
                "solver_max_iters": {"type": "integer", "minimum": 1},
                "solver_backend": {"enum": ["clarabel", "cvxopt", None]},
                "conv_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_outer": {"type": "integer", "minimum": 1},
                "inner_sca_max": {"type": "integer", "minimum": 1},
            },
        },
    },
}


def merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(text):
    """One 'dotted.path=value' CLI override; values parse as JSON when they can."""
    if "=" not in text:
        raise ConfigError([f"override {text!r} is not of the form key=value"])
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = {}
    leaf = node
    parts = key.strip().split(".")
    for p in parts[:-1]:
        leaf[p] = {}
        leaf = leaf[p]
    leaf[parts[-1]] = value
    return node


def load_config(path=None, overrides=(), env_seed=None):
    """Merged + validated config dict from file, overrides, and environment."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as f:
            try:
                user = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError([f"config is not valid JSON: {exc}"])
        cfg = merge(cfg, user)
    for text in overrides:
        cfg = merge(cfg, parse_override(text))
    if env_seed is not None:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError([f"CRAN_DYNRC_SEED={env_seed!r} is not an integer"])
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = []
    for err in sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path)):
        where = ".".join(str(p) for p in err.absolute_path) or "(root)"
        errors.append(f"{where}: {err.message}")
    net = cfg.get("network", {})
    if net.get("scenario") == "custom":
        n_cells = net.get("grid_rows", 0) * net.get("grid_cols", 0)
        load_map = net.get("cell_load_map")
        if not load_map:
            errors.append("network.cell_load_map: required for scenario 'custom'")
        elif len(load_map) != n_cells:
            errors.append(
                f"network.cell_load_map: has {len(load_map)} labels for {n_cells} cells"
            )
    comp = cfg.get("compute", {})
    if comp.get("resource_mode") in ("centralized", "both") and comp.get(
        "capacity_centralized_mbps"
    ) is None:
        errors.append("compute.capacity_centralized_mbps: required for centralized mode")
    if comp.get("resource_mode") in ("distributed", "both"):
        if comp.get("capacity_per_rrh_mbps") is None:
            errors.append("compute.capacity_per_rrh_mbps: required for distributed mode")
        c, cr = comp.get("capacity_centralized_mbps"), comp.get("capacity_per_rrh_mbps")
        if c is not None and cr is not None and not cr < c:
            errors.append(
                "compute.capacity_per_rrh_mbps: must be below the centralized capacity"
            )
    if errors:
        raise ConfigError(errors)
    return cfg


def plan_from_config(cfg):
    net, comp, exp = cfg["network"], cfg["compute"], cfg["experiment"]
    gamma = compute.GammaModel(kind=comp["gamma"]["kind"], params=comp["gamma"].get("params", {}))
    cbd_opts = CbdOptions(
        sca_tol=exp["sca_tol"],
        sca_max=exp["sca_max"],
        solver_tol=exp["solver_tol"],
        solver_max_iters=exp["solver_max_iters"],
        backend=exp["solver_backend"],
    )
    dyn = DynRcOptions(
        conv_tol=exp["conv_tol"],
        max_outer=exp["max_outer"],
        inner_sca_max=exp["inner_sca_max"],
        v_max=exp["v_max"],
        cbd=cbd_opts,
        monitor_users=tuple(exp["monitor_users"]),
    )
    return ExperimentPlan(
        grid_rows=net["grid_rows"],
        grid_cols=net["grid_cols"],
        isd_km=net["isd_km"],
        n_antennas=net["n_antennas"],
        p_dbm=net["p_dbm"],
        noise_psd_dbm_hz=net["noise_psd_dbm_hz"],
        bandwidth_hz=net["bandwidth_hz"],
        shadowing_std_db=net["shadowing_std_db"],
        spectral_eff=net["spectral_eff"],
        coding_eff=net["coding_eff"],
        scenario=net["scenario"],
        cell_load_map=net["cell_load_map"],
        num_drops=exp["num_drops"],
        power_sweep_dbm=exp["power_sweep_dbm"],
        v_max_sweep=exp["v_max_sweep"],
        weight_policy=exp["weight_policy"],
        resource_mode=comp["resource_mode"],
        gamma_model=gamma,
        capacity_centralized_mbps=comp["capacity_centralized_mbps"],
        capacity_per_rrh_mbps=comp["capacity_per_rrh_mbps"],
        rate_units=exp["rate_units"],
        seed=cfg["seed"],
        workers=exp["workers"],
        timing=exp["timing"],
        monitor_users=tuple(exp["monitor_users"]),
        dynrc=dyn,
    )
