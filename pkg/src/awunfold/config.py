"""Run configuration files: loading, validation, defaults and object building.

A configuration is a JSON document with the sections ``plant``,
``controller`` (gains to analyze or simulate), ``controller_init`` (starting
gains for a design run), ``shape_ref``, ``design``, ``certify`` and
``simulate``. :func:`resolve` fills in every default so that the resolved
document alone determines a run.
"""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .certify import DEFAULT_EPS, ShapeRefSet, SolverOptions
from .design import FIRST_THIRD_QUADRANTS, DesignConfig
from .model import DEFAULT_ZETA, ControllerGains, PlantModel
from .sim import DEFAULT_STEP


class ConfigError(ValueError):
    """Malformed configuration; ``path`` is the JSON path of the culprit."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def load_schema(name: str) -> dict:
    text = resources.files("awunfold").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(doc: dict, schema: str) -> None:
    """Validate ``doc`` against a shipped schema, raising :class:`ConfigError`."""
    validator = jsonschema.Draft202012Validator(load_schema(schema))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.json_path, err.message)


def load_config(path) -> dict:
    """Read and validate a config file; a run manifest is accepted too."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError("$", f"invalid JSON: {err}") from err
    if isinstance(doc, dict) and "resolved_config" in doc:
        doc = doc["resolved_config"]
    if not isinstance(doc, dict):
        raise ConfigError("$", "configuration must be a JSON object")
    validate(doc, "config")
    return doc


DESIGN_DEFAULTS = {
    "T": 20.0,
    "N": 20,
    "J": 10,
    "beta": 10.0,
    "zeta": DEFAULT_ZETA,
    "lr": 0.01,
    "epochs": 50,
    "seed": None,
    "step": DEFAULT_STEP,
    "quadrant_mask": None,
    "sample_controller_states": False,
}

CERTIFY_DEFAULTS = {
    "eps": DEFAULT_EPS,
    "abstol": SolverOptions.abstol,
    "reltol": SolverOptions.reltol,
    "feastol": SolverOptions.feastol,
    "maxiters": SolverOptions.maxiters,
}

SIMULATE_DEFAULTS = {"x0": None, "horizon": 20.0, "step": DEFAULT_STEP, "mode": "exact"}


def _resolve_mask(mask):
    if mask is None or mask == "none":
        return None
    if mask == "first-third":
        return [list(p) for p in FIRST_THIRD_QUADRANTS]
    return [list(p) for p in mask]


def resolve(doc: dict) -> dict:
    """Return a copy of ``doc`` with every default materialized."""
    out = copy.deepcopy(doc)
    for key in ("controller", "controller_init"):
        if key in out and "E_c" not in out[key]:
            try:
                nc, m = len(out[key]["A_c"]), len(out[key]["D_c"])
            except TypeError as err:
                raise ConfigError(f"$.{key}", str(err)) from err
            out[key]["E_c"] = [[0.0] * m for _ in range(nc)]
    for section, defaults in (("design", DESIGN_DEFAULTS), ("certify", CERTIFY_DEFAULTS),
                              ("simulate", SIMULATE_DEFAULTS)):
        merged = dict(defaults)
        merged.update(out.get(section, {}))
        out[section] = merged
    out["design"]["quadrant_mask"] = _resolve_mask(out["design"]["quadrant_mask"])
    return out


def dump_config(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def build_plant(doc: dict) -> PlantModel:
    if "plant" not in doc:
        raise ConfigError("$.plant", "section is required")
    try:
        return PlantModel.from_dict(doc["plant"])
    except (ValueError, KeyError) as err:
        raise ConfigError("$.plant", str(err)) from err


def build_gains(doc: dict, key: str, plant: PlantModel | None = None) -> ControllerGains:
    if key not in doc:
        raise ConfigError(f"$.{key}", "section is required")
    section = doc[key]
    try:
        gains = ControllerGains.from_dict(section)
    except ValueError as err:
        culprit = str(err).split()[0]
        suffix = f".{culprit}" if culprit in section else ""
        raise ConfigError(f"$.{key}{suffix}", str(err)) from err
    if plant is not None:
        if gains.m != plant.m:
            raise ConfigError(f"$.{key}.D_c", f"has {gains.m} rows, plant has {plant.m} inputs")
        if gains.l != plant.l:
            raise ConfigError(f"$.{key}.D_c", f"has {gains.l} columns, plant has {plant.l} outputs")
    return gains


def build_reference(doc: dict, dim: int) -> ShapeRefSet:
    if "shape_ref" not in doc:
        raise ConfigError("$.shape_ref", "section is required")
    try:
        return ShapeRefSet.from_partial(doc["shape_ref"]["vertices"], dim)
    except ValueError as err:
        raise ConfigError("$.shape_ref.vertices", str(err)) from err


def build_design(doc: dict, seed: int | None = None) -> DesignConfig:
    d = dict(doc["design"])
    if seed is not None:
        d["seed"] = seed
    if d["seed"] is None:
        raise ConfigError("$.design.seed", "seed must be resolved before building the design")
    mask = _resolve_mask(d.pop("quadrant_mask"))
    try:
        return DesignConfig(quadrant_mask=None if mask is None else tuple(map(tuple, mask)),
                            eps=doc["certify"]["eps"], **d)
    except ValueError as err:
        raise ConfigError("$.design", str(err)) from err


def build_solver_options(doc: dict) -> SolverOptions:
    c = doc["certify"]
    return SolverOptions(c["abstol"], c["reltol"], c["feastol"], c["maxiters"])


def parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.replace(" ", "").split(",") if v], dtype=float)
    except ValueError as err:
        raise ConfigError("--x0", f"cannot parse {text!r} as a comma-separated vector") from err
