"""Run configuration: JSON schema, defaults, seed resolution and hashing."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .errors import GridTreeError

SEED_ENV = "GRIDTREE_SEED"
MODES = ("plain", "whitened", "magnitude", "three_phase")

_range = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_complex = {"oneOf": [{"type": "number"}, {**_range, "minItems": 1}]}
_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "mode": {"enum": list(MODES)},
        "out": {"type": "string"},
        "topology": {
            "oneOf": [
                {"type": "string"},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "n_nodes": {"type": "integer", "minimum": 3},
                        "hidden_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                        "r_range": _range,
                        "x_range": _range,
                        "xr_range": {"oneOf": [_range, {"type": "null"}]},
                        "feeder_head": {"type": "boolean"},
                    },
                },
            ]
        },
        "gen": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 1},
                "sigma_diag": {"type": "number", "minimum": 0},
                "mode": {"enum": ["gaussian", "load_profile", "three_phase"]},
                "v0": _complex,
                "pf_range": _range,
                "regime_block": {"type": "integer", "minimum": 1},
                "regimes": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "weight": {"type": "number", "exclusiveMinimum": 0},
                            "pf_range": _range,
                            "load_scale": {"type": "number", "exclusiveMinimum": 0},
                            "v0": _complex,
                        },
                    },
                },
                "corr": {
                    "oneOf": [
                        {"type": "null"},
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["re"],
                            "properties": {"re": _matrix, "im": _matrix},
                        },
                    ]
                },
                "correlation": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["loadings"],
                    "properties": {
                        "loadings": _range,
                        "phase_spread": {"type": "number", "minimum": 0},
                    },
                },
            },
        },
        "selection": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "lam": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"type": "null"}]},
                "k": {"type": "integer", "minimum": 1},
                "seed": {"oneOf": [{"type": "integer", "minimum": 0}, {"type": "null"}]},
                "query": {"type": "integer"},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "rg": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps1": {"oneOf": [{"type": "number", "minimum": 0}, {"type": "null"}]},
                "eps2": {"oneOf": [{"type": "number", "minimum": 0}, {"type": "null"}]},
                "scalarization": {"enum": ["modulus", "real_part"]},
                "average": {"type": "boolean"},
            },
        },
        "estimator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "symmetrize": {"type": "boolean"},
                "magnitude_whitened": {"type": "boolean"},
                "three_phase_base": {"enum": ["plain", "whitened"]},
            },
        },
        "four_wire": {"oneOf": [{"type": "string"}, {"type": "object"}, {"type": "null"}]},
        "phase": {"enum": ["a", "b", "c"]},
        "record_runtime": {"type": "boolean"},
        "bench": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sizes": {"type": "array", "items": {"type": "integer", "minimum": 3}},
                "hidden_fractions": {"type": "array", "items": {"type": "number"}},
                "modes": {"type": "array", "items": {"enum": list(MODES)}},
                "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "mode": "plain",
    "out": "out",
    "topology": {
        "n_nodes": 8,
        "hidden_fraction": 0.5,
        "r_range": [0.1, 1.0],
        "x_range": [0.1, 1.0],
        "xr_range": None,
        "feeder_head": True,
    },
    "gen": {"N": 8760, "sigma_diag": 0.025, "mode": "gaussian"},
    "selection": {"enabled": False, "lam": None, "k": 3, "seed": None, "query": -1, "max_iter": 100},
    "rg": {"eps1": None, "eps2": None, "scalarization": "modulus", "average": False},
    "estimator": {"symmetrize": True, "magnitude_whitened": True, "three_phase_base": "plain"},
    "four_wire": None,
    "phase": "a",
    "record_runtime": False,
    "bench": {"sizes": [], "hidden_fractions": [0.5], "modes": ["plain"], "seeds": []},
}


class ConfigError(GridTreeError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    data: dict
    base_dir: Path = Path(".")

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def mode(self) -> str:
        return self.data["mode"]

    @property
    def out(self) -> Path:
        return Path(self.data["out"])

    def resolve_path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def digest(self) -> str:
        """SHA-256 of the canonical config, excluding the output directory."""
        doc = {k: v for k, v in self.data.items() if k != "out"}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def provenance(self) -> dict:
        return {"config_hash": self.digest(), "seed": self.seed}

    def comments(self) -> list[str]:
        return [f"config_hash={self.digest()} seed={self.seed}"]

    def with_overrides(self, **kw) -> "RunConfig":
        return RunConfig(_merge(self.data, kw), self.base_dir)


def validate(doc: dict) -> None:
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        raise ConfigError(f"config error at {e.json_path}: {e.message}")


def check_consistency(data: dict) -> None:
    mode, gen_mode = data["mode"], data["gen"]["mode"]
    if mode == "three_phase" and not data.get("four_wire"):
        raise ConfigError("config error at $.four_wire: three_phase mode requires a four-wire spec")
    if (mode == "three_phase") != (gen_mode == "three_phase"):
        raise ConfigError("config error at $.gen.mode: three_phase mode and three_phase data go together")
    if mode == "magnitude" and gen_mode != "load_profile":
        raise ConfigError("config error at $.gen.mode: magnitude mode needs load_profile data")
    if data["selection"]["enabled"] and gen_mode != "load_profile":
        raise ConfigError("config error at $.selection.enabled: selection needs load_profile data")


def load_config(path=None, seed: int | None = None, out=None, mode=None, env=None) -> RunConfig:
    """Read, validate and resolve a run configuration.

    Seed precedence: ``seed`` argument, then ``$GRIDTREE_SEED``, then the file.
    """
    doc, base = {}, Path(".")
    if path is not None:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config error at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        base = path.parent
    validate(doc)
    data = _merge(DEFAULTS, doc)
    env = os.environ if env is None else env
    if seed is not None:
        data["seed"] = int(seed)
    elif env.get(SEED_ENV):
        try:
            data["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    if out is not None:
        data["out"] = str(out)
    if mode is not None:
        data["mode"] = mode
    validate(data)
    check_consistency(data)
    return RunConfig(data, base)
