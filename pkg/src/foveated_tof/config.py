"""Run configuration: JSON schema, defaults and flag overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from .scene import SensorConfig


class ConfigError(ValueError):
    pass


_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_FRACTION = {"oneOf": [{"type": "number", "exclusiveMinimum": 0, "maximum": 1}, {"type": "string", "pattern": r"^\s*\d+(\s*/\s*\d+|\.\d*)?\s*$"}]}

_BOX = {
    "type": "object",
    "additionalProperties": False,
    "required": ["x", "y", "w", "h", "depth"],
    "properties": {
        "x": {"type": "integer"},
        "y": {"type": "integer"},
        "w": _POS_INT,
        "h": _POS_INT,
        "depth": _NUM,
        "albedo": {"type": "number", "minimum": 0, "maximum": 1},
        "velocity": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
    },
}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "sensor": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "z_max_m": {"type": "number", "exclusiveMinimum": 0},
                "n_bins": {"type": "integer", "minimum": 2},
                "cycles": _POS_INT,
                "phi_sig": {"type": "number", "minimum": 0},
                "phi_bkg": {"type": "number", "minimum": 0},
                "pulse_fwhm_s": {"type": "number", "minimum": 0},
            },
        },
        "scene": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["plane", "slanted", "staircase", "boxes"]},
                "width": _POS_INT,
                "height": _POS_INT,
                "albedo": {"type": "number", "minimum": 0, "maximum": 1},
                "depth": _NUM,
                "near": _NUM,
                "far": _NUM,
                "axis": {"enum": ["x", "y"]},
                "depths": {"type": "array", "items": _NUM, "minItems": 1},
                "albedos": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
                "background": _NUM,
                "background_albedo": {"type": "number", "minimum": 0, "maximum": 1},
                "boxes": {"type": "array", "items": _BOX},
                "frames": _POS_INT,
                "depth_path": {"type": "string"},
                "albedo_path": {"type": "string"},
            },
        },
        "prior": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["perfect", "monocular", "external"]},
                "path": {"type": "string"},
                "scale": _NUM,
                "offset": _NUM,
                "bias_amplitude": {"type": "number", "minimum": 0},
                "noise_sigma": {"type": "number", "minimum": 0},
                "calibration": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "degree": _POS_INT,
                        "samples": _POS_INT,
                        "fit_path": {"type": "string"},
                    },
                },
            },
        },
        "policy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["full", "memory", "depth", "limited", "quantized", "superpixel", "flow"]},
                "fraction": _FRACTION,
                "mode": {"enum": ["memory", "depth"]},
                "nprime": _POS_INT,
                "buckets": _POS_INT,
                "samples_per_bucket": _POS_INT,
                "aggregate": {"enum": ["min", "median"]},
                "segments": _POS_INT,
                "compactness": {"type": "number", "exclusiveMinimum": 0},
                "floor_tau": {"type": "number", "minimum": 0},
                "fallback": {"type": "boolean"},
                "sampler": {"enum": ["poisson", "pileup"]},
            },
        },
        "decode": {"enum": ["argmax", "matched"]},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "sensor": {},
    "scene": {"kind": "staircase", "width": 16, "height": 16, "depths": [2.0, 4.0, 6.0, 8.0]},
    "prior": {"kind": "perfect"},
    "policy": {"kind": "memory", "fraction": "1/16"},
    "decode": "argmax",
    "output": {"dir": "out"},
}


def validate(cfg: Mapping[str, Any]) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None


def load(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def merge(base: Mapping[str, Any], over: Mapping[str, Any]) -> dict:
    """Recursive dict merge; ``over`` wins, nested mappings merge key by key."""
    out = copy.deepcopy(dict(base))
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(user: Mapping[str, Any] | None, overrides: Mapping[str, Any] | None = None) -> dict:
    """Validate the user document, then fill defaults and apply flag overrides."""
    user = dict(user or {})
    validate(user)
    cfg = merge(DEFAULTS, user)
    if "scene" in user:  # a user scene replaces the default scene wholesale
        cfg["scene"] = copy.deepcopy(user["scene"])
    if overrides:
        cfg = merge(cfg, overrides)
    validate(cfg)
    return cfg


def sensor_of(cfg: Mapping[str, Any]) -> SensorConfig:
    d = dict(cfg.get("sensor", {}))
    d["seed"] = int(cfg.get("seed", 0))
    try:
        return SensorConfig.from_json_dict(d)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def canonical(cfg: Mapping[str, Any]) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: Mapping[str, Any]) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()
