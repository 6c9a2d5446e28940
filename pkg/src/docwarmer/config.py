"""Run configuration: YAML file, JSON-schema validation, defaults and hashing.

Unknown keys are rejected at every level. ``${VAR}`` is expanded only in
credential fields of the ``backend`` section; those fields never enter the
config hash.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
import re
from dataclasses import fields

import jsonschema
import yaml

from .inference import LoopConfig
from .warmer.model import WarmerConfig
from .warmer.tuning import TuningConfig

CREDENTIAL_KEYS = ("api_key",)
_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _props_from_dataclass(cls, skip=()) -> dict:
    props = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        t = f.type if isinstance(f.type, str) else f.type.__name__
        if "None" in t:
            props[f.name] = {"type": ["string", "null"]}
        elif t.startswith("bool"):
            props[f.name] = {"type": "boolean"}
        elif t.startswith("int"):
            props[f.name] = {"type": "integer"}
        elif t.startswith("float"):
            props[f.name] = {"type": "number"}
        else:
            props[f.name] = {"type": "string"}
    return props


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


SCHEMA: dict = _obj({
    "seed": {"type": "integer"},
    "output_dir": {"type": "string"},
    "dataset": _obj({
        "name": {"type": "string"},
        "ocr_dir": {"type": ["string", "null"]},
        "pdf_dir": {"type": ["string", "null"]},
        "golds": {"type": ["string", "null"]},
    }),
    "grid": _obj({"rows": {"type": "integer", "minimum": 1}, "cols": {"type": "integer", "minimum": 1}}),
    "generation": _obj({
        "entities_per_doc": {"type": "integer", "minimum": 1},
        "doc_type": {"type": "string"},
        "verify_with_image": {"type": "boolean"},
        "workers": {"type": "integer", "minimum": 1},
    }),
    "backend": _obj({
        "id": {"enum": ["mock", "echo", "simulated", "openai", "gemini"]},
        "script": {"type": ["string", "null"]},
        "default": {"type": ["string", "null"]},
        "vanilla_reply": {"type": "string"},
        "model": {"type": "string"},
        "base_url": {"type": ["string", "null"]},
        "api_key": {"type": ["string", "null"]},
        "api_key_env": {"type": ["string", "null"]},
        "p_plain": {"type": "number", "minimum": 0, "maximum": 1},
        "p_hinted": {"type": "number", "minimum": 0, "maximum": 1},
        "retries": {"type": "integer", "minimum": 1},
        "backoff_base": {"type": "number", "minimum": 0},
        "max_in_flight": {"type": "integer", "minimum": 1},
        "rate_limit_per_s": {"type": ["number", "null"]},
    }),
    "warmer": _obj(_props_from_dataclass(WarmerConfig, skip=("grid_rows", "grid_cols", "seed"))),
    "tuning": _obj(_props_from_dataclass(TuningConfig, skip=("seed",))),
    "loop": _obj(_props_from_dataclass(LoopConfig)),
})

DEFAULTS: dict = {
    "seed": 0,
    "output_dir": "runs",
    "dataset": {"name": "dataset", "ocr_dir": None, "pdf_dir": None, "golds": None},
    "grid": {"rows": 3, "cols": 3},
    "generation": {"entities_per_doc": 10, "doc_type": "form", "verify_with_image": False, "workers": 1},
    "backend": {"id": "mock", "retries": 3, "backoff_base": 1.0, "max_in_flight": 8, "rate_limit_per_s": None},
    "warmer": {},
    "tuning": {},
    "loop": {},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _expand_credentials(cfg: dict) -> None:
    backend = cfg.get("backend", {})
    for key in CREDENTIAL_KEYS:
        val = backend.get(key)
        if isinstance(val, str):
            def sub(m):
                if m.group(1) not in os.environ:
                    raise ConfigError(f"environment variable {m.group(1)} is not set")
                return os.environ[m.group(1)]
            backend[key] = _ENV_RE.sub(sub, val)


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


def load_config(path: str | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the YAML file, then ``overrides``; validated and credential-expanded."""
    raw: dict = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    validate(raw)
    cfg = _merge(DEFAULTS, raw)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate(cfg)
    _expand_credentials(cfg)
    # surface dataclass-level validation errors before any stage runs
    warmer_config(cfg), tuning_config(cfg), loop_config(cfg)
    return cfg


def public_view(cfg: dict) -> dict:
    out = copy.deepcopy(cfg)
    for key in CREDENTIAL_KEYS:
        out.get("backend", {}).pop(key, None)
    return out


def config_hash(cfg: dict) -> str:
    """Hash of everything that affects results; the output location does not."""
    view = public_view(cfg)
    view.pop("output_dir", None)
    blob = json.dumps(view, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def warmer_config(cfg: dict) -> WarmerConfig:
    try:
        return WarmerConfig(**cfg["warmer"], grid_rows=cfg["grid"]["rows"], grid_cols=cfg["grid"]["cols"], seed=cfg["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"warmer: {exc}") from None


def tuning_config(cfg: dict) -> TuningConfig:
    try:
        return TuningConfig(**cfg["tuning"], seed=cfg["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"tuning: {exc}") from None


def loop_config(cfg: dict) -> LoopConfig:
    try:
        return LoopConfig(**cfg["loop"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"loop: {exc}") from None


def dump_yaml(cfg: dict) -> str:
    return yaml.safe_dump(public_view(cfg), sort_keys=True)
