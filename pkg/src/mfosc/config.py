"""Run configuration: TOML parsing, defaults, validation, manifests.

Every command materializes the fully resolved configuration (defaults
included) into a manifest next to its outputs, together with a content hash,
so runs can be reproduced bit-for-bit from the manifest alone.
"""

from __future__ import annotations

import hashlib
import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .model import DiffusionModel, default_model

__all__ = ["RunConfig", "load_config", "write_manifest", "PACKAGE_VERSION"]

PACKAGE_VERSION = "0.1.0"

_MODEL_DEFAULTS = {
    "dimension": 2,
    "delta": 0.05,
    "k": [1.0, 1.0],
    "sigma": [float(np.sqrt(0.2)), float(np.sqrt(0.2))],
    "field": {
        "kind": "fitzhugh-nagumo-cutoff",
        "cutoff_radius": 10.0,
        "params": {"a": 1.0 / 3.0, "b": 1.0, "c": 10.0},
    },
}

_NUMERICS_DEFAULTS = {
    "dt": 1e-3,
    "galerkin_dt": 1e-2,
    "l_max": 30,
    "quad_order": 20,
    "theta": 0.5,
    "r": 4.0,
    "cycle_tol": 1e-10,
    "periodic_tol": 1e-6,
    "n_cycle_samples": 256,
    "n_snapshots": 96,
}

_EXPERIMENT_DEFAULTS = {
    "n": [1000],
    "replicas": 100,
    "t_final": 1.0,
    "horizon": 10.0,
    "seed": 12345,
    "observation_stride": 0.0,   # wall time between observations; 0 -> period/10
    "proxy_factor": 10,
    "coupling_n": [100, 400],
}

_OUTPUT_DEFAULTS = {"directory": "out"}

_KNOWN = {
    "model": _MODEL_DEFAULTS,
    "numerics": _NUMERICS_DEFAULTS,
    "experiment": _EXPERIMENT_DEFAULTS,
    "output": _OUTPUT_DEFAULTS,
}


def _merge(defaults: dict, given: dict, path: str) -> dict:
    out = {}
    for key, dval in defaults.items():
        if key in given:
            gval = given[key]
            if isinstance(dval, dict):
                if not isinstance(gval, dict):
                    raise ConfigurationError("expected a table", key_path=f"{path}.{key}")
                out[key] = _merge(dval, gval, f"{path}.{key}")
            else:
                out[key] = gval
        else:
            out[key] = dval
    for key in given:
        if key not in defaults:
            # field params are kind-specific and pass through
            if path.endswith("field") and key == "params":
                continue
            raise ConfigurationError("unknown configuration key", key_path=f"{path}.{key}")
    return out


@dataclass
class RunConfig:
    model: dict
    numerics: dict
    experiment: dict
    output: dict
    threads: int = 1

    def build_model(self) -> DiffusionModel:
        return DiffusionModel.from_dict(self.model)

    def resolved(self) -> dict:
        return {
            "model": self.model,
            "numerics": self.numerics,
            "experiment": self.experiment,
            "output": self.output,
            "threads": self.threads,
            "version": PACKAGE_VERSION,
        }

    def content_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @staticmethod
    def from_mapping(raw: dict, threads: int = 1) -> "RunConfig":
        for section in raw:
            if section not in _KNOWN:
                raise ConfigurationError("unknown configuration section", key_path=section)
        sections = {}
        for name, defaults in _KNOWN.items():
            sections[name] = _merge(defaults, raw.get(name, {}), name)
        # field params pass through untouched
        if "model" in raw and "field" in raw["model"]:
            params = raw["model"]["field"].get("params")
            if params is not None:
                sections["model"]["field"]["params"] = dict(params)
        cfg = RunConfig(model=sections["model"], numerics=sections["numerics"],
                        experiment=sections["experiment"], output=sections["output"],
                        threads=threads)
        _validate(cfg)
        return cfg

    @staticmethod
    def defaults(threads: int = 1) -> "RunConfig":
        return RunConfig.from_mapping({}, threads=threads)


def _validate(cfg: RunConfig) -> None:
    num = cfg.numerics
    if num["dt"] <= 0:
        raise ConfigurationError("dt must be positive", key_path="numerics.dt")
    if num["l_max"] < 2:
        raise ConfigurationError("l_max must be >= 2", key_path="numerics.l_max")
    if num["quad_order"] < 2:
        raise ConfigurationError("quad_order must be >= 2", key_path="numerics.quad_order")
    if not (0 < num["theta"]):
        raise ConfigurationError("theta must be positive", key_path="numerics.theta")
    exp = cfg.experiment
    ns = exp["n"]
    if not isinstance(ns, (list, tuple)) or not ns or any(int(n) < 1 for n in ns):
        raise ConfigurationError("n must be a non-empty list of positive counts",
                                 key_path="experiment.n")
    if int(exp["replicas"]) < 0:
        raise ConfigurationError("replicas must be >= 0", key_path="experiment.replicas")
    cfg.build_model()  # raises ConfigurationError with key path on bad model input


def load_config(path, threads: int = 1) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config is not valid TOML: {exc}") from exc
    return RunConfig.from_mapping(raw, threads=threads)


def write_manifest(outdir, cfg: RunConfig, files: list[str], extra: dict | None = None) -> Path:
    """Write manifest.json listing every produced file with the resolved config."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": cfg.resolved(),
        "config_hash": cfg.content_hash(),
        "files": sorted(files),
        "threads": cfg.threads,
    }
    if extra:
        manifest["extra"] = extra
    path = outdir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def default_model_from_config() -> DiffusionModel:
    return default_model()
