"""Versioned JSON artifacts for the cycle/isochron and the periodic solution.

Artifacts embed the model description, so a loaded artifact rebuilds its
smoothed field and solver without recomputation.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigurationError
from .galerkin import PeriodicSolutionArtifact, SpectralSolver
from .model import DiffusionModel
from .reduced import IsochronMap, LimitCycle, SmoothedField

__all__ = [
    "save_cycle_artifact",
    "load_cycle_artifact",
    "save_periodic_artifact",
    "load_periodic_artifact",
]

CYCLE_FORMAT = "mfosc-cycle/1"
PERIODIC_FORMAT = "mfosc-periodic/1"


def save_cycle_artifact(path, cycle: LimitCycle, isochron: IsochronMap,
                        model: DiffusionModel, quad_order: int = 20) -> None:
    payload = {
        "format": CYCLE_FORMAT,
        "model": model.to_dict(),
        "quad_order": quad_order,
        "cycle": cycle.to_dict(),
        "isochron": isochron.to_dict(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_cycle_artifact(path) -> tuple[DiffusionModel, SmoothedField, LimitCycle, IsochronMap]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CYCLE_FORMAT:
        raise ConfigurationError(f"not a cycle artifact: {path}")
    model = DiffusionModel.from_dict(payload["model"])
    field = SmoothedField(model, order=int(payload.get("quad_order", 20)))
    cycle = LimitCycle.from_dict(payload["cycle"])
    iso = IsochronMap.from_dict(payload["isochron"], cycle, field)
    return model, field, cycle, iso


def save_periodic_artifact(path, artifact: PeriodicSolutionArtifact,
                           model: DiffusionModel) -> None:
    payload = {
        "format": PERIODIC_FORMAT,
        "model": model.to_dict(),
        "artifact": artifact.to_dict(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_periodic_artifact(path) -> tuple[DiffusionModel, PeriodicSolutionArtifact, SpectralSolver]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != PERIODIC_FORMAT:
        raise ConfigurationError(f"not a periodic-solution artifact: {path}")
    model = DiffusionModel.from_dict(payload["model"])
    artifact = PeriodicSolutionArtifact.from_dict(payload["artifact"])
    solver = SpectralSolver(model, L=artifact.L, diffusion_scale=artifact.diffusion_scale)
    return model, artifact, solver
