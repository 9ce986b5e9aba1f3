"""Shared fixtures: expensive artifacts are built once and cached on disk.

The cache lives under tests/_artifact_cache keyed by model fingerprint and
build parameters; delete the directory to force a rebuild.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from mfosc.artifacts import (
    load_cycle_artifact,
    load_periodic_artifact,
    save_cycle_artifact,
    save_periodic_artifact,
)
from mfosc.galerkin import find_periodic_solution, SpectralSolver
from mfosc.hermite import HermiteBasis
from mfosc.model import default_model
from mfosc.reduced import SmoothedField, build_isochron, find_limit_cycle

CACHE = Path(__file__).parent / "_artifact_cache"


def _cycle_path(model) -> Path:
    return CACHE / f"cycle_{model.fingerprint()}.json"


@pytest.fixture(scope="session")
def cycle_bundle():
    """(model, field, cycle, isochron) for the default model.

    The reduced dynamics does not involve delta, so one bundle serves every
    timescale separation.
    """
    model = default_model(delta=0.05)
    path = _cycle_path(model)
    if path.exists():
        return load_cycle_artifact(path)
    field = SmoothedField(model, order=20)
    cycle = find_limit_cycle(field, guess=np.array([0.1, 0.0]), n_samples=256)
    iso = build_isochron(field, cycle, hess_samples=128)
    CACHE.mkdir(exist_ok=True)
    save_cycle_artifact(path, cycle, iso, model, quad_order=20)
    return model, field, cycle, iso


@pytest.fixture(scope="session")
def periodic_bundle(cycle_bundle):
    """(model, artifact, solver) at delta=0.05, L=30 (the workhorse scale)."""
    model, field, cycle, iso = cycle_bundle
    path = CACHE / f"periodic_{model.fingerprint()}_L30.json"
    if path.exists():
        return load_periodic_artifact(path)
    basis = HermiteBasis.for_model(model, theta=0.5, r=4.0, L=30)
    artifact, solver = find_periodic_solution(model, cycle, L=30, dt=1e-2,
                                              basis=basis, tol=1e-6)
    CACHE.mkdir(exist_ok=True)
    save_periodic_artifact(path, artifact, model)
    return model, artifact, solver


@pytest.fixture(scope="session")
def default_basis():
    model = default_model(delta=0.05)
    return HermiteBasis.for_model(model, theta=0.5, r=4.0, L=30)
