"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .mesh import TriangleMesh


def check_condition_array(X) -> np.ndarray:
    """Coerce conditions to a finite float (n,) array.

    Accepts scalars, sequences, or single-column 2D arrays (the sklearn
    feature-matrix convention).
    """
    a = np.asarray(X, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.ndim == 2:
        if a.shape[1] != 1:
            raise ConfigError(
                f"conditions must be a single column, got shape {a.shape}"
            )
        a = a[:, 0]
    if a.ndim != 1:
        raise ConfigError(f"conditions must be 1-dimensional, got shape {a.shape}")
    if a.size == 0:
        raise ConfigError("need at least one condition value")
    if not np.all(np.isfinite(a)):
        raise ConfigError("conditions contain non-finite values")
    return a


def check_mesh(obj, name: str = "mesh") -> TriangleMesh:
    if not isinstance(obj, TriangleMesh):
        raise ConfigError(f"{name} must be a TriangleMesh, got {type(obj).__name__}")
    return obj


def check_target_meshes(y, n_expected: int):
    if y is None:
        raise ConfigError("target meshes are required")
    targets = list(y)
    if len(targets) != n_expected:
        raise ConfigError(
            f"got {len(targets)} target meshes for {n_expected} conditions"
        )
    for i, m in enumerate(targets):
        check_mesh(m, f"target {i}")
    return targets
