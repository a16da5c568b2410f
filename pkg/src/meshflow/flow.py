"""Time-varying velocity assembly and forward-Euler flow integration.

At each step the attention map is evaluated once at the step's start time
and shared across all vertices; the velocity at a vertex is the
attention-weighted sum of all pyramid fields sampled there. Vertices are
never re-normalized or clipped between steps: the clamped grids keep the
field defined for any excursion, and clipping would break the tape.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .attention import AttentionNet, Conditioning
from .errors import ConfigError, NumericError
from .mesh import TriangleMesh
from .velocity import VelocityPyramid, _as_points, _trilinear


@dataclass(frozen=True)
class FlowConfig:
    """Integration settings: step count K over horizon T with h = T / K."""

    steps: int = 50
    horizon: float = 1.0
    mode: str | None = None  # None: use the attention net's own mode

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("step count must be at least 1")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")

    @property
    def step_size(self) -> float:
        return self.horizon / self.steps


@dataclass
class TrajectoryLog:
    """Per-step record of an integration: K+1 snapshots, K attention maps."""

    times: list = field(default_factory=list)
    vertex_snapshots: list = field(default_factory=list)
    attention_maps: list = field(default_factory=list)


def weighted_velocity(pyramid: VelocityPyramid, p: torch.Tensor, x) -> torch.Tensor:
    """Velocity sum_{r,m} p[r, m] * v^{r,m}(x), mixed at the grid nodes.

    Trilinear sampling is linear in the node values, so each level's M
    fields are first combined into a single grid (cost proportional to the
    node count, not the query count) and every level is sampled once.
    """
    pts, single = _as_points(x, pyramid.dtype)
    out = None
    for r, t in enumerate(pyramid.level_values):
        mixed = torch.tensordot(t, p[r], dims=([3], [0]))
        term = _trilinear(mixed.reshape(-1, 3), t.shape[:3], pts)
        out = term if out is None else out + term
    return out[0] if single else out


def ctvf_eval(
    pyramid: VelocityPyramid, net: AttentionNet, x, c: Conditioning,
    mode: str | None = None,
) -> torch.Tensor:
    """The conditional time-varying velocity field at point(s) x."""
    p = net(c.t, c.a, mode=mode)
    return weighted_velocity(pyramid, p, x)


def integrate(
    mesh: TriangleMesh,
    pyramid: VelocityPyramid,
    net: AttentionNet,
    a: float,
    cfg: FlowConfig = FlowConfig(),
    record_trajectory: bool = False,
    k_offset: int = 0,
):
    """Deform a mesh by K forward-Euler steps of the flow ODE.

    The attention map is recomputed once per step at t = (k_offset + k) * h;
    ``k_offset`` shifts the evaluation times so a run split into segments
    reproduces the unsplit run bit for bit. Connectivity is untouched.

    Returns the deformed mesh, or ``(mesh, TrajectoryLog)`` when
    ``record_trajectory`` is set.
    """
    verts = mesh.vertices
    if isinstance(verts, np.ndarray):
        verts = torch.as_tensor(verts.copy(), dtype=pyramid.dtype)
    if not torch.isfinite(verts).all():
        raise NumericError("input mesh has non-finite vertices")
    with torch.no_grad():
        if verts.numel() and (verts.min() < -1.0 or verts.max() > 1.0):
            warnings.warn("mesh vertices leave the [-1, 1]^3 grid domain",
                          stacklevel=2)

    h = cfg.step_size
    log = TrajectoryLog() if record_trajectory else None
    if log is not None:
        log.times.append(k_offset * h)
        log.vertex_snapshots.append(verts.detach().cpu().numpy().copy())

    for k in range(cfg.steps):
        t = (k_offset + k) * h
        p = net(t, a, mode=cfg.mode)
        v = weighted_velocity(pyramid, p, verts)
        verts = verts + h * v
        if not torch.isfinite(verts).all():
            bad = int(torch.nonzero(~torch.isfinite(verts).all(dim=1))[0])
            raise NumericError(f"non-finite vertex {bad} produced at step {k}")
        if log is not None:
            log.times.append((k_offset + k + 1) * h)
            log.vertex_snapshots.append(verts.detach().cpu().numpy().copy())
            log.attention_maps.append(p.detach().cpu().numpy().copy())

    out = mesh.with_vertices(verts if verts.requires_grad else verts.detach().cpu().numpy())
    return (out, log) if record_trajectory else out
