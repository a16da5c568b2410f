"""Training objectives: Chamfer, mesh Laplacian, normal consistency, MSE.

All losses are computed with torch ops and return 0-dim tensors, so they
can sit at the root of a differentiation tape; call ``float(...)`` on the
result for plain evaluation. Chamfer uses squared distances with mean
reduction (differentiable at zero), MSE uses mean reduction so magnitudes
do not scale with vertex count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.spatial import cKDTree

from .errors import ConfigError, CorrespondenceError, TopologyError
from .mesh import DEGENERATE_AREA_EPS, PointCloud, TriangleMesh

BRUTE_FORCE_LIMIT = 1024


@dataclass(frozen=True)
class LossWeights:
    """Weights of the regularizers in the combined loss."""

    lambda_lap: float = 0.5
    lambda_nc: float = 5e-4

    def __post_init__(self):
        for name in ("lambda_lap", "lambda_nc"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and non-negative")


def _as_point_tensor(obj, dtype=torch.float64) -> torch.Tensor:
    if isinstance(obj, PointCloud):
        obj = obj.points
    if isinstance(obj, TriangleMesh):
        obj = obj.vertices
    if not isinstance(obj, torch.Tensor):
        arr = np.asarray(obj, dtype=np.float64)
        if not arr.flags.writeable:
            arr = arr.copy()
        obj = torch.as_tensor(arr)
    if obj.dtype != dtype:
        obj = obj.to(dtype)
    if obj.ndim != 2 or obj.shape[1] != 3:
        raise ConfigError(f"expected points of shape (N, 3), got {tuple(obj.shape)}")
    return obj


def _nearest_indices(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Index into dst of the nearest neighbor of each src point (exact)."""
    if max(len(src), len(dst)) < BRUTE_FORCE_LIMIT:
        d2 = ((src[:, None, :] - dst[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)
    return cKDTree(dst).query(src, k=1)[1]


def chamfer(P, Q) -> torch.Tensor:
    """Symmetric mean squared nearest-neighbor distance between two clouds.

    The nearest-neighbor search runs outside the tape; gradients flow
    through the squared distances to the matched points.
    """
    p = _as_point_tensor(P)
    q = _as_point_tensor(Q)
    if len(p) == 0 or len(q) == 0:
        raise ConfigError("chamfer distance of an empty point cloud")
    p_np = p.detach().numpy()
    q_np = q.detach().numpy()
    idx_pq = _nearest_indices(p_np, q_np)
    idx_qp = _nearest_indices(q_np, p_np)
    d_pq = ((p - q[idx_pq]) ** 2).sum(dim=1).mean()
    d_qp = ((q - p[idx_qp]) ** 2).sum(dim=1).mean()
    return d_pq + d_qp


def laplacian_loss(mesh: TriangleMesh) -> torch.Tensor:
    """Mean squared distance of each vertex from its 1-ring mean."""
    deg = mesh.vertex_degrees
    if np.any(deg == 0):
        isolated = int(np.flatnonzero(deg == 0)[0])
        raise TopologyError(f"vertex {isolated} has an empty 1-ring")
    v = _as_point_tensor(mesh.vertices)

    edges = torch.as_tensor(mesh.unique_edges.copy())
    sums = torch.zeros_like(v)
    sums.index_add_(0, edges[:, 0], v[edges[:, 1]])
    sums.index_add_(0, edges[:, 1], v[edges[:, 0]])
    mean = sums / torch.as_tensor(deg, dtype=v.dtype).unsqueeze(1)
    return ((v - mean) ** 2).sum(dim=1).mean()


def normal_consistency_loss(mesh: TriangleMesh, with_stats: bool = False):
    """Mean of (1 - cos) between normals of faces sharing an interior edge.

    Pairs touching a degenerate face are skipped; with ``with_stats`` the
    skip count is reported alongside the loss.
    """
    v = _as_point_tensor(mesh.vertices)
    f = torch.as_tensor(mesh.faces.copy())
    n = torch.cross(
        v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]], dim=1
    )
    norms = n.norm(dim=1)
    degenerate = norms <= DEGENERATE_AREA_EPS

    pairs = torch.as_tensor(mesh.edge_face_pairs.copy())
    valid = ~(degenerate[pairs[:, 0]] | degenerate[pairs[:, 1]])
    skipped = int((~valid).sum())
    pairs = pairs[valid]
    if len(pairs) == 0:
        loss = v.sum() * 0.0
    else:
        n0 = n[pairs[:, 0]]
        n1 = n[pairs[:, 1]]
        cos = (n0 * n1).sum(dim=1) / (norms[pairs[:, 0]] * norms[pairs[:, 1]])
        loss = (1.0 - cos).mean()
    if with_stats:
        return loss, {"skipped_pairs": skipped, "evaluated_pairs": len(pairs)}
    return loss


def mse_loss(pred: TriangleMesh, target: TriangleMesh) -> torch.Tensor:
    """Mean squared vertex displacement between corresponding meshes."""
    if pred.n_vertices != target.n_vertices:
        raise CorrespondenceError(
            f"vertex counts differ: {pred.n_vertices} vs {target.n_vertices}"
        )
    if not (pred.in_correspondence or target.in_correspondence):
        raise CorrespondenceError(
            "meshes are not marked as being in vertex-wise correspondence"
        )
    p = _as_point_tensor(pred.vertices)
    q = _as_point_tensor(target.vertices)
    return ((p - q) ** 2).sum(dim=1).mean()


def total_loss(
    pred: TriangleMesh,
    target_samples,
    pred_samples,
    weights: LossWeights,
):
    """Chamfer + lambda_lap * Laplacian + lambda_nc * normal consistency.

    Returns ``(loss, breakdown)`` with the per-term values as floats for
    logging.
    """
    cd = chamfer(pred_samples, target_samples)
    lap = laplacian_loss(pred)
    nc = normal_consistency_loss(pred)
    loss = cd + weights.lambda_lap * lap + weights.lambda_nc * nc
    breakdown = {
        "chamfer": float(cd.detach()),
        "laplacian": float(lap.detach()),
        "normal_consistency": float(nc.detach()),
        "total": float(loss.detach()),
    }
    return loss, breakdown
