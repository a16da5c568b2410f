"""Multi-resolution stationary velocity fields on regular grids.

Grids cover the fixed axis-aligned box [-1, 1]^3 that mesh coordinates are
normalized to. Sampling is trilinear; coordinates outside the box are
clamped to the boundary first, so the continuous field is defined (and
Lipschitz) everywhere. Everything is built from torch ops so gradients flow
both to the stored grid values and to the query points.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import ConfigError, NumericError


def node_coordinates(dims):
    """Node positions along each axis: dims[i] points spanning [-1, 1]."""
    return [np.linspace(-1.0, 1.0, n) for n in dims]


def _as_points(x, dtype) -> tuple[torch.Tensor, bool]:
    """Coerce x to an (N, 3) tensor; report whether input was a single point."""
    if isinstance(x, torch.Tensor):
        t = x
    else:
        arr = np.asarray(x, dtype=np.float64)
        if not arr.flags.writeable:
            arr = arr.copy()
        t = torch.as_tensor(arr, dtype=dtype)
    if t.dtype != dtype:
        t = t.to(dtype)
    single = t.ndim == 1
    if single:
        t = t.unsqueeze(0)
    if t.ndim != 2 or t.shape[1] != 3:
        raise ConfigError(f"sample points must have shape (N, 3), got {tuple(t.shape)}")
    if not torch.isfinite(t).all():
        raise NumericError("sample point contains a non-finite coordinate")
    return t, single


def _trilinear(flat_values: torch.Tensor, dims, x: torch.Tensor) -> torch.Tensor:
    """Interpolate (nx*ny*nz, C) node values at points x (N, 3) -> (N, C).

    Node (i, j, k) lives at row (i*ny + j)*nz + k. Out-of-box coordinates
    are clamped, which extends the field constantly along each axis.
    """
    nx, ny, nz = dims
    n = torch.tensor([nx, ny, nz], dtype=x.dtype)
    u = (x.clamp(-1.0, 1.0) + 1.0) * 0.5 * (n - 1)
    i0 = torch.minimum(u.floor().long(), n.long() - 2).clamp_(min=0)
    frac = u - i0.to(x.dtype)

    ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
    fx, fy, fz = frac[:, 0:1], frac[:, 1:2], frac[:, 2:3]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz

    base = (ix * ny + iy) * nz + iz
    c000 = flat_values[base]
    c001 = flat_values[base + 1]
    c010 = flat_values[base + nz]
    c011 = flat_values[base + nz + 1]
    c100 = flat_values[base + ny * nz]
    c101 = flat_values[base + ny * nz + 1]
    c110 = flat_values[base + ny * nz + nz]
    c111 = flat_values[base + ny * nz + nz + 1]

    return (
        gx * (gy * (gz * c000 + fz * c001) + fy * (gz * c010 + fz * c011))
        + fx * (gy * (gz * c100 + fz * c101) + fy * (gz * c110 + fz * c111))
    )


class VelocityGrid:
    """A discrete stationary velocity field: (nx, ny, nz) grid of 3-vectors."""

    def __init__(self, values):
        if not isinstance(values, torch.Tensor):
            values = torch.as_tensor(np.asarray(values, dtype=np.float64))
        if values.ndim != 4 or values.shape[-1] != 3:
            raise ConfigError(
                f"grid values must have shape (nx, ny, nz, 3), got {tuple(values.shape)}"
            )
        if min(values.shape[:3]) < 2:
            raise ConfigError("grid resolution must be at least 2 along every axis")
        if not torch.isfinite(values).all():
            raise NumericError("grid contains non-finite values")
        self.values = values

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.values.shape[:3])

    @property
    def dtype(self):
        return self.values.dtype

    @classmethod
    def zeros(cls, dims, dtype=torch.float64) -> "VelocityGrid":
        return cls(torch.zeros(*dims, 3, dtype=dtype))

    @classmethod
    def from_function(cls, dims, fn, dtype=torch.float64) -> "VelocityGrid":
        """Populate nodes from fn(points (N, 3)) -> (N, 3)."""
        ax = node_coordinates(dims)
        xx, yy, zz = np.meshgrid(*ax, indexing="ij")
        pts = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)
        # copy: fn may hand back read-only (broadcast) arrays
        vals = np.array(fn(pts), dtype=np.float64).reshape(*dims, 3)
        return cls(torch.as_tensor(vals, dtype=dtype))


def lerp_sample(grid: VelocityGrid, x) -> torch.Tensor:
    """Trilinear sample of a grid at point(s) x; clamps x into [-1, 1]^3."""
    pts, single = _as_points(x, grid.dtype)
    out = _trilinear(grid.values.reshape(-1, 3), grid.dims, pts)
    return out[0] if single else out


class VelocityPyramid:
    """R resolution levels of M stationary velocity fields each.

    Level r (1-based, level R finest) has resolution ``base * 2**(r - R)``
    along each axis: resolutions halve exactly between adjacent levels.
    Internally each level is one (nx, ny, nz, M, 3) tensor so that all M
    fields of a level are interpolated with one set of trilinear weights;
    these per-level tensors are the learnable parameters.
    """

    def __init__(self, level_values: list[torch.Tensor]):
        if not level_values:
            raise ConfigError("pyramid needs at least one level")
        m = level_values[0].shape[3]
        for lo, hi in zip(level_values, level_values[1:]):
            if [2 * d for d in lo.shape[:3]] != list(hi.shape[:3]):
                raise ConfigError(
                    "level resolutions must halve exactly between adjacent levels"
                )
        for t in level_values:
            if t.ndim != 5 or t.shape[-1] != 3:
                raise ConfigError("level tensors must have shape (nx, ny, nz, M, 3)")
            if t.shape[3] != m:
                raise ConfigError("all levels must hold the same number of fields M")
            if min(t.shape[:3]) < 2:
                raise ConfigError("grid resolution must be at least 2 along every axis")
        self.level_values = level_values

    @property
    def n_levels(self) -> int:
        return len(self.level_values)

    @property
    def n_fields(self) -> int:
        return self.level_values[0].shape[3]

    @property
    def level_dims(self) -> list[tuple[int, int, int]]:
        return [tuple(t.shape[:3]) for t in self.level_values]

    @property
    def dtype(self):
        return self.level_values[0].dtype

    @property
    def levels(self) -> list[list[VelocityGrid]]:
        """Per-level lists of M VelocityGrid views into the level tensors."""
        out = []
        for t in self.level_values:
            out.append([VelocityGrid(t[:, :, :, m, :]) for m in range(t.shape[3])])
        return out

    def grid(self, r: int, m: int) -> VelocityGrid:
        """Grid at level r (0-based, coarsest first) and field index m."""
        return VelocityGrid(self.level_values[r][:, :, :, m, :])

    @classmethod
    def zeros(
        cls, n_levels: int, n_fields: int, base_resolution: int = 32,
        dtype=torch.float64,
    ) -> "VelocityPyramid":
        if n_levels < 1 or n_fields < 1:
            raise ConfigError("need at least one level and one field")
        scale = 2 ** (n_levels - 1)
        if base_resolution % scale or base_resolution // scale < 2:
            raise ConfigError(
                f"base resolution {base_resolution} cannot be halved "
                f"{n_levels - 1} times (coarsest level must stay >= 2)"
            )
        tensors = [
            torch.zeros(
                base_resolution // 2 ** (n_levels - 1 - r),
                base_resolution // 2 ** (n_levels - 1 - r),
                base_resolution // 2 ** (n_levels - 1 - r),
                n_fields, 3, dtype=dtype,
            )
            for r in range(n_levels)
        ]
        return cls(tensors)

    @classmethod
    def from_grids(cls, grids: list[list[VelocityGrid]]) -> "VelocityPyramid":
        """Build from explicit per-level grid lists (copies the values)."""
        tensors = [torch.stack([g.values for g in level], dim=3) for level in grids]
        return cls(tensors)

    def sample(self, x) -> torch.Tensor:
        """Sample every field at point(s) x -> (N, R, M, 3) (or (R, M, 3))."""
        pts, single = _as_points(x, self.dtype)
        m = self.n_fields
        per_level = [
            _trilinear(t.reshape(-1, m * 3), t.shape[:3], pts).reshape(-1, m, 3)
            for t in self.level_values
        ]
        out = torch.stack(per_level, dim=1)
        return out[0] if single else out


def sample_pyramid(pyramid: VelocityPyramid, x) -> torch.Tensor:
    """Entry (r, m) is the trilinear sample of grid (r, m) at x."""
    return pyramid.sample(x)
