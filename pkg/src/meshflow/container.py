"""Model container and training checkpoints.

Container layout (little-endian throughout, no timestamps so identical
models produce identical bytes):

    magic   4 bytes  b"CTVF"
    version u32      currently 1
    R       u32      number of resolution levels
    M       u32      number of fields per level
    dims    R * 3 u32   (nx, ny, nz) per level, coarsest first
    grids   for each level r, field m: nx*ny*nz nodes in x-fastest
            order (x index varies fastest), 3 f32 per node
    mode    u8       0=ctvf 1=tvf 2=cvf 3=svf
    a_min   f64      condition normalization range
    a_max   f64
    L       u32      number of linear layers
    layers  per layer: in u32, out u32, weights f32 row-major (out*in),
            bias f32 (out)

A JSON sidecar (same path + ".json") carries human-readable metadata.
Grid and weight values are stored as f32; loading re-widens to f64, so a
save/load round trip quantizes parameters to f32 precision.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .attention import MODES, AttentionNet
from .errors import ConfigError
from .train import AdamState, ParameterSet
from .velocity import VelocityPyramid

MAGIC = b"CTVF"

VERSION = 1

SIDECAR_SUFFIX = ".json"

CHECKPOINT_MODEL = "model.ctvf"
CHECKPOINT_OPTIMIZER = "optimizer.npz"
CHECKPOINT_STATE = "state.json"
CHECKPOINT_LOG = "log.csv"


def _grid_to_disk(values: torch.Tensor) -> np.ndarray:
    """(nx, ny, nz, 3) tensor -> flat f32 array in x-fastest node order."""
    a = values.detach().cpu().numpy().astype("<f4")
    return np.ascontiguousarray(a.transpose(2, 1, 0, 3)).reshape(-1)


def _grid_from_disk(flat: np.ndarray, dims) -> np.ndarray:
    nx, ny, nz = dims
    a = flat.reshape(nz, ny, nx, 3).transpose(2, 1, 0, 3)
    return np.ascontiguousarray(a, dtype=np.float64)


def save_container(path, pyramid: VelocityPyramid, net: AttentionNet,
                   metadata: dict | None = None) -> None:
    """Write pyramid + attention net to ``path`` and a JSON sidecar."""
    if net.n_levels != pyramid.n_levels or net.n_fields != pyramid.n_fields:
        raise ConfigError("attention net and pyramid disagree on (R, M)")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<III", VERSION, pyramid.n_levels, pyramid.n_fields))
    for dims in pyramid.level_dims:
        buf.write(struct.pack("<III", *dims))
    for t in pyramid.level_values:
        for m in range(pyramid.n_fields):
            buf.write(_grid_to_disk(t[:, :, :, m, :]).tobytes())
    buf.write(struct.pack("<B", MODES.index(net.mode)))
    buf.write(struct.pack("<dd", net.a_min, net.a_max))
    buf.write(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        out_dim, in_dim = layer.weight.shape
        buf.write(struct.pack("<II", in_dim, out_dim))
        buf.write(layer.weight.detach().cpu().numpy().astype("<f4").tobytes())
        buf.write(layer.bias.detach().cpu().numpy().astype("<f4").tobytes())

    path = Path(path)
    path.write_bytes(buf.getvalue())
    sidecar = {
        "format": "ctvf-container",
        "version": VERSION,
        "n_levels": pyramid.n_levels,
        "n_fields": pyramid.n_fields,
        "level_dims": [list(d) for d in pyramid.level_dims],
        "mode": net.mode,
        "a_range": [net.a_min, net.a_max],
        "hidden": [int(l.weight.shape[0]) for l in net.layers[:-1]],
    }
    if metadata:
        sidecar["metadata"] = metadata
    Path(str(path) + SIDECAR_SUFFIX).write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise ConfigError(f"truncated container file: {self.path}")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_container(path):
    """Read a container; returns (pyramid, net, sidecar metadata dict)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"container file not found: {path}")
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != MAGIC:
        raise ConfigError(f"not a velocity-model container: {path}")
    version, n_levels, n_fields = r.unpack("<III")
    if version != VERSION:
        raise ConfigError(f"unsupported container version {version}")
    if n_levels < 1 or n_fields < 1:
        raise ConfigError("container declares an empty pyramid")

    level_dims = [r.unpack("<III") for _ in range(n_levels)]
    tensors = []
    for dims in level_dims:
        nx, ny, nz = dims
        fields = []
        for _ in range(n_fields):
            flat = np.frombuffer(r.take(nx * ny * nz * 3 * 4), dtype="<f4")
            fields.append(_grid_from_disk(np.asarray(flat, dtype=np.float64), dims))
        tensors.append(torch.as_tensor(np.stack(fields, axis=3)))
    pyramid = VelocityPyramid(tensors)

    (mode_code,) = r.unpack("<B")
    if mode_code >= len(MODES):
        raise ConfigError(f"unknown mode code {mode_code}")
    a_min, a_max = r.unpack("<dd")
    (n_layers,) = r.unpack("<I")
    layers = []
    for _ in range(n_layers):
        in_dim, out_dim = r.unpack("<II")
        w = np.frombuffer(r.take(out_dim * in_dim * 4), dtype="<f4")
        b = np.frombuffer(r.take(out_dim * 4), dtype="<f4")
        layers.append((w.reshape(out_dim, in_dim), b))
    if not layers:
        raise ConfigError("container holds no attention layers")
    if layers[-1][0].shape[0] != n_levels * n_fields:
        raise ConfigError("attention output size does not match R*M")

    net = AttentionNet(
        n_levels, n_fields,
        hidden=tuple(w.shape[0] for w, _ in layers[:-1]),
        mode=MODES[mode_code], a_range=(a_min, a_max),
    )
    with torch.no_grad():
        for layer, (w, b) in zip(net.layers, layers):
            if tuple(layer.weight.shape) != w.shape:
                raise ConfigError("attention layer shapes are inconsistent")
            layer.weight.copy_(torch.as_tensor(np.asarray(w, dtype=np.float64)))
            layer.bias.copy_(torch.as_tensor(np.asarray(b, dtype=np.float64)))

    metadata = {}
    sidecar = Path(str(path) + SIDECAR_SUFFIX)
    if sidecar.exists():
        metadata = json.loads(sidecar.read_text())
    return pyramid, net, metadata


# ---------------------------------------------------------------------------
# training checkpoints


def save_checkpoint(directory, params: ParameterSet, state: AdamState,
                    info: dict) -> None:
    """Write model, optimizer moments, and run position into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_container(directory / CHECKPOINT_MODEL, params.pyramid, params.net)
    arrays = {"step": np.array(state.step, dtype=np.int64)}
    for i, (m, v) in enumerate(zip(state.m, state.v)):
        arrays[f"m{i}"] = m.detach().cpu().numpy()
        arrays[f"v{i}"] = v.detach().cpu().numpy()
    np.savez(directory / CHECKPOINT_OPTIMIZER, **arrays)
    (directory / CHECKPOINT_STATE).write_text(
        json.dumps(info, indent=2, sort_keys=True) + "\n"
    )


def load_checkpoint(directory):
    """Read a checkpoint; returns (params, AdamState, info dict)."""
    directory = Path(directory)
    model_path = directory / CHECKPOINT_MODEL
    if not model_path.exists():
        raise ConfigError(f"no checkpoint at {directory}")
    pyramid, net, _ = load_container(model_path)
    params = ParameterSet(pyramid, net)

    state = AdamState.init(params)
    opt_path = directory / CHECKPOINT_OPTIMIZER
    if opt_path.exists():
        with np.load(opt_path) as arrays:
            state.step = int(arrays["step"])
            for i, (_, t) in enumerate(params.entries):
                m = torch.as_tensor(arrays[f"m{i}"], dtype=t.dtype)
                v = torch.as_tensor(arrays[f"v{i}"], dtype=t.dtype)
                if m.shape != t.shape or v.shape != t.shape:
                    raise ConfigError("optimizer state does not match the model")
                state.m[i] = m
                state.v[i] = v

    info = {}
    state_path = directory / CHECKPOINT_STATE
    if state_path.exists():
        info = json.loads(state_path.read_text())
    return params, state, info
