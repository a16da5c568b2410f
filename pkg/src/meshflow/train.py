"""Optimization: reverse-mode gradients, Adam, and the two-stage fit loop.

Gradients flow through the unrolled Euler integration, the attention
network, the trilinear grid samples, and the barycentric surface samples
(treated as fixed draws per step). The optimizer is a self-contained Adam
with bias correction and global-norm gradient clipping.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np
import torch

from .attention import AttentionNet
from .errors import ConfigError, CorrespondenceError, NumericError, StateError
from .flow import FlowConfig, integrate
from .losses import (
    LossWeights,
    chamfer,
    laplacian_loss,
    mse_loss,
    normal_consistency_loss,
)
from .mesh import TriangleMesh, draw_surface_samples, sample_surface
from .velocity import VelocityPyramid

GRAD_CLIP_NORM = 10.0

LOSS_KINDS = ("chamfer", "mse")


class ParameterSet:
    """All trainable tensors (grid values and network weights) as one view.

    Exposes a flat index space across every scalar parameter so tests can
    probe single entries (finite differences) and the optimizer can report
    global gradient norms.
    """

    def __init__(self, pyramid: VelocityPyramid, net: AttentionNet):
        self.pyramid = pyramid
        self.net = net
        self._entries: list[tuple[str, torch.Tensor]] = []
        for r, t in enumerate(pyramid.level_values):
            t.requires_grad_(True)
            self._entries.append((f"pyramid.level{r}", t))
        for i, layer in enumerate(net.layers):
            self._entries.append((f"net.layer{i}.weight", layer.weight))
            self._entries.append((f"net.layer{i}.bias", layer.bias))
        self._offsets = [0]
        for _, t in self._entries:
            self._offsets.append(self._offsets[-1] + t.numel())

    @classmethod
    def create(
        cls,
        n_levels: int = 3,
        n_fields: int = 4,
        base_resolution: int = 16,
        hidden=(64, 64),
        mode: str = "ctvf",
        a_range=(27.0, 45.0),
        seed: int = 0,
        dtype=torch.float64,
        grid_init: float = 1e-3,
    ) -> "ParameterSet":
        """Fresh trainable state: noise-seeded grids plus an attention net.

        Grids start at N(0, grid_init^2) noise rather than zero: fields that
        start identical within a level receive identical gradients under the
        softmax mixture and would stay identical forever. ``grid_init=0``
        gives exactly zero fields.
        """
        pyramid = VelocityPyramid.zeros(n_levels, n_fields, base_resolution, dtype)
        if grid_init:
            # distinct stream from the net's hidden-layer init
            gen = torch.Generator().manual_seed(seed * 1000003 + 101)
            with torch.no_grad():
                for t in pyramid.level_values:
                    t.add_(grid_init * torch.randn(
                        t.shape, generator=gen, dtype=t.dtype))
        net = AttentionNet(
            n_levels, n_fields, hidden=hidden, mode=mode, a_range=a_range,
            seed=seed, dtype=dtype,
        )
        return cls(pyramid, net)

    @property
    def entries(self) -> list[tuple[str, torch.Tensor]]:
        return list(self._entries)

    @property
    def n_parameters(self) -> int:
        return self._offsets[-1]

    def _locate(self, i: int) -> tuple[torch.Tensor, int]:
        if not 0 <= i < self.n_parameters:
            raise ConfigError(f"flat index {i} out of range [0, {self.n_parameters})")
        block = bisect_right(self._offsets, i) - 1
        return self._entries[block][1], i - self._offsets[block]

    def get_flat(self, i: int) -> float:
        t, off = self._locate(i)
        return float(t.detach().reshape(-1)[off])

    def set_flat(self, i: int, value: float) -> None:
        t, off = self._locate(i)
        with torch.no_grad():
            t.reshape(-1)[off] = value

    def zero_grad(self) -> None:
        for _, t in self._entries:
            t.grad = None

    def flat_gradient(self) -> np.ndarray:
        parts = []
        for _, t in self._entries:
            g = t.grad
            if g is None:
                parts.append(np.zeros(t.numel()))
            else:
                parts.append(g.detach().cpu().numpy().reshape(-1).copy())
        return np.concatenate(parts)

    def gradient_norm(self) -> float:
        total = 0.0
        for _, t in self._entries:
            if t.grad is not None:
                total += float((t.grad ** 2).sum())
        return math.sqrt(total)

    def clip_gradients(self, max_norm: float = GRAD_CLIP_NORM) -> float:
        """Scale all gradients so their global norm is at most max_norm."""
        norm = self.gradient_norm()
        if norm > max_norm:
            scale = max_norm / norm
            with torch.no_grad():
                for _, t in self._entries:
                    if t.grad is not None:
                        t.grad.mul_(scale)
        return norm

    def snapshot(self) -> list[torch.Tensor]:
        return [t.detach().clone() for _, t in self._entries]

    def load_snapshot(self, snap: list[torch.Tensor]) -> None:
        if len(snap) != len(self._entries):
            raise StateError("snapshot does not match the parameter layout")
        with torch.no_grad():
            for (_, t), s in zip(self._entries, snap):
                if t.shape != s.shape:
                    raise StateError("snapshot tensor shape mismatch")
                t.copy_(s)


def backward(loss: torch.Tensor, params: ParameterSet) -> None:
    """Populate gradients of ``loss`` for every parameter block.

    The forward pass must have recorded a tape; constants raise a state
    error. Non-finite gradients raise a numeric error naming the block.
    """
    if not isinstance(loss, torch.Tensor) or loss.grad_fn is None:
        raise StateError(
            "loss has no computation tape; run the forward pass with "
            "gradients enabled before calling backward"
        )
    params.zero_grad()
    loss.backward()
    for name, t in params.entries:
        if t.grad is not None and not torch.isfinite(t.grad).all():
            raise NumericError(f"non-finite gradient in parameter block {name}")


@dataclass
class AdamState:
    """First/second moment buffers plus the step counter."""

    step: int
    m: list[torch.Tensor]
    v: list[torch.Tensor]

    @classmethod
    def init(cls, params: ParameterSet) -> "AdamState":
        zeros = [torch.zeros_like(t) for _, t in params.entries]
        return cls(0, zeros, [torch.zeros_like(t) for _, t in params.entries])

    def clone(self) -> "AdamState":
        return AdamState(
            self.step, [m.clone() for m in self.m], [v.clone() for v in self.v]
        )


def adam_step(
    params: ParameterSet,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    grads: list[torch.Tensor] | None = None,
) -> None:
    """One bias-corrected Adam update in place; missing grads count as zero."""
    entries = params.entries
    if len(state.m) != len(entries):
        raise StateError("optimizer state does not match the parameter layout")
    if grads is None:
        grads = [t.grad for _, t in entries]
    if len(grads) != len(entries):
        raise StateError("gradient list does not match the parameter layout")

    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    with torch.no_grad():
        for (_, t), m, v, g in zip(entries, state.m, state.v, grads):
            if g is None:
                g = torch.zeros_like(t)
            if g.shape != t.shape:
                raise StateError("gradient shape does not match its parameter")
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            t.addcdiv_(m / bc1, (v / bc2).sqrt().add_(eps), value=-lr)


# ---------------------------------------------------------------------------
# fit schedule


@dataclass(frozen=True)
class Stage:
    """One schedule stage: epoch count, learning rate, loss configuration.

    ``steps_per_item`` repeats the gradient step on each dataset item within
    an epoch; the desk-scale datasets are tiny, so a plain one-pass epoch
    would give far fewer optimizer steps than the full-scale protocol the
    epoch counts are scaled down from.
    """

    epochs: int
    learning_rate: float
    weights: LossWeights = field(default_factory=LossWeights)
    loss: str = "chamfer"
    n_samples: int = 2000
    steps_per_item: int = 16

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("stage needs at least one epoch")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.n_samples < 1:
            raise ConfigError("need at least one surface sample")
        if self.steps_per_item < 1:
            raise ConfigError("steps_per_item must be at least 1")


@dataclass(frozen=True)
class FitSchedule:
    stages: tuple

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("schedule needs at least one stage")
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def total_epochs(self) -> int:
        return sum(s.epochs for s in self.stages)

    def position(self, global_epoch: int) -> tuple[int, int]:
        """Map a global epoch index to (stage index, epoch within stage)."""
        e = global_epoch
        for i, s in enumerate(self.stages):
            if e < s.epochs:
                return i, e
            e -= s.epochs
        raise ConfigError(f"epoch {global_epoch} is past the schedule end")


def default_schedule(
    epochs=(30, 30),
    loss: str = "chamfer",
    n_samples: int = 2000,
    steps_per_item: int = 16,
) -> FitSchedule:
    """Two-stage schedule: strong regularizers first, then accuracy tuning."""
    return FitSchedule(
        (
            Stage(epochs[0], 1e-4, LossWeights(0.5, 5e-4), loss,
                  n_samples, steps_per_item),
            Stage(epochs[1], 2e-5, LossWeights(0.1, 1e-4), loss,
                  n_samples, steps_per_item),
        )
    )


# ---------------------------------------------------------------------------
# fitting


LOG_COLUMNS = (
    "global_epoch", "stage", "epoch", "item", "step", "loss_kind",
    "fidelity", "laplacian", "normal_consistency", "total",
    "lambda_lap", "lambda_nc", "learning_rate", "grad_norm",
)


@dataclass
class FitResult:
    history: list  # one dict per completed global epoch
    step_rows: list  # one dict per optimizer step (the CSV rows)
    diverged: bool
    epochs_run: int
    final_loss: float


def _barycentric_points(mesh: TriangleMesh, fidx, w) -> torch.Tensor:
    """Combine fixed barycentric draws with the (possibly live) vertices."""
    verts = mesh.vertices
    if isinstance(verts, np.ndarray):
        verts = torch.as_tensor(verts.copy())
    tri = verts[torch.as_tensor(mesh.faces[fidx], dtype=torch.long)]
    return (torch.as_tensor(w, dtype=verts.dtype).unsqueeze(-1) * tri).sum(dim=1)


def _sampled_points(pred: TriangleMesh, n: int, seed: int) -> torch.Tensor:
    """Differentiable area-weighted samples of a deformed mesh.

    Face/barycentric draws use the detached geometry; the returned points
    are barycentric combinations of the live vertex tensor, so gradients
    reach the vertices (and through integration, the parameters).
    """
    verts = pred.vertices
    if isinstance(verts, np.ndarray):
        verts = torch.as_tensor(verts.copy())
    frozen = pred.with_vertices(verts.detach().cpu().numpy())
    fidx, w = draw_surface_samples(frozen, n, seed)
    return _barycentric_points(pred, fidx, w)


def _in_correspondence(a: TriangleMesh, b: TriangleMesh) -> bool:
    return (
        (a.in_correspondence or b.in_correspondence)
        and a.n_vertices == b.n_vertices
        and a.connectivity_hash() == b.connectivity_hash()
    )


def _chamfer_clouds(pred: TriangleMesh, target: TriangleMesh, n: int, rng):
    """Sample clouds for the chamfer term.

    For meshes in vertex correspondence, one set of face/barycentric draws
    (from the target's area measure) is evaluated on both surfaces. The
    matched clouds coincide exactly when the surfaces do, so the sampled
    chamfer has no independent-resampling noise floor. Otherwise each
    surface is sampled independently.
    """
    if _in_correspondence(pred, target):
        seed = int(rng.integers(0, 2**31 - 1))
        fidx, w = draw_surface_samples(target, n, seed)
        target_pts = _barycentric_points(target, fidx, w).detach()
        pred_pts = _barycentric_points(pred, fidx, w)
        return pred_pts, target_pts
    ts, ps = (int(s) for s in rng.integers(0, 2**31 - 1, size=2))
    target_pts = sample_surface(target, n, ts)
    pred_pts = _sampled_points(pred, n, ps)
    return pred_pts, target_pts


def _item_loss(pred, target, stage, rng):
    """Loss tensor plus breakdown floats for one dataset item."""
    lap = laplacian_loss(pred)
    nc = normal_consistency_loss(pred)
    if stage.loss == "chamfer":
        pred_pts, target_pts = _chamfer_clouds(pred, target, stage.n_samples, rng)
        fidelity = chamfer(pred_pts, target_pts)
    else:
        fidelity = mse_loss(pred, target)
    total = fidelity + stage.weights.lambda_lap * lap + stage.weights.lambda_nc * nc
    breakdown = {
        "fidelity": float(fidelity.detach()),
        "laplacian": float(lap.detach()),
        "normal_consistency": float(nc.detach()),
        "total": float(total.detach()),
    }
    return total, breakdown


def _validate_dataset(dataset, template, schedule):
    if not dataset:
        raise ConfigError("dataset is empty")
    for a, target in dataset:
        if not np.isfinite(a):
            raise ConfigError(f"non-finite condition value {a!r}")
        if not isinstance(target, TriangleMesh):
            raise ConfigError("dataset targets must be TriangleMesh instances")
    if any(s.loss == "mse" for s in schedule.stages):
        for _, target in dataset:
            if target.n_vertices != template.n_vertices or not (
                target.in_correspondence or template.in_correspondence
            ):
                raise CorrespondenceError(
                    "MSE stages need targets in vertex correspondence "
                    "with the template"
                )


def fit(
    dataset,
    template: TriangleMesh,
    params: ParameterSet,
    schedule: FitSchedule | None = None,
    seed: int = 0,
    flow: FlowConfig = FlowConfig(),
    state: AdamState | None = None,
    start_epoch: int = 0,
    log_path=None,
    on_epoch_end=None,
) -> FitResult:
    """Optimize ``params`` so the deformed template matches the targets.

    ``dataset`` is a sequence of (condition a, target mesh) pairs. Stages
    run in order; sampling seeds derive from (seed, stage, epoch, item), so
    a fixed seed reproduces the run bit for bit, and resuming at
    ``start_epoch`` (with the matching optimizer ``state``) continues it.
    On divergence (non-finite loss or gradient) the parameters and state
    roll back to the last completed epoch and the result is flagged.
    """
    schedule = schedule or default_schedule()
    _validate_dataset(dataset, template, schedule)
    if state is None:
        state = AdamState.init(params)
    if not 0 <= start_epoch <= schedule.total_epochs:
        raise ConfigError(f"start_epoch {start_epoch} outside the schedule")

    history: list[dict] = []
    step_rows: list[dict] = []
    diverged = False
    final_loss = math.nan
    last_good = (params.snapshot(), state.clone())

    writer = None
    log_file = None
    if log_path is not None:
        log_file = open(log_path, "a", newline="")
        writer = csv.DictWriter(log_file, fieldnames=LOG_COLUMNS)
        if log_file.tell() == 0:
            writer.writeheader()

    try:
        for global_epoch in range(start_epoch, schedule.total_epochs):
            si, e = schedule.position(global_epoch)
            stage = schedule.stages[si]
            epoch_totals = []
            for ii, (a, target) in enumerate(dataset):
                rng = np.random.default_rng([seed, si, e, ii])
                for s in range(stage.steps_per_item):
                    try:
                        pred = integrate(template, params.pyramid, params.net,
                                         float(a), flow)
                        loss, breakdown = _item_loss(pred, target, stage, rng)
                        if not math.isfinite(breakdown["total"]):
                            raise NumericError("non-finite loss")
                        backward(loss, params)
                    except NumericError:
                        diverged = True
                        break
                    norm = params.clip_gradients(GRAD_CLIP_NORM)
                    adam_step(params, state, stage.learning_rate)
                    epoch_totals.append(breakdown["total"])
                    row = {
                        "global_epoch": global_epoch, "stage": si, "epoch": e,
                        "item": ii, "step": s, "loss_kind": stage.loss,
                        "fidelity": breakdown["fidelity"],
                        "laplacian": breakdown["laplacian"],
                        "normal_consistency": breakdown["normal_consistency"],
                        "total": breakdown["total"],
                        "lambda_lap": stage.weights.lambda_lap,
                        "lambda_nc": stage.weights.lambda_nc,
                        "learning_rate": stage.learning_rate,
                        "grad_norm": norm,
                    }
                    step_rows.append(row)
                    if writer is not None:
                        writer.writerow(row)
                if diverged:
                    break
            if diverged:
                params.load_snapshot(last_good[0])
                state.step = last_good[1].step
                state.m = last_good[1].m
                state.v = last_good[1].v
                break

            mean_total = float(np.mean(epoch_totals))
            final_loss = mean_total
            history.append({
                "global_epoch": global_epoch, "stage": si, "epoch": e,
                "mean_total": mean_total,
            })
            last_good = (params.snapshot(), state.clone())
            if log_file is not None:
                log_file.flush()
            if on_epoch_end is not None:
                on_epoch_end(global_epoch, params, state, history)
    finally:
        if log_file is not None:
            log_file.close()

    epochs_run = (history[-1]["global_epoch"] + 1) if history else start_epoch
    return FitResult(history, step_rows, diverged, epochs_run, final_loss)


def evaluate_chamfer(
    params: ParameterSet,
    dataset,
    template: TriangleMesh,
    n: int = 4000,
    seed: int = 12345,
    flow: FlowConfig = FlowConfig(),
) -> float:
    """Mean sampled chamfer of the deformed template over a dataset.

    Meshes in correspondence are sampled with matched draws (see
    ``_chamfer_clouds``), so a perfect fit scores exactly zero.
    """
    values = []
    with torch.no_grad():
        for i, (a, target) in enumerate(dataset):
            pred = integrate(template, params.pyramid, params.net, float(a), flow)
            rng = np.random.default_rng([seed, i])
            pred_pts, target_pts = _chamfer_clouds(pred, target, n, rng)
            values.append(float(chamfer(pred_pts, target_pts)))
    return float(np.mean(values))
