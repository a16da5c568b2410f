"""Time- and condition-dependent attention over the velocity pyramid.

A small fully connected network maps (integration time t, condition a) to
R*M logits; softmax turns them into a probability map over the pyramid's
fields. Four conditioning modes degrade the map by zeroing inputs:

    ctvf : attend on (t, a)
    tvf  : a is zeroed, attention varies with time only
    cvf  : t is zeroed, attention varies with the condition only
    svf  : both zeroed, a single constant mixture
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, NumericError

MODES = ("ctvf", "tvf", "cvf", "svf")


@dataclass(frozen=True)
class Conditioning:
    """Integration time t in [0, T] and raw condition value a.

    The condition is stored in raw units (weeks-equivalent pseudo-age) and
    normalized to [-1, 1] over the network's configured range before it
    enters the network.
    """

    t: float
    a: float

    def __post_init__(self):
        if not (np.isfinite(self.t) and np.isfinite(self.a)):
            raise NumericError("conditioning values must be finite")


class AttentionNet(nn.Module):
    """FCN from (t, a) to a softmax-normalized attention map over R*M fields."""

    def __init__(
        self,
        n_levels: int,
        n_fields: int,
        hidden=(64, 64),
        mode: str = "ctvf",
        a_range=(27.0, 45.0),
        seed: int = 0,
        dtype=torch.float64,
    ):
        super().__init__()
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        a_min, a_max = float(a_range[0]), float(a_range[1])
        if not a_min < a_max:
            raise ConfigError("a_range must satisfy a_min < a_max")
        self.n_levels = n_levels
        self.n_fields = n_fields
        self.mode = mode
        self.a_min = a_min
        self.a_max = a_max

        gen = torch.Generator().manual_seed(seed)
        widths = [2, *hidden, n_levels * n_fields]
        layers = []
        for w_in, w_out in zip(widths, widths[1:]):
            lin = nn.Linear(w_in, w_out, dtype=dtype)
            with torch.no_grad():
                bound = 1.0 / np.sqrt(w_in)
                lin.weight.uniform_(-bound, bound, generator=gen)
                lin.bias.uniform_(-bound, bound, generator=gen)
            layers.append(lin)
        # zero final layer: a fresh network starts at the uniform map
        with torch.no_grad():
            layers[-1].weight.zero_()
            layers[-1].bias.zero_()
        self.layers = nn.ModuleList(layers)

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    def normalize_condition(self, a):
        """Map raw condition linearly from [a_min, a_max] onto [-1, 1]."""
        return 2.0 * (a - self.a_min) / (self.a_max - self.a_min) - 1.0

    def _check_finite(self):
        for i, layer in enumerate(self.layers):
            if not torch.isfinite(layer.weight).all() or not torch.isfinite(layer.bias).all():
                raise NumericError(f"attention layer {i} has non-finite parameters")

    def forward(self, t, a, mode: str | None = None) -> torch.Tensor:
        """Attention map p(t, a) of shape (R, M) (or (N, R, M) for batches).

        ``t`` and ``a`` may be scalars or tensors; scalar inputs give the
        single-map form. ``mode`` overrides the network's own mode, which
        lets one trained model be evaluated under any ablation.
        """
        mode = self.mode if mode is None else mode
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        self._check_finite()

        t_in = torch.as_tensor(t, dtype=self.dtype)
        a_in = torch.as_tensor(a, dtype=self.dtype)
        if not torch.isfinite(t_in).all() or not torch.isfinite(a_in).all():
            raise NumericError("conditioning values must be finite")
        single = t_in.ndim == 0 and a_in.ndim == 0
        t_in, a_in = torch.broadcast_tensors(t_in.reshape(-1), a_in.reshape(-1))

        a_in = self.normalize_condition(a_in)
        if mode in ("tvf", "svf"):
            a_in = torch.zeros_like(a_in)
        if mode in ("cvf", "svf"):
            t_in = torch.zeros_like(t_in)

        h = torch.stack([t_in, a_in], dim=1)
        for layer in self.layers[:-1]:
            h = torch.tanh(layer(h))
        logits = self.layers[-1](h)
        p = torch.softmax(logits, dim=1)
        maps = p.reshape(-1, self.n_levels, self.n_fields)
        return maps[0] if single else maps


def attention_map(net: AttentionNet, c: Conditioning, mode: str | None = None) -> torch.Tensor:
    """Softmax-normalized (R, M) attention map for one conditioning."""
    return net(c.t, c.a, mode=mode)


def aggregate_by_level(p) -> np.ndarray:
    """Per-resolution importances: sum the map over the fields of each level."""
    if isinstance(p, torch.Tensor):
        return p.sum(dim=-1).detach().cpu().numpy()
    return np.asarray(p).sum(axis=-1)
