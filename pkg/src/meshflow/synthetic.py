"""Condition-parameterized synthetic targets: bumpy spheres of growing age.

A target is the template sphere with each vertex pushed radially by a
band-limited function of its direction. Band amplitudes grow monotonically
with the pseudo-age condition, and the high-frequency band grows fastest,
so older targets are both larger and more finely folded. Displacements are
bounded by half the base radius, which keeps every target star-shaped and
therefore free of self-intersections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TopologyError
from .mesh import TriangleMesh, euler_characteristic, make_icosphere

A_RANGE = (27.0, 45.0)

DEFAULT_BASE_RADIUS = 0.6

DEFAULT_FREQUENCIES = (2.0, 5.0, 9.0)

_WAVES_PER_BAND = 4


def default_amplitudes(a: float, base_radius: float = DEFAULT_BASE_RADIUS):
    """Per-band amplitudes at condition a; each grows linearly with a.

    The high-frequency band has the steepest relative growth, and the
    amplitudes sum to at most base_radius / 2 over the whole condition
    range.
    """
    lo, hi = A_RANGE
    u = min(max((a - lo) / (hi - lo), 0.0), 1.0)
    scale = base_radius / DEFAULT_BASE_RADIUS
    return (
        scale * (0.050 + 0.060 * u),
        scale * (0.020 + 0.050 * u),
        scale * (0.005 + 0.045 * u),
    )


@dataclass(frozen=True)
class ShapeSpec:
    """Recipe for one synthetic target.

    ``bands`` is a sequence of (frequency, amplitude) pairs; ``seed`` fixes
    the random wave directions and phases of every band, so specs sharing a
    seed describe one shape family that varies only through its amplitudes.
    """

    a: float
    bands: tuple
    base_radius: float = DEFAULT_BASE_RADIUS
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.a):
            raise ConfigError(f"condition must be finite, got {self.a!r}")
        if not self.base_radius > 0:
            raise ConfigError("base radius must be positive")
        object.__setattr__(self, "bands", tuple((float(f), float(amp))
                                                for f, amp in self.bands))
        total = 0.0
        for freq, amp in self.bands:
            if not freq > 0:
                raise ConfigError(f"band frequency must be positive, got {freq}")
            if amp < 0:
                raise ConfigError(f"band amplitude must be >= 0, got {amp}")
            total += amp
        if total > self.base_radius / 2 + 1e-12:
            raise ConfigError(
                f"band amplitudes sum to {total:.4g}, above the self-"
                f"intersection bound base_radius/2 = {self.base_radius / 2:.4g}"
            )

    @classmethod
    def default(cls, a: float, base_radius: float = DEFAULT_BASE_RADIUS,
                seed: int = 0) -> "ShapeSpec":
        amps = default_amplitudes(a, base_radius)
        bands = tuple(zip(DEFAULT_FREQUENCIES, amps))
        return cls(a=a, bands=bands, base_radius=base_radius, seed=seed)


def _band_waves(seed: int, band_index: int):
    """Fixed random wave directions (unit) and phases for one band."""
    rng = np.random.default_rng([seed, band_index])
    g = rng.normal(size=(_WAVES_PER_BAND, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=_WAVES_PER_BAND)
    return g, phases


def radial_profile(spec: ShapeSpec, directions: np.ndarray) -> np.ndarray:
    """Radius r(u) = base + sum of band displacements at unit directions u."""
    r = np.full(len(directions), spec.base_radius)
    for j, (freq, amp) in enumerate(spec.bands):
        g, phases = _band_waves(spec.seed, j)
        # mean of J sinusoids keeps |band| <= amp, honoring the bound
        waves = np.sin(freq * directions @ g.T * np.pi + phases)
        r += amp * waves.mean(axis=1)
    return r


def make_target(spec: ShapeSpec, template: TriangleMesh) -> TriangleMesh:
    """Displace the template sphere radially into the bumpy shape of ``spec``.

    The output shares the template connectivity and is flagged as being in
    vertex correspondence with it.
    """
    if euler_characteristic(template) != 2:
        raise TopologyError(
            "template must be a genus-0 (sphere topology) mesh; Euler "
            f"characteristic is {euler_characteristic(template)}"
        )
    v = template.vertex_array()
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms <= 0):
        raise TopologyError("template has a vertex at the origin")
    u = v / norms[:, None]
    r = radial_profile(spec, u)
    return TriangleMesh(u * r[:, None], template.faces, in_correspondence=True)


def make_dataset(
    n: int,
    a_range=A_RANGE,
    template: TriangleMesh | None = None,
    base_radius: float = DEFAULT_BASE_RADIUS,
    seed: int = 0,
):
    """n targets of one shape family, conditions evenly spaced over a_range."""
    if n < 1:
        raise ConfigError("dataset size must be at least 1")
    lo, hi = float(a_range[0]), float(a_range[1])
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ConfigError(f"invalid condition range [{lo}, {hi}]")
    if template is None:
        template = make_icosphere(4, radius=base_radius)
    ages = np.linspace(lo, hi, n) if n > 1 else np.array([(lo + hi) / 2.0])
    return [
        (float(a), make_target(ShapeSpec.default(a, base_radius, seed), template))
        for a in ages
    ]


def dilate_radial(mesh: TriangleMesh, delta: float) -> TriangleMesh:
    """Push every vertex radially outward by delta (an 'outer surface')."""
    v = mesh.vertex_array()
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms <= 0):
        raise TopologyError("mesh has a vertex at the origin")
    scaled = v * ((norms + delta) / norms)[:, None]
    return TriangleMesh(scaled, mesh.faces,
                        in_correspondence=mesh.in_correspondence)
