"""Synthetic bumpy-sphere targets parameterized by a pseudo-age condition."""

import numpy as np
import pytest

from meshflow.errors import ConfigError, TopologyError
from meshflow.losses import laplacian_loss
from meshflow.mesh import (
    TriangleMesh,
    euler_characteristic,
    face_areas,
    make_icosphere,
)
from meshflow.metrics import sif_ratio
from meshflow.synthetic import (
    A_RANGE,
    DEFAULT_FREQUENCIES,
    ShapeSpec,
    default_amplitudes,
    dilate_radial,
    make_dataset,
    make_target,
    radial_profile,
)
from tests.test_mesh import make_torus


class TestShapeSpec:
    def test_default_spec_well_formed(self):
        spec = ShapeSpec.default(a=36.0)
        assert spec.a == 36.0
        assert len(spec.bands) == len(DEFAULT_FREQUENCIES)
        assert [f for f, _ in spec.bands] == list(DEFAULT_FREQUENCIES)

    def test_amplitude_bound_enforced(self):
        # amplitudes may sum to at most base_radius / 2
        with pytest.raises(ConfigError, match="amplitude"):
            ShapeSpec(a=30.0, bands=((2.0, 0.2), (5.0, 0.15)), base_radius=0.6)
        ShapeSpec(a=30.0, bands=((2.0, 0.2), (5.0, 0.1)), base_radius=0.6)

    @pytest.mark.parametrize("kwargs", [
        {"a": float("nan"), "bands": ((2.0, 0.1),)},
        {"a": 30.0, "bands": ((2.0, 0.1),), "base_radius": 0.0},
        {"a": 30.0, "bands": ((0.0, 0.1),)},
        {"a": 30.0, "bands": ((2.0, -0.1),)},
    ])
    def test_invalid_specs_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            ShapeSpec(**kwargs)

    def test_default_amplitudes_monotone_and_bounded(self):
        lo, hi = A_RANGE
        prev = None
        for a in np.linspace(lo, hi, 7):
            amps = default_amplitudes(float(a))
            assert sum(amps) <= 0.6 / 2 + 1e-12
            if prev is not None:
                assert all(x >= y for x, y in zip(amps, prev))
            prev = amps
        # the high-frequency band grows fastest in relative terms
        first = np.array(default_amplitudes(lo))
        last = np.array(default_amplitudes(hi))
        growth = last / first
        assert growth[2] > growth[1] > growth[0]

    def test_default_amplitudes_clamped_outside_range(self):
        assert default_amplitudes(0.0) == default_amplitudes(A_RANGE[0])
        assert default_amplitudes(99.0) == default_amplitudes(A_RANGE[1])

    def test_amplitudes_scale_with_base_radius(self):
        small = default_amplitudes(36.0, base_radius=0.3)
        big = default_amplitudes(36.0, base_radius=0.6)
        assert np.allclose(np.array(big), 2.0 * np.array(small))


class TestRadialProfile:
    def test_no_bands_gives_base_radius(self, rng):
        u = rng.normal(size=(50, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        spec = ShapeSpec(a=30.0, bands=(), base_radius=0.7)
        assert np.allclose(radial_profile(spec, u), 0.7)

    def test_profile_bounded_by_amplitude_sum(self, rng):
        u = rng.normal(size=(2000, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        spec = ShapeSpec.default(a=45.0)
        r = radial_profile(spec, u)
        total = sum(amp for _, amp in spec.bands)
        assert np.all(r >= spec.base_radius - total - 1e-12)
        assert np.all(r <= spec.base_radius + total + 1e-12)

    def test_seed_controls_wave_family(self, rng):
        u = rng.normal(size=(100, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        spec_a = ShapeSpec.default(a=36.0, seed=0)
        spec_b = ShapeSpec.default(a=36.0, seed=0)
        spec_c = ShapeSpec.default(a=36.0, seed=1)
        assert np.array_equal(radial_profile(spec_a, u), radial_profile(spec_b, u))
        assert not np.allclose(radial_profile(spec_a, u), radial_profile(spec_c, u))


class TestMakeTarget:
    def test_target_shares_connectivity_and_flags(self, ico3):
        target = make_target(ShapeSpec.default(a=36.0), ico3)
        assert target.n_vertices == ico3.n_vertices
        assert np.array_equal(target.faces, ico3.faces)
        assert target.in_correspondence
        assert euler_characteristic(target) == 2

    def test_displacement_is_radial(self, ico3):
        target = make_target(ShapeSpec.default(a=40.0), ico3)
        v = ico3.vertex_array()
        t = target.vertex_array()
        u = v / np.linalg.norm(v, axis=1, keepdims=True)
        ut = t / np.linalg.norm(t, axis=1, keepdims=True)
        assert np.allclose(u, ut, atol=1e-12)

    def test_torus_template_rejected(self):
        with pytest.raises(TopologyError, match="Euler"):
            make_target(ShapeSpec.default(a=30.0), make_torus())

    def test_origin_vertex_rejected(self, ico0):
        verts = ico0.vertex_array().copy()
        verts[0] = 0.0
        bad = TriangleMesh(verts, ico0.faces)
        with pytest.raises(TopologyError, match="origin"):
            make_target(ShapeSpec.default(a=30.0), bad)

    def test_targets_self_intersection_free_across_ages(self, ico3):
        # star-shaped construction: no self-intersections anywhere in range
        for a in np.linspace(A_RANGE[0], A_RANGE[1], 5):
            target = make_target(ShapeSpec.default(float(a)), ico3)
            assert sif_ratio(target, backend="bvh").percent == 0.0

    def test_roughness_and_area_grow_with_age(self, ico3):
        ages = [27.0, 33.0, 39.0, 45.0]
        rough = []
        area = []
        for a in ages:
            target = make_target(ShapeSpec.default(a), ico3)
            rough.append(float(laplacian_loss(target)))
            area.append(float(face_areas(target).sum()))
        assert all(x < y for x, y in zip(rough, rough[1:]))
        assert all(x < y for x, y in zip(area, area[1:]))


class TestMakeDataset:
    def test_three_subjects_span_range(self):
        ds = make_dataset(3, template=make_icosphere(2, radius=0.6))
        assert [a for a, _ in ds] == [27.0, 36.0, 45.0]

    def test_single_subject_midpoint(self):
        ds = make_dataset(1, template=make_icosphere(2, radius=0.6))
        assert [a for a, _ in ds] == [36.0]

    def test_default_template_subdivision(self):
        ds = make_dataset(1)
        assert ds[0][1].n_vertices == 2562

    def test_invalid_sizes_and_ranges_rejected(self):
        with pytest.raises(ConfigError):
            make_dataset(0)
        with pytest.raises(ConfigError):
            make_dataset(2, a_range=(45.0, 27.0))
        with pytest.raises(ConfigError):
            make_dataset(2, a_range=(27.0, float("inf")))

    def test_shared_seed_one_family(self):
        tpl = make_icosphere(2, radius=0.6)
        ds_a = make_dataset(2, template=tpl, seed=7)
        ds_b = make_dataset(2, template=tpl, seed=7)
        for (_, ta), (_, tb) in zip(ds_a, ds_b):
            assert np.array_equal(ta.vertex_array(), tb.vertex_array())


class TestDilateRadial:
    def test_radii_increase_by_delta(self, ico3):
        out = dilate_radial(ico3, 0.05)
        r_in = np.linalg.norm(ico3.vertex_array(), axis=1)
        r_out = np.linalg.norm(out.vertex_array(), axis=1)
        assert np.allclose(r_out, r_in + 0.05, atol=1e-12)

    def test_correspondence_preserved(self, ico3):
        flagged = TriangleMesh(ico3.vertex_array(), ico3.faces,
                               in_correspondence=True)
        assert dilate_radial(flagged, 0.1).in_correspondence
        assert not dilate_radial(ico3, 0.1).in_correspondence

    def test_origin_vertex_rejected(self, ico0):
        verts = ico0.vertex_array().copy()
        verts[3] = 0.0
        with pytest.raises(TopologyError, match="origin"):
            dilate_radial(TriangleMesh(verts, ico0.faces), 0.1)
