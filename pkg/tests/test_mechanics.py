import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairsense.geometry import all_tips, build_layout, corner_tip, disc_tip, edge_tip, hemisphere_tip
from pairsense.mechanics import (
    IndentationPose,
    MechanicsError,
    deform,
    depth_to_force,
    flat_field,
    strain_field,
)

CENTER = (16.0, 16.0)


def field_at(depth, tip=None, x=CENTER[0], y=CENTER[1], config=None):
    config = config or build_layout("tht")
    return deform(config, IndentationPose(x, y, depth, tip or hemisphere_tip()))


class TestDeform:
    def test_zero_depth_is_flat(self):
        f = field_at(0.0)
        pts = np.array([[16.0, 16.0], [10.0, 20.0], [6.0, 6.0]])
        assert np.all(f.height(pts) == 0.0)
        assert np.allclose(f.normal(pts)[:, 2], 1.0)
        assert not f.in_footprint(pts).any()

    def test_apex_penetration_equals_depth(self):
        for tip in all_tips():
            d = min(2.0, 1.0)
            f = field_at(d, tip=tip)
            assert f.height(np.array([CENTER]))[0] == pytest.approx(d, abs=1e-6)

    def test_hemisphere_profile_formula(self):
        d, r = 2.0, 3.0
        f = field_at(d)
        rho = 1.5
        expected = d - (r - math.sqrt(r * r - rho * rho))
        assert f.height(np.array([[CENTER[0] + rho, CENTER[1]]]))[0] == pytest.approx(expected, abs=1e-12)

    def test_hemisphere_shallow_skirt_is_zero(self):
        # contact boundary carries no displacement for d < r, so no skirt
        f = field_at(2.0)
        w = build_layout("tht").skirt_w
        assert f.height(np.array([[CENTER[0] + 3.0 + w, CENTER[1]]]))[0] == 0.0

    def test_hemisphere_deep_skirt_value(self):
        # d > r: boundary height d - r decays as exp(-delta^2 / 2 w^2)
        cfg = build_layout("tht")
        d, r, w = 4.0, 3.0, cfg.skirt_w
        f = field_at(d)
        expected = (d - r) * math.exp(-0.5)
        got = f.height(np.array([[CENTER[0] + r + w, CENTER[1]]]))[0]
        assert got == pytest.approx(expected, rel=1e-12)

    def test_disc_flat_profile_and_skirt_continuity(self):
        f = field_at(1.0, tip=disc_tip())
        inside = f.height(np.array([[CENTER[0] + 7.0, CENTER[1]]]))[0]
        at_edge = f.height(np.array([[CENTER[0] + 7.5, CENTER[1]]]))[0]
        just_out = f.height(np.array([[CENTER[0] + 7.5001, CENTER[1]]]))[0]
        assert inside == pytest.approx(1.0)
        assert at_edge == pytest.approx(1.0)
        assert just_out == pytest.approx(1.0, abs=1e-4)

    def test_edge_profile_45_degree_faces(self):
        f = field_at(2.0, tip=edge_tip(0.0))
        # perpendicular distance s from the edge line reduces height by s
        h = f.height(np.array([[CENTER[0], CENTER[1] + 1.0]]))[0]
        assert h == pytest.approx(1.0, abs=1e-9)

    def test_corner_square_profile(self):
        f = field_at(2.0, tip=corner_tip())
        h = f.height(np.array([[CENTER[0] + 1.0, CENTER[1] + 0.5]]))[0]
        assert h == pytest.approx(2.0 - 1.0, abs=1e-9)

    def test_height_continuous_across_footprint_boundary(self):
        for tip in all_tips():
            f = field_at(1.5, tip=tip)
            xs = np.linspace(CENTER[0], CENTER[0] + 9.5, 400)
            pts = np.stack([xs, np.full_like(xs, CENTER[1])], axis=1)
            h = f.height(pts)
            assert np.max(np.abs(np.diff(h))) < 0.08  # no jumps at the seam

    def test_outside_sensing_area_rejected(self):
        cfg = build_layout("tht")
        with pytest.raises(MechanicsError):
            deform(cfg, IndentationPose(2.0, 2.0, 1.0, hemisphere_tip()))

    def test_depth_cap_rejected(self):
        cfg = build_layout("tht")
        with pytest.raises(MechanicsError):
            deform(cfg, IndentationPose(16.0, 16.0, 6.5, hemisphere_tip()))

    @settings(max_examples=25, deadline=None)
    @given(
        dx=st.floats(-4.0, 4.0),
        dy=st.floats(-4.0, 4.0),
        d=st.floats(0.1, 5.0),
    )
    def test_translation_equivariance(self, dx, dy, d):
        f0 = field_at(d)
        f1 = field_at(d, x=CENTER[0] + dx, y=CENTER[1] + dy)
        probes = np.array([[0.5, 0.3], [2.0, -1.0], [-3.0, 2.5], [0.0, 0.0]])
        h0 = f0.height(probes + np.array(CENTER))
        h1 = f1.height(probes + np.array(CENTER) + np.array([dx, dy]))
        assert np.max(np.abs(h0 - h1)) < 1e-9

    def test_edge_rotation_equivalence(self):
        # fields of the 0- and 120-degree edges match after rotating probes
        d = 2.0
        f0 = field_at(d, tip=edge_tip(0.0))
        f120 = field_at(d, tip=edge_tip(120.0))
        rng = np.random.default_rng(0)
        probes = rng.uniform(-8, 8, size=(50, 2))
        phi = math.radians(120.0)
        rot = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
        h0 = f0.height(probes + np.array(CENTER))
        h120 = f120.height(probes @ rot.T + np.array(CENTER))
        assert np.max(np.abs(h0 - h120)) < 1e-6

    def test_heights_nonnegative_and_zero_iff_no_contact(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(0, 32, size=(300, 2))
        for d in (0.0, 0.7, 3.0):
            f = field_at(d)
            h = f.height(pts)
            assert np.all(h >= 0.0)
            if d == 0.0:
                assert np.all(h == 0.0)

    def test_max_height_equals_depth(self):
        for tip in all_tips():
            f = field_at(1.2, tip=tip)
            xs = np.linspace(8, 24, 161)
            grid = np.stack(np.meshgrid(xs, xs), axis=-1).reshape(-1, 2)
            assert f.height(grid).max() == pytest.approx(1.2, abs=1e-6)

    def test_normals_unit_and_tilted_in_skirt(self):
        f = field_at(1.0, tip=disc_tip())
        pts = np.array([[CENTER[0] + 8.5, CENTER[1]], [CENTER[0], CENTER[1]]])
        n = f.normal(pts)
        assert np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12)
        assert n[0, 2] < 1.0  # skirt slope tilts the normal
        assert n[0, 0] != 0.0


class TestStrainField:
    def test_zero_field_zero_strain(self, tht_config):
        eps = strain_field(flat_field(tht_config), tht_config)
        pts = np.array([[16.0, 16.0]])
        assert eps(pts, 4.0)[0] == 0.0

    def test_surface_ratio(self):
        cfg = build_layout("resistive")
        f = deform(cfg, IndentationPose(12.0, 9.0, 3.0, hemisphere_tip()))
        eps = strain_field(f, cfg)
        assert eps(np.array([[12.0, 9.0]]), cfg.slab_thickness)[0] == pytest.approx(0.5)

    def test_linear_attenuation_to_base(self):
        cfg = build_layout("resistive")
        f = deform(cfg, IndentationPose(12.0, 9.0, 3.0, hemisphere_tip()))
        eps = strain_field(f, cfg)
        pts = np.array([[12.0, 9.0]])
        assert eps(pts, cfg.slab_thickness / 2)[0] == pytest.approx(0.25)
        assert eps(pts, 0.0)[0] == 0.0

    def test_strain_bounded(self):
        cfg = build_layout("resistive")
        f = deform(cfg, IndentationPose(12.0, 9.0, 4.5, hemisphere_tip()))
        eps = strain_field(f, cfg)
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, [24, 18], size=(200, 2))
        zs = rng.uniform(0, 6, size=200)
        v = eps(pts, zs)
        assert np.all((0 <= v) & (v <= 0.75))


class TestDepthToForce:
    def test_anchor_points(self):
        assert depth_to_force(0.0) == 0.0
        assert depth_to_force(0.1) == pytest.approx(0.11)
        assert depth_to_force(0.3) == pytest.approx(0.55)

    def test_strictly_increasing_on_fine_grid(self):
        d = np.arange(0.0, 5.0001, 0.01)
        f = np.array([depth_to_force(x) for x in d])
        assert np.all(np.diff(f) > 0)

    def test_out_of_range_rejected(self):
        with pytest.raises(MechanicsError):
            depth_to_force(-0.1)
        with pytest.raises(MechanicsError):
            depth_to_force(5.1)
