import json

import pytest

from pairsense.geometry import (
    GeometryError,
    IndenterTip,
    SensorConfig,
    Terminal,
    all_tips,
    build_layout,
    disc_tip,
    edge_tip,
    enumerate_pairs,
    hemisphere_tip,
    sensing_area,
    tip_from_class,
)


class TestBuildLayout:
    def test_tht_terminal_and_state_counts(self):
        cfg = build_layout("tht")
        pi = enumerate_pairs(cfg)
        assert len(cfg.terminals) == 16
        assert len(cfg.emitters) == 8
        assert len(cfg.receivers) == 8
        assert len(pi.states) == 9  # 8 one-LED states + ambient

    def test_smt_frame_and_feature_lengths(self):
        cfg = build_layout("smt")
        pi = enumerate_pairs(cfg)
        assert len(cfg.emitters) == len(cfg.receivers) == 14
        assert pi.raw_frame_len == 14 * 15 == 210
        assert pi.n_channels == 196

    def test_resistive_pair_count(self):
        pi = enumerate_pairs(build_layout("resistive"))
        assert len(pi.pairs) == 6  # C(4,2)

    def test_unknown_build_rejected(self):
        with pytest.raises(GeometryError):
            build_layout("capacitive")

    @pytest.mark.parametrize("build", ["resistive", "tht", "tht_large", "smt"])
    def test_terminals_on_cavity_boundary(self, build):
        cfg = build_layout(build)
        for t in cfg.terminals:
            x, y, z = t.position
            on_wall = min(abs(x), abs(x - cfg.slab_width), abs(y), abs(y - cfg.slab_length)) <= 1e-9
            on_base = abs(z) <= 1e-9
            assert on_wall or on_base

    def test_tht_large_same_terminal_count(self):
        small, large = build_layout("tht"), build_layout("tht_large")
        assert len(large.terminals) == len(small.terminals)
        assert large.slab_width == 45.0

    def test_alternating_roles_around_perimeter(self):
        cfg = build_layout("tht")
        roles = [t.role for t in sorted(cfg.terminals, key=lambda t: t.id)]
        assert roles == ["emitter", "receiver"] * 8

    def test_smt_has_three_base_boards(self):
        cfg = build_layout("smt")
        base_terms = [t for t in cfg.terminals if abs(t.position[2]) < 1e-9]
        assert len(base_terms) == 12  # 3 boards x 4 components
        assert all(t.orientation == (0.0, 0.0, 1.0) for t in base_terms)


class TestEnumeratePairs:
    def test_channel_counts(self):
        assert enumerate_pairs(build_layout("tht")).n_channels == 64
        assert enumerate_pairs(build_layout("smt")).n_channels == 196

    def test_deterministic_and_ordered(self):
        a = enumerate_pairs(build_layout("tht"))
        b = enumerate_pairs(build_layout("tht"))
        assert a == b
        emitters = [e for e, _ in a.pairs]
        assert emitters == sorted(emitters)

    def test_too_few_terminals(self):
        cfg = build_layout("resistive")
        single = SensorConfig(
            build="x",
            slab_width=10,
            slab_length=10,
            slab_thickness=5,
            transduction="resistive",
            terminals=cfg.terminals[:1],
            margin=1.0,
        )
        with pytest.raises(GeometryError):
            enumerate_pairs(single)


class TestSensingArea:
    def test_tht_20mm_square(self):
        xmin, ymin, xmax, ymax = sensing_area(build_layout("tht"), hemisphere_tip())
        assert (xmax - xmin, ymax - ymin) == (20.0, 20.0)

    def test_smt_16mm_square(self):
        xmin, ymin, xmax, ymax = sensing_area(build_layout("smt"), disc_tip())
        assert (xmax - xmin, ymax - ymin) == (16.0, 16.0)

    def test_resistive_fits_9x6_grid(self):
        xmin, ymin, xmax, ymax = sensing_area(build_layout("resistive"), hemisphere_tip())
        assert xmax - xmin == pytest.approx(16.0)
        assert ymax - ymin == pytest.approx(10.0)
        # a 9x6 grid of 2 mm pitch spans exactly 16 x 10
        assert (9 - 1) * 2.0 <= xmax - xmin and (6 - 1) * 2.0 <= ymax - ymin

    def test_oversized_tip_rejected(self):
        with pytest.raises(GeometryError):
            sensing_area(build_layout("resistive"), IndenterTip("planar_disc", 30.0))


class TestTips:
    def test_six_distinct_classes(self):
        ids = [t.class_id for t in all_tips()]
        assert sorted(ids) == [1, 2, 3, 4, 5, 6]

    def test_edge_orientations_are_distinct_classes(self):
        assert len({edge_tip(o).class_id for o in (0.0, 120.0, 240.0)}) == 3

    def test_class_round_trip(self):
        for tip in all_tips():
            again = tip_from_class(tip.class_id)
            assert (again.shape, again.orientation_deg) == (tip.shape, tip.orientation_deg)

    def test_unknown_orientation_rejected(self):
        with pytest.raises(GeometryError):
            edge_tip(45.0)


class TestConfigValidation:
    def test_critical_angle(self):
        cfg = build_layout("tht")
        assert cfg.critical_angle_deg == pytest.approx(45.5847, abs=1e-3)

    def test_role_mixing_rejected(self):
        cfg = build_layout("tht")
        bad = [Terminal(id=99, role="electrode", position=(0.0, 1.0, 1.0), orientation=(1.0, 0.0, 0.0))]
        with pytest.raises(GeometryError):
            SensorConfig(
                build="bad",
                slab_width=32,
                slab_length=32,
                slab_thickness=8,
                transduction="optical",
                terminals=cfg.terminals + tuple(bad),
            )

    def test_interior_terminal_rejected(self):
        with pytest.raises(GeometryError):
            SensorConfig(
                build="bad",
                slab_width=32,
                slab_length=32,
                slab_thickness=8,
                transduction="optical",
                terminals=(Terminal(id=0, role="emitter", position=(5.0, 5.0, 4.0), orientation=(1.0, 0.0, 0.0)),),
            )

    def test_refractive_ordering_enforced(self):
        with pytest.raises(GeometryError):
            SensorConfig(
                build="bad",
                slab_width=32,
                slab_length=32,
                slab_thickness=8,
                transduction="optical",
                terminals=build_layout("tht").terminals,
                refractive_index_elastomer=0.9,
            )

    def test_json_round_trip(self, tmp_path):
        cfg = build_layout("smt", seed=7)
        path = tmp_path / "cfg.json"
        cfg.save(path)
        again = SensorConfig.load(path)
        assert again == cfg
        assert again.digest() == cfg.digest()

    def test_digest_changes_with_seed(self):
        assert build_layout("tht", seed=0).digest() != build_layout("tht", seed=1).digest()
