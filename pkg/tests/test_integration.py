"""Cross-module behaviors tied to the canonical protocols."""

import numpy as np
import pytest
from dataclasses import replace

from pairsense.evaluation import ablate_terminals, ablate_tips, error_table
from pairsense.geometry import NoiseParams, area_center, build_layout, hemisphere_tip, sensing_area
from pairsense.learning import TrainingSet, fit_krr_calibrated, regression_set
from pairsense.mechanics import flat_field
from pairsense.modelio import TrainedModel
from pairsense.optics import OpticalTracer, RayBudget, sweep_rig
from pairsense.protocol import FRAME_PERIOD_S, TraceCache, collect, make_schedule
from pairsense.resistive import FRAME_PERIOD_S as LATTICE_PERIOD

from conftest import TINY_BUDGET


class TestCenterPredictorGeometry:
    def test_resistive_center_error_near_5mm(self):
        # the canonical random test protocol plus the center predictor give a
        # median error around 5 mm on the 16 x 10 sensing area; no simulation
        # needed, the statistic is a property of the schedule geometry
        sch = make_schedule("resistive", "test", seed=0, n_random=4000)
        cfg = build_layout("resistive")
        cx, cy = area_center(sensing_area(cfg, hemisphere_tip()))
        err = [np.hypot(e.x - cx, e.y - cy) for e in sch.events]
        med = float(np.median(err))
        assert med == pytest.approx(5.0, rel=0.2)

    def test_random_predictor_worse_than_center(self):
        from pairsense.learning import RandomPredictor

        cfg = build_layout("resistive")
        rect = sensing_area(cfg, hemisphere_tip())
        cx, cy = area_center(rect)
        sch = make_schedule("resistive", "test", seed=1, n_random=3000)
        truth = np.array([[e.x, e.y] for e in sch.events])
        rand = RandomPredictor(rect=rect, seed=2).predict(truth)
        med_rand = np.median(np.hypot(rand[:, 0] - truth[:, 0], rand[:, 1] - truth[:, 1]))
        med_center = np.median(np.hypot(truth[:, 0] - cx, truth[:, 1] - cy))
        assert med_rand > med_center


class TestSweepRigChannels:
    def test_direct_path_strictly_positive_at_rest(self):
        cfg = sweep_rig(8.0)
        tracer = OpticalTracer(cfg, TINY_BUDGET)
        _, direct, _ = tracer.trace_counts(flat_field(cfg))
        assert direct[0, 0] > 0

    @pytest.mark.slow
    def test_facing_pair_total_variation(self):
        # the pair signal moves substantially over the depth range
        from pairsense.optics import thickness_sweep

        curves = thickness_sweep([8.0], depths=np.arange(0, 5.01, 0.5), budget=RayBudget(rays_per_emitter=4000))
        tv = float(np.abs(np.diff(curves[0].signal)).sum())
        assert tv > 0.10 * 1023.0


class TestResistiveCadence:
    def test_frame_period_honors_40hz(self):
        assert FRAME_PERIOD_S == LATTICE_PERIOD == 0.025  # full 6-pair frame per tick


@pytest.fixture(scope="module")
def mini_tht():
    cfg = build_layout("tht").with_noise(shot_noise_sigma=0.25)
    profile = (-1.0, 0.0, 0.5, 1.0, 1.5, 2.0, 1.5, 1.0, 0.5, 0.0, -1.0)
    train = make_schedule("tht", "train", lighting="dark", seed=0)
    train = replace(train, events=train.events[::6], depth_profiles={1: profile})
    test = make_schedule("tht", "test", lighting="dark", seed=4, n_random=12)
    test = replace(test, depth_profiles={1: profile})
    cache = TraceCache()
    ds_train = collect(cfg, train, budget=TINY_BUDGET, cache=cache)
    ds_test = collect(cfg, test, budget=TINY_BUDGET, cache=cache)
    return cfg, ds_train, ds_test


class TestErrorTableInvariance:
    def test_frame_order_permutation(self, mini_tht):
        cfg, ds_train, ds_test = mini_tht
        ts = regression_set([ds_train], depth_increment=0.5)
        model, _ = fit_krr_calibrated(ts)
        tm = TrainedModel(kind="krr", model=model, config_digest=cfg.digest())
        t1 = error_table(tm, ds_test, bins=(1.0, 2.0))
        rng = np.random.default_rng(0)
        shuffled = replace_frames_order(ds_test, rng)
        t2 = error_table(tm, shuffled, bins=(1.0, 2.0))
        for r1, r2 in zip(t1.rows, t2.rows):
            assert r1.loc_median == pytest.approx(r2.loc_median, abs=1e-12)
            assert r1.loc_mean == pytest.approx(r2.loc_mean, abs=1e-12)

    def test_empty_mask_reproduces_baseline_exactly(self, mini_tht):
        cfg, ds_train, ds_test = mini_tht
        tables = ablate_terminals(cfg, {"noop": []}, [ds_train], ds_test)
        base = tables["baseline"]
        noop = tables["noop"]
        for r1, r2 in zip(base.rows, noop.rows):
            assert (r1.loc_median, r1.loc_mean, r1.loc_std) == (r2.loc_median, r2.loc_mean, r2.loc_std)


def replace_frames_order(ds, rng):
    from pairsense.protocol import Dataset

    frames = list(ds.frames)
    rng.shuffle(frames)
    return Dataset(frames=frames, schedule=ds.schedule, config=ds.config, seed=ds.seed)


class TestAblateTipsContract:
    def test_eval_depths_and_missing_tip(self):
        # fold evaluation depths: planar at 1 mm, every other tip at 2 mm
        from pairsense.evaluation import EvaluationError

        with pytest.raises(EvaluationError):
            ablate_tips({1: None, 2: None}, lam=1e-3, sigma=1.0)
        default = {cls: (1.0 if cls == 2 else 2.0) for cls in range(1, 7)}
        assert default[2] == 1.0 and default[1] == 2.0
