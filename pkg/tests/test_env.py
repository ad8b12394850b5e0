import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pedcross import perception as pc
from pedcross.env import (GO, NOT_GO, OBS_SCALE, BatchEnv, CrossingEnv, EnvConfig, Mode, Observation, denormalize,
                          normalize)
from pedcross.world import Outcome, RoadGeometry, brute_force_outcome, scenario_table

TABLE = scenario_table()
G = RoadGeometry()


def test_ideal_reset():
    obs = CrossingEnv().reset(TABLE[0], mode="ideal")
    np.testing.assert_array_equal(obs.as_array(), [15.90, 6.94, 0, 0, 0, 0])
    assert obs.sigma_v is None


def test_noisy_zero_sigma():
    obs = CrossingEnv().reset(TABLE[0], pc.NoiseParams(0.0), seed=1)
    assert obs.est_pos == 15.90
    assert obs.var_pos == pc.MEAS_VAR_FLOOR
    # velocity prior still applies; it vanishes only as its SD goes to zero
    env = CrossingEnv(EnvConfig(vel_prior_sd=1e-12))
    o = env.reset(TABLE[0], pc.NoiseParams(0.0), seed=1)
    assert o.est_vel == pytest.approx(6.94, abs=1e-9)


def test_noisy_reset_reproducible_and_draw_order():
    a = CrossingEnv().reset(TABLE[2], pc.NoiseParams(0.05), seed=9)
    b = CrossingEnv().reset(TABLE[2], pc.NoiseParams(0.05), seed=9)
    assert a == b
    rng = np.random.default_rng(9)
    z_pos, z_vel = rng.standard_normal(), rng.standard_normal()
    lat = G.vehicle_lane_center_offset
    want_pos = float(pc.sensed_position(31.81, lat, 1.6, 0.05, z_pos))
    assert a.est_pos == pytest.approx(want_pos, rel=1e-14)
    assert a.est_vel == pytest.approx(6.94 + pc.VEL_PRIOR_SD * z_vel, rel=1e-14)
    assert a.var_pos == pytest.approx(float(pc.measurement_var(want_pos, lat, 1.6, 0.05)), rel=1e-14)


def test_conditioned_observation_carries_sigma():
    o = CrossingEnv().reset(TABLE[0], pc.NoiseParams(0.3), mode="conditioned", seed=0)
    assert o.sigma_v == 0.3
    assert o.as_array().shape == (7,)
    assert Mode.CONDITIONED.obs_dim == 7 and Mode.NOISY.obs_dim == 6


def test_step_examples():
    env = CrossingEnv()
    env.reset(TABLE[4], mode="ideal")
    r = env.step(GO)
    assert (r.reward, r.outcome, r.cit, r.done) == (199.5, Outcome.SAFE_BEFORE, 0.0, True)
    with pytest.raises(RuntimeError):
        env.step(GO)

    env.reset(TABLE[0], mode="ideal")
    for _ in range(10):
        r = env.step(NOT_GO)
        assert (r.reward, r.done) == (-0.5, False)
    r = env.step(GO)
    assert r.cit == pytest.approx(1.0)
    assert r.reward == -200.5 and r.outcome is Outcome.COLLISION
    assert brute_force_outcome(TABLE[0], G, r.cit) is Outcome.COLLISION


def test_truncation():
    env = CrossingEnv(EnvConfig(max_steps=5))
    env.reset(TABLE[0], pc.NoiseParams(0.1), seed=0)
    for _ in range(4):
        assert not env.step(NOT_GO).done
    r = env.step(NOT_GO)
    assert r.done and r.outcome is Outcome.TRUNCATED and math.isnan(r.cit)
    assert r.reward == -0.5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 8), st.integers(0, 7), st.floats(0, 0.3), st.integers(0, 2 ** 31))
def test_reward_accounting(sid, k, sigma, seed):
    s = TABLE[sid % len(TABLE)]
    env = CrossingEnv()
    env.reset(s, pc.NoiseParams(sigma), seed=seed)
    total = 0.0
    for _ in range(k):
        total += env.step(NOT_GO).reward
    r = env.step(GO)
    total += r.reward
    assert r.cit == pytest.approx(0.1 * k)
    assert r.outcome is brute_force_outcome(s, G, r.cit)
    n = k + 1
    if r.outcome is Outcome.COLLISION:
        assert total == -200 - 0.5 * n
    else:
        assert total == 200 - 0.5 * n


def test_cit_grid_is_exact_multiple_of_dt():
    env = CrossingEnv()
    env.reset(TABLE[0], mode="ideal")
    for _ in range(23):
        env.step(NOT_GO)
    assert env.step(GO).cit == 23 * 0.1


def test_normalize():
    assert np.all(normalize(np.zeros(6)) == 0)
    assert normalize(Observation(100, 0, 0, 0, 0, 0))[0] == 1.0
    o = CrossingEnv().reset(TABLE[0], mode="ideal")
    np.testing.assert_allclose(normalize(o), [0.159, 0.347, 0, 0, 0, 0])
    x = np.random.default_rng(0).normal(size=(4, 7))
    np.testing.assert_allclose(denormalize(normalize(x)), x)
    assert OBS_SCALE[2] == 1e4


def test_batch_matches_single():
    n = 12
    seeds = np.random.SeedSequence(3).spawn(n)
    bat = BatchEnv([TABLE[3]] * n, 0.1, "noisy", [np.random.default_rng(s) for s in seeds])
    bat.reset()
    rng = np.random.default_rng(0)
    plans = rng.integers(0, 30, n)
    singles = [CrossingEnv() for _ in range(n)]
    for e, s in zip(singles, seeds):
        e.reset(TABLE[3], pc.NoiseParams(0.1), rng=np.random.default_rng(s))
    for step in range(31):
        if bat.done.all():
            break
        acts = np.where(step >= plans, GO, NOT_GO)
        bat.step(acts)
        obs = bat.observations()
        for i, e in enumerate(singles):
            if not e.done:
                r = e.step(int(acts[i]))
                np.testing.assert_allclose(r.observation.as_array(), obs[i], rtol=1e-12)
    for i, e in enumerate(singles):
        assert bat.outcome[i] is e._batch.outcome[0]
        assert bat.cit[i] == e._batch.cit[0]


def test_batch_rejects_bad_input():
    with pytest.raises(ValueError):
        BatchEnv([TABLE[0]] * 2, 0.1, "noisy", [np.random.default_rng(0)])
    with pytest.raises(ValueError):
        BatchEnv([TABLE[0]], -0.1, "noisy", [np.random.default_rng(0)])
    with pytest.raises(ValueError):
        EnvConfig(meas_var_source="guess")
    env = BatchEnv([TABLE[0]], 0.0, "ideal", [np.random.default_rng(0)])
    env.reset()
    env.step([GO])
    with pytest.raises(RuntimeError):
        env.step([GO])


def test_meas_var_source_true():
    env = CrossingEnv(EnvConfig(meas_var_source="true"))
    o = env.reset(TABLE[1], pc.NoiseParams(0.05), seed=2)
    lat = G.vehicle_lane_center_offset
    assert o.var_pos == pytest.approx(float(pc.measurement_var(31.81, lat, 1.6, 0.05)))


def test_trace(tmp_path):
    env = CrossingEnv(record=True)
    env.reset(TABLE[0], pc.NoiseParams(0.05), seed=0)
    env.step(NOT_GO)
    env.step(GO)
    p = tmp_path / "trace.csv"
    env.write_trace(p)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("t,vehicle_front_distance")
    assert len(lines) == 3
    assert lines[2].endswith("Go,199.5")
