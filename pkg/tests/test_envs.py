import numpy as np
import pytest

from guidedflow.chunking import ChunkExecutor
from guidedflow.envs import (
    Observation,
    Obstacle,
    OraclePolicyParams,
    PointMassEnv,
    conditional_field,
    default_variants,
    make_env,
    make_field,
)
from guidedflow.guidance import GuidanceConfig


def rollout_positions(mean_chunk, start, gain=0.1):
    x = np.asarray(start, dtype=float).copy()
    out = [x.copy()]
    for a in mean_chunk:
        x = x + gain * a
        out.append(x.copy())
    return np.array(out)


# ---------------------------------------------------------------------------
# observe / env_step


def test_observation_well_formed_at_goal():
    env = PointMassEnv(start=(0.3, -0.2), goal=(0.3, -0.2), action_noise_std=0.0)
    obs = env.observe()
    assert np.array_equal(obs.position, obs.goal)
    params = OraclePolicyParams(modes=1)
    field = conditional_field(obs, params)
    assert np.abs(field.means).max() < 1e-9


def test_observation_after_reset_equals_start():
    env = PointMassEnv(start=(-1.0, 0.0), goal=(1.0, 0.0))
    obs = env.observe()
    assert np.array_equal(obs.position, np.array([-1.0, 0.0]))
    assert env.step_count == 0 and not env.done


def test_noise_seeds_differ_at_step_one():
    o = []
    for seed in (1, 2):
        env = PointMassEnv(start=(0.0, 0.0), goal=(1.0, 0.0), rng=np.random.default_rng(seed))
        env.step(np.array([0.5, 0.0]))
        o.append(env.observe().position)
    assert not np.array_equal(o[0], o[1])


def test_env_step_zero_action_zero_noise():
    env = PointMassEnv(start=(0.2, 0.2), goal=(1.0, 0.0), action_noise_std=0.0)
    env.step(np.zeros(2))
    assert np.array_equal(env.position, np.array([0.2, 0.2]))


def test_env_step_reaches_goal_in_closed_form_steps():
    env = PointMassEnv(
        start=(0.0, 0.0), goal=(1.0, 0.0), action_noise_std=0.0,
        goal_tolerance=0.05, dynamics_gain=0.1, max_steps=60,
    )
    needed = int(np.ceil((1.0 - 0.05) / 0.1))
    for _ in range(needed):
        done, success = env.step(np.array([1.0, 0.0]))
        if success:
            break
    assert env.success and env.step_count <= needed + 1


def test_env_times_out_without_goal():
    env = PointMassEnv(start=(0.0, 0.0), goal=(5.0, 0.0), max_steps=4, action_noise_std=0.0)
    for _ in range(4):
        done, success = env.step(np.zeros(2))
    assert done and not success


def test_env_clips_actions():
    env = PointMassEnv(start=(0.0, 0.0), goal=(9.0, 0.0), action_noise_std=0.0)
    env.step(np.array([10.0, 0.0]))
    assert env.position[0] == pytest.approx(0.1)


# ---------------------------------------------------------------------------
# conditional field


def test_far_goal_gives_saturated_forward_rows():
    obs = Observation(position=np.zeros(2), goal=np.array([5.0, 0.0]))
    field = conditional_field(obs, OraclePolicyParams(modes=1))
    rows = field.means[0]
    assert np.all(rows[:, 0] > 0.0) and np.all(rows[:, 0] <= 1.0)
    assert np.allclose(rows[:, 1], 0.0, atol=1e-12)


def test_field_scales_and_weights():
    obs = Observation(position=np.zeros(2), goal=np.array([1.0, 0.0]))
    params = OraclePolicyParams(sigma_cond=0.37, modes=1)
    field = conditional_field(obs, params)
    assert np.all(field.scales == 0.37)
    assert np.allclose(field.weights.sum(), 1.0)


def test_bimodal_modes_pass_on_opposite_sides():
    obs = Observation(
        position=np.array([-1.0, 0.0]),
        goal=np.array([0.75, 0.0]),
        obstacle=Obstacle(center=np.array([0.7, 0.0]), radius=0.09),
    )
    params = OraclePolicyParams(modes=2, horizon=10)
    field = conditional_field(obs, params)
    lat = []
    for mode in range(2):
        pos = rollout_positions(field.means[mode], obs.position, gain=params.gain)
        lat.append(pos[len(pos) // 2, 1])
    assert lat[0] * lat[1] < 0.0


def test_custom_chunk_mean_fn():
    target = np.full((1, 4, 2), 0.25)
    params = OraclePolicyParams(modes=1, horizon=4, chunk_mean_fn=lambda obs: target)
    obs = Observation(position=np.zeros(2), goal=np.ones(2))
    field = conditional_field(obs, params)
    assert np.array_equal(field.means, target)


def test_conditional_field_cache_tracks_observation():
    variant = default_variants()[0]
    field = make_field(variant)
    env = make_env(variant, rng=np.random.default_rng(0))
    obs1 = env.observe()
    p1 = field.field_params(obs1)
    assert field.field_params(obs1) is p1
    env.step(np.array([1.0, 0.0]))
    obs2 = env.observe()
    assert field.field_params(obs2) is not p1


# ---------------------------------------------------------------------------
# benchmark-level invariants


def test_oracle_consistency_unguided_delay_zero():
    # Fully closed-loop unguided sampling solves the default unimodal task.
    variant = default_variants()[0]
    wins = 0
    for seed in range(200):
        env = make_env(variant, rng=np.random.default_rng(seed))
        field = make_field(variant)
        ex = ChunkExecutor(
            env, field, GuidanceConfig(method="naive"), delay=0, horizon=10,
            rng=np.random.default_rng(10_000 + seed),
        )
        wins += ex.run().success
    assert wins / 200 >= 0.95


def test_episode_determinism_same_seeds():
    variant = default_variants()[1]

    def run_once():
        env = make_env(variant, rng=np.random.default_rng(77))
        field = make_field(variant)
        ex = ChunkExecutor(
            env, field, GuidanceConfig(method="potr"), delay=4, horizon=10,
            rng=np.random.default_rng(78),
        )
        return ex.run()

    a, b = run_once(), run_once()
    assert np.array_equal(a.actions, b.actions)
    assert a.success == b.success and a.env_steps == b.env_steps


def test_default_variants_shape():
    variants = default_variants()
    assert [v.name for v in variants] == ["unimodal", "bimodal"]
    assert variants[0].modes == 1 and variants[1].modes == 2
    assert variants[1].obstacle_center is not None


def test_make_env_with_obstacle():
    env = make_env(default_variants()[1], rng=np.random.default_rng(0))
    obs = env.observe()
    assert obs.obstacle is not None and obs.obstacle.radius > 0


def test_oracle_params_validation():
    with pytest.raises(ValueError):
        OraclePolicyParams(modes=0)
    with pytest.raises(ValueError):
        OraclePolicyParams(sigma_cond=-1.0)
    with pytest.raises(ValueError):
        OraclePolicyParams(ctrl_frac=1.5)
