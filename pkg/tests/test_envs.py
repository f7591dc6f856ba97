import math

import numpy as np
import pytest

from regq.envs import (
    DOWN,
    GOAL_POSITION,
    HORIZON,
    LEFT,
    RIGHT,
    STAY,
    UP,
    EpisodeRecord,
    GridWorld,
    MountainCarState,
    Transition,
    default_reward_map,
    gridworld_stream,
    mountaincar_episode_stream,
    mountaincar_reset,
    mountaincar_step,
    run_episode,
    sample_path,
    tabular_stream,
)
from regq.errors import InvalidArgument
from regq.mdp import random_mdp


class TestGridWorld:
    def test_sizes(self, grid, grid_mdp):
        assert grid.num_states == 25 and grid.num_actions == 5
        assert grid_mdp.P.shape == (25, 5, 25)

    def test_default_map(self):
        m = default_reward_map()
        assert m[0, 4] == 1.0 and m[2, 2] == -1.0
        assert np.count_nonzero(m) == 2

    def test_moves(self, grid):
        assert grid.move(12, UP) == 7
        assert grid.move(12, DOWN) == 17
        assert grid.move(12, LEFT) == 11
        assert grid.move(12, RIGHT) == 13
        for s in range(25):
            assert grid.move(s, STAY) == s

    @pytest.mark.parametrize("s,a", [(0, UP), (0, LEFT), (4, UP), (4, RIGHT), (20, DOWN), (24, RIGHT)])
    def test_walls(self, grid, s, a):
        assert grid.move(s, a) == s

    def test_reward_is_destination(self, grid_mdp):
        assert grid_mdp.R[3, RIGHT] == 1.0
        assert grid_mdp.R[4, STAY] == 1.0
        assert grid_mdp.R[7, DOWN] == -1.0
        assert grid_mdp.R[0, STAY] == 0.0

    def test_custom_map(self):
        rm = np.arange(6.0).reshape(2, 3)
        g = GridWorld(3, 2, rm)
        assert g.to_mdp().R[0, RIGHT] == 1.0
        with pytest.raises(InvalidArgument):
            GridWorld(3, 3, rm)

    def test_stream_frequencies(self, grid):
        n = 1_000_000
        counts = np.zeros((25, 5))
        stream = gridworld_stream(grid, seed=1)
        for _ in range(n):
            t = next(stream)
            counts[t.state, t.action] += 1
        assert np.max(np.abs(counts / n - 1 / 125)) <= 4 / math.sqrt(n / 125) / 125

    def test_stream_consistent(self, grid):
        prev = None
        for _, t in zip(range(10_000), gridworld_stream(grid, seed=2)):
            assert t.next_state == grid.move(t.state, t.action)
            if t.action == STAY:
                assert t.next_state == t.state
            if prev is not None:
                assert t.state == prev.next_state
            prev = t


class TestTabularStream:
    def test_matches_sample_path(self):
        mdp = random_mdp(7, 3, 0.9, seed=4)
        T = 10_000  # crosses two chunk boundaries
        s, a, sn = sample_path(mdp, T, seed=5)
        got = [next(it) for it in [tabular_stream(mdp, 5)] for _ in range(T)]
        np.testing.assert_array_equal([t.state for t in got], s)
        np.testing.assert_array_equal([t.action for t in got], a)
        np.testing.assert_array_equal([t.next_state for t in got], sn)

    def test_rewards(self):
        mdp = random_mdp(4, 2, 0.9, seed=0)
        for _, t in zip(range(100), tabular_stream(mdp, 0)):
            assert t.reward == mdp.R[t.state, t.action]
            assert not t.terminal

    def test_seeds_differ(self):
        mdp = random_mdp(4, 2, 0.9, seed=0)
        a, _, _ = sample_path(mdp, 200, 0)
        b, _, _ = sample_path(mdp, 200, 1)
        assert not np.array_equal(a, b)


class TestMountainCar:
    def test_coast_from_valley(self):
        nxt, r, done = mountaincar_step(MountainCarState(-0.5, 0.0), 1)
        dv = -0.0025 * math.cos(-1.5)
        assert dv == pytest.approx(-0.000177, abs=5e-7)
        assert nxt.velocity == pytest.approx(dv, abs=1e-17)
        assert nxt.position == pytest.approx(-0.5 + dv, abs=1e-17)
        assert r == -1.0 and not done and nxt.steps == 1

    @pytest.mark.parametrize("v", [-0.07, 0.0, 0.03])
    @pytest.mark.parametrize("a", [0, 1, 2])
    def test_goal_is_done(self, v, a):
        assert mountaincar_step(MountainCarState(0.5, v), a)[2]

    def test_reaching_goal(self):
        nxt, r, done = mountaincar_step(MountainCarState(0.49, 0.07), 2)
        assert nxt.position >= GOAL_POSITION and done and r == -1.0

    def test_left_wall(self):
        nxt, _, _ = mountaincar_step(MountainCarState(-1.2, -0.05), 0)
        assert nxt.position == -1.2 and nxt.velocity == 0.0

    def test_speed_clip(self):
        nxt, _, _ = mountaincar_step(MountainCarState(-0.5, 0.07), 2)
        assert nxt.velocity == 0.07

    def test_coasting_times_out(self):
        ep = run_episode(lambda obs: 1, np.random.default_rng(0))
        assert ep.ret == -200.0 and ep.steps == HORIZON

    def test_energy_pumping_reaches_goal(self):
        ep = run_episode(lambda obs: 2 if obs[1] >= 0 else 0, np.random.default_rng(0))
        assert -200 < ep.ret < 0 and ep.steps < HORIZON

    @pytest.mark.parametrize("state,action", [(MountainCarState(0.7, 0.0), 1), (MountainCarState(0.0, 0.1), 1),
                                              (MountainCarState(0.0, 0.0), 3)])
    def test_invalid(self, state, action):
        with pytest.raises(InvalidArgument):
            mountaincar_step(state, action)

    def test_pure(self):
        s = MountainCarState(-0.3, 0.01, 5)
        assert mountaincar_step(s, 0) == mountaincar_step(s, 0)

    def test_reset_distribution(self):
        rng = np.random.default_rng(0)
        xs = [mountaincar_reset(rng) for _ in range(1000)]
        assert all(-0.6 <= s.position <= -0.4 and s.velocity == 0 and s.steps == 0 for s in xs)

    def test_random_policy_stream(self):
        items = list(mountaincar_episode_stream(lambda obs: np.full(3, 1 / 3), seed=0, episodes=20))
        records = [it for it in items if isinstance(it, EpisodeRecord)]
        assert [r.episode for r in records] == list(range(20))
        rets = np.array([r.ret for r in records])
        assert np.all((rets >= -200) & (rets <= 0))
        assert rets.mean() <= -195
        steps = sum(isinstance(it, Transition) for it in items)
        assert steps == sum(r.steps for r in records)

    def test_stream_deterministic(self):
        def policy(obs):
            return np.array([0.8, 0.0, 0.2]) if obs[1] < 0 else np.array([0.2, 0.0, 0.8])

        def returns():
            return [it.ret for it in mountaincar_episode_stream(policy, 3, episodes=5) if isinstance(it, EpisodeRecord)]

        assert returns() == returns()

    def test_terminal_flag_only_at_goal(self):
        def policy(obs):
            return np.array([1.0, 0, 0]) if obs[1] < 0 else np.array([0, 0, 1.0])

        items = list(mountaincar_episode_stream(policy, 1, episodes=3))
        trans = [it for it in items if isinstance(it, Transition)]
        assert all(t.terminal == (t.next_state[0] >= GOAL_POSITION) for t in trans)
        assert any(t.terminal for t in trans)
