import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regq.baselines import (
    ALGORITHMS,
    CQL,
    DOUBLE_QL,
    GREEDY_GQ,
    QLEARNING,
    BaselineState,
    baseline_step,
    double_qlearning_step,
    epsilon_greedy_action,
    greedy_gq_step,
    qlearning_step,
)
from regq.envs import Transition, tabular_stream
from regq.errors import Divergence, InvalidArgument
from regq.linfa import onehot_features
from regq.mdp import TabularMdp


def chain_mdp(gamma=0.9):
    """Three states in a line; action 0 moves left, 1 moves right; reward 1 for
    landing on the right end."""
    P = np.zeros((3, 2, 3))
    R = np.zeros((3, 2))
    for s in range(3):
        left, right = max(s - 1, 0), min(s + 1, 2)
        P[s, 0, left] = P[s, 1, right] = 1.0
        R[s, 0], R[s, 1] = float(left == 2), float(right == 2)
    return TabularMdp(P, R, gamma)


def hard_max_q_star(mdp, sweeps=2000):
    q = np.zeros_like(mdp.R)
    for _ in range(sweeps):
        q = mdp.R + mdp.gamma * mdp.P @ q.max(axis=1)
    return q


FEATS = onehot_features(3, 2)


class TestEpsilonGreedy:
    def test_greedy_tie_break(self):
        rng = np.random.default_rng(0)
        assert epsilon_greedy_action([1.0, 1.0, 0.0], 0.0, rng) == 0
        assert all(epsilon_greedy_action([0.0, 2.0, 2.0], 0.0, rng) == 1 for _ in range(50))

    def test_uniform_when_epsilon_one(self):
        rng = np.random.default_rng(1)
        n = 100_000
        counts = np.bincount([epsilon_greedy_action([5.0, 0.0, 0.0, 0.0], 1.0, rng) for _ in range(n)], minlength=4)
        assert np.max(np.abs(counts / n - 0.25)) <= 4 / np.sqrt(n)

    def test_empty(self):
        with pytest.raises(InvalidArgument):
            epsilon_greedy_action([], 0.1, np.random.default_rng(0))

    def test_state_validation(self):
        with pytest.raises(InvalidArgument):
            BaselineState.zeros("sarsa", 3)
        with pytest.raises(InvalidArgument):
            BaselineState.zeros(QLEARNING, 3, epsilon=1.5)


class TestRecursions:
    def test_qlearning_hand_step(self):
        st0 = BaselineState(QLEARNING, np.array([0, 0, 1.0, 2.0, 0, 0]), np.zeros(6), alpha=0.5)
        new = qlearning_step(st0, Transition(0, 1, 1.0, 1), FEATS, 0.9)
        # target 1 + 0.9 * max(1, 2) = 2.8, current 0
        np.testing.assert_allclose(new.primary, [0, 1.4, 1.0, 2.0, 0, 0])

    def test_terminal(self):
        st0 = BaselineState(QLEARNING, np.ones(6), np.zeros(6), alpha=1.0)
        new = qlearning_step(st0, Transition(0, 0, 3.0, 1, terminal=True), FEATS, 0.9)
        assert new.primary[0] == 3.0

    @pytest.mark.parametrize("algo", ALGORITHMS)
    def test_zero_td_leaves_parameters(self, algo):
        # Q = r + gamma max Q(s') holds exactly on this transition; the slow
        # vectors are chosen so every recursion sees zero error
        w = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        w[1] = 1.0 + 0.9 * 2.0
        w[2:4] = [2.0, 1.0]
        second = {QLEARNING: np.zeros(6), DOUBLE_QL: w.copy(), CQL: w.copy(), GREEDY_GQ: np.zeros(6)}[algo]
        st0 = BaselineState(algo, w.copy(), second)
        new = baseline_step(st0, Transition(0, 1, 1.0, 1), FEATS, 0.9, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(new.primary, st0.primary)
        np.testing.assert_array_equal(new.secondary, st0.secondary)

    @settings(max_examples=100, deadline=None)
    @given(st.sampled_from(ALGORITHMS), st.integers(0, 2), st.integers(0, 1), st.integers(0, 2),
           st.floats(-5, 5), st.integers(0, 2**32 - 1))
    def test_onehot_sparsity(self, algo, s, a, sn, r, seed):
        rng = np.random.default_rng(seed)
        st0 = BaselineState(algo, rng.normal(size=6), rng.normal(size=6))
        if algo == GREEDY_GQ:
            st0 = BaselineState(algo, st0.primary, np.zeros(6))
        new = baseline_step(st0, Transition(s, a, r, sn), FEATS, 0.9, rng=rng)
        touched = np.flatnonzero((new.primary != st0.primary) | (new.secondary != st0.secondary))
        assert set(touched) <= {2 * s + a}

    def test_greedy_gq_correction_touches_next_pair(self):
        st0 = BaselineState(GREEDY_GQ, np.array([0, 0, 3.0, 1.0, 0, 0]), np.array([0, 1.0, 0, 0, 0, 0]))
        new = greedy_gq_step(st0, Transition(0, 1, 0.0, 1), FEATS, 0.9)
        assert set(np.flatnonzero(new.primary != st0.primary)) == {1, 2}

    def test_double_collapses_to_qlearning(self):
        rng = np.random.default_rng(3)
        w = rng.normal(size=6)
        t = Transition(1, 0, 0.5, 2)
        q = qlearning_step(BaselineState(QLEARNING, w, np.zeros(6)), t, FEATS, 0.9)
        for coin in (True, False):
            d = double_qlearning_step(BaselineState(DOUBLE_QL, w, w.copy()), t, FEATS, 0.9, coin=coin)
            updated = d.primary if coin else d.secondary
            np.testing.assert_allclose(updated, q.primary, atol=1e-15)

    def test_double_acts_on_sum(self):
        st0 = BaselineState(DOUBLE_QL, np.ones(6), np.arange(6.0))
        np.testing.assert_array_equal(st0.acting_weights(), np.arange(6.0) + 1)

    @pytest.mark.parametrize("algo", ALGORITHMS)
    def test_divergence(self, algo):
        st0 = BaselineState(algo, np.full(6, 1e308), np.full(6, 1e308), alpha=1e10, beta=1e10)
        with pytest.raises(Divergence), np.errstate(all="ignore"):
            baseline_step(st0, Transition(0, 1, 1.0, 0), FEATS, 0.9, rng=np.random.default_rng(0))

    @pytest.mark.parametrize("algo", ALGORITHMS)
    def test_deterministic(self, algo):
        mdp = chain_mdp()

        def go():
            rng = np.random.default_rng(11)
            state = BaselineState.zeros(algo, 6)
            for _, t in zip(range(500), tabular_stream(mdp, 11)):
                state = baseline_step(state, t, FEATS, 0.9, rng=rng)
            return state.primary.tobytes() + state.secondary.tobytes()

        assert go() == go()


class TestConvergence:
    def test_qlearning_chain(self):
        mdp = chain_mdp()
        q_star = hard_max_q_star(mdp)
        state = BaselineState.zeros(QLEARNING, 6, alpha=0.1)
        for _, t in zip(range(1_000_000), tabular_stream(mdp, seed=0)):
            state = qlearning_step(state, t, FEATS, mdp.gamma)
        assert np.max(np.abs(state.primary.reshape(3, 2) - q_star)) <= 1e-2
