"""Linear-FA control baselines: Q-learning, Double Q-learning, Coupled
Q-learning and Greedy-GQ, with an epsilon-greedy behavior rule.

The exact recursions are written out in ``docs/baselines.md``. Throughout,
``a* = argmax_a phi(s', a)^T v`` with ties broken toward the lowest index,
and the bootstrap term is dropped on terminal transitions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .envs import Transition
from .errors import Divergence, InvalidArgument
from .linfa import FeatureModel

QLEARNING = "qlearning"
DOUBLE_QL = "double_ql"
CQL = "cql"
GREEDY_GQ = "greedy_gq"
ALGORITHMS = (QLEARNING, DOUBLE_QL, CQL, GREEDY_GQ)


@dataclass(frozen=True)
class BaselineState:
    """``primary``: the estimate used for acting (Double QL acts on the sum).
    ``secondary``: Double QL's second estimator, CQL's slow vector, Greedy-GQ's
    correction weights."""

    algorithm: str
    primary: np.ndarray
    secondary: np.ndarray
    alpha: float = 0.1
    beta: float = 0.1
    epsilon: float = 0.1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidArgument(f"unknown baseline {self.algorithm!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidArgument("epsilon must lie in [0, 1]")

    @classmethod
    def zeros(cls, algorithm: str, d: int, **kw) -> "BaselineState":
        return cls(algorithm, np.zeros(d), np.zeros(d), **kw)

    def acting_weights(self) -> np.ndarray:
        if self.algorithm == DOUBLE_QL:
            return self.primary + self.secondary
        return self.primary


def epsilon_greedy_action(q_values, epsilon: float, rng: np.random.Generator) -> int:
    """Lowest-index argmax with probability ``1 - epsilon``, else uniform."""
    q = np.asarray(q_values, dtype=float)
    if q.size == 0:
        raise InvalidArgument("empty action-value vector")
    if rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def _bootstrap(transition: Transition, features: FeatureModel, v, gamma):
    """``(gamma * phi(s', a*)^T v_eval, phi(s', a*))`` for ``a*`` greedy in ``v``."""
    phi_next = features.all_actions(transition.next_state)
    if transition.terminal:
        return 0.0, np.zeros(phi_next.shape[1]), phi_next
    a_star = int(np.argmax(phi_next @ v))
    return gamma, phi_next[a_star], phi_next


def _check(state: BaselineState) -> BaselineState:
    if not (np.all(np.isfinite(state.primary)) and np.all(np.isfinite(state.secondary))):
        raise Divergence(f"{state.algorithm} parameters became non-finite", state=state)
    return state


def qlearning_step(state: BaselineState, transition: Transition, features: FeatureModel, gamma: float):
    w = state.primary
    f = features(transition.state, transition.action)
    g, f_next, _ = _bootstrap(transition, features, w, gamma)
    td = transition.reward + g * (f_next @ w) - f @ w
    return _check(replace(state, primary=w + state.alpha * td * f))


def double_qlearning_step(state: BaselineState, transition: Transition, features: FeatureModel, gamma: float,
                          rng: np.random.Generator | None = None, coin: bool | None = None):
    """Heads (``coin=True``) updates ``primary`` using ``secondary`` for evaluation."""
    if coin is None:
        coin = bool(rng.random() < 0.5)
    upd, other = (state.primary, state.secondary) if coin else (state.secondary, state.primary)
    f = features(transition.state, transition.action)
    g, f_next, _ = _bootstrap(transition, features, upd, gamma)
    td = transition.reward + g * (f_next @ other) - f @ upd
    upd = upd + state.alpha * td * f
    new = replace(state, primary=upd) if coin else replace(state, secondary=upd)
    return _check(new)


def coupled_qlearning_step(state: BaselineState, transition: Transition, features: FeatureModel, gamma: float):
    """Fast vector ``w`` chases ``r + gamma max_a phi(s',a)^T theta``; slow ``theta``
    chases ``w`` along ``phi phi^T``."""
    w, theta = state.primary, state.secondary
    f = features(transition.state, transition.action)
    g, f_next, _ = _bootstrap(transition, features, theta, gamma)
    td = transition.reward + g * (f_next @ theta) - f @ w
    w_new = w + state.alpha * td * f
    theta_new = theta + state.beta * (f @ w - f @ theta) * f
    return _check(replace(state, primary=w_new, secondary=theta_new))


def greedy_gq_step(state: BaselineState, transition: Transition, features: FeatureModel, gamma: float):
    """Gradient-corrected update with auxiliary weights ``u`` (``secondary``)."""
    theta, u = state.primary, state.secondary
    f = features(transition.state, transition.action)
    g, f_next, _ = _bootstrap(transition, features, theta, gamma)
    td = transition.reward + g * (f_next @ theta) - f @ theta
    theta_new = theta + state.alpha * (td * f - g * (f @ u) * f_next)
    u_new = u + state.beta * (td - f @ u) * f
    return _check(replace(state, primary=theta_new, secondary=u_new))


def baseline_step(state: BaselineState, transition: Transition, features: FeatureModel, gamma: float,
                  rng: np.random.Generator | None = None) -> BaselineState:
    if state.algorithm == QLEARNING:
        return qlearning_step(state, transition, features, gamma)
    if state.algorithm == DOUBLE_QL:
        return double_qlearning_step(state, transition, features, gamma, rng=rng)
    if state.algorithm == CQL:
        return coupled_qlearning_step(state, transition, features, gamma)
    return greedy_gq_step(state, transition, features, gamma)
