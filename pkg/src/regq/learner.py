"""Single-loop regularized Q-learning.

Each iteration consumes one transition ``(s, a, r, s')`` and updates

* the main parameters by a projected stochastic step on the lower-level
  least-squares problem:
  ``omega <- P_ball(omega - beta * h_g)``, with
  ``h_g = phi (phi^T omega - r - gamma K(G*(Q_theta(s', .))))``;
* the target parameters by a normalized surrogate step:
  ``theta <- theta - alpha * h_f / ||theta - omega_new||``, with
  ``h_f = (gamma z(s') sum_a' pi_theta(a'|s') phi(s', a') - phi) phi^T (omega_new - theta)``.

The normalized step is skipped only when ``theta`` equals ``omega_new``
exactly; any nonzero gap, however small, gives a well-defined direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import mdp as oracle_mod
from .envs import EpisodeRecord, Transition, sample_path
from .errors import Divergence, InvalidArgument
from .linfa import FeatureModel, ProjectionContext
from .regularizer import (
    SHANNON,
    Regularizer,
    SmoothTruncation,
    conjugate_policy,
    conjugate_value,
    truncate,
    truncate_deriv,
)


@dataclass(frozen=True)
class RunConfig:
    alpha: float
    beta: float
    T: int
    projection_radius: float = math.inf
    seed: int = 0
    log_every: int = 1000

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise InvalidArgument("step sizes must be positive")
        if self.T < 0:
            raise InvalidArgument("T must be nonnegative")
        if not self.projection_radius > 0:
            raise InvalidArgument("projection radius must be positive")
        if self.log_every < 1:
            raise InvalidArgument("log_every must be at least 1")

    @classmethod
    def with_radius(cls, ctx: ProjectionContext, r_max: float, gamma: float, tr: SmoothTruncation, **kw):
        """Config whose projection radius is ``(R_max + gamma delta) / lambda_g``."""
        return cls(projection_radius=ctx.radius(r_max, gamma, tr.delta), **kw)


@dataclass(frozen=True)
class LearnerState:
    theta: np.ndarray
    omega: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, d: int) -> "LearnerState":
        return cls(np.zeros(d), np.zeros(d), 0)


@dataclass
class MetricsRecord:
    t: int
    gap: float
    mspbe: float | None = None
    grad_norm: float | None = None
    tracking: float | None = None
    theta_step: float | None = None
    omega_norm: float | None = None
    sigma_min: float | None = None


CSV_COLUMNS = ("t", "mspbe", "grad_norm", "tracking", "gap", "theta_step", "omega_norm")


def metrics_to_csv_rows(records):
    for rec in records:
        yield ["" if getattr(rec, c) is None else repr(getattr(rec, c)) for c in CSV_COLUMNS]


@dataclass
class RunResult:
    state: LearnerState
    metrics: list = field(default_factory=list)
    episodes: list = field(default_factory=list)
    max_theta_step: float = 0.0
    max_hg_norm: float = 0.0
    max_omega_norm: float = 0.0
    logged_thetas: list = field(default_factory=list)


def _next_state_terms(transition: Transition, theta, features, reg, tr):
    """``(K(G*(Q_theta(s', .))), z(s'), pi_theta(.|s'), Phi(s'))``; zeros at a terminal."""
    phi_next = features.all_actions(transition.next_state)
    if transition.terminal:
        return 0.0, 0.0, np.zeros(len(phi_next)), phi_next
    q = phi_next @ theta
    v = conjugate_value(reg, q)
    return truncate(tr, v), truncate_deriv(tr, v), conjugate_policy(reg, q), phi_next


def lower_grad_sample(state: LearnerState, transition: Transition, features: FeatureModel,
                      reg: Regularizer, tr: SmoothTruncation, gamma: float) -> np.ndarray:
    f = features(transition.state, transition.action)
    k = _next_state_terms(transition, state.theta, features, reg, tr)[0]
    return f * (f @ state.omega - transition.reward - gamma * k)


def upper_grad_sample(theta, omega_next, transition: Transition, features: FeatureModel,
                      reg: Regularizer, tr: SmoothTruncation, gamma: float) -> np.ndarray:
    f = features(transition.state, transition.action)
    _, z, pi, phi_next = _next_state_terms(transition, theta, features, reg, tr)
    return (gamma * z * (pi @ phi_next) - f) * (f @ (np.asarray(omega_next) - theta))


def project_ball(x, radius: float) -> np.ndarray:
    n = float(np.linalg.norm(x))
    return x * (radius / n) if n > radius else x


@dataclass(frozen=True)
class StepInfo:
    theta_step: float
    omega_norm: float
    hg_norm: float
    omega_next: np.ndarray


def step(state: LearnerState, transition: Transition, config: RunConfig, features: FeatureModel,
         reg: Regularizer, tr: SmoothTruncation, gamma: float):
    """One iteration; returns ``(new_state, StepInfo)``."""
    theta, omega = state.theta, state.omega
    hg = lower_grad_sample(state, transition, features, reg, tr, gamma)
    omega_new = project_ball(omega - config.beta * hg, config.projection_radius)
    gap = float(np.linalg.norm(theta - omega_new))
    if gap != 0.0:
        hf = upper_grad_sample(theta, omega_new, transition, features, reg, tr, gamma)
        theta_new = theta - (config.alpha / gap) * hf
    else:
        theta_new = theta
    if not (np.all(np.isfinite(theta_new)) and np.all(np.isfinite(omega_new))):
        raise Divergence(f"non-finite parameters at t={state.t}", state=state)
    info = StepInfo(float(np.linalg.norm(theta_new - theta)), float(np.linalg.norm(omega_new)),
                    float(np.linalg.norm(hg)), omega_new)
    return LearnerState(theta_new, omega_new, state.t + 1), info


def exact_metrics(mdp, reg, tr, features, ctx, theta, omega, omega_next=None) -> MetricsRecord:
    """Oracle quantities at ``theta`` (``t`` and step fields left for the caller)."""
    w_star = oracle_mod.omega_star(mdp, reg, tr, features, ctx, theta)
    mat, smin = oracle_mod.sigma_hat(mdp, reg, tr, features, theta, warn=False)
    rec = MetricsRecord(
        t=0,
        gap=float(np.linalg.norm(theta - omega)),
        mspbe=oracle_mod.mspbe(mdp, reg, features, ctx, theta),
        grad_norm=float(np.linalg.norm(mat @ (w_star - theta))),
        sigma_min=smin,
    )
    if omega_next is not None:
        rec.tracking = float(np.linalg.norm(w_star - omega_next))
    return rec


def _record(t, theta, omega, omega_next, theta_step, oracle, ctx, features, reg, tr):
    if oracle is not None:
        rec = exact_metrics(oracle, reg, tr, features, ctx, theta, omega, omega_next)
        rec.t = t
    else:
        rec = MetricsRecord(t=t, gap=float(np.linalg.norm(theta - omega)))
    rec.theta_step = theta_step
    rec.omega_norm = float(np.linalg.norm(omega_next if omega_next is not None else omega))
    return rec


def run(stream, config: RunConfig, features: FeatureModel, reg: Regularizer, tr: SmoothTruncation,
        gamma: float, oracle=None, ctx: ProjectionContext | None = None,
        init: LearnerState | None = None) -> RunResult:
    """Consume up to ``config.T`` transitions from ``stream``.

    :class:`EpisodeRecord` items in the stream are collected, not counted as
    steps. With a tabular ``oracle`` (and its ``ctx``) exact metrics are
    recorded at ``t = 0, log_every, ...`` and at the final step.
    """
    if oracle is not None and ctx is None:
        raise InvalidArgument("exact metrics need a projection context")
    state = init or LearnerState.zeros(features.d)
    result = RunResult(state)
    it = iter(stream)
    while state.t < config.T:
        item = next(it, None)
        if item is None:
            break
        if isinstance(item, EpisodeRecord):
            result.episodes.append(item)
            continue
        new_state, info = step(state, item, config, features, reg, tr, gamma)
        if state.t % config.log_every == 0:
            result.metrics.append(_record(state.t, state.theta, state.omega, info.omega_next,
                                          info.theta_step, oracle, ctx, features, reg, tr))
            result.logged_thetas.append(state.theta)
        result.max_theta_step = max(result.max_theta_step, info.theta_step)
        result.max_hg_norm = max(result.max_hg_norm, info.hg_norm)
        result.max_omega_norm = max(result.max_omega_norm, info.omega_norm)
        state = new_state
    result.metrics.append(_record(state.t, state.theta, state.omega, None, None, oracle, ctx, features, reg, tr))
    result.logged_thetas.append(state.theta)
    result.state = state
    return result


def run_tabular(mdp, config: RunConfig, features: FeatureModel, reg: Regularizer, tr: SmoothTruncation,
                ctx: ProjectionContext | None = None, exact: bool = True) -> RunResult:
    """Compiled equivalent of ``run(tabular_stream(mdp, seed), ...)``."""
    if not features.tabular:
        raise InvalidArgument("run_tabular needs tabular features")
    states, actions, nexts = sample_path(mdp, config.T, config.seed)
    log_mask = np.zeros(config.T, dtype=np.bool_)
    log_mask[::config.log_every] = True
    kind = _kernels.KIND_SHANNON if reg.kind == SHANNON else _kernels.KIND_TSALLIS
    d = features.d
    (th_log, om_log, omn_log, steps, theta, omega,
     max_step, max_hg, max_omega, bad) = _kernels.run_tabular(
        np.ascontiguousarray(features.table), mdp.R, states, actions, nexts, float(mdp.gamma), kind,
        float(reg.tau), float(tr.delta), float(config.alpha), float(config.beta),
        float(config.projection_radius), np.zeros(d), np.zeros(d), log_mask)
    if bad >= 0:
        raise Divergence(f"non-finite parameters at t={bad}")
    oracle = mdp if exact else None
    if exact and ctx is None:
        raise InvalidArgument("exact metrics need a projection context")
    result = RunResult(LearnerState(theta, omega, config.T), max_theta_step=max_step,
                       max_hg_norm=max_hg, max_omega_norm=max_omega)
    for i, t in enumerate(np.flatnonzero(log_mask)):
        result.metrics.append(_record(int(t), th_log[i], om_log[i], omn_log[i], float(steps[i]),
                                      oracle, ctx, features, reg, tr))
        result.logged_thetas.append(th_log[i])
    result.metrics.append(_record(config.T, theta, omega, None, None, oracle, ctx, features, reg, tr))
    result.logged_thetas.append(theta)
    return result
