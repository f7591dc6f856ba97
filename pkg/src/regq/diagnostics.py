"""Inequality checks for the analytical bounds, evaluated with the exact oracles.

Each check draws random instances, evaluates ``lhs`` and ``rhs`` of one bound,
and reports the worst ``lhs - rhs`` together with the witness that produced
it. A check passes when that worst margin is at most ``tol``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import mdp as M
from .envs import Transition
from .learner import LearnerState, RunConfig, lower_grad_sample, step
from .linfa import exact_sigma, onehot_features, table_features
from .regularizer import L_G, SHANNON, TSALLIS, Regularizer, SmoothTruncation, conjugate_value


@dataclass
class CheckResult:
    name: str
    instances: int = 0
    worst_margin: float = -math.inf
    witness: dict = field(default_factory=dict)
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return self.instances > 0 and self.worst_margin <= self.tol

    def record(self, lhs: float, rhs: float, **witness) -> None:
        self.instances += 1
        margin = lhs - rhs
        if margin > self.worst_margin:
            self.worst_margin = margin
            self.witness = {"lhs": lhs, "rhs": rhs, **witness}

    def merge(self, other: "CheckResult") -> None:
        self.instances += other.instances
        if other.worst_margin > self.worst_margin:
            self.worst_margin, self.witness = other.worst_margin, other.witness


@dataclass(frozen=True)
class Instance:
    """One random problem: model, features, context, regularizer and truncation."""

    mdp: M.TabularMdp
    features: object
    ctx: object
    reg: Regularizer
    tr: SmoothTruncation


def random_instance(seed: int, num_states: int = 6, num_actions: int = 3, d: int = 8,
                    gamma: float = 0.9) -> Instance:
    """Random MDP with random normalized features; regularizer, tau and delta vary with the seed."""
    rng = np.random.default_rng(seed)
    mdp = M.random_mdp(num_states, num_actions, gamma, seed=int(rng.integers(2**31)))
    feats = table_features(rng.normal(size=(num_states, num_actions, d)))
    kind = (SHANNON, TSALLIS)[seed % 2]
    reg = Regularizer(kind, float(rng.choice([0.3, 1.0, 2.0])), num_actions)
    tr = SmoothTruncation(float(rng.choice([1.0, 5.0, 20.0])))
    return Instance(mdp, feats, exact_sigma(feats, mdp), reg, tr)


def _ball_point(rng, d, radius):
    v = rng.normal(size=d)
    return v / np.linalg.norm(v) * radius * rng.random() ** (1.0 / d)


def _random_transition(rng, mdp) -> Transition:
    s = int(rng.integers(mdp.num_states))
    a = int(rng.integers(mdp.num_actions))
    support = np.flatnonzero(mdp.P[s, a] > 0)
    return Transition(s, a, float(mdp.R[s, a]), int(rng.choice(support)))


def check_instance(inst: Instance, pairs: int, seed: int, tol: float = 1e-9, theta_scale: float = 3.0) -> dict:
    """Run every bound on ``pairs`` random ``(theta1, theta2, omega)`` draws."""
    mdp, f, ctx, reg, tr = inst.mdp, inst.features, inst.ctx, inst.reg, inst.tr
    rng = np.random.default_rng(seed)
    lam, A, g = ctx.lambda_g, mdp.num_actions, mdp.gamma
    radius = ctx.radius(mdp.r_max, g, tr.delta)
    consts = M.diagnostic_constants(mdp, reg, tr, ctx)
    cfg = RunConfig(alpha=0.05, beta=0.5, T=1, projection_radius=radius)
    names = ["lemma2_hg_bound", "lemmaA1_omega_lipschitz", "lemmaA2_policy_lipschitz",
             "lemmaA3_sigma_hat_lipschitz", "lemmaA4_theta_step", "lemmaA5_surrogate_gap",
             "lemma1_relaxed_smoothness", "prop2_strong_convexity", "prop1_conjugate_bound"]
    out = {n: CheckResult(n, tol=tol) for n in names}
    for _ in range(pairs):
        scale = theta_scale * rng.random()
        th1, th2 = rng.normal(scale=scale, size=(2, f.d))
        omega = _ball_point(rng, f.d, radius)
        dth = float(np.linalg.norm(th1 - th2))
        t = _random_transition(rng, mdp)

        hg = lower_grad_sample(LearnerState(th1, omega), t, f, reg, tr, g)
        out["lemma2_hg_bound"].record(float(np.linalg.norm(hg)), 2 * (mdp.r_max + tr.delta) / lam)

        w1 = M.omega_star(mdp, reg, tr, f, ctx, th1)
        w2 = M.omega_star(mdp, reg, tr, f, ctx, th2)
        out["lemmaA1_omega_lipschitz"].record(float(np.linalg.norm(w1 - w2)), dth / lam)

        p1 = M.regularized_policy(reg, f, th1)
        p2 = M.regularized_policy(reg, f, th2)
        pol = float(np.max(np.linalg.norm(p1 - p2, axis=1)))
        out["lemmaA2_policy_lipschitz"].record(pol, L_G * math.sqrt(A) / reg.tau * dth)

        s1, _ = M.sigma_hat(mdp, reg, tr, f, th1, warn=False)
        s2, _ = M.sigma_hat(mdp, reg, tr, f, th2, warn=False)
        out["lemmaA3_sigma_hat_lipschitz"].record(float(np.linalg.norm(s1 - s2, 2)), consts.L1 * dth)

        _, info = step(LearnerState(th1, omega), t, cfg, f, reg, tr, g)
        out["lemmaA4_theta_step"].record(info.theta_step, 2 * cfg.alpha)

        grad1 = s1 @ (w1 - th1)
        out["lemmaA5_surrogate_gap"].record(float(np.linalg.norm(grad1 - s1 @ (omega - th1))),
                                            2 * float(np.linalg.norm(w1 - omega)))

        grad2 = s2 @ (w2 - th2)
        out["lemma1_relaxed_smoothness"].record(
            float(np.linalg.norm(grad1 - grad2)), (consts.L0 + consts.L1 * float(np.linalg.norm(w2 - th2))) * dth,
            witness_theta_norm=float(np.linalg.norm(th1)))

        o2 = _ball_point(rng, f.d, radius)
        lhs_sc = M.lower_objective(mdp, reg, tr, f, th1, omega)
        rhs_sc = (M.lower_objective(mdp, reg, tr, f, th1, o2) + M.lower_grad(mdp, reg, tr, f, th1, o2) @ (omega - o2)
                  + 0.5 * lam * float(np.sum((omega - o2) ** 2)))
        # strong convexity reads lhs >= rhs; store it as rhs - lhs <= 0
        out["prop2_strong_convexity"].record(rhs_sc, lhs_sc)

        q = M.q_hat(f, th1)
        gap = float(np.max(np.abs(conjugate_value(reg, q) - q.max(axis=1))))
        out["prop1_conjugate_bound"].record(gap, reg.tau * reg.bound_B)
    return out


def run_battery(num_mdps: int = 20, pairs: int = 200, seed: int = 0, tol: float = 1e-9) -> list:
    """The default random-MDP battery; returns one merged :class:`CheckResult` per bound."""
    merged = {}
    for k in range(num_mdps):
        res = check_instance(random_instance(seed * 1000 + k), pairs, seed=seed * 1000 + k, tol=tol)
        for name, r in res.items():
            if name in merged:
                merged[name].merge(r)
            else:
                merged[name] = r
    return list(merged.values())


def finite_difference_check(num_mdps: int = 20, thetas: int = 10, seed: int = 0, h: float = 1e-5,
                            tau: float = 1.0, delta: float = 5.0, d: int = 8, tol: float = 1e-5) -> CheckResult:
    """Max relative l2 error between the chain-rule gradient and central differences of ``J``."""
    res = CheckResult("grad_J_finite_difference", tol=0.0)
    worst = 0.0
    for k in range(num_mdps):
        rng = np.random.default_rng(seed * 1000 + k)
        mdp = M.random_mdp(6, 3, 0.9, seed=int(rng.integers(2**31)))
        f = table_features(rng.normal(size=(6, 3, d)))
        ctx = exact_sigma(f, mdp)
        reg, tr = Regularizer(SHANNON, tau, 3), SmoothTruncation(delta)
        for th in rng.normal(scale=2.0, size=(thetas, d)):
            g = M.grad_J(mdp, reg, tr, f, ctx, th)
            fd = np.array([(M.objective_J(mdp, reg, tr, f, ctx, th + h * e)
                            - M.objective_J(mdp, reg, tr, f, ctx, th - h * e)) / (2 * h) for e in np.eye(d)])
            rel = float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300))
            res.record(rel, tol, mdp=k)
            worst = max(worst, rel)
    res.witness["max_rel_error"] = worst
    return res


def theorem2_onehot_check(num_mdps: int = 5, thetas: int = 40, seed: int = 0, c: float = 30.0) -> CheckResult:
    """Pointwise estimation bound with complete (one-hot) features, where ``E_approx = 0``."""
    res = CheckResult("theorem2_onehot", tol=1e-8)
    for k in range(num_mdps):
        rng = np.random.default_rng(seed * 1000 + k)
        mdp = M.random_mdp(6, 3, 0.9, seed=int(rng.integers(2**31)))
        f = onehot_features(6, 3)
        ctx = exact_sigma(f, mdp)
        reg = Regularizer(SHANNON, 1.0, 3)
        tr = SmoothTruncation(c * M.delta0(mdp, reg))
        q_star = M.regularized_value_iteration(mdp, reg, tol=1e-12)
        for th in rng.normal(scale=5.0, size=(thetas, f.d)):
            rep = M.theorem2_check(mdp, reg, tr, f, ctx, th, 0.0, q_star)
            res.record(rep.lhs, rep.rhs, mdp=k, sigma_min=rep.sigma_min)
    return res


def gridworld_smoothness_check(pairs: int = 200, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    """Relaxed smoothness of ``J`` on the GridWorld with polynomial features."""
    from .envs import GridWorld
    from .linfa import build_gridpoly_features
    gw = GridWorld()
    mdp = gw.to_mdp()
    f = build_gridpoly_features(gw.width, gw.height, gw.num_actions)
    ctx = exact_sigma(f, mdp)
    reg = Regularizer(SHANNON, 1.0, gw.num_actions)
    tr = SmoothTruncation(M.delta0(mdp, reg))
    consts = M.diagnostic_constants(mdp, reg, tr, ctx)
    rng = np.random.default_rng(seed)
    res = CheckResult("lemma1_gridworld", tol=tol)
    for _ in range(pairs):
        th1, th2 = rng.normal(scale=10 * rng.random(), size=(2, f.d))
        g1 = M.grad_J(mdp, reg, tr, f, ctx, th1)
        g2 = M.grad_J(mdp, reg, tr, f, ctx, th2)
        w2 = M.omega_star(mdp, reg, tr, f, ctx, th2)
        rhs = (consts.L0 + consts.L1 * float(np.linalg.norm(w2 - th2))) * float(np.linalg.norm(th1 - th2))
        res.record(float(np.linalg.norm(g1 - g2)), rhs)
    return res
