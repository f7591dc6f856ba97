"""Tabular MDPs and exact oracles for the regularized, truncated Bellman machinery.

Every quantity here is computed in closed form from the model: regularized
value iteration, the lower-level solution ``omega*(theta)``, the objective
``J`` and its chain-rule gradient, the Jacobian-like matrix ``Sigma_hat``,
MSPBE, projected fixed points, and the constants that appear in the
convergence and estimation bounds.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolation, InvalidArgument, NonConvergence
from .linfa import FeatureModel, ProjectionContext
from .regularizer import (
    L_G,
    Regularizer,
    SmoothTruncation,
    conjugate_policy,
    conjugate_value,
    truncate,
    truncate_deriv,
)

_INF = SmoothTruncation(math.inf)


def _stochastic(a, axis=-1) -> bool:
    return bool(np.all(a >= 0) and np.allclose(a.sum(axis=axis), 1.0, rtol=0, atol=1e-12))


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with a fixed behavior policy.

    ``P[s, a, s']`` is the transition kernel, ``R[s, a]`` the reward. ``mu0``
    and ``behavior_policy`` default to uniform. ``mu_bhv[s, a]`` is the
    stationary state-action distribution of the behavior chain.
    """

    P: np.ndarray
    R: np.ndarray
    gamma: float
    mu0: np.ndarray | None = None
    behavior_policy: np.ndarray | None = None
    mu_bhv: np.ndarray = field(init=False)

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        R = np.array(self.R, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or R.shape != P.shape[:2]:
            raise InvalidArgument("P must be (S, A, S) and R must be (S, A)")
        S, A = R.shape
        if not _stochastic(P):
            raise InvalidArgument("rows of P must be probability vectors")
        if not np.all(np.isfinite(R)):
            raise InvalidArgument("rewards must be finite")
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidArgument("gamma must lie in [0, 1)")
        mu0 = np.full(S, 1.0 / S) if self.mu0 is None else np.array(self.mu0, dtype=float)
        pi = np.full((S, A), 1.0 / A) if self.behavior_policy is None else np.array(self.behavior_policy, dtype=float)
        if not _stochastic(mu0) or not _stochastic(pi):
            raise InvalidArgument("mu0 and behavior policy must be distributions")
        if np.any(pi <= 0):
            raise InvalidArgument("behavior policy must put positive mass on every action")
        d = stationary_distribution(np.einsum("sa,sap->sp", pi, P))
        mu = d[:, None] * pi
        for name, value in (("P", P), ("R", R), ("mu0", mu0), ("behavior_policy", pi), ("mu_bhv", mu)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def num_states(self) -> int:
        return self.R.shape[0]

    @property
    def num_actions(self) -> int:
        return self.R.shape[1]

    @property
    def r_max(self) -> float:
        return float(np.max(np.abs(self.R)))

    def state_chain(self) -> np.ndarray:
        """State-to-state kernel under the behavior policy."""
        return np.einsum("sa,sap->sp", self.behavior_policy, self.P)

    def with_gamma(self, gamma: float) -> "TabularMdp":
        return TabularMdp(self.P, self.R, gamma, self.mu0, self.behavior_policy)


def stationary_distribution(chain, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Power iteration from the uniform distribution until the l1 change is ``<= tol``."""
    n = chain.shape[0]
    d = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = d @ chain
        nxt /= nxt.sum()
        if np.abs(nxt - d).sum() <= tol:
            return nxt
        d = nxt
    raise NonConvergence("stationary distribution did not converge", residual=float(np.abs(nxt - d).sum()))


def random_mdp(num_states: int, num_actions: int, gamma: float, seed: int, sparsity: float = 0.0) -> TabularMdp:
    """Random MDP with Dirichlet transitions, rewards in [-1, 1], random behavior."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    if sparsity > 0:
        mask = rng.random(P.shape) < sparsity
        mask[..., 0] = False
        P = np.where(mask, 0.0, P)
        P /= P.sum(-1, keepdims=True)
    R = rng.uniform(-1.0, 1.0, size=(num_states, num_actions))
    pi = rng.dirichlet(np.ones(num_actions), size=num_states) + 0.05
    pi /= pi.sum(-1, keepdims=True)
    return TabularMdp(P, R, gamma, behavior_policy=pi)


# --------------------------------------------------------------------------
# plain-text model format
# --------------------------------------------------------------------------

def dumps_mdp(mdp: TabularMdp) -> str:
    """Serialize as text: header ``S A gamma``, ``S`` reward rows of length ``A``,
    then ``S*A`` transition rows of length ``S`` in state-major order."""
    out = io.StringIO()
    S, A = mdp.num_states, mdp.num_actions
    out.write(f"{S} {A} {mdp.gamma!r}\n")
    for row in mdp.R:
        out.write(" ".join(repr(float(x)) for x in row) + "\n")
    for s in range(S):
        out.write("\n")
        for a in range(A):
            out.write(" ".join(repr(float(x)) for x in mdp.P[s, a]) + "\n")
    return out.getvalue()


def loads_mdp(text: str) -> TabularMdp:
    """Inverse of :func:`dumps_mdp`. Blank lines and ``#`` comments are ignored;
    mu0 and the behavior policy are uniform."""
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows or len(rows[0]) != 3:
        raise InvalidArgument("header must be 'S A gamma'")
    try:
        S, A, gamma = int(rows[0][0]), int(rows[0][1]), float(rows[0][2])
        body = [[float(x) for x in r] for r in rows[1:]]
    except ValueError as exc:
        raise InvalidArgument(f"malformed model text: {exc}") from exc
    if len(body) != S + S * A:
        raise InvalidArgument(f"expected {S + S * A} data rows, found {len(body)}")
    R, P = body[:S], body[S:]
    if any(len(r) != A for r in R) or any(len(r) != S for r in P):
        raise InvalidArgument("row length does not match header")
    return TabularMdp(np.array(P).reshape(S, A, S), np.array(R), gamma)


def load_mdp(path) -> TabularMdp:
    with open(path) as fh:
        return loads_mdp(fh.read())


def save_mdp(mdp: TabularMdp, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_mdp(mdp))


# --------------------------------------------------------------------------
# Bellman operators and value iteration
# --------------------------------------------------------------------------

def state_values(reg: Regularizer, tr: SmoothTruncation, q) -> np.ndarray:
    """``K_delta(G*_tau(q(s, .)))`` for every state."""
    return truncate(tr, conjugate_value(reg, np.asarray(q, dtype=float)))


def bellman_backup(mdp: TabularMdp, reg: Regularizer, tr: SmoothTruncation, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return mdp.R + mdp.gamma * (mdp.P @ state_values(reg, tr, q))


def regularized_value_iteration(mdp: TabularMdp, reg: Regularizer, tol: float = 1e-10,
                                max_iter: int = 100_000) -> np.ndarray:
    """Fixed point of the untruncated regularized Bellman operator.

    The returned table satisfies ``||Q - B Q||_inf <= tol * (1 - gamma)``.
    """
    if not tol > 0:
        raise InvalidArgument("tol must be positive")
    q = np.zeros_like(mdp.R)
    if mdp.gamma == 0:
        return bellman_backup(mdp, reg, _INF, q)
    stop = tol * (1 - mdp.gamma) / mdp.gamma
    history = []
    for _ in range(max_iter):
        nxt = bellman_backup(mdp, reg, _INF, q)
        res = float(np.max(np.abs(nxt - q)))
        history.append(res)
        q = nxt
        if res <= stop:
            return q
    raise NonConvergence("value iteration hit max_iter", residual=history[-1], history=history)


# --------------------------------------------------------------------------
# bi-level quantities under linear function approximation
# --------------------------------------------------------------------------

def q_hat(features: FeatureModel, theta) -> np.ndarray:
    """``Phi theta`` as an ``(S, A)`` table."""
    return features.table @ np.asarray(theta, dtype=float)


def regularized_policy(reg: Regularizer, features: FeatureModel, theta) -> np.ndarray:
    """``pi_theta(. | s)`` for every state, shape ``(S, A)``."""
    return conjugate_policy(reg, q_hat(features, theta))


def _backup_target(mdp, reg, tr, features, theta) -> np.ndarray:
    return bellman_backup(mdp, reg, tr, q_hat(features, theta))


def omega_star(mdp, reg, tr, features, ctx: ProjectionContext, theta) -> np.ndarray:
    """Lower-level minimizer: the weighted least-squares fit of ``B Phi theta``."""
    target = _backup_target(mdp, reg, tr, features, theta)
    b = np.einsum("sa,sad->d", mdp.mu_bhv * target, features.table)
    return ctx.solve(b)


def lower_objective(mdp, reg, tr, features, theta, omega) -> float:
    resid = q_hat(features, omega) - _backup_target(mdp, reg, tr, features, theta)
    return 0.5 * float(np.sum(mdp.mu_bhv * resid ** 2))


def lower_grad(mdp, reg, tr, features, theta, omega) -> np.ndarray:
    """``grad_omega g(theta, omega)``."""
    resid = q_hat(features, omega) - _backup_target(mdp, reg, tr, features, theta)
    return np.einsum("sa,sad->d", mdp.mu_bhv * resid, features.table)


def objective_J(mdp, reg, tr, features, ctx, theta) -> float:
    theta = np.asarray(theta, dtype=float)
    diff = q_hat(features, omega_star(mdp, reg, tr, features, ctx, theta) - theta)
    return 0.5 * float(np.sum(mdp.mu_bhv * diff ** 2))


def sigma_hat(mdp, reg, tr, features, theta, warn: bool = True):
    """Return ``(Sigma_hat_theta, smallest singular value)``.

    ``Sigma_hat = E_D[(gamma z(s') sum_a' pi(a'|s') phi(s', a') - phi(s, a)) phi(s, a)^T]``.
    """
    phi = features.table
    q = q_hat(features, theta)
    z = truncate_deriv(tr, conjugate_value(reg, q))
    pi = conjugate_policy(reg, q)
    psi = np.einsum("sa,sad->sd", pi, phi) * np.atleast_1d(z)[:, None]
    nxt = np.einsum("sap,pd->sad", mdp.P, psi)
    weighted = mdp.mu_bhv[..., None] * phi
    mat = np.einsum("sai,saj->ij", mdp.gamma * nxt - phi, weighted)
    smin = float(np.linalg.svd(mat, compute_uv=False)[-1])
    if warn and smin <= 1e-12:
        warnings.warn(f"Sigma_hat is numerically singular (sigma_min={smin:.3e})", AssumptionViolation, stacklevel=2)
    return mat, smin


def grad_J(mdp, reg, tr, features, ctx, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    mat, _ = sigma_hat(mdp, reg, tr, features, theta, warn=False)
    return mat @ (omega_star(mdp, reg, tr, features, ctx, theta) - theta)


def surrogate_grad(mdp, reg, tr, features, theta, omega) -> np.ndarray:
    """``Sigma_hat_theta (omega - theta)``, the upper-level direction with ``omega`` in place of ``omega*``."""
    theta = np.asarray(theta, dtype=float)
    mat, _ = sigma_hat(mdp, reg, tr, features, theta, warn=False)
    return mat @ (np.asarray(omega, dtype=float) - theta)


def mspbe(mdp, reg, features, ctx, theta) -> float:
    """Untruncated MSPBE ``||Phi theta - Pi B_tau Phi theta||^2_D`` (no 1/2)."""
    theta = np.asarray(theta, dtype=float)
    diff = q_hat(features, theta - omega_star(mdp, reg, _INF, features, ctx, theta))
    return float(np.sum(mdp.mu_bhv * diff ** 2))


@dataclass
class FixedPointResult:
    theta: np.ndarray
    residual: float
    iterations: int
    history: list


def projected_fixed_point(mdp, reg, tr, features, ctx, damping: float = 1.0, tol: float = 1e-9,
                          max_iter: int = 100_000, theta0=None) -> FixedPointResult:
    """Damped iteration ``theta <- (1 - eta) theta + eta omega*(theta)`` from zero.

    Stops once ``||omega*(theta) - theta|| <= tol``; raises
    :class:`NonConvergence` with the residual history otherwise.
    """
    if not 0 < damping <= 1:
        raise InvalidArgument("damping must lie in (0, 1]")
    if not tol > 0:
        raise InvalidArgument("tol must be positive")
    theta = np.zeros(features.d) if theta0 is None else np.array(theta0, dtype=float)
    history = []
    for it in range(max_iter):
        w = omega_star(mdp, reg, tr, features, ctx, theta)
        res = float(np.linalg.norm(w - theta))
        history.append(res)
        if res <= tol:
            return FixedPointResult(theta, res, it, history)
        if not math.isfinite(res):
            break
        theta = (1 - damping) * theta + damping * w
    raise NonConvergence("projected fixed-point iteration did not converge",
                         residual=history[-1], history=history)


def approx_error_estimate(mdp, reg, tr, features, ctx, theta_samples) -> float:
    """Sampled lower bound on ``sup_theta ||Pi B Phi theta - B Phi theta||_inf``."""
    best = -math.inf
    for theta in theta_samples:
        w = omega_star(mdp, reg, tr, features, ctx, theta)
        gap = q_hat(features, w) - _backup_target(mdp, reg, tr, features, theta)
        best = max(best, float(np.max(np.abs(gap))))
    if best == -math.inf:
        raise InvalidArgument("need at least one theta sample")
    return best


def delta0(mdp_or_rmax, reg: Regularizer, gamma: float | None = None) -> float:
    """Uniform bound ``(R_max + tau B) / (1 - gamma)`` on regularized state values.

    Accepts a :class:`TabularMdp` or an explicit ``R_max`` with ``gamma``;
    returns ``inf`` when ``gamma >= 1``.
    """
    if isinstance(mdp_or_rmax, TabularMdp):
        r_max, gamma = mdp_or_rmax.r_max, mdp_or_rmax.gamma
    else:
        r_max = float(mdp_or_rmax)
    if gamma >= 1:
        return math.inf
    return (r_max + reg.tau * reg.bound_B) / (1 - gamma)


@dataclass(frozen=True)
class DiagnosticConstants:
    L0: float
    L1: float
    delta0: float
    sigma_min: float | None = None


def diagnostic_constants(mdp, reg, tr, ctx, features=None, theta=None) -> DiagnosticConstants:
    smin = None
    if features is not None and theta is not None:
        smin = sigma_hat(mdp, reg, tr, features, theta, warn=False)[1]
    return DiagnosticConstants(
        L0=4.0 / ctx.lambda_g,
        L1=L_G * reg.num_actions / reg.tau + 2.0 / tr.delta,
        delta0=delta0(mdp, reg),
        sigma_min=smin,
    )


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    grad_norm: float
    sigma_min: float
    e_approx: float
    truncation_bias: float

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + 1e-8


def theorem2_check(mdp, reg, tr, features, ctx, theta, e_approx: float, q_star=None) -> BoundReport:
    """Pointwise estimation bound
    ``(1-gamma)||Q* - Phi theta||_inf <= ||grad J||/sigma_min + E_approx + gamma (delta0 - K(delta0))``."""
    if q_star is None:
        q_star = regularized_value_iteration(mdp, reg, tol=1e-12)
    theta = np.asarray(theta, dtype=float)
    g = float(np.linalg.norm(grad_J(mdp, reg, tr, features, ctx, theta)))
    _, smin = sigma_hat(mdp, reg, tr, features, theta)
    d0 = delta0(mdp, reg)
    bias = mdp.gamma * (d0 - truncate(tr, d0))
    lhs = (1 - mdp.gamma) * float(np.max(np.abs(q_star - q_hat(features, theta))))
    rhs = (g / smin if smin > 0 else math.inf) + e_approx + bias
    return BoundReport(lhs, rhs, g, smin, e_approx, bias)
