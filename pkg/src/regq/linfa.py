"""Linear function approximation: feature maps and the projection context."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DegenerateFeatures, InsufficientSamples, InvalidArgument

ONEHOT = "onehot"
GRIDPOLY = "gridpoly"
RBF = "rbf"
TABLE = "table"

_DEGENERATE_EIG = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureModel:
    """Feature map ``phi(s, a)`` with ``||phi||_2 <= 1`` everywhere.

    Tabular kinds (onehot, gridpoly, table) carry a ``(S, A, d)`` table and take
    integer states. The rbf kind takes continuous states.
    """

    kind: str
    d: int
    num_actions: int
    table: np.ndarray | None = None
    rbf_centers: np.ndarray | None = None
    rbf_width: float | None = None
    state_low: np.ndarray | None = None
    state_high: np.ndarray | None = None

    @property
    def tabular(self) -> bool:
        return self.table is not None

    def __call__(self, state, action: int) -> np.ndarray:
        if self.tabular:
            return self.table[state, action]
        return self.all_actions(state)[action]

    def all_actions(self, state) -> np.ndarray:
        """``(A, d)`` matrix whose rows are ``phi(state, a)``."""
        if self.tabular:
            return self.table[state]
        k = self.kernels(state)
        k = k / max(1.0, float(np.linalg.norm(k)))
        l = k.size
        out = np.zeros((self.num_actions, self.d))
        for a in range(self.num_actions):
            out[a, a * l:(a + 1) * l] = k
        return out

    def kernels(self, state) -> np.ndarray:
        """Raw (unnormalized) Gaussian activations of a continuous state."""
        if self.kind != RBF:
            raise InvalidArgument("kernels are only defined for rbf features")
        s = (np.asarray(state, dtype=float) - self.state_low) / (self.state_high - self.state_low)
        sq = np.sum((self.rbf_centers - s) ** 2, axis=1)
        return np.exp(-sq / (2.0 * self.rbf_width ** 2))

    def matrix(self) -> np.ndarray:
        """Stacked ``Phi`` of shape ``(S*A, d)``, state-major."""
        if not self.tabular:
            raise InvalidArgument("only tabular feature models have a matrix")
        return self.table.reshape(-1, self.d)


def onehot_features(num_states: int, num_actions: int) -> FeatureModel:
    d = num_states * num_actions
    return FeatureModel(ONEHOT, d, num_actions, table=_frozen(np.eye(d).reshape(num_states, num_actions, d)))


def table_features(table, normalize: bool = True) -> FeatureModel:
    """Wrap an arbitrary ``(S, A, d)`` table.

    With ``normalize`` every vector longer than 1 is scaled back to unit norm.
    """
    table = np.array(table, dtype=float)
    if table.ndim != 3:
        raise InvalidArgument("feature table must have shape (S, A, d)")
    norms = np.linalg.norm(table, axis=-1, keepdims=True)
    if normalize:
        table = table / np.maximum(1.0, norms)
    elif np.any(norms > 1.0 + 1e-12):
        raise InvalidArgument("feature vectors must have norm at most 1")
    return FeatureModel(TABLE, table.shape[2], table.shape[1], table=_frozen(table))


def build_gridpoly_features(grid_width: int, grid_height: int, num_actions: int) -> FeatureModel:
    """Degree-2 polynomial features ``(1, x, y, x^2, y^2, xy)`` per action block.

    States are indexed row-major: ``s = row * grid_width + col``, with
    ``x = col / (W-1)`` and ``y = row / (H-1)``. The table is rescaled so the
    largest feature norm is exactly 1.
    """
    if min(grid_width, grid_height, num_actions) < 1:
        raise InvalidArgument("grid dimensions and action count must be positive")
    n = grid_width * grid_height
    d = 6 * num_actions
    table = np.zeros((n, num_actions, d))
    for row, col in itertools.product(range(grid_height), range(grid_width)):
        x = col / (grid_width - 1) if grid_width > 1 else 0.0
        y = row / (grid_height - 1) if grid_height > 1 else 0.0
        mono = np.array([1.0, x, y, x * x, y * y, x * y])
        for a in range(num_actions):
            table[row * grid_width + col, a, 6 * a:6 * a + 6] = mono
    table /= np.linalg.norm(table, axis=-1).max()
    return FeatureModel(GRIDPOLY, d, num_actions, table=_frozen(table))


def build_rbf_features(num_kernels: int, width: float, num_actions: int, state_box, seed: int) -> FeatureModel:
    """Gaussian kernels with centers drawn uniformly from the rescaled state box.

    ``state_box`` is ``(low, high)``; states are mapped affinely to the unit
    cube before evaluating the kernels. ``d = num_kernels * num_actions``.
    """
    if num_kernels < 1:
        raise InvalidArgument("need at least one kernel")
    if not width > 0:
        raise InvalidArgument("kernel width must be positive")
    low, high = (np.asarray(b, dtype=float) for b in state_box)
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(num_kernels, low.size))
    return FeatureModel(
        RBF,
        num_kernels * num_actions,
        num_actions,
        rbf_centers=_frozen(centers),
        rbf_width=float(width),
        state_low=_frozen(low),
        state_high=_frozen(high),
    )


@dataclass(frozen=True, eq=False)
class ProjectionContext:
    """Second-moment matrix ``Sigma = E[phi phi^T]`` and its eigenvalue floor."""

    sigma: np.ndarray
    lambda_g: float
    source: str = "exact"
    sample_count: int | None = None
    _cho: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if not self.lambda_g > 0:
            raise InvalidArgument("lambda_g must be positive")
        try:
            cho = linalg.cho_factor(self.sigma, lower=True)
        except linalg.LinAlgError as exc:
            raise DegenerateFeatures("feature second moment is not positive definite") from exc
        object.__setattr__(self, "_cho", cho)

    @property
    def d(self) -> int:
        return self.sigma.shape[0]

    def solve(self, b) -> np.ndarray:
        """``Sigma^{-1} b`` via the cached Cholesky factor."""
        return linalg.cho_solve(self._cho, b)

    def radius(self, r_max: float, gamma: float, delta: float) -> float:
        """Ball radius ``(R_max + gamma delta) / lambda_g`` containing every ``omega*``."""
        return (r_max + gamma * delta) / self.lambda_g


def exact_sigma(features: FeatureModel, mdp) -> ProjectionContext:
    phi = features.matrix()
    w = np.asarray(mdp.mu_bhv, dtype=float).reshape(-1)
    sigma = (phi * w[:, None]).T @ phi
    sigma = 0.5 * (sigma + sigma.T)
    lam = float(np.linalg.eigvalsh(sigma)[0])
    if lam <= _DEGENERATE_EIG:
        raise DegenerateFeatures(f"smallest eigenvalue of Sigma is {lam:.3e}")
    return ProjectionContext(_frozen(sigma), lam, "exact")


def estimate_sigma(features: FeatureModel, samples, n: int, floor: float = 1e-3) -> ProjectionContext:
    """Empirical ``E[phi phi^T]`` from the first ``n`` ``(state, action)`` samples.

    ``lambda_g`` is floored at ``floor``; the matrix itself gets a ``floor``
    ridge only if it is too singular to factor.
    """
    if n < features.d:
        raise InsufficientSamples(f"need at least d={features.d} samples, got {n}")
    sigma = np.zeros((features.d, features.d))
    count = 0
    for s, a in itertools.islice(samples, n):
        f = features(s, a)
        sigma += np.outer(f, f)
        count += 1
    if count < n:
        raise InsufficientSamples(f"stream ended after {count} samples")
    sigma /= n
    sigma = 0.5 * (sigma + sigma.T)
    lam = float(np.linalg.eigvalsh(sigma)[0])
    if lam <= _DEGENERATE_EIG:
        sigma = sigma + floor * np.eye(features.d)
    return ProjectionContext(_frozen(sigma), max(lam, floor), "estimated", n)
