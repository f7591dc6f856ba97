"""GridWorld and MountainCar environments plus behavior-chain transition streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, NamedTuple

import numpy as np

from . import _kernels
from .errors import InvalidArgument
from .mdp import TabularMdp


class Transition(NamedTuple):
    state: object
    action: int
    reward: float
    next_state: object
    terminal: bool = False


class EpisodeRecord(NamedTuple):
    episode: int
    ret: float
    steps: int


# --------------------------------------------------------------------------
# generic tabular behavior chain
# --------------------------------------------------------------------------

_CHUNK = 4096


def _cdfs(mdp: TabularMdp):
    return np.cumsum(mdp.mu0), np.cumsum(mdp.behavior_policy, axis=-1), np.cumsum(mdp.P, axis=-1)


def sample_path(mdp: TabularMdp, T: int, seed: int):
    """First ``T`` transitions of :func:`tabular_stream` as ``(s, a, s')`` arrays."""
    rng = np.random.default_rng(seed)
    u0 = rng.random()
    cum_mu0, cum_pi, cum_P = _cdfs(mdp)
    return _kernels.sample_path(cum_mu0, cum_pi, cum_P, rng.random((T, 2)), u0)


def tabular_stream(mdp: TabularMdp, seed: int) -> Iterator[Transition]:
    """Infinite stream from the behavior chain, starting at ``s0 ~ mu0``.

    Uniforms are drawn in chunks from one generator so the stream matches
    :func:`sample_path` transition for transition.
    """
    rng = np.random.default_rng(seed)
    u0 = rng.random()
    cum_mu0, cum_pi, cum_P = _cdfs(mdp)
    R = mdp.R
    s = None
    while True:
        u = rng.random((_CHUNK, 2))
        if s is not None:
            # continue from the last next-state: make the first draw start there
            mu0 = np.zeros(mdp.num_states)
            mu0[s] = 1.0
            cum_mu0, u0 = np.cumsum(mu0), 0.5
        states, actions, nexts = _kernels.sample_path(cum_mu0, cum_pi, cum_P, u, u0)
        for si, ai, ni in zip(states.tolist(), actions.tolist(), nexts.tolist()):
            yield Transition(si, ai, float(R[si, ai]), ni)
        s = int(nexts[-1])


# --------------------------------------------------------------------------
# GridWorld
# --------------------------------------------------------------------------

UP, DOWN, LEFT, RIGHT, STAY = range(5)
_MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1), STAY: (0, 0)}


def default_reward_map(width: int = 5, height: int = 5) -> np.ndarray:
    """+1 at the top-right corner, -1 at the center cell, 0 elsewhere."""
    m = np.zeros((height, width))
    m[0, width - 1] = 1.0
    m[height // 2, width // 2] = -1.0
    return m


@dataclass(frozen=True, eq=False)
class GridWorld:
    """Deterministic grid; moving into a wall leaves the agent in place.

    States are row-major cell indices. ``R(s, a)`` is the reward-map entry of
    the cell the move lands in.
    """

    width: int = 5
    height: int = 5
    reward_map: np.ndarray = field(default=None)
    gamma: float = 0.9

    def __post_init__(self):
        rm = default_reward_map(self.width, self.height) if self.reward_map is None else np.array(self.reward_map, dtype=float)
        if rm.shape != (self.height, self.width):
            raise InvalidArgument("reward map shape must be (height, width)")
        rm.setflags(write=False)
        object.__setattr__(self, "reward_map", rm)

    num_actions = 5

    @property
    def num_states(self) -> int:
        return self.width * self.height

    def coords(self, s: int):
        return divmod(s, self.width)

    def move(self, s: int, a: int) -> int:
        row, col = self.coords(s)
        dr, dc = _MOVES[a]
        r2, c2 = row + dr, col + dc
        if not (0 <= r2 < self.height and 0 <= c2 < self.width):
            return s
        return r2 * self.width + c2

    def to_mdp(self) -> TabularMdp:
        S, A = self.num_states, self.num_actions
        P = np.zeros((S, A, S))
        R = np.zeros((S, A))
        flat = self.reward_map.reshape(-1)
        for s in range(S):
            for a in range(A):
                sn = self.move(s, a)
                P[s, a, sn] = 1.0
                R[s, a] = flat[sn]
        return TabularMdp(P, R, self.gamma)


def gridworld_stream(gw: GridWorld, seed: int) -> Iterator[Transition]:
    return tabular_stream(gw.to_mdp(), seed)


# --------------------------------------------------------------------------
# MountainCar (classic-control MountainCar-v0 dynamics)
# --------------------------------------------------------------------------

MIN_POSITION = -1.2
MAX_POSITION = 0.6
MAX_SPEED = 0.07
GOAL_POSITION = 0.5
FORCE = 0.001
GRAVITY = 0.0025
HORIZON = 200
STATE_BOX = ((MIN_POSITION, -MAX_SPEED), (MAX_POSITION, MAX_SPEED))


class MountainCarState(NamedTuple):
    position: float
    velocity: float
    steps: int = 0

    @property
    def obs(self) -> np.ndarray:
        return np.array([self.position, self.velocity])


def mountaincar_step(state: MountainCarState, action: int):
    """One step of the dynamics; returns ``(next_state, reward, done)``.

    A state already at the goal is absorbing: it is returned unchanged with
    reward 0 and ``done=True``.
    """
    x, v, n = state
    if not (MIN_POSITION <= x <= MAX_POSITION and -MAX_SPEED <= v <= MAX_SPEED) or action not in (0, 1, 2):
        raise InvalidArgument(f"invalid state/action {state!r}, {action!r}")
    if x >= GOAL_POSITION:
        return state, 0.0, True
    v = v + (action - 1) * FORCE + math.cos(3 * x) * (-GRAVITY)
    v = min(max(v, -MAX_SPEED), MAX_SPEED)
    x = x + v
    x = min(max(x, MIN_POSITION), MAX_POSITION)
    if x == MIN_POSITION and v < 0:
        v = 0.0
    n += 1
    done = x >= GOAL_POSITION or n >= HORIZON
    return MountainCarState(x, v, n), -1.0, done


def mountaincar_reset(rng: np.random.Generator) -> MountainCarState:
    return MountainCarState(float(rng.uniform(-0.6, -0.4)), 0.0, 0)


def mountaincar_episode_stream(policy: Callable[[np.ndarray], np.ndarray], seed: int,
                               episodes: int | None = None) -> Iterator[Transition | EpisodeRecord]:
    """Transitions from consecutive episodes, each followed by an :class:`EpisodeRecord`.

    ``policy(obs)`` returns action probabilities and is queried lazily, so it
    may depend on parameters that change while the stream is consumed.
    ``Transition.terminal`` marks arrival at the goal (time-outs are not
    terminal).
    """
    rng = np.random.default_rng(seed)
    ep = 0
    while episodes is None or ep < episodes:
        state = mountaincar_reset(rng)
        ret, done = 0.0, False
        while not done:
            probs = policy(state.obs)
            a = int(min(np.searchsorted(np.cumsum(probs), rng.random(), side="right"), len(probs) - 1))
            nxt, r, done = mountaincar_step(state, a)
            ret += r
            yield Transition(state.obs, a, r, nxt.obs, nxt.position >= GOAL_POSITION)
            state = nxt
        yield EpisodeRecord(ep, ret, state.steps)
        ep += 1


def run_episode(choose: Callable[[np.ndarray], int], rng: np.random.Generator) -> EpisodeRecord:
    """Roll out a deterministic action rule for one episode (no learning)."""
    state = mountaincar_reset(rng)
    ret, done = 0.0, False
    while not done:
        state, r, done = mountaincar_step(state, choose(state.obs))
        ret += r
    return EpisodeRecord(0, ret, state.steps)
