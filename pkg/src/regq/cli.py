"""Command-line experiment harness.

Usage::

    regq <command> --config <file.json> [--out <dir>] [--no-header-comment]

Commands: ``gridworld-fixed-points``, ``gridworld-train``, ``mountaincar``,
``diagnostics``. The configuration is a JSON object validated against
``config_schema.json`` before anything runs; unknown keys are rejected and
seeds are always listed explicitly.

Exit codes: 0 success, 2 configuration error, 3 diagnostics failure,
4 every seed of some cell diverged.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import diagnostics as diag
from . import mdp as M
from .baselines import ALGORITHMS, BaselineState, baseline_step
from .envs import (
    STATE_BOX,
    EpisodeRecord,
    GridWorld,
    mountaincar_episode_stream,
    run_episode,
)
from .errors import Divergence, NonConvergence
from .learner import CSV_COLUMNS, LearnerState, RunConfig, metrics_to_csv_rows, run_tabular, step
from .linfa import build_gridpoly_features, build_rbf_features, estimate_sigma, exact_sigma, onehot_features
from .regularizer import Regularizer, SmoothTruncation, conjugate_policy

EXIT_OK, EXIT_CONFIG, EXIT_DIAGNOSTICS, EXIT_DIVERGED = 0, 2, 3, 4

COMMANDS = {
    "gridworld-fixed-points": ("gridworld-fixed-points",),
    "gridworld-train": ("gridworld-train",),
    "mountaincar": ("mountaincar-train", "mountaincar-eval"),
    "diagnostics": ("diagnostics",),
}

ALGORITHM1 = "algorithm1"

# Published MountainCar test returns (mean, sd over 20 runs), keyed by
# (algorithm, tau, d). Emitted as comments next to the measured values; they
# are for comparison only. Greedy-GQ was reported as -200 throughout.
TABLE_I_REFERENCE = {}
for _d, _row in {
    30: ((-177.28, 32.00), (-199.37, 6.27), (-177.51, 33.73), (-144.36, 26.46), (-177.83, 30.09)),
    60: ((-143.08, 32.47), (-200.00, 0.00), (-132.76, 31.54), (-121.01, 31.82), (-123.84, 28.35)),
    90: ((-175.40, 17.77), (-200.00, 0.00), (-146.78, 22.74), (-121.37, 19.84), (-120.31, 19.20)),
    120: ((-138.74, 11.00), (-199.12, 3.97), (-146.23, 12.77), (-176.17, 22.65), (-145.15, 29.48)),
    150: ((-141.04, 24.77), (-200.00, 0.00), (-155.60, 19.43), (-139.58, 20.59), (-120.17, 20.64)),
    180: ((-135.62, 32.01), (-196.32, 13.61), (-110.66, 20.87), (-120.88, 22.50), (-122.64, 22.01)),
}.items():
    for _key, _val in zip((("qlearning", None), ("cql", None), ("double_ql", None),
                           ("algorithm1", 0.01), ("algorithm1", 0.05)), _row):
        TABLE_I_REFERENCE[(_key[0], _key[1], _d)] = _val
    TABLE_I_REFERENCE[("greedy_gq", None, _d)] = (-200.0, 0.0)


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def load_schema() -> dict:
    return json.loads(resources.files("regq").joinpath("config_schema.json").read_text())


def load_config(path, command: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    if cfg["experiment"] not in COMMANDS[command]:
        raise ConfigError(f"experiment {cfg['experiment']!r} cannot run under command {command!r}")
    if len(set(cfg.get("seeds", []))) != len(cfg.get("seeds", [])):
        raise ConfigError("seeds must be distinct")
    return cfg


def _regularizer(cfg, num_actions) -> Regularizer:
    r = cfg.get("regularizer", {})
    return Regularizer(r.get("kind", "shannon"), float(r.get("tau", 1.0)), num_actions)


def _gridworld(cfg) -> GridWorld:
    g = cfg.get("gridworld", {})
    return GridWorld(g.get("width", 5), g.get("height", 5), g.get("reward_map"), cfg.get("gamma", 0.9))


def _tabular_model(cfg):
    """The MDP for GridWorld commands: a model file if given, else the grid."""
    gw = _gridworld(cfg)
    if "mdp_file" in cfg:
        mdp = M.load_mdp(cfg["mdp_file"])
        if mdp.num_states != gw.num_states:
            raise ConfigError("mdp_file state count does not match the grid size")
        return gw, mdp
    return gw, gw.to_mdp()


def _tabular_features(cfg, gw, mdp):
    kind = cfg.get("features", {}).get("kind", "gridpoly")
    if kind == "onehot":
        return onehot_features(mdp.num_states, mdp.num_actions)
    if kind == "gridpoly":
        return build_gridpoly_features(gw.width, gw.height, mdp.num_actions)
    raise ConfigError(f"feature kind {kind!r} is not available for tabular experiments")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


class CsvOut:
    """Collects rows and writes them with optional ``#`` comment lines."""

    def __init__(self, header, comments=()):
        self.header = list(header)
        self.comments = list(comments)
        self.rows = []

    def add(self, *row):
        self.rows.append([_fmt(v) for v in row])

    def text(self, header_comment: str | None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        for c in self.comments:
            buf.write(f"# {c}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue()


# --------------------------------------------------------------------------
# GridWorld
# --------------------------------------------------------------------------

def _multipliers(cfg):
    return [float(c) for c in cfg.get("delta_multipliers", [1, 10, 30])]


def cmd_gridworld_fixed_points(cfg) -> tuple[dict, int]:
    gw, mdp = _tabular_model(cfg)
    feats = _tabular_features(cfg, gw, mdp)
    ctx = exact_sigma(feats, mdp)
    reg = _regularizer(cfg, mdp.num_actions)
    fp_cfg = cfg.get("fixed_point", {})
    damping, tol, max_iter = fp_cfg.get("damping", 1.0), fp_cfg.get("tol", 1e-9), fp_cfg.get("max_iter", 100_000)
    d0 = M.delta0(mdp, reg)

    q_star = M.regularized_value_iteration(mdp, reg, tol=1e-12)
    columns = {"V_star": M.state_values(reg, SmoothTruncation(), q_star)}
    summary = CsvOut(["c", "delta", "converged", "residual", "iterations", "linf_distance"],
                     [f"delta0 = (R_max + tau*B)/(1 - gamma) = {d0!r}",
                      "linf_distance = max |Phi theta_c - Phi theta_inf| over (s, a)"])

    def solve(tr):
        try:
            r = M.projected_fixed_point(mdp, reg, tr, feats, ctx, damping=damping, tol=tol, max_iter=max_iter)
            return r.theta, True, r.residual, r.iterations
        except NonConvergence as exc:
            return None, False, exc.residual, len(exc.history)

    th_inf, ok_inf, res_inf, it_inf = solve(SmoothTruncation())
    q_inf = M.q_hat(feats, th_inf) if ok_inf else None
    if ok_inf:
        columns["V_fp_inf"] = M.state_values(reg, SmoothTruncation(), q_inf)
    summary.add("inf", math.inf, ok_inf, res_inf, it_inf, 0.0 if ok_inf else None)
    for c in _multipliers(cfg):
        tr = SmoothTruncation(c * d0)
        th, ok, res, it = solve(tr)
        dist = None
        if ok:
            q = M.q_hat(feats, th)
            columns[f"V_fp_c{c:g}"] = M.state_values(reg, SmoothTruncation(), q)
            dist = float(np.max(np.abs(q - q_inf))) if ok_inf else None
        summary.add(f"{c:g}", c * d0, ok, res, it, dist)

    values = CsvOut(["state", "row", "col", *columns])
    for s in range(mdp.num_states):
        row, col = gw.coords(s)
        values.add(s, row, col, *(float(v[s]) for v in columns.values()))
    return {"fixed_points_summary.csv": summary, "fixed_points_values.csv": values}, EXIT_OK


def _agg(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def cmd_gridworld_train(cfg) -> tuple[dict, int]:
    gw, mdp = _tabular_model(cfg)
    feats = _tabular_features(cfg, gw, mdp)
    ctx = exact_sigma(feats, mdp)
    reg = _regularizer(cfg, mdp.num_actions)
    d0 = M.delta0(mdp, reg)
    fields = ("mspbe", "grad_norm", "tracking", "gap")
    header = ["c", "delta", "t"] + [f"{f}_{s}" for f in fields for s in ("mean", "sd")] + ["n_seeds", "n_diverged"]
    out = CsvOut(header, ["mean and population sd across non-diverged seeds"])
    per_run = {}
    exit_code = EXIT_OK
    for c in _multipliers(cfg):
        tr = SmoothTruncation(c * d0)
        results, diverged = [], []
        for seed in cfg["seeds"]:
            rc = RunConfig.with_radius(ctx, mdp.r_max, mdp.gamma, tr, alpha=cfg["alpha"], beta=cfg["beta"],
                                       T=cfg["T"], seed=seed, log_every=cfg.get("log_every", 1000))
            try:
                results.append(run_tabular(mdp, rc, feats, reg, tr, ctx=ctx))
            except Divergence:
                diverged.append(seed)
            else:
                if cfg.get("per_run_metrics", False):
                    run_csv = CsvOut(CSV_COLUMNS)
                    run_csv.rows = list(metrics_to_csv_rows(results[-1].metrics))
                    per_run[f"gridworld_train_c{c:g}_seed{seed}.csv"] = run_csv
        if diverged:
            out.comments.append(f"c={c:g}: diverged seeds {diverged}")
        if not results:
            exit_code = EXIT_DIVERGED
            out.add(f"{c:g}", c * d0, None, *([None] * 2 * len(fields)), 0, len(diverged))
            continue
        for i, rec in enumerate(results[0].metrics):
            row = []
            for f in fields:
                row.extend(_agg([getattr(r.metrics[i], f) for r in results]))
            out.add(f"{c:g}", c * d0, rec.t, *row, len(results), len(diverged))
    return {"gridworld_train.csv": out, **per_run}, exit_code


# --------------------------------------------------------------------------
# MountainCar
# --------------------------------------------------------------------------

def _rbf(mc, num_kernels, seed):
    return build_rbf_features(num_kernels, mc.get("width", 1.0), 3, STATE_BOX, seed)


def _random_policy(obs):
    return np.full(3, 1.0 / 3.0)


def train_algorithm1_mountaincar(num_kernels: int, seed: int, tau: float = 0.01, delta: float = 500.0,
                                 alpha: float = 0.1, beta: float = 0.1, episodes: int = 1000,
                                 width: float = 1.0, sigma_samples: int = 5000, sigma_floor: float = 1e-3,
                                 gamma: float = 1.0):
    """Algorithm 1 on MountainCar with the regularized policy as the sampling policy.

    ``lambda_g`` comes from a floored estimate of ``Sigma`` on uniformly random
    episodes. Returns ``(theta, features, training EpisodeRecords)``.
    """
    feats = build_rbf_features(num_kernels, width, 3, STATE_BOX, seed)
    reg = Regularizer("shannon", tau, 3)
    tr = SmoothTruncation(delta)
    warm = ((t.state, t.action) for t in mountaincar_episode_stream(_random_policy, seed + 7919)
            if not isinstance(t, EpisodeRecord))
    ctx = estimate_sigma(feats, warm, max(sigma_samples, feats.d), floor=sigma_floor)
    rc = RunConfig(alpha=alpha, beta=beta, T=1, projection_radius=ctx.radius(1.0, gamma, delta))
    state = LearnerState.zeros(feats.d)
    holder = [state.theta]

    def policy(obs):
        return conjugate_policy(reg, feats.all_actions(obs) @ holder[0])

    records = []
    for item in mountaincar_episode_stream(policy, seed, episodes=episodes):
        if isinstance(item, EpisodeRecord):
            records.append(item)
            continue
        state, _ = step(state, item, rc, feats, reg, tr, gamma)
        holder[0] = state.theta
    return state.theta, feats, records


def train_baseline_mountaincar(algorithm: str, num_kernels: int, seed: int, alpha: float = 0.1,
                               beta: float = 0.1, epsilon: float = 0.1, episodes: int = 1000,
                               width: float = 1.0, gamma: float = 1.0):
    """Epsilon-greedy training of a baseline; returns ``(acting weights, features, records)``."""
    feats = build_rbf_features(num_kernels, width, 3, STATE_BOX, seed)
    state = BaselineState.zeros(algorithm, feats.d, alpha=alpha, beta=beta, epsilon=epsilon)
    holder = [state]
    coin_rng = np.random.default_rng(seed + 104729)

    def policy(obs):
        q = feats.all_actions(obs) @ holder[0].acting_weights()
        p = np.full(3, epsilon / 3)
        p[int(np.argmax(q))] += 1 - epsilon
        return p

    records = []
    for item in mountaincar_episode_stream(policy, seed, episodes=episodes):
        if isinstance(item, EpisodeRecord):
            records.append(item)
            continue
        holder[0] = baseline_step(holder[0], item, feats, gamma, rng=coin_rng)
    return holder[0].acting_weights(), feats, records


def greedy_test_returns(weights, feats, episodes: int, seed: int) -> list:
    """Returns of greedy (lowest-index argmax) roll-outs; no learning."""
    rng = np.random.default_rng(seed)

    def choose(obs):
        return int(np.argmax(feats.all_actions(obs) @ weights))

    return [run_episode(choose, rng).ret for _ in range(episodes)]


def cmd_mountaincar(cfg) -> tuple[dict, int]:
    mc = cfg.get("mountaincar", {})
    episodes = mc.get("episodes", 1000)
    test_episodes = mc.get("test_episodes", 10)
    algos = mc.get("algorithms", [ALGORITHM1, *ALGORITHMS])
    tau = float(cfg.get("regularizer", {}).get("tau", 0.01))
    summary = CsvOut(["algorithm", "d", "tau", "mean_return", "sd_return", "n_runs"],
                     ["mean/sd are over per-seed mean greedy test returns; sd is the population sd"])
    files = {}
    exit_code = EXIT_OK
    for algo in algos:
        for l in mc.get("num_kernels", [20]):
            d = 3 * l
            per_seed, diverged = [], []
            for seed in cfg["seeds"]:
                try:
                    if algo == ALGORITHM1:
                        w, feats, recs = train_algorithm1_mountaincar(
                            l, seed, tau=tau, delta=cfg.get("delta", 500.0), alpha=cfg.get("alpha", 0.1),
                            beta=cfg.get("beta", 0.1), episodes=episodes, width=mc.get("width", 1.0),
                            sigma_samples=mc.get("sigma_samples", 5000))
                    else:
                        w, feats, recs = train_baseline_mountaincar(
                            algo, l, seed, alpha=cfg.get("alpha", 0.1), beta=cfg.get("beta", 0.1),
                            epsilon=mc.get("epsilon", 0.1), episodes=episodes, width=mc.get("width", 1.0))
                except Divergence:
                    diverged.append(seed)
                    continue
                rets = greedy_test_returns(w, feats, test_episodes, seed + 15485863)
                per_seed.append(float(np.mean(rets)))
                if cfg["experiment"] == "mountaincar-train":
                    log = CsvOut(["episode", "return", "steps"])
                    for r in recs:
                        log.add(r.episode, r.ret, r.steps)
                    files[f"episodes_{algo}_d{d}_seed{seed}.csv"] = log
            mean, sd = _agg(per_seed)
            algo_tau = tau if algo == ALGORITHM1 else None
            summary.add(algo, d, algo_tau, mean, sd, len(per_seed))
            ref = TABLE_I_REFERENCE.get((algo, algo_tau, d))
            if ref is not None:
                summary.comments.append(f"reference {algo} d={d}" + (f" tau={algo_tau:g}" if algo_tau else "")
                                        + f": {ref[0]:.2f} +/- {ref[1]:.2f}")
            if diverged:
                summary.comments.append(f"{algo} d={d}: diverged seeds {diverged} excluded")
                if not per_seed:
                    exit_code = EXIT_DIVERGED
    files["mountaincar.csv"] = summary
    return files, exit_code


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------

def cmd_diagnostics(cfg) -> tuple[dict, int]:
    dc = cfg.get("diagnostics", {})
    seed = cfg["seeds"][0] if cfg.get("seeds") else 0
    tol = dc.get("tol", 1e-9)
    checks = diag.run_battery(dc.get("num_mdps", 20), dc.get("pairs", 200), seed=seed, tol=tol)
    checks.append(diag.gridworld_smoothness_check(dc.get("pairs", 200), seed=seed, tol=tol))
    checks.append(diag.finite_difference_check(dc.get("num_mdps", 20), dc.get("fd_thetas", 10), seed=seed))
    checks.append(diag.theorem2_onehot_check(seed=seed))
    out = CsvOut(["check", "instances", "worst_margin", "tol", "passed", "witness"],
                 ["worst_margin = max(lhs - rhs); a check passes when worst_margin <= tol"])
    for c in checks:
        out.add(c.name, c.instances, c.worst_margin, c.tol, c.passed, json.dumps(c.witness, sort_keys=True))
    return {"diagnostics.csv": out}, EXIT_OK if all(c.passed for c in checks) else EXIT_DIAGNOSTICS


HANDLERS = {
    "gridworld-fixed-points": cmd_gridworld_fixed_points,
    "gridworld-train": cmd_gridworld_train,
    "mountaincar": cmd_mountaincar,
    "diagnostics": cmd_diagnostics,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="regq", description="Regularized Q-learning experiments")
    parser.add_argument("command", choices=sorted(HANDLERS))
    parser.add_argument("--config", required=True, help="JSON experiment configuration")
    parser.add_argument("--out", default=None, help="output directory (default: config 'output' or '.')")
    parser.add_argument("--no-header-comment", action="store_true", help="omit the timestamped first line")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.command)
    except ConfigError as exc:
        print(f"regq: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out or cfg.get("output", "."))
    try:
        files, code = HANDLERS[args.command](cfg)
    except (ConfigError, ValueError) as exc:
        print(f"regq: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    header = None
    if not args.no_header_comment:
        stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
        header = f"regq {args.command} {cfg['experiment']} generated {stamp}"
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, table in files.items():
        (out_dir / name).write_text(table.text(header))
        print(out_dir / name)
    if code == EXIT_DIVERGED:
        print("regq: every seed of at least one cell diverged", file=sys.stderr)
    elif code == EXIT_DIAGNOSTICS:
        print("regq: diagnostics failed; see diagnostics.csv", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
