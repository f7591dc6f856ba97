"""Compiled inner loops for long tabular runs.

These mirror :func:`regq.learner.step` and :func:`regq.envs.tabular_stream`
operation for operation; tests pin the two paths against each other.
"""

import numpy as np
from numba import njit

KIND_SHANNON = 0
KIND_TSALLIS = 1


@njit(cache=True)
def _project_simplex(v):
    n = v.size
    v = v - v.max()
    u = np.sort(v)[::-1]
    css = 0.0
    thresh = 0.0
    for k in range(n):
        css += u[k]
        t = (css - 1.0) / (k + 1)
        if u[k] - t > 0:
            thresh = t
    out = np.empty(n)
    for i in range(n):
        out[i] = max(v[i] - thresh, 0.0)
    return out


@njit(cache=True)
def _conjugate(q, kind, tau):
    """Return (G*(q), argmax policy)."""
    n = q.size
    if kind == KIND_SHANNON:
        m = q.max()
        p = np.empty(n)
        tot = 0.0
        for i in range(n):
            p[i] = np.exp((q[i] - m) / tau)
            tot += p[i]
        for i in range(n):
            p[i] /= tot
        return m + tau * np.log(tot), p
    p = _project_simplex(q / tau)
    val = 0.0
    sq = 0.0
    for i in range(n):
        val += p[i] * q[i]
        sq += p[i] * p[i]
    return val - tau * 0.5 * (sq - 1.0), p


@njit(cache=True)
def sample_path(cum_mu0, cum_pi, cum_P, uniforms, u0):
    """Behavior-chain path from inverse-CDF sampling of pre-drawn uniforms.

    ``uniforms[t] = (u_action, u_next)``; ``u0`` draws the initial state.
    """
    T = uniforms.shape[0]
    S = cum_pi.shape[0]
    A = cum_pi.shape[1]
    states = np.empty(T, np.int64)
    actions = np.empty(T, np.int64)
    nexts = np.empty(T, np.int64)
    s = min(np.searchsorted(cum_mu0, u0, side="right"), S - 1)
    for t in range(T):
        a = min(np.searchsorted(cum_pi[s], uniforms[t, 0], side="right"), A - 1)
        sn = min(np.searchsorted(cum_P[s, a], uniforms[t, 1], side="right"), S - 1)
        states[t] = s
        actions[t] = a
        nexts[t] = sn
        s = sn
    return states, actions, nexts


@njit(cache=True)
def run_tabular(phi, R, states, actions, nexts, gamma, kind, tau, delta, alpha, beta, radius,
                theta0, omega0, log_mask):
    """Algorithm loop over a pre-sampled path.

    Returns logged (theta^t, omega^t, omega^{t+1}, ||theta^{t+1}-theta^t||)
    for every ``t`` with ``log_mask[t]``, the final parameters, running maxima
    of the per-step bounded quantities, and the index of the first non-finite
    step (-1 if none).
    """
    T = states.size
    d = theta0.size
    A = phi.shape[1]
    L = 0
    for t in range(T):
        if log_mask[t]:
            L += 1
    th_log = np.zeros((L, d))
    om_log = np.zeros((L, d))
    omn_log = np.zeros((L, d))
    step_log = np.zeros(L)
    theta = theta0.copy()
    omega = omega0.copy()
    finite_delta = np.isfinite(delta)
    max_step = 0.0
    max_hg = 0.0
    max_omega = 0.0
    bad = -1
    li = 0
    qn = np.empty(A)
    for t in range(T):
        s = states[t]
        a = actions[t]
        sn = nexts[t]
        f = phi[s, a]
        for b in range(A):
            qn[b] = phi[sn, b] @ theta
        v, pi = _conjugate(qn, kind, tau)
        if finite_delta:
            k = delta * np.tanh(v / delta)
            z = 1.0 - (k / delta) ** 2
        else:
            k = v
            z = 1.0
        td = f @ omega - R[s, a] - gamma * k
        hg = f * td
        hgn = np.sqrt(hg @ hg)
        new_omega = omega - beta * hg
        nrm = np.sqrt(new_omega @ new_omega)
        if nrm > radius:
            new_omega = new_omega * (radius / nrm)
            nrm = radius
        diff = new_omega - theta
        gap = np.sqrt(diff @ diff)
        new_theta = theta.copy()
        if gap != 0.0:
            psi = np.zeros(d)
            for b in range(A):
                psi += pi[b] * phi[sn, b]
            hf = (gamma * z * psi - f) * (f @ diff)
            new_theta = theta - (alpha / gap) * hf
        dt = new_theta - theta
        stp = np.sqrt(dt @ dt)
        if log_mask[t]:
            th_log[li] = theta
            om_log[li] = omega
            omn_log[li] = new_omega
            step_log[li] = stp
            li += 1
        if not (np.isfinite(stp) and np.isfinite(nrm)):
            bad = t
            break
        max_step = max(max_step, stp)
        max_hg = max(max_hg, hgn)
        max_omega = max(max_omega, nrm)
        theta = new_theta
        omega = new_omega
    return th_log[:li], om_log[:li], omn_log[:li], step_log[:li], theta, omega, max_step, max_hg, max_omega, bad
