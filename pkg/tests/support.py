"""Independent oracles and instance builders shared across the test suite.

Everything here deliberately avoids the package's dual-domain machinery:
the primal oracle maximizes over the PSD cone directly, projections are
done with Dykstra's alternating scheme, and the scalar searches are plain
golden-section / bisection.
"""

from __future__ import annotations

import math

import numpy as np

from coexist.scenario import (
    StatisticsSpec,
    SystemParams,
    build_scenario,
    sample_scenario,
)
from coexist.signal_model import SdrConstraintData


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) \
        / math.sqrt(2.0)


def random_psd(rng, n, scale=1.0, rank=None):
    rank = rank or n
    A = crandn(rng, n, rank)
    X = A @ A.conj().T * (scale / rank)
    return 0.5 * (X + X.conj().T)


def random_instance(rng, n, n_cells_rows, *, penalty_scale=1.0,
                    bind=0.5):
    """Random parametric subproblem whose constraints genuinely bind.

    Bounds are set as random fractions of the unconstrained waterfilling
    solution's usage, so a nontrivial subset of multipliers is active at
    the optimum while Slater's condition holds comfortably.
    """
    F = random_psd(rng, n, scale=4.0 * n)
    t = penalty_scale * (0.5 + rng.random())
    w, V = np.linalg.eigh(F)
    p = np.clip(1.0 / t - 1.0 / np.clip(w, 1e-12, None), 0.0, None)
    C0 = (V * p) @ V.conj().T          # unconstrained optimum
    mats = []
    bounds = []
    for _ in range(n_cells_rows):
        E = random_psd(rng, n, scale=1.0, rank=max(1, n // 2))
        usage = float(np.trace(E @ C0).real)
        mats.append(E)
        bounds.append(usage * (bind + 0.8 * rng.random()))
    mats.append(np.eye(n, dtype=complex))
    bounds.append(float(np.trace(C0).real) * (bind + 0.6 * rng.random()))
    cons = SdrConstraintData(
        matrices=np.stack(mats), bounds=np.asarray(bounds),
        cells=tuple(("cell", k) for k in range(n_cells_rows)))
    return t, F, cons


def parametric_objective(t, F, C):
    sign, logdet = np.linalg.slogdet(np.eye(F.shape[0]) + F @ C)
    return float(logdet) - t * float(np.trace(C).real)


def project_psd(X):
    w, V = np.linalg.eigh(0.5 * (X + X.conj().T))
    w = np.clip(w, 0.0, None)
    return (V * w) @ V.conj().T


def project_feasible(X, mats, bounds, tol=1e-12, max_passes=20000):
    """Dykstra's alternating projection onto PSD ∩ {tr(E_l C) <= a_l}."""
    n_sets = 1 + len(bounds)
    increments = [np.zeros_like(X) for _ in range(n_sets)]
    Y = X.copy()
    norms = [float(np.vdot(E, E).real) for E in mats]
    for _ in range(max_passes):
        drift = 0.0
        for s in range(n_sets):
            Z = Y + increments[s]
            if s == 0:
                Ynew = project_psd(Z)
            else:
                E, a = mats[s - 1], bounds[s - 1]
                v = float(np.vdot(E, Z).real) - a
                Ynew = Z - (max(v, 0.0) / norms[s - 1]) * E
            increments[s] = Z - Ynew
            drift = max(drift, float(np.abs(Ynew - Y).max()))
            Y = Ynew
        if drift <= tol:
            break
    return Y


def primal_pg_oracle(t, F, cons, *, iters=4000, tol=1e-10):
    """Projected-gradient ascent directly on the constrained PSD cone.

    Independent of the dual machinery: ascends ln det(I + F C) - t tr C
    with an Armijo backtracking step, projecting each trial point onto the
    feasible set with Dykstra passes.
    """
    mats = list(cons.matrices)
    bounds = list(cons.bounds)
    n = F.shape[0]
    Fh = 0.5 * (F + F.conj().T)
    w, V = np.linalg.eigh(Fh)
    w = np.clip(w, 0.0, None)
    Fsqrt = (V * np.sqrt(w)) @ V.conj().T

    C = project_feasible(np.zeros((n, n), dtype=complex), mats, bounds)
    obj = parametric_objective(t, F, C)
    step = 1.0 / (1.0 + float(w.max()))
    for _ in range(iters):
        M = np.eye(n) + Fsqrt @ C @ Fsqrt
        grad = Fsqrt @ np.linalg.solve(M, Fsqrt) - t * np.eye(n)
        grad = 0.5 * (grad + grad.conj().T)
        improved = False
        alpha = step
        for _ in range(40):
            trial = project_feasible(C + alpha * grad, mats, bounds)
            trial_obj = parametric_objective(t, F, trial)
            if trial_obj > obj + 1e-16:
                gain = trial_obj - obj
                C, obj = trial, trial_obj
                improved = True
                step = min(alpha * 2.0, 1e3)
                break
            alpha *= 0.5
        if not improved:
            break
        if improved and gain <= tol * (1.0 + abs(obj)):
            break
    return C, obj


def golden_section_max(fn, lo, hi, tol=1e-12, iters=400):
    """Maximize a unimodal scalar function on [lo, hi]."""
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if b - a <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = fn(d)
    x = 0.5 * (a + b)
    return x, fn(x)


def min_lagrangian_psd(t, F, cons, mu, iters=3000):
    """Directly minimize the Lagrangian over the PSD cone (no constraints).

    Projected-gradient descent with backtracking; convex in C, so the
    result certifies the dual value computed analytically.
    """
    n = F.shape[0]
    W = t * np.eye(n, dtype=complex) + np.tensordot(mu, cons.matrices,
                                                    axes=1)
    W = 0.5 * (W + W.conj().T)
    Fh = 0.5 * (F + F.conj().T)
    w, V = np.linalg.eigh(Fh)
    w = np.clip(w, 0.0, None)
    Fsqrt = (V * np.sqrt(w)) @ V.conj().T

    def lagrangian(C):
        sign, logdet = np.linalg.slogdet(np.eye(n) + F @ C)
        return float(np.vdot(W, C).real) - float(logdet) \
            - float(mu @ cons.bounds)

    C = np.zeros((n, n), dtype=complex)
    val = lagrangian(C)
    step = 1.0 / (1.0 + float(w.max()))
    for _ in range(iters):
        M = np.eye(n) + Fsqrt @ C @ Fsqrt
        grad = W - Fsqrt @ np.linalg.solve(M, Fsqrt)
        grad = 0.5 * (grad + grad.conj().T)
        alpha = step
        improved = False
        for _ in range(60):
            trial = project_psd(C - alpha * grad)
            tval = lagrangian(trial)
            if tval < val - 1e-16:
                C, val = trial, tval
                improved = True
                step = min(alpha * 2.0, 1e3)
                break
            alpha *= 0.5
        if not improved:
            break
    return val


def tiny_system(n_cells=6, code_len=2, n_beams=1, n_tx=1, n_rx=1,
                **overrides) -> SystemParams:
    params = dict(
        bandwidth=1.0e6, prt=n_cells * 1e-6, n_cells=n_cells,
        n_beams=n_beams, n_tx=n_tx, n_rx=n_rx, radar_power_max=25.0,
        comm_power_max=0.01, radar_noise=2.39e-14, comm_noise=2.39e-14,
        amp_efficiency=0.85, circuit_power=0.01,
        code=np.ones(code_len, dtype=complex))
    params.update(overrides)
    return SystemParams(**params)


def tiny_scenario(seed=0, *, n_cells=6, code_len=2, n_beams=1, n_tx=1,
                  n_rx=1, delta=0.5, sigma2=1.2e-13, rho_db=3.0,
                  cells=((0, 0),), clutter_var=4.8e-17,
                  target_var=4.8e-16, channel_var=3e-10, delay=None,
                  **sys_overrides):
    system = tiny_system(n_cells=n_cells, code_len=code_len,
                         n_beams=n_beams, n_tx=n_tx, n_rx=n_rx,
                         **sys_overrides)
    spec = StatisticsSpec(target_var=target_var, clutter_var=clutter_var,
                          channel_var=channel_var, min_sdr_db=rho_db,
                          protected_cells=tuple(cells), delay=delay)
    sample = sample_scenario(system, spec, delta, sigma2, seed)
    return build_scenario(system, spec, sample)
