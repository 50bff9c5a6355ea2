"""Codebook optimization: ratio maximization solved in the dual domain.

The energy-efficiency subproblem is a concave/affine fractional program in
the codebook covariance.  Dinkelbach's scheme reduces it to a sequence of
parametric concave problems

    maximize  ln det(I + F C) - t * trace(C)
    s.t.      C >= 0,  trace(E_l C) <= a_l,  l = 1..U

each of which is solved through its Lagrange dual: for fixed multipliers
``mu`` the inner maximization over C has a waterfilling-like closed form on
the eigenmodes of W^-1 F with W = t*I + sum_l mu_l E_l, leaving a concave,
bound-constrained dual in just U scalars.  Two dual solvers are provided: a
projected gradient method with a diminishing step, and a projected
quasi-Newton method with a restricted/free variable split, damped BFGS
scaling, and an Armijo backtracking line search over the free variables.

Two implementation notes.  Constraint rows are rescaled internally so
their bounds are O(1); the raw cell budgets span many decades and would
cripple both dual solvers otherwise.  And when the channel Gram matrix
factors as (antenna part) ⊗ (range part) with antenna-isotropic constraint
rows, every dual evaluation runs at range-part size N instead of M*N.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import CoexistError, ConvergenceFailure, Infeasible
from .scenario import DinkelbachOptions, DualOptions
from .signal_model import EquivalentChannel, SdrConstraintData, hermitize

log = logging.getLogger(__name__)

LOG2 = math.log(2.0)

# eigenvalues below this fraction of the largest are treated as zero rank
EIG_FLOOR = 1e-12


@dataclass
class DualEval:
    """One evaluation of the dual function at a multiplier vector."""

    mu: np.ndarray
    value: float
    xi: np.ndarray                  # whitened-channel eigenvalues (any shape)
    basis: np.ndarray               # eigenvectors in the working size
    grad: np.ndarray | None = None
    traces: np.ndarray | None = None
    primal_small: np.ndarray | None = None


def _waterfill_terms(xi):
    """Sum of 1 - 1/xi - ln(xi) over the modes above the waterlevel."""
    xa = xi[xi > 1.0]
    return float(np.sum(1.0 - 1.0 / xa - np.log(xa)))


def _clip_spectrum(xi):
    xi = np.clip(xi, 0.0, None)
    top = float(xi.max()) if xi.size else 0.0
    if top > 0:
        xi[xi < EIG_FLOOR * top] = 0.0
    return xi


class _DenseDual:
    """Dual evaluations on the full M*N-order matrices."""

    def __init__(self, trace_penalty, F, mats, bounds):
        self.t = trace_penalty
        self.mats = mats
        self.bounds = bounds
        self.n = F.shape[0]
        # O(1) left-hand side keeps the eigensolver's deflation cheap
        self.f_scale = max(float(np.abs(F).max()), 1e-300)
        self.F_scaled = np.asfortranarray(F / self.f_scale)

    def evaluate(self, mu) -> DualEval:
        W = self.t * np.eye(self.n, dtype=complex)
        nz = np.nonzero(mu)[0]
        if nz.size:
            W = W + np.tensordot(mu[nz], self.mats[nz], axes=1)
        try:
            xi, Y = scipy.linalg.eigh(self.F_scaled, hermitize(W),
                                      check_finite=False, driver="gvd")
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise CoexistError(
                f"dual eigendecomposition failed: {exc}") from exc
        xi = _clip_spectrum(xi * self.f_scale)
        value = _waterfill_terms(xi) - float(mu @ self.bounds)
        return DualEval(mu=mu, value=value, xi=xi, basis=Y)

    def complete(self, ev: DualEval) -> DualEval:
        if ev.grad is not None:
            return ev
        active = ev.xi > 1.0
        Ya = ev.basis[:, active]
        d = 1.0 - 1.0 / ev.xi[active]
        C = hermitize((Ya * d) @ Ya.conj().T)
        ev.primal_small = C
        ev.traces = np.einsum("uij,ji->u", self.mats, C).real
        ev.grad = ev.traces - self.bounds
        return ev

    def dense_primal(self, ev: DualEval) -> np.ndarray:
        self.complete(ev)
        return ev.primal_small


class _KronDual:
    """Dual evaluations at per-antenna size for separable instances.

    With F = G ⊗ P and every E_l = I ⊗ B_l, the whitened eigenvalues are
    products of the M antenna-part eigenvalues and the N generalized
    eigenvalues of (P, t*I + sum mu_l B_l), so each evaluation costs one
    size-N decomposition.
    """

    def __init__(self, trace_penalty, antenna_part, range_part, blocks,
                 bounds, n_tx):
        self.t = trace_penalty
        self.blocks = blocks
        self.bounds = bounds
        self.n_tx = n_tx
        self.n = n_tx * range_part.shape[0]
        self.p_scale = max(float(np.abs(range_part).max()), 1e-300)
        self.range_scaled = np.asfortranarray(range_part / self.p_scale)
        gw, gV = np.linalg.eigh(antenna_part)
        self.g_vals = np.clip(gw, 0.0, None) * self.p_scale
        self.g_vecs = gV

    def evaluate(self, mu) -> DualEval:
        N = self.range_scaled.shape[0]
        Wn = self.t * np.eye(N, dtype=complex)
        nz = np.nonzero(mu)[0]
        if nz.size:
            Wn = Wn + np.tensordot(mu[nz], self.blocks[nz], axes=1)
        try:
            p_vals, Y = scipy.linalg.eigh(self.range_scaled, hermitize(Wn),
                                          check_finite=False, driver="gvd")
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise CoexistError(
                f"dual eigendecomposition failed: {exc}") from exc
        xi = _clip_spectrum(self.g_vals[:, None]
                            * np.clip(p_vals, 0.0, None)[None, :])
        value = _waterfill_terms(xi) - float(mu @ self.bounds)
        return DualEval(mu=mu, value=value, xi=xi, basis=Y)

    def _mode_weights(self, ev):
        D = np.where(ev.xi > 1.0, 1.0 - 1.0 / np.maximum(ev.xi, 1e-300), 0.0)
        return D          # (M, N) allocation per antenna/range mode pair

    def complete(self, ev: DualEval) -> DualEval:
        if ev.grad is not None:
            return ev
        D = self._mode_weights(ev)
        s = D.sum(axis=0)
        active = s > 0
        Ya = ev.basis[:, active]
        Cn = hermitize((Ya * s[active]) @ Ya.conj().T)
        ev.primal_small = Cn            # antenna-summed range covariance
        ev.traces = np.einsum("uij,ji->u", self.blocks, Cn).real
        ev.grad = ev.traces - self.bounds
        return ev

    def dense_primal(self, ev: DualEval) -> np.ndarray:
        D = self._mode_weights(ev)
        Y = ev.basis
        C = np.zeros((self.n, self.n), dtype=complex)
        for a in range(self.n_tx):
            act = D[a] > 0
            if not np.any(act):
                continue
            Ca = (Y[:, act] * D[a, act]) @ Y[:, act].conj().T
            u = self.g_vecs[:, a]
            C += np.kron(np.outer(u, u.conj()), Ca)
        return hermitize(C)


def _make_dense(trace_penalty, F, constraints) -> _DenseDual:
    return _DenseDual(trace_penalty, F, constraints.matrices,
                      constraints.bounds)


def _dual_eval(mu, trace_penalty, F, constraints) -> DualEval:
    problem = _make_dense(trace_penalty, F, constraints)
    return problem.complete(problem.evaluate(np.asarray(mu, dtype=float)))


def primal_from_dual(mu, trace_penalty, F, constraints) -> np.ndarray:
    """Maximizer of the parametric Lagrangian at fixed multipliers.

    Hermitian PSD by construction; its rank equals the number of whitened
    eigenvalues above one (the modes above the waterlevel).
    """
    if trace_penalty < 0:
        raise ValueError("trace_penalty must be >= 0")
    return _dual_eval(mu, trace_penalty, F, constraints).primal_small


def dual_objective(mu, trace_penalty, F, constraints) -> float:
    """Dual function: waterfilling value of the active modes minus mu.a."""
    problem = _make_dense(trace_penalty, F, constraints)
    return problem.evaluate(np.asarray(mu, dtype=float)).value


def dual_gradient(mu, trace_penalty, F, constraints) -> np.ndarray:
    """Constraint residuals trace(E_l C(mu)) - a_l of the primal candidate."""
    return _dual_eval(mu, trace_penalty, F, constraints).grad.copy()


def duality_gap(mu, trace_penalty, F, constraints, C) -> float:
    """Gap between the minimization-form primal at C and the dual value."""
    sign, logdet = np.linalg.slogdet(np.eye(F.shape[0]) + F @ C)
    primal = trace_penalty * float(np.trace(C).real) - max(logdet, 0.0)
    return primal - dual_objective(mu, trace_penalty, F, constraints)


def _kkt_residual(mu, grad, lower):
    """Inf-norm distance between mu and its projected gradient step."""
    stepped = np.maximum(mu + grad, lower)
    return float(np.max(np.abs(mu - stepped))) if mu.size else 0.0


@dataclass
class DualState:
    """Result of a dual solve."""

    mu: np.ndarray
    value: float
    gradient: np.ndarray
    kkt_residual: float
    iterations: int
    converged: bool
    status: str
    C: np.ndarray
    xi: np.ndarray
    basis: np.ndarray
    scaling: np.ndarray | None = None   # inverse-curvature estimate (QN)


def _finish_state(problem, ev, res, k, converged, status, S=None):
    return DualState(mu=ev.mu.copy(), value=ev.value,
                     gradient=ev.grad.copy(), kkt_residual=res,
                     iterations=k, converged=converged,
                     status="converged" if converged else status,
                     C=problem.dense_primal(ev), xi=ev.xi, basis=ev.basis,
                     scaling=S)


def _pg_loop(problem, mu0, *, step0, tolerance, max_iterations,
             power_floor) -> DualState:
    bounds = problem.bounds
    U = bounds.size
    lower = np.zeros(U)
    lower[-1] = power_floor
    mu = np.maximum(np.zeros(U) if mu0 is None else np.asarray(mu0, float),
                    lower)
    tol = tolerance * (1.0 + float(np.max(np.abs(bounds))))
    ev = problem.complete(problem.evaluate(mu))
    # condition the base step on the problem's own gradient/bound scale
    scale = step0 / max(1.0, float(np.max(np.abs(bounds))),
                        float(np.max(np.abs(ev.grad))))
    best = ev
    res = _kkt_residual(mu, ev.grad, lower)
    k = 0
    while res > tol and k < max_iterations:
        k += 1
        mu = np.maximum(mu + (scale / k) * ev.grad, lower)
        ev = problem.complete(problem.evaluate(mu))
        if ev.value > best.value:
            best = ev
        res = _kkt_residual(mu, ev.grad, lower)
    converged = res <= tol
    final = ev if converged else best
    return _finish_state(problem, final, res, k, converged,
                         "max_iterations")


def _qn_loop(problem, mu0, *, tolerance, max_iterations, epsilon_scale,
             armijo_slope, armijo_backtrack, armijo_max_backtracks,
             power_floor, S0=None) -> DualState:
    bounds = problem.bounds
    U = bounds.size
    lower = np.zeros(U)
    lower[-1] = power_floor
    mu = np.maximum(np.zeros(U) if mu0 is None else np.asarray(mu0, float),
                    lower)
    tol = tolerance * (1.0 + float(np.max(np.abs(bounds))))
    c1 = armijo_slope

    S = np.eye(U) if S0 is None else np.asarray(S0, dtype=float).copy()
    fresh_S = S0 is None
    ev = problem.complete(problem.evaluate(mu))
    best = ev
    res = _kkt_residual(mu, ev.grad, lower)
    res_floor = res
    stagnant = 0
    status = "converged"
    k = 0
    while res > tol:
        if k >= max_iterations:
            status = "max_iterations"
            break
        if stagnant > 40:       # residual pinned at the numerical floor
            status = "stalled"
            break
        k += 1
        eps = epsilon_scale * max(1.0, float(np.max(mu - lower)))
        free = ~((mu <= lower + eps) & (ev.grad < 0.0))
        if not np.any(free):
            break  # every multiplier pinned at its bound: KKT point
        d = np.zeros(U)
        d[free] = S[np.ix_(free, free)] @ ev.grad[free]
        if d[free] @ ev.grad[free] <= 0.0:
            S = np.eye(U)           # curvature estimate went bad; reset
            fresh_S = True
            d[free] = ev.grad[free]

        # objective differences below this are float noise: near the
        # optimum the test must not reject steps it cannot measure
        noise = 64.0 * np.finfo(float).eps * (1.0 + abs(ev.value))
        accepted = None
        for direction in (d, ev.grad):
            alpha = 1.0
            for _ in range(armijo_max_backtracks):
                trial = mu.copy()
                trial[free] = np.maximum(mu[free] + alpha * direction[free],
                                         lower[free])
                step = trial - mu
                slope = float(ev.grad @ step)
                if slope > 0.0:
                    ev_trial = problem.evaluate(trial)
                    if ev_trial.value >= ev.value + c1 * slope - noise:
                        accepted = problem.complete(ev_trial)
                        break
                alpha *= armijo_backtrack
            if accepted is not None:
                break
            S = np.eye(U)           # scaled search stalled; retry plain PG
            fresh_S = True
        if accepted is None:
            status = "stalled"
            break

        s = accepted.mu - mu
        y = ev.grad - accepted.grad      # curvature pair for maximizing g
        sy = float(s @ y)
        if fresh_S and sy > 0.0:
            S *= sy / max(float(y @ y), 1e-300)   # Shanno-Phua size guess
            fresh_S = False
        Bs = np.linalg.solve(S, s)
        sBs = float(s @ Bs)
        if sBs > 0.0:
            if sy < 0.2 * sBs:           # damping keeps S positive definite
                theta = 0.8 * sBs / (sBs - sy)
                y = theta * y + (1.0 - theta) * Bs
                sy = float(s @ y)
            if sy > 1e-14 * float(np.linalg.norm(s) * np.linalg.norm(y)):
                rho = 1.0 / sy
                V = np.eye(U) - rho * np.outer(s, y)
                S = V @ S @ V.T + rho * np.outer(s, s)
        mu, ev = accepted.mu, accepted
        if ev.value > best.value:
            best = ev
        res = _kkt_residual(mu, ev.grad, lower)
        if res < 0.99 * res_floor:
            res_floor = res
            stagnant = 0
        else:
            stagnant += 1

    converged = res <= tol
    final = ev if converged or ev.value >= best.value else best
    if not converged:
        log.debug("dual QN stopped (%s) at residual %.3e after %d iters",
                  status, res, k)
    return _finish_state(problem, final, res, k, converged, status, S)


def solve_dual_pg(trace_penalty, F, constraints, mu0=None, *,
                  step0: float = 1.0, tolerance: float = 1e-9,
                  max_iterations: int = 2000,
                  power_floor: float = 0.0) -> DualState:
    """Projected gradient ascent on the dual with a diminishing step.

    The step at iteration k is ``step0 / (k * max(|a|))``; each iterate is
    projected back onto the nonnegative orthant.  Slow but dependable;
    returns the best iterate seen if the iteration cap is hit.
    """
    return _pg_loop(_make_dense(trace_penalty, F, constraints), mu0,
                    step0=step0, tolerance=tolerance,
                    max_iterations=max_iterations, power_floor=power_floor)


def solve_dual_qn(trace_penalty, F, constraints, mu0=None, *,
                  tolerance: float = 1e-9, max_iterations: int = 300,
                  epsilon_scale: float = 1e-8, armijo_slope: float = 1e-4,
                  armijo_backtrack: float = 0.5,
                  armijo_max_backtracks: int = 50,
                  power_floor: float = 0.0, S0=None) -> DualState:
    """Projected quasi-Newton ascent on the dual.

    Multipliers that sit at (approximately) zero with an outward-pointing
    gradient are frozen each iteration; the free ones take a step scaled by
    a damped-BFGS inverse-curvature estimate, projected onto the orthant,
    with a backtracking Armijo line search over the free variables only.
    Falls back to a plain projected-gradient step when the scaled step
    stalls.  Terminates on the KKT residual.  ``S0`` seeds the curvature
    estimate, e.g. from a previous solve of a nearby problem.
    """
    return _qn_loop(_make_dense(trace_penalty, F, constraints), mu0,
                    tolerance=tolerance, max_iterations=max_iterations,
                    epsilon_scale=epsilon_scale, armijo_slope=armijo_slope,
                    armijo_backtrack=armijo_backtrack,
                    armijo_max_backtracks=armijo_max_backtracks,
                    power_floor=power_floor, S0=S0)


def waterfill_total(eigenvalues: np.ndarray, trace_penalty: float,
                    total_cap: float) -> tuple[np.ndarray, float]:
    """Waterfilling over channel modes under a total allocation cap.

    Returns per-mode allocations and the inverse waterlevel c: each mode
    with gain f above c receives 1/c - 1/f.  When the unconstrained level
    1/trace_penalty fits inside the cap, c equals trace_penalty and the
    power multiplier c - trace_penalty is zero.
    """
    f = np.asarray(eigenvalues, dtype=float)
    f = f[f > 0]
    if f.size == 0 or total_cap <= 0:
        return np.zeros(0), math.inf
    if trace_penalty > 0:
        p = np.clip(1.0 / trace_penalty - 1.0 / f, 0.0, None)
        if p.sum() <= total_cap:
            return p, trace_penalty
    order = np.argsort(f)[::-1]
    fs = f[order]
    inv_cum = np.cumsum(1.0 / fs)
    k_range = np.arange(1, fs.size + 1)
    levels = k_range / (total_cap + inv_cum)
    k = int(np.searchsorted(-(fs - levels), 0.0))  # first mode below level
    k = max(k, 1)
    c = float(levels[k - 1])
    p = np.clip(1.0 / c - 1.0 / f, 0.0, None)
    return p, c


def _solve_power_only(trace_penalty, channel: EquivalentChannel, total_cap):
    """Exact solve when only the transmit-power constraint survives."""
    p, c = waterfill_total(channel.eigenvalues, trace_penalty, total_cap)
    n = channel.matrix.shape[0]
    if p.size == 0 or not np.any(p > 0):
        return np.zeros((n, n), dtype=complex), 0.0
    pos = channel.eigenvalues > 0
    V = channel.eigenvectors[:, pos]
    C = hermitize((V * p) @ V.conj().T)
    return C, max(c - trace_penalty, 0.0)


@dataclass(frozen=True, eq=False)
class _ReducedProblem:
    """Constraint rows that can actually bind, rescaled to O(1) bounds."""

    constraints: SdrConstraintData
    kept: np.ndarray        # indices into the full row set
    scales: np.ndarray      # row scale: E~ = E/s, a~ = a/s, mu~ = mu*s

    @property
    def only_power(self) -> bool:
        return self.kept.size == 1


def presolve(constraints: SdrConstraintData) -> _ReducedProblem:
    """Drop vacuous/provably-slack rows and normalize the rest.

    A cell row with a negative budget means the incoming radar design
    cannot support any codebook: that is surfaced as infeasible rather
    than clipped.  Rows whose interference operator is zero, or whose
    supremum of trace(E C) over the power ball stays under the budget,
    can never bind and are removed.
    """
    mats, bounds = constraints.matrices, constraints.bounds
    U = bounds.size
    cap = float(bounds[-1])
    row_traces = np.einsum("uii->u", mats).real
    kept = []
    for l in range(U - 1):
        if bounds[l] < 0:
            raise Infeasible(
                f"cell {constraints.cells[l]} has negative interference "
                f"budget {bounds[l]:.3e}")
        if row_traces[l] <= 0:
            continue
        if row_traces[l] * cap <= bounds[l]:
            continue
        kept.append(l)
    kept.append(U - 1)
    kept = np.asarray(kept, dtype=int)
    sup = row_traces[kept] * cap
    scales = np.where(bounds[kept] > 0, bounds[kept], np.maximum(sup, 1e-300))
    reduced = SdrConstraintData(
        matrices=mats[kept] / scales[:, None, None],
        bounds=bounds[kept] / scales,
        cells=tuple(constraints.cells[l] for l in kept[:-1]),
        blocks=(None if constraints.blocks is None
                else constraints.blocks[kept] / scales[:, None, None]),
    )
    return _ReducedProblem(constraints=reduced, kept=kept, scales=scales)


def expand_multipliers(problem: _ReducedProblem, mu: np.ndarray,
                       full_size: int) -> np.ndarray:
    out = np.zeros(full_size)
    out[problem.kept] = mu / problem.scales
    return out


def restrict_multipliers(problem: _ReducedProblem,
                         mu_full: np.ndarray | None) -> np.ndarray | None:
    if mu_full is None:
        return None
    return mu_full[problem.kept] * problem.scales


def repair_feasibility(C: np.ndarray, constraints: SdrConstraintData,
                       rel_slack: float = 1e-15) -> np.ndarray:
    """Scale the codebook down until every trace constraint holds exactly."""
    traces = np.einsum("uij,ji->u", constraints.matrices, C).real
    row_norms = np.einsum("uii->u", constraints.matrices).real
    c_trace = max(float(np.trace(C).real), 0.0)
    shrink = 1.0
    for t, a, rn in zip(traces, constraints.bounds, row_norms):
        if a > 0:
            if t > a * (1.0 + rel_slack):
                shrink = min(shrink, a / t)
        elif t > 1e-12 * rn * c_trace:   # zero budget, nonzero leakage
            shrink = 0.0
    return C if shrink == 1.0 else C * shrink


def solve_parametric(trace_penalty, channel: EquivalentChannel,
                     problem: _ReducedProblem, mu0=None,
                     dual_options=None, tolerance=None,
                     S0=None) -> tuple[np.ndarray, np.ndarray,
                                       DualState | None]:
    """Solve one parametric subproblem on the reduced constraint set.

    Returns (C, reduced multipliers, dual state or None for the
    closed-form power-only path).  ``tolerance`` overrides the configured
    dual tolerance; ``S0`` warm-starts the quasi-Newton curvature.
    """
    reduced = problem.constraints
    n = channel.matrix.shape[0]
    if channel.rank == 0:
        return np.zeros((n, n), dtype=complex), np.zeros(reduced.size), None
    total_cap = float(reduced.bounds[-1] * problem.scales[-1])
    if problem.only_power:
        C, mu_power = _solve_power_only(trace_penalty, channel, total_cap)
        return C, np.array([mu_power * problem.scales[-1]]), None

    opts = dual_options or DualOptions()
    floor = 0.0
    mu0 = None if mu0 is None else np.asarray(mu0, dtype=float).copy()
    if mu0 is None:
        mu0 = np.zeros(reduced.size)
        _, c = waterfill_total(channel.eigenvalues,
                               trace_penalty, total_cap)
        if math.isfinite(c):
            mu0[-1] = max(c - trace_penalty, 0.0) * problem.scales[-1]
    if trace_penalty <= 0:
        # keep the whitener positive definite when there is no trace term
        _, c = waterfill_total(channel.eigenvalues, 0.0, total_cap)
        if math.isfinite(c):
            floor = 1e-8 * c * problem.scales[-1]
            mu0[-1] = max(mu0[-1], floor)

    if reduced.blocks is not None and channel.antenna_part is not None:
        core = _KronDual(trace_penalty, channel.antenna_part,
                         channel.range_part, reduced.blocks, reduced.bounds,
                         channel.matrix.shape[0]
                         // channel.range_part.shape[0])
    else:
        core = _DenseDual(trace_penalty, channel.matrix, reduced.matrices,
                          reduced.bounds)
    tol = tolerance if tolerance is not None else opts.tolerance
    if opts.method == "projected_gradient":
        state = _pg_loop(core, mu0, step0=opts.pg_step0, tolerance=tol,
                         max_iterations=opts.max_iterations,
                         power_floor=floor)
    else:
        state = _qn_loop(core, mu0, tolerance=tol,
                         max_iterations=opts.max_iterations,
                         epsilon_scale=1e-8,
                         armijo_slope=opts.armijo_slope,
                         armijo_backtrack=opts.armijo_backtrack,
                         armijo_max_backtracks=opts.armijo_max_backtracks,
                         power_floor=floor, S0=S0)
    return state.C, state.mu, state


@dataclass(frozen=True)
class DinkelbachResult:
    C: np.ndarray
    multipliers: np.ndarray         # full-size, original row scaling
    trace: tuple                    # rows (ratio, residual, trace_c, rate)
    iterations: int
    converged: bool


def dinkelbach(channel: EquivalentChannel, constraints: SdrConstraintData,
               C0: np.ndarray, *, bandwidth: float, n_cells: int,
               amp_efficiency: float, circuit_power: float,
               options=None, dual_options=None,
               mu0=None) -> DinkelbachResult:
    """Maximize rate over consumed power subject to the trace constraints.

    Starting from a feasible ``C0``, each iteration sets the ratio
    parameter to the current objective value and solves the parametric
    problem; the ratio sequence is strictly increasing until the residual
    gain falls below ``options.tolerance`` (relative).  Candidate updates
    are rescaled onto the feasible set and never accepted if they would
    lower the achieved ratio, so the returned codebook is feasible and at
    least as good as the start.
    """
    options = options or DinkelbachOptions()
    dual_options = dual_options or DualOptions()
    F = channel.matrix
    rate_coef = bandwidth / n_cells / LOG2
    t_factor = LOG2 / (amp_efficiency * bandwidth)

    def rate_of(C):
        sign, logdet = np.linalg.slogdet(np.eye(F.shape[0]) + F @ C)
        return rate_coef * max(logdet, 0.0)

    def power_of(C):
        return float(np.trace(C).real) / (amp_efficiency * n_cells) \
            + circuit_power

    problem = presolve(constraints)
    mu_red = restrict_multipliers(problem, mu0)
    C = np.asarray(C0, dtype=complex)
    f_cur, h_cur = rate_of(C), power_of(C)
    rows = []
    converged = False
    iterations = 0
    S_carry = None
    rel_gain = math.inf
    for iterations in range(1, options.max_iterations + 1):
        lam = f_cur / h_cur
        # early ratio steps tolerate a looser dual; the last ones do not
        dual_tol = max(dual_options.tolerance,
                       min(1e-5, 1e-2 * rel_gain))
        C_new, mu_red, state = solve_parametric(
            lam * t_factor, channel, problem, mu_red, dual_options,
            tolerance=dual_tol, S0=S_carry)
        if state is not None:
            S_carry = state.scaling
        C_new = repair_feasibility(C_new, constraints)
        f_new, h_new = rate_of(C_new), power_of(C_new)
        if f_new * h_cur < f_cur * h_new:    # never step downhill
            C_new, f_new, h_new = C, f_cur, h_cur
        residual = f_new - lam * h_new
        rows.append((lam, residual, float(np.trace(C_new).real), f_new))
        C, f_cur, h_cur = C_new, f_new, h_new
        rel_gain = residual / (lam * h_new) if lam > 0 else math.inf
        if residual <= options.tolerance * lam * h_new:
            # a closed-form inner solve (state None) is already exact;
            # an iterative one must be re-run at the tight tolerance
            if state is None or dual_tol <= dual_options.tolerance:
                converged = True
                break
            rel_gain = dual_options.tolerance  # force a tight final solve
    mu_full = expand_multipliers(problem, mu_red, constraints.size) \
        if mu_red is not None else np.zeros(constraints.size)
    return DinkelbachResult(C=C, multipliers=mu_full, trace=tuple(rows),
                            iterations=iterations, converged=converged)


def solve_rate_subproblem(channel: EquivalentChannel,
                          constraints: SdrConstraintData, *,
                          dual_options=None, mu0=None):
    """Maximize rate alone under the same constraint set.

    Same dual machinery with the trace penalty at zero.  The objective is
    nondecreasing in the codebook, so at the optimum either the power cap
    or some interference budget must be active; a solution with everything
    slack is reported as a convergence failure.
    """
    dual_options = dual_options or DualOptions()
    problem = presolve(constraints)
    mu_red = restrict_multipliers(problem, mu0)
    C, mu_red, state = solve_parametric(0.0, channel, problem, mu_red,
                                        dual_options)
    C = repair_feasibility(C, constraints)
    if channel.rank > 0:
        traces = np.einsum("uij,ji->u", constraints.matrices, C).real
        active = traces >= constraints.bounds * (1.0 - 1e-4)
        if not np.any(active):
            raise ConvergenceFailure(
                "no constraint active in rate maximization "
                f"(power trace {traces[-1]:.6g} of "
                f"{constraints.bounds[-1]:.6g})")
    mu_full = expand_multipliers(problem, mu_red, constraints.size)
    return C, mu_full
