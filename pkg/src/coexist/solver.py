"""Block coordinate ascent over radar filters, radar power, and codebook.

One outer iteration updates the per-cell filters (closed form), drops the
radar power to the smallest feasible value (closed form), rebuilds the
whitened equivalent channel, and re-optimizes the codebook covariance.
Each block is an exact maximization given the others, so the objective
trace is nondecreasing; the loop ends when the relative improvement falls
below the outer tolerance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import comm_opt, radar_opt, signal_model
from .errors import Infeasible
from .scenario import Scenario, SolverOptions, linear_to_db

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeasibilityReport:
    """Largest supportable SDR per protected cell, at zero comm power."""

    ceilings: dict          # (n, j) -> max feasible SDR, linear
    overall: float          # min over cells, linear
    feasible: bool          # every cell's floor is at or below its ceiling

    @property
    def overall_db(self) -> float:
        return linear_to_db(self.overall)


@dataclass(frozen=True)
class IterationRow:
    ee: float
    rate: float
    radar_power: float
    comm_power: float
    min_sdr_margin: float   # min over cells of SDR/floor - 1


@dataclass(frozen=True)
class DesignSolution:
    C: np.ndarray
    radar: radar_opt.RadarDesign
    ee: float               # bits/Joule
    rate: float             # bits/s
    comm_power: float       # W, trace(C)/N
    sdr: dict               # (n, j) -> achieved SDR, linear
    trace: tuple            # IterationRow per outer iteration (0 = start)
    status: str             # converged | max_iterations
    objective: str = "ee"

    @property
    def outer_iterations(self) -> int:
        return len(self.trace) - 1

    def min_sdr_margin_db(self, scenario: Scenario) -> float:
        ratios = [self.sdr[c] / scenario.stats.min_sdr[c]
                  for c in scenario.stats.protected_cells]
        return linear_to_db(min(ratios))


def check_feasibility(scenario: Scenario) -> FeasibilityReport:
    """Best-case SDR per cell: full radar power, vanishing comm power.

    The whitened matched filter is optimal for the clutter-plus-noise
    disturbance, so the resulting quadratic form is the cell's hard SDR
    ceiling; any floor above it is unsatisfiable.
    """
    sysp, stats = scenario.system, scenario.stats
    Q = signal_model.scenario_code_matrix(scenario)
    pr = sysp.radar_power_max
    ceilings = {}
    for j in range(sysp.n_beams):
        cells = stats.cells_in_beam(j)
        if not cells:
            continue
        D = pr * signal_model.clutter_gram(scenario, j) \
            + sysp.radar_noise * np.eye(sysp.n_cells)
        cho = scipy.linalg.cho_factor(D, lower=True, check_finite=False)
        for (n, _) in cells:
            x = scipy.linalg.cho_solve(cho, Q[n], check_finite=False)
            ceilings[(n, j)] = stats.target_var[(n, j)] * pr * \
                float(np.vdot(Q[n], x).real)
    feasible = all(stats.min_sdr[c] <= ceilings[c] * (1 + 1e-12)
                   for c in stats.protected_cells)
    overall = min(ceilings.values())
    return FeasibilityReport(ceilings=ceilings, overall=overall,
                             feasible=feasible)


def initial_point(scenario: Scenario):
    """Strictly feasible starting triple (filters, radar power, codebook).

    Filters and power come from the closed-form radar updates at zero comm
    power; the codebook starts isotropic, with the scale walked down a
    decade ladder until every SDR floor holds (raising the radar power to
    its cap first if even that fails).
    """
    sysp, stats = scenario.system, scenario.stats
    MN, N = sysp.mn, sysp.n_cells
    zero_c = np.zeros((MN, MN), dtype=complex)
    filters = radar_opt.update_filters(scenario, zero_c,
                                       sysp.radar_power_max)
    power = radar_opt.update_radar_power(scenario, zero_c, filters)

    # decade ladder anchored at the full-power isotropic scale: starting
    # low would permanently starve the codebook, since the minimal-power
    # update pins the worst cell's interference budget at its current use
    cap = sysp.comm_power_max / sysp.n_tx
    ladder = [cap * 10.0 ** (-t) for t in range(13)]

    def sdr_ok(C, pr, tol=0.0):
        sdrs = signal_model.sdr_map(scenario, C, pr, filters)
        return all(sdrs[c] >= stats.min_sdr[c] * (1 - tol)
                   for c in stats.protected_cells)

    # at the minimal power the floors are exactly tight, so the ladder
    # check must be strict; any violating rung would start the ascent in
    # a vanishing-budget corner it could never leave
    for pr in (power, sysp.radar_power_max):
        for c in ladder:
            C = c * np.eye(MN, dtype=complex)
            if sdr_ok(C, pr):
                return filters, pr, C
        if pr == sysp.radar_power_max:
            break
    # SDR floors only hold with a vanishing codebook: boundary instance
    if sdr_ok(zero_c, sysp.radar_power_max, tol=1e-12):
        return filters, sysp.radar_power_max, zero_c
    raise Infeasible("no isotropic codebook scale is feasible at any "
                     "radar power within the cap")


def _audit(scenario, C, power, sdrs, rel=1e-9):
    sysp, stats = scenario.system, scenario.stats
    comm_power = float(np.trace(C).real) / sysp.n_cells
    if comm_power > sysp.comm_power_max * (1 + rel):
        raise Infeasible(
            f"comm power {comm_power:.6g} exceeds cap "
            f"{sysp.comm_power_max:.6g}")
    if power > sysp.radar_power_max * (1 + rel):
        raise Infeasible(
            f"radar power {power:.6g} exceeds cap "
            f"{sysp.radar_power_max:.6g}")
    for cell in stats.protected_cells:
        if sdrs[cell] < stats.min_sdr[cell] * (1 - rel):
            raise Infeasible(
                f"SDR at cell {cell} dropped to {sdrs[cell]:.6g} "
                f"below floor {stats.min_sdr[cell]:.6g}")


def block_coordinate_ascent(scenario: Scenario,
                            options: SolverOptions | None = None,
                            objective: str = "ee") -> DesignSolution:
    """Joint design loop; ``objective`` picks the codebook block's metric.

    Raises :class:`Infeasible` when the SDR floors are unsupportable.  On
    hitting the outer iteration cap the best design so far is returned
    with status ``max_iterations``.
    """
    if objective not in ("ee", "rate"):
        raise ValueError(f"unknown objective {objective!r}")
    options = options or SolverOptions()
    sysp, stats = scenario.system, scenario.stats

    report = check_feasibility(scenario)
    if not report.feasible:
        worst = min(report.ceilings, key=lambda c: report.ceilings[c]
                    / stats.min_sdr[c])
        raise Infeasible(
            f"SDR floor {linear_to_db(stats.min_sdr[worst]):.2f} dB at cell "
            f"{worst} exceeds the {linear_to_db(report.ceilings[worst]):.2f} "
            "dB ceiling")

    filters, power, C = initial_point(scenario)
    channel = signal_model.equivalent_channel(scenario, power)
    rate = signal_model.rate(scenario, C, channel)
    ee = signal_model.energy_efficiency(scenario, C, rate)
    sdrs = signal_model.sdr_map(scenario, C, power, filters)

    def row():
        margin = min(sdrs[c] / stats.min_sdr[c] for c in
                     stats.protected_cells) - 1.0
        return IterationRow(ee=ee, rate=rate, radar_power=power,
                            comm_power=float(np.trace(C).real) / sysp.n_cells,
                            min_sdr_margin=margin)

    trace = [row()]
    mu_warm = None
    status = "max_iterations"
    for k in range(1, options.max_outer_iterations + 1):
        filters = radar_opt.update_filters(scenario, C, power)
        power = radar_opt.update_radar_power(scenario, C, filters)
        channel = signal_model.equivalent_channel(scenario, power)
        constraints = signal_model.sdr_constraint_data(scenario, filters,
                                                       power)
        if objective == "ee":
            result = comm_opt.dinkelbach(
                channel, constraints, C,
                bandwidth=sysp.bandwidth, n_cells=sysp.n_cells,
                amp_efficiency=sysp.amp_efficiency,
                circuit_power=sysp.circuit_power,
                options=options.dinkelbach, dual_options=options.dual,
                mu0=mu_warm)
            C_new, mu_warm = result.C, result.multipliers
        else:
            C_new, mu_warm = comm_opt.solve_rate_subproblem(
                channel, constraints, dual_options=options.dual,
                mu0=mu_warm)

        rate_new = signal_model.rate(scenario, C_new, channel)
        ee_new = signal_model.energy_efficiency(scenario, C_new, rate_new)
        rate_old = signal_model.rate(scenario, C, channel)
        ee_old = signal_model.energy_efficiency(scenario, C, rate_old)
        better = (ee_new >= ee_old) if objective == "ee" \
            else (rate_new >= rate_old)
        if not better:     # inner solve fell short: keep the previous point
            C_new, rate_new, ee_new = C, rate_old, ee_old

        gain_base, gain_new = (ee, ee_new) if objective == "ee" \
            else (rate, rate_new)
        C, rate, ee = C_new, rate_new, ee_new
        sdrs = signal_model.sdr_map(scenario, C, power, filters)
        trace.append(row())
        if gain_new - gain_base <= options.outer_tolerance * gain_base:
            status = "converged"
            break

    _audit(scenario, C, power, sdrs)
    design = radar_opt.RadarDesign(filters=filters, power=power)
    return DesignSolution(C=C, radar=design, ee=ee, rate=rate,
                          comm_power=float(np.trace(C).real) / sysp.n_cells,
                          sdr=sdrs, trace=tuple(trace), status=status,
                          objective=objective)
