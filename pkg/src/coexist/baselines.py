"""Reference designs: interference-free bound, disjoint design, rate-optimal.

The interference-free design solves each side in closed form (clutter-
whitened matched filters at full radar power; eigenmode waterfilling for
the codebook) and upper-bounds the joint design.  The disjoint design
reuses that solution unchanged under mutual interference, which is what
two non-cooperating systems would do; its largest supportable SDR floor is
a random variable of the channel draw.  The rate-optimal variant runs the
same ascent loop with the codebook block maximizing rate instead of
energy efficiency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import comm_opt, signal_model, solver
from .radar_opt import RadarDesign
from .scenario import Scenario, SolverOptions

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class BaselineResult:
    kind: str               # non_interfering | disjoint | rate_opt
    ee: float
    rate: float
    comm_power: float       # W
    radar_power: float      # W
    sdr: dict               # (n, j) -> achieved SDR in the evaluated world
    rho_star: float         # largest supportable SDR floor, linear
    mode_gains: np.ndarray  # squared singular values of the channel matrix
    mode_powers: np.ndarray  # per-mode symbol power of the codebook
    outer_iterations: int = 0

    @property
    def channel_rank(self) -> int:
        return int(np.sum(self.mode_gains > 0))

    def covariance(self, scenario: Scenario) -> np.ndarray:
        """Materialize the eigenmode codebook as a full covariance matrix."""
        N = scenario.system.n_cells
        HH = signal_model.hermitize(
            scenario.channel.conj().T @ scenario.channel)
        _, V = np.linalg.eigh(HH)
        V = V[:, ::-1]                      # strongest mode first
        p = self.mode_powers
        C_small = (V[:, :p.size] * p) @ V[:, :p.size].conj().T
        return signal_model.hermitize(np.kron(C_small, np.eye(N)))


def _strip_interference(scenario: Scenario) -> Scenario:
    stats = scenario.stats
    clean = type(stats)(
        target_var=stats.target_var, clutter_var=stats.clutter_var.copy(),
        alpha_cov={}, beta_var={}, channel_var=stats.channel_var,
        min_sdr=stats.min_sdr, protected_cells=stats.protected_cells,
        delay=stats.delay)
    return Scenario(system=scenario.system, stats=clean,
                    channel=scenario.channel)


def _ee_waterfilling(gains, noise, sysp, tolerance=1e-12, max_iter=100):
    """Ratio maximization over channel eigenmodes, waterfilling inner step.

    ``gains`` are the squared channel singular values; each mode carries N
    symbols, so a per-symbol allocation p costs N*p of codebook trace.
    Returns (per-mode powers, rate bits/s, EE bits/J).
    """
    f = np.asarray(sorted(gains, reverse=True)) / noise
    f = f[f > 0]
    t_factor = LOG2 / (sysp.amp_efficiency * sysp.bandwidth)

    def evaluate(p):
        rate = sysp.bandwidth * float(np.sum(np.log2(1.0 + f * p)))
        ee = rate / (np.sum(p) / sysp.amp_efficiency + sysp.circuit_power)
        return rate, ee

    if f.size == 0:
        return np.zeros(0), 0.0, 0.0
    p = np.full(f.size, sysp.comm_power_max / f.size)
    rate, ee = evaluate(p)
    for _ in range(max_iter):
        p, _ = comm_opt.waterfill_total(f, ee * t_factor,
                                        sysp.comm_power_max)
        rate_new, ee_new = evaluate(p)
        gain = ee_new - ee
        rate, ee = rate_new, ee_new
        if gain <= tolerance * ee:
            break
    return p, rate, ee


def _clutter_whitened_filters(scenario: Scenario) -> dict:
    """Matched filters against clutter+noise only, at full radar power."""
    sysp = scenario.system
    clean = _strip_interference(scenario)
    filters = {}
    Q = signal_model.code_matrix(sysp.code, sysp.n_cells)
    for j in range(sysp.n_beams):
        cells = scenario.stats.cells_in_beam(j)
        if not cells:
            continue
        D = sysp.radar_power_max * signal_model.clutter_gram(clean, j) \
            + sysp.radar_noise * np.eye(sysp.n_cells)
        cho = scipy.linalg.cho_factor(D, lower=True, check_finite=False)
        for (n, _) in cells:
            w = scipy.linalg.cho_solve(cho, Q[n], check_finite=False)
            filters[(n, j)] = w / np.linalg.norm(w)
    return filters


def non_interfering_design(scenario: Scenario) -> BaselineResult:
    """Each side optimized with all cross-system statistics at zero."""
    sysp = scenario.system
    gains = np.linalg.svd(scenario.channel, compute_uv=False) ** 2
    p, rate, ee = _ee_waterfilling(gains, sysp.comm_noise, sysp)
    report = solver.check_feasibility(_strip_interference(scenario))
    return BaselineResult(
        kind="non_interfering", ee=ee, rate=rate,
        comm_power=float(np.sum(p)), radar_power=sysp.radar_power_max,
        sdr=dict(report.ceilings), rho_star=report.overall,
        mode_gains=gains, mode_powers=p)


def disjoint_evaluate(scenario: Scenario) -> BaselineResult:
    """Non-cooperative outcome: the isolated design under real interference.

    Keeps the interference-free codebook, filters, and full radar power,
    then re-evaluates rate/EE against the radar-corrupted link and the
    per-cell SDR against the codebook leakage.  The minimum achieved SDR
    is the largest floor this design can actually support.
    """
    sysp = scenario.system
    clean_design = non_interfering_design(scenario)
    C = clean_design.covariance(scenario)

    channel = signal_model.equivalent_channel(scenario,
                                              sysp.radar_power_max)
    rate = signal_model.rate(scenario, C, channel)
    ee = signal_model.energy_efficiency(scenario, C, rate)

    filters = _clutter_whitened_filters(scenario)
    sdrs = signal_model.sdr_map(scenario, C, sysp.radar_power_max, filters)

    return BaselineResult(
        kind="disjoint", ee=ee, rate=rate,
        comm_power=clean_design.comm_power,
        radar_power=sysp.radar_power_max, sdr=sdrs,
        rho_star=min(sdrs.values()),
        mode_gains=clean_design.mode_gains,
        mode_powers=clean_design.mode_powers)


def rate_opt_design(scenario: Scenario,
                    options: SolverOptions | None = None) -> BaselineResult:
    """Joint design with the codebook block maximizing rate, not EE."""
    sol = solver.block_coordinate_ascent(scenario, options,
                                         objective="rate")
    gains = np.linalg.svd(scenario.channel, compute_uv=False) ** 2
    return BaselineResult(
        kind="rate_opt", ee=sol.ee, rate=sol.rate,
        comm_power=sol.comm_power, radar_power=sol.radar.power,
        sdr=sol.sdr, rho_star=min(sol.sdr.values()),
        mode_gains=gains, mode_powers=np.zeros(0),
        outer_iterations=sol.outer_iterations)
