"""Closed-form radar block updates: max-SDR filters, minimum feasible power.

The filter update whitens each beam's disturbance (clutter + communication
echoes + noise, at the incoming radar power) and matches to the shifted
code of the cell; the power update then takes the smallest transmit power
under which every protected cell still meets its SDR floor with the new
filters and the current codebook.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InfeasiblePower
from .scenario import Scenario
from .signal_model import (
    data_interference,
    radar_disturbance,
    scenario_code_matrix,
)


@dataclass(frozen=True)
class RadarDesign:
    filters: dict       # (n, j) -> unit-norm filter in C^N
    power: float        # W, average transmit power

    def __post_init__(self):
        if not 0 <= self.power:
            raise ValueError(f"radar power must be >= 0 (got {self.power})")


def update_filters(scenario: Scenario, C: np.ndarray,
                   radar_power: float) -> dict:
    """Per-cell whitened matched filters, normalized to unit norm.

    Solving the disturbance covariance against the cell's code maximizes
    the generalized Rayleigh quotient, so each returned filter attains the
    largest achievable SDR in its cell at the given (C, radar_power).
    """
    sysp = scenario.system
    Q = scenario_code_matrix(scenario)
    filters = {}
    for j in range(sysp.n_beams):
        cells = scenario.stats.cells_in_beam(j)
        if not cells:
            continue
        D = radar_disturbance(scenario, C, radar_power, j)
        try:
            cho = scipy.linalg.cho_factor(D, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise InfeasiblePower(
                f"disturbance covariance of beam {j} is not positive "
                "definite") from exc
        for (n, _) in cells:
            w = scipy.linalg.cho_solve(cho, Q[n], check_finite=False)
            filters[(n, j)] = w / np.linalg.norm(w)
    return filters


def update_radar_power(scenario: Scenario, C: np.ndarray,
                       filters: dict) -> float:
    """Smallest transmit power meeting every protected cell's SDR floor.

    Raises :class:`InfeasiblePower` when some cell is clutter-limited below
    its floor (nonpositive margin for any power) or when the required power
    exceeds the cap.
    """
    sysp, stats = scenario.system, scenario.stats
    Q = scenario_code_matrix(scenario)
    power = 0.0
    for j in range(sysp.n_beams):
        cells = stats.cells_in_beam(j)
        if not cells:
            continue
        B = data_interference(scenario, C, j)
        for (n, _) in cells:
            w = filters[(n, j)]
            rho = stats.min_sdr[(n, j)]
            qw = np.abs(Q.conj() @ w) ** 2
            margin = (stats.target_var[(n, j)] * qw[n]
                      - rho * float(stats.clutter_var[j] @ qw))
            if margin <= 0:
                raise InfeasiblePower(
                    f"cell ({n}, {j}) is clutter-limited below its SDR "
                    f"floor (margin {margin:.3e})")
            leak = float(np.vdot(w, B @ w).real)
            noise = sysp.radar_noise * float(np.vdot(w, w).real)
            power = max(power, rho * (leak + noise) / margin)
    if power > sysp.radar_power_max * (1 + 1e-12):
        raise InfeasiblePower(
            f"required radar power {power:.4g} W exceeds the "
            f"{sysp.radar_power_max:.4g} W cap")
    return min(power, sysp.radar_power_max)
