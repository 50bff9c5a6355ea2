"""Scenario configuration, validation, and Monte Carlo sampling.

A scenario bundles the physical/system parameters of the two coexisting
systems (radar + MIMO link), the second-order statistics of target, clutter
and mutual interference, and one channel realization.  Configuration comes
from a JSON file with top-level keys ``system``, ``statistics``, ``sweep``,
``montecarlo`` and ``solver``; powers are in Watts, SDR thresholds in dB
(converted to linear internally), frequencies in Hz.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

# Binary phase codes with minimal autocorrelation sidelobes, by length.
BARKER_CODES = {
    2: [1, -1],
    3: [1, 1, -1],
    4: [1, 1, -1, 1],
    5: [1, 1, 1, -1, 1],
    7: [1, 1, 1, -1, -1, 1, -1],
    11: [1, 1, 1, -1, -1, -1, 1, -1, -1, 1, -1],
    13: [1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1],
}


@dataclass(frozen=True, eq=False)
class SystemParams:
    """Physical and hardware parameters of the radar and the MIMO link."""

    bandwidth: float        # Hz, shared by both systems
    prt: float              # s, radar pulse repetition time
    n_cells: int            # N, non-ambiguous range cells (~ bandwidth * prt)
    n_beams: int            # J, simultaneous receive beams (azimuth bins)
    n_tx: int               # M, communication transmit antennas
    n_rx: int               # K, communication receive antennas
    radar_power_max: float  # W, average radar transmit power cap
    comm_power_max: float   # W, average communication transmit power cap
    radar_noise: float      # W, noise power at the radar receiver
    comm_noise: float       # W, noise power at the communication receiver
    amp_efficiency: float   # power amplifier efficiency, in (0, 1]
    circuit_power: float    # W, circuit power needed to operate the link
    code: np.ndarray        # fast-time code, scaled so ||code||^2 = n_cells

    def __post_init__(self):
        q = np.asarray(self.code, dtype=complex)
        L = q.size
        if not 0 < L < self.n_cells:
            raise ConfigError(
                f"L must satisfy 0<L<N (got L={L}, N={self.n_cells})")
        if self.n_beams < 1:
            raise ConfigError(f"n_beams must be >= 1 (got {self.n_beams})")
        if self.n_tx < 1 or self.n_rx < 1:
            raise ConfigError(
                f"antenna counts must be >= 1 (got n_tx={self.n_tx}, "
                f"n_rx={self.n_rx})")
        for name in ("bandwidth", "prt", "radar_power_max", "comm_power_max",
                     "radar_noise", "comm_noise", "circuit_power"):
            value = getattr(self, name)
            if not value > 0:
                raise ConfigError(f"{name} must be > 0 (got {value})")
        if not 0 < self.amp_efficiency <= 1:
            raise ConfigError(
                f"amp_efficiency must be in (0, 1] "
                f"(got {self.amp_efficiency})")
        norm2 = float(np.sum(np.abs(q) ** 2))
        if norm2 <= 0:
            raise ConfigError("code must be a nonzero vector")
        q = q * math.sqrt(self.n_cells / norm2)
        q.setflags(write=False)
        object.__setattr__(self, "code", q)

    @property
    def code_len(self) -> int:
        return self.code.size

    @property
    def mn(self) -> int:
        """Dimension of the stacked space-time codeword."""
        return self.n_tx * self.n_cells


@dataclass(frozen=True, eq=False)
class StatisticsSpec:
    """Raw statistics block of a config, before a scenario is realized.

    ``protected_cells`` is either an explicit tuple of (range, beam) pairs
    or an integer count to be drawn per Monte Carlo run.  Scalar variances
    broadcast over the relevant index set; sparse maps leave absent keys
    at zero.
    """

    target_var: float | dict       # sigma^2 of the target echo per cell
    clutter_var: float | dict      # sigma^2 of the clutter per (range, beam)
    channel_var: float             # per-entry variance of the channel matrix
    min_sdr_db: float | dict       # SDR floor per protected cell, dB
    protected_cells: int | tuple   # explicit cells or a count
    delay: int | None = None       # symbol offset between systems; None=draw

    def __post_init__(self):
        if self.channel_var < 0:
            raise ConfigError(
                f"channel_var must be >= 0 (got {self.channel_var})")
        if isinstance(self.protected_cells, int):
            if self.protected_cells < 1:
                raise ConfigError(
                    f"protected_cells count must be >= 1 "
                    f"(got {self.protected_cells})")
        elif len(self.protected_cells) == 0:
            raise ConfigError("protected_cells must be nonempty")


@dataclass(frozen=True, eq=False)
class Statistics:
    """Realized second-order statistics for one scenario."""

    target_var: dict        # (n, j) -> sigma^2 of the target echo
    clutter_var: np.ndarray  # (J, N) clutter variance per beam and range bin
    alpha_cov: dict         # i -> (K, K) radar-echo covariance at the link
    beta_var: dict          # (i, j) -> (M, M) comm-echo covariance at radar
    channel_var: float
    min_sdr: dict           # (n, j) -> required SDR, linear scale
    protected_cells: tuple  # ((n, j), ...), n in 0..N-L, j in 0..J-1
    delay: int              # symbol offset of the comm tx vs the radar tx

    def __post_init__(self):
        self.clutter_var.setflags(write=False)
        if np.any(self.clutter_var < 0):
            raise ConfigError("clutter_var entries must be >= 0")
        for n_j, v in self.target_var.items():
            if v < 0:
                raise ConfigError(
                    f"target_var must be >= 0 (got {v} at cell {n_j})")
        for n_j, rho in self.min_sdr.items():
            if not rho > 0:
                raise ConfigError(
                    f"min_sdr must be > 0 (got {rho} at cell {n_j})")
        if len(self.protected_cells) == 0:
            raise ConfigError("protected_cells must be nonempty")
        for mat in self.alpha_cov.values():
            _check_hermitian_psd(mat, "alpha_cov")
        for mat in self.beta_var.values():
            _check_hermitian_psd(mat, "beta_var")

    def cells_in_beam(self, beam: int) -> list:
        return [c for c in self.protected_cells if c[1] == beam]


@dataclass(frozen=True, eq=False)
class ScenarioSample:
    """One Monte Carlo draw of channel, scatterer placement, and delay."""

    channel: np.ndarray     # (K, M) complex channel matrix
    alpha_bins: tuple       # range bins with radar-to-link interference
    beta_bins: tuple        # per beam: range bins with link-to-radar echoes
    delay: int
    sigma2: float           # interference intensity used for active bins

    def __post_init__(self):
        self.channel.setflags(write=False)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything a solve needs: parameters, statistics, one channel."""

    system: SystemParams
    stats: Statistics
    channel: np.ndarray     # (K, M)

    def __post_init__(self):
        self.channel.setflags(write=False)
        K, M = self.channel.shape
        if (K, M) != (self.system.n_rx, self.system.n_tx):
            raise ConfigError(
                f"channel shape {self.channel.shape} does not match "
                f"(n_rx, n_tx)=({self.system.n_rx}, {self.system.n_tx})")
        N, L, J = self.system.n_cells, self.system.code_len, self.system.n_beams
        for (n, j) in self.stats.protected_cells:
            if not (0 <= n <= N - L and 0 <= j < J):
                raise ConfigError(
                    f"protected cell ({n}, {j}) outside "
                    f"{{0..{N - L}}} x {{0..{J - 1}}}")


def _check_hermitian_psd(mat, name, tol=1e-10):
    mat = np.asarray(mat)
    scale = max(float(np.abs(mat).max()), 1.0)
    if np.abs(mat - mat.conj().T).max() > tol * scale:
        raise ConfigError(f"{name} matrices must be Hermitian")
    w = np.linalg.eigvalsh(mat)
    if w.min() < -tol * scale:
        raise ConfigError(f"{name} matrices must be positive semidefinite")


@dataclass(frozen=True)
class DinkelbachOptions:
    tolerance: float = 1e-8        # relative gain in the objective ratio
    max_iterations: int = 60


@dataclass(frozen=True)
class DualOptions:
    method: str = "quasi_newton"   # or "projected_gradient"
    tolerance: float = 1e-9        # KKT residual, on normalized constraints
    max_iterations: int = 300
    pg_step0: float = 1.0          # base step of the diminishing PG schedule
    armijo_slope: float = 1e-4
    armijo_backtrack: float = 0.5
    armijo_max_backtracks: int = 50

    def __post_init__(self):
        if self.method not in ("quasi_newton", "projected_gradient"):
            raise ConfigError(f"unknown dual method {self.method!r}")


@dataclass(frozen=True)
class SolverOptions:
    outer_tolerance: float = 1e-5
    max_outer_iterations: int = 100
    dinkelbach: DinkelbachOptions = field(default_factory=DinkelbachOptions)
    dual: DualOptions = field(default_factory=DualOptions)


@dataclass(frozen=True)
class MonteCarloSpec:
    runs: int = 200
    base_seed: int = 20260810
    delta: float = 0.2          # fraction of range bins with scatterers
    sigma2: float = 1.2e-13     # interference intensity on active bins
    jobs: int | None = None

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError(f"runs must be >= 1 (got {self.runs})")
        if not 0 <= self.delta <= 1:
            raise ConfigError(f"delta must be in [0, 1] (got {self.delta})")
        if self.sigma2 < 0:
            raise ConfigError(f"sigma2 must be >= 0 (got {self.sigma2})")


@dataclass(frozen=True)
class SweepSpec:
    """Grid of operating points for a Monte Carlo sweep."""

    rho_db: tuple
    delta: tuple
    sigma2: tuple
    cells: tuple                # protected-cell counts
    modes: tuple = ("ee",)
    runs: int = 200
    base_seed: int = 20260810
    sweep_id: str = "sweep"

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError(f"sweep runs must be >= 1 (got {self.runs})")
        for d in self.delta:
            if not 0 <= d <= 1:
                raise ConfigError(f"sweep delta must be in [0, 1] (got {d})")
        for m in self.modes:
            if m not in ("ee", "rate", "disjoint", "isolated"):
                raise ConfigError(f"unknown sweep mode {m!r}")

    def points(self):
        for delta in self.delta:
            for sigma2 in self.sigma2:
                for cells in self.cells:
                    for rho_db in self.rho_db:
                        yield (rho_db, delta, sigma2, cells)


@dataclass(frozen=True)
class Config:
    system: SystemParams
    statistics: StatisticsSpec
    solver: SolverOptions
    montecarlo: MonteCarloSpec
    sweep: SweepSpec | None = None


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def _cell_key(key) -> tuple:
    """Parse an '(n,j)' mapping key: 'n,j' string or [n, j] pair."""
    if isinstance(key, str):
        parts = key.split(",")
    else:
        parts = list(key)
    if len(parts) != 2:
        raise ConfigError(f"cell key {key!r} is not an 'n,j' pair")
    return int(parts[0]), int(parts[1])


def _resolve_code(raw) -> list:
    if isinstance(raw, str):
        if not raw.startswith("barker"):
            raise ConfigError(f"unknown code name {raw!r}")
        length = int(raw[len("barker"):])
        if length not in BARKER_CODES:
            raise ConfigError(f"no Barker code of length {length}")
        return BARKER_CODES[length]
    return list(raw)


def parse_config(data: dict) -> Config:
    """Validate a configuration mapping and build the typed bundle."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    try:
        sys_raw = dict(data["system"])
        stat_raw = dict(data["statistics"])
    except KeyError as exc:
        raise ConfigError(f"missing top-level config key {exc}") from None

    try:
        system = SystemParams(
            bandwidth=float(sys_raw.pop("bandwidth_hz")),
            prt=float(sys_raw.pop("prt_s")),
            n_cells=int(sys_raw.pop("num_range_cells")),
            n_beams=int(sys_raw.pop("num_beams")),
            n_tx=int(sys_raw.pop("tx_antennas")),
            n_rx=int(sys_raw.pop("rx_antennas")),
            radar_power_max=float(sys_raw.pop("radar_power_max_w")),
            comm_power_max=float(sys_raw.pop("comm_power_max_w")),
            radar_noise=float(sys_raw.pop("radar_noise_power_w")),
            comm_noise=float(sys_raw.pop("comm_noise_power_w")),
            amp_efficiency=float(sys_raw.pop("amplifier_efficiency")),
            circuit_power=float(sys_raw.pop("circuit_power_w")),
            code=np.asarray(_resolve_code(sys_raw.pop("code")), dtype=complex),
        )
    except KeyError as exc:
        raise ConfigError(f"missing system key {exc}") from None
    if sys_raw:
        raise ConfigError(f"unknown system keys {sorted(sys_raw)}")

    cells_raw = stat_raw.pop("protected_cells", None)
    if cells_raw is None:
        raise ConfigError("missing statistics key 'protected_cells'")
    if isinstance(cells_raw, int):
        cells = cells_raw
    else:
        cells = tuple(_cell_key(c) for c in cells_raw)

    def _scalar_or_map(name, default=None):
        raw = stat_raw.pop(name, default)
        if raw is None:
            raise ConfigError(f"missing statistics key {name!r}")
        if isinstance(raw, dict):
            return {_cell_key(k): float(v) for k, v in raw.items()}
        return float(raw)

    try:
        statistics = StatisticsSpec(
            target_var=_scalar_or_map("target_echo_var"),
            clutter_var=_scalar_or_map("clutter_var"),
            channel_var=float(stat_raw.pop("channel_gain_var")),
            min_sdr_db=_scalar_or_map("min_sdr_db"),
            protected_cells=cells,
            delay=(None if stat_raw.get("mutual_delay") is None
                   else int(stat_raw["mutual_delay"])),
        )
    except KeyError as exc:
        raise ConfigError(f"missing statistics key {exc}") from None
    stat_raw.pop("mutual_delay", None)
    if stat_raw:
        raise ConfigError(f"unknown statistics keys {sorted(stat_raw)}")

    solver_raw = dict(data.get("solver", {}))
    dink_raw = dict(solver_raw.pop("dinkelbach", {}))
    dual_raw = dict(solver_raw.pop("dual", {}))
    try:
        solver = SolverOptions(
            dinkelbach=DinkelbachOptions(**dink_raw),
            dual=DualOptions(**dual_raw),
            **solver_raw,
        )
    except TypeError as exc:
        raise ConfigError(f"bad solver options: {exc}") from None

    mc_raw = dict(data.get("montecarlo", {}))
    try:
        montecarlo = MonteCarloSpec(**mc_raw)
    except TypeError as exc:
        raise ConfigError(f"bad montecarlo options: {exc}") from None

    sweep = None
    if "sweep" in data:
        sw = dict(data["sweep"])
        try:
            sweep = SweepSpec(
                rho_db=tuple(float(r) for r in sw.pop("rho_db")),
                delta=tuple(float(d) for d in sw.pop("delta",
                                                     [montecarlo.delta])),
                sigma2=tuple(float(s) for s in sw.pop("sigma2",
                                                      [montecarlo.sigma2])),
                cells=tuple(int(c) for c in sw.pop("cells")),
                modes=tuple(sw.pop("modes", ["ee"])),
                runs=int(sw.pop("runs", montecarlo.runs)),
                base_seed=int(sw.pop("base_seed", montecarlo.base_seed)),
                sweep_id=str(sw.pop("id", "sweep")),
            )
        except KeyError as exc:
            raise ConfigError(f"missing sweep key {exc}") from None
        if sw:
            raise ConfigError(f"unknown sweep keys {sorted(sw)}")

    return Config(system=system, statistics=statistics, solver=solver,
                  montecarlo=montecarlo, sweep=sweep)


def load_config(path) -> Config:
    """Load and validate a JSON configuration file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") \
            from None
    return parse_config(raw)


def paper_scale_config(rho_db: float = 5.0, cells: int = 30,
                       delta: float = 0.2, sigma2: float = 1.2e-13) -> dict:
    """Default full-scale configuration (100 range cells, 2x2 link)."""
    return {
        "system": {
            "bandwidth_hz": 1.0e6,
            "prt_s": 1.0e-4,
            "num_range_cells": 100,
            "code": "barker5",
            "num_beams": 3,
            "tx_antennas": 2,
            "rx_antennas": 2,
            "radar_power_max_w": 25.0,
            "comm_power_max_w": 0.01,
            "radar_noise_power_w": 2.39e-14,
            "comm_noise_power_w": 2.39e-14,
            "amplifier_efficiency": 0.85,
            "circuit_power_w": 0.01,
        },
        "statistics": {
            "target_echo_var": 4.8e-16,
            "clutter_var": 4.8e-17,
            "channel_gain_var": 3.0e-10,
            "min_sdr_db": rho_db,
            "protected_cells": cells,
            "mutual_delay": None,
        },
        "montecarlo": {
            "runs": 200,
            "base_seed": 20260810,
            "delta": delta,
            "sigma2": sigma2,
        },
        "solver": {},
    }


def sample_scenario(system: SystemParams, statistics: StatisticsSpec,
                    delta: float, sigma2: float, seed) -> ScenarioSample:
    """Draw channel, scatterer bins, and mutual delay for one run.

    The channel entries are i.i.d. circularly-symmetric complex Gaussian
    with the configured variance; floor(delta * N) range bins are marked
    active for each interference direction; the delay is uniform over
    {0, ..., N-1}.  Deterministic given the seed (draw order: channel,
    radar-to-link bins, link-to-radar bins per beam, delay).
    """
    if not 0 <= delta <= 1:
        raise ConfigError(f"delta must be in [0, 1] (got {delta})")
    if sigma2 < 0:
        raise ConfigError(f"sigma2 must be >= 0 (got {sigma2})")
    rng = np.random.default_rng(seed)
    K, M, N = system.n_rx, system.n_tx, system.n_cells
    scale = math.sqrt(statistics.channel_var / 2.0)
    H = scale * (rng.standard_normal((K, M)) +
                 1j * rng.standard_normal((K, M)))
    n_active = int(delta * N)
    alpha_bins = tuple(sorted(rng.permutation(N)[:n_active].tolist()))
    beta_bins = tuple(
        tuple(sorted(rng.permutation(N)[:n_active].tolist()))
        for _ in range(system.n_beams))
    delay = int(rng.integers(0, N))
    return ScenarioSample(channel=H, alpha_bins=alpha_bins,
                          beta_bins=beta_bins, delay=delay, sigma2=sigma2)


def choose_protected_cells(system: SystemParams, count: int, rng) -> tuple:
    """Uniform random subset of size ``count`` of the observable cells.

    Uses a permutation prefix so subsets are nested across counts drawn
    from the same generator state.
    """
    N, L, J = system.n_cells, system.code_len, system.n_beams
    all_cells = [(n, j) for n in range(N - L + 1) for j in range(J)]
    if count > len(all_cells):
        raise ConfigError(
            f"protected_cells count {count} exceeds the "
            f"{len(all_cells)} observable cells")
    order = rng.permutation(len(all_cells))[:count]
    return tuple(sorted(all_cells[k] for k in order.tolist()))


def realize_statistics(system: SystemParams, spec: StatisticsSpec,
                       sample: ScenarioSample | None = None,
                       cells: tuple | None = None,
                       rho_db_override: float | None = None) -> Statistics:
    """Materialize per-cell statistics from a spec and an optional draw."""
    N, J, M, K = (system.n_cells, system.n_beams, system.n_tx, system.n_rx)

    if cells is None:
        if isinstance(spec.protected_cells, int):
            raise ConfigError(
                "protected_cells is a count; pass the drawn cells explicitly")
        cells = tuple(spec.protected_cells)

    def _per_cell(raw, name):
        if isinstance(raw, dict):
            missing = [c for c in cells if c not in raw]
            if missing:
                raise ConfigError(f"{name} map missing cells {missing}")
            return {c: raw[c] for c in cells}
        return {c: float(raw) for c in cells}

    target_var = _per_cell(spec.target_var, "target_echo_var")
    if rho_db_override is not None:
        min_sdr = {c: db_to_linear(rho_db_override) for c in cells}
    elif isinstance(spec.min_sdr_db, dict):
        min_sdr = {c: db_to_linear(v)
                   for c, v in _per_cell(spec.min_sdr_db, "min_sdr_db").items()}
    else:
        min_sdr = {c: db_to_linear(spec.min_sdr_db) for c in cells}

    clutter = np.zeros((J, N))
    if isinstance(spec.clutter_var, dict):
        for (i, j), v in spec.clutter_var.items():
            if not (0 <= i < N and 0 <= j < J):
                raise ConfigError(f"clutter_var key ({i},{j}) out of range")
            clutter[j, i] = v
    else:
        clutter[:, :] = spec.clutter_var

    alpha_cov = {}
    beta_var = {}
    if sample is not None and sample.sigma2 > 0:
        eye_k = np.eye(K, dtype=complex)
        eye_m = np.eye(M, dtype=complex)
        for i in sample.alpha_bins:
            alpha_cov[i] = sample.sigma2 * eye_k
        for j, bins in enumerate(sample.beta_bins):
            for i in bins:
                beta_var[(i, j)] = sample.sigma2 * eye_m

    if spec.delay is not None:
        delay = spec.delay
    elif sample is not None:
        delay = sample.delay
    else:
        delay = 0

    return Statistics(target_var=target_var, clutter_var=clutter,
                      alpha_cov=alpha_cov, beta_var=beta_var,
                      channel_var=spec.channel_var, min_sdr=min_sdr,
                      protected_cells=cells, delay=delay % N)


def build_scenario(system: SystemParams, spec: StatisticsSpec,
                   sample: ScenarioSample, cells: tuple | None = None,
                   rho_db_override: float | None = None) -> Scenario:
    """Combine a statistics spec with one Monte Carlo draw."""
    stats = realize_statistics(system, spec, sample, cells, rho_db_override)
    return Scenario(system=system, stats=stats, channel=sample.channel)


def scenario_from_config(config: Config, seed: int,
                         rho_db: float | None = None,
                         delta: float | None = None,
                         sigma2: float | None = None) -> Scenario:
    """One seeded scenario at the config's Monte Carlo operating point."""
    mc = config.montecarlo
    delta = mc.delta if delta is None else delta
    sigma2 = mc.sigma2 if sigma2 is None else sigma2
    sample = sample_scenario(config.system, config.statistics,
                             delta, sigma2, seed)
    cells = None
    if isinstance(config.statistics.protected_cells, int):
        rng = np.random.default_rng((seed, 0x9E3779B9))
        cells = choose_protected_cells(
            config.system, config.statistics.protected_cells, rng)
    return build_scenario(config.system, config.statistics, sample,
                          cells=cells, rho_db_override=rho_db)
