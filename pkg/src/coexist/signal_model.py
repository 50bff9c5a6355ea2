"""Deterministic signal-model objects and figure-of-merit evaluation.

Everything here is a pure function of a scenario and a candidate design:
shifted code vectors, the split covariance segments induced by the mutual
delay, the whitened equivalent channel of the MIMO link, the per-cell SDR
constraint data, and the rate / energy-efficiency / SDR metrics.  A
synthetic snapshot sampler validates the analytic SDR empirically.

Matrices of order M*N are stored dense; the 0/1 selection operators that
split a codeword across two radar pulses are applied through index
arithmetic and never materialized.  Assembled Hermitian matrices are
re-symmetrized to suppress floating-point asymmetry.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import CoexistError
from .scenario import Scenario

LOG2 = math.log(2.0)

# per-scenario cache of deterministic matrices (code shifts, clutter grams)
_SCENARIO_CACHE: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()


def _cache(scenario: Scenario) -> dict:
    store = _SCENARIO_CACHE.get(scenario)
    if store is None:
        store = {}
        _SCENARIO_CACHE[scenario] = store
    return store


def shifted_code(code: np.ndarray, shift: int, n_cells: int) -> np.ndarray:
    """Zero-pad the fast-time code to length N and circularly shift it down."""
    L = code.size
    if not 0 <= shift < n_cells:
        raise IndexError(f"shift {shift} outside 0..{n_cells - 1}")
    if L > n_cells:
        raise IndexError(f"code length {L} exceeds n_cells {n_cells}")
    out = np.zeros(n_cells, dtype=complex)
    idx = (np.arange(L) + shift) % n_cells
    out[idx] = code
    return out


def code_matrix(code: np.ndarray, n_cells: int) -> np.ndarray:
    """All N shifted code vectors, as rows."""
    base = shifted_code(code, 0, n_cells)
    return np.stack([np.roll(base, i) for i in range(n_cells)])


def scenario_code_matrix(scenario: Scenario) -> np.ndarray:
    store = _cache(scenario)
    if "code_matrix" not in store:
        store["code_matrix"] = code_matrix(scenario.system.code,
                                           scenario.system.n_cells)
    return store["code_matrix"]


def split_offsets(n_cells: int, code_len: int, delay: int) -> np.ndarray:
    """Row offset at which codeword i wraps across two radar pulses."""
    return (delay - code_len + np.arange(n_cells)) % n_cells


def covariance_segment(C: np.ndarray, m: int, mp: int, i: int,
                       scenario: Scenario) -> np.ndarray:
    """Cross-covariance of the codeword slices seen in one radar pulse.

    The slice observed at range bin i mixes the tail of one codeword with
    the head of the next, so the result is a 2-block diagonal rearrangement
    of the (m, mp) antenna block of C.
    """
    sysp = scenario.system
    N = sysp.n_cells
    if C.shape != (sysp.mn, sysp.mn):
        raise ValueError(f"C must be {sysp.mn}x{sysp.mn}, got {C.shape}")
    ell = int(split_offsets(N, sysp.code_len, scenario.stats.delay)[i])
    return _segment(C, m, mp, ell, N)


def _segment(C, m, mp, ell, N):
    out = np.zeros((N, N), dtype=complex)
    r0, c0 = m * N, mp * N
    out[:ell, :ell] = C[r0 + N - ell:r0 + N, c0 + N - ell:c0 + N]
    out[ell:, ell:] = C[r0:r0 + N - ell, c0:c0 + N - ell]
    return out


def _add_segment(out, C, m, mp, ell, N, coef):
    r0, c0 = m * N, mp * N
    if ell:
        out[:ell, :ell] += coef * C[r0 + N - ell:r0 + N, c0 + N - ell:c0 + N]
    out[ell:, ell:] += coef * C[r0:r0 + N - ell, c0:c0 + N - ell]


def hermitize(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.conj().T)


def data_interference(scenario: Scenario, C: np.ndarray,
                      beam: int) -> np.ndarray:
    """Covariance of the communication echoes hitting one radar beam."""
    sysp, stats = scenario.system, scenario.stats
    N, M = sysp.n_cells, sysp.n_tx
    ell = split_offsets(N, sysp.code_len, stats.delay)
    out = np.zeros((N, N), dtype=complex)
    for (i, j), svar in stats.beta_var.items():
        if j != beam:
            continue
        li = int(ell[i])
        for m in range(M):
            for mp in range(M):
                coef = svar[m, mp]
                if coef != 0:
                    _add_segment(out, C, m, mp, li, N, coef)
    return hermitize(out)


def clutter_gram(scenario: Scenario, beam: int) -> np.ndarray:
    """Sum of clutter-weighted outer products of the shifted codes."""
    store = _cache(scenario)
    key = ("clutter_gram", beam)
    if key in store:
        return store[key]
    sysp = scenario.system
    var = scenario.stats.clutter_var[beam]
    Q = scenario_code_matrix(scenario)
    active = var > 0
    if not np.any(active):
        out = np.zeros((sysp.n_cells, sysp.n_cells), dtype=complex)
    else:
        Qa = Q[active]
        out = hermitize((Qa.T * var[active]) @ Qa.conj())
    out.setflags(write=False)
    store[key] = out
    return out


def radar_disturbance(scenario: Scenario, C: np.ndarray, radar_power: float,
                      beam: int) -> np.ndarray:
    """Clutter + data-interference + noise covariance at one radar beam."""
    sysp = scenario.system
    D = radar_power * clutter_gram(scenario, beam)
    D += data_interference(scenario, C, beam)
    D += sysp.radar_noise * np.eye(sysp.n_cells)
    return hermitize(D)


@dataclass(frozen=True, eq=False)
class EquivalentChannel:
    """Whitened MIMO channel Gram matrix of order M*N, with eigen cache.

    When the radar interference covariance is proportional to the identity
    across receive antennas (independent rays), the Gram matrix factors as
    (antenna part) ⊗ (range part); both factors are kept so downstream
    solvers can work at per-part size instead of the full order.
    """

    matrix: np.ndarray      # Hermitian PSD, order M*N
    eigenvalues: np.ndarray  # ascending, clipped at zero
    eigenvectors: np.ndarray
    antenna_part: np.ndarray | None = None  # M x M Gram of the channel
    range_part: np.ndarray | None = None    # N x N whitening inverse

    def __post_init__(self):
        self.matrix.setflags(write=False)
        self.eigenvalues.setflags(write=False)
        self.eigenvectors.setflags(write=False)

    @property
    def rank(self) -> int:
        top = float(self.eigenvalues[-1]) if self.eigenvalues.size else 0.0
        if top <= 0:
            return 0
        return int(np.sum(self.eigenvalues > 1e-12 * top))


def _isotropic_alpha(alpha_cov: dict, n_rx: int):
    """Per-bin scalar variances when every echo covariance is c * I."""
    eye = np.eye(n_rx)
    out = {}
    for i, mat in alpha_cov.items():
        c = float(mat[0, 0].real)
        if not np.allclose(mat, c * eye, rtol=1e-12, atol=0.0):
            return None
        out[i] = c
    return out


def comm_disturbance(scenario: Scenario, radar_power: float) -> np.ndarray:
    """Radar interference + noise covariance at the communication receiver."""
    sysp, stats = scenario.system, scenario.stats
    N, K = sysp.n_cells, sysp.n_rx
    Q = scenario_code_matrix(scenario)
    R = sysp.comm_noise * np.eye(K * N, dtype=complex)
    if radar_power > 0 and stats.alpha_cov:
        bins = sorted(stats.alpha_cov)
        Qa = Q[bins]
        S = np.stack([stats.alpha_cov[i] for i in bins])  # (n_bins, K, K)
        for k in range(K):
            for kp in range(K):
                coef = S[:, k, kp]
                if np.any(coef != 0):
                    block = (Qa.T * coef) @ Qa.conj()
                    R[k * N:(k + 1) * N, kp * N:(kp + 1) * N] += \
                        radar_power * block
    return hermitize(R)


def equivalent_channel(scenario: Scenario,
                       radar_power: float) -> EquivalentChannel:
    """Channel Gram matrix after whitening by the disturbance covariance."""
    if radar_power < 0:
        raise ValueError(f"radar_power must be >= 0 (got {radar_power})")
    sysp = scenario.system
    N, K, M = sysp.n_cells, sysp.n_rx, sysp.n_tx
    H = scenario.channel
    scalars = _isotropic_alpha(scenario.stats.alpha_cov, K)
    if scalars is not None:
        # whitening factors per range cell; antenna part is the plain Gram
        Rn = sysp.comm_noise * np.eye(N, dtype=complex)
        if radar_power > 0 and scalars:
            Q = scenario_code_matrix(scenario)
            bins = sorted(scalars)
            Qa = Q[bins]
            coef = np.array([scalars[i] for i in bins])
            Rn += radar_power * hermitize((Qa.T * coef) @ Qa.conj())
        try:
            cho = scipy.linalg.cho_factor(Rn, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise CoexistError("communication disturbance covariance is "
                               "not positive definite") from exc
        P = hermitize(scipy.linalg.cho_solve(
            cho, np.eye(N, dtype=complex), check_finite=False))
        G = hermitize(H.conj().T @ H)
        F = hermitize(np.kron(G, P))
        gw, gV = np.linalg.eigh(G)
        pw, pV = np.linalg.eigh(P)
        w = np.clip((gw[:, None] * pw[None, :]).ravel(), 0.0, None)
        order = np.argsort(w, kind="stable")
        V = np.einsum("ma,nb->mnab", gV, pV).reshape(M * N, M * N)
        return EquivalentChannel(matrix=F, eigenvalues=w[order],
                                 eigenvectors=V[:, order],
                                 antenna_part=G, range_part=P)

    R = comm_disturbance(scenario, radar_power)
    try:
        cho = scipy.linalg.cho_factor(R, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise CoexistError(
            "communication disturbance covariance is not positive definite"
        ) from exc
    Rinv = scipy.linalg.cho_solve(cho, np.eye(K * N, dtype=complex),
                                  check_finite=False)
    F = np.zeros((M * N, M * N), dtype=complex)
    for m in range(M):
        for mp in range(M):
            block = np.zeros((N, N), dtype=complex)
            for k in range(K):
                for kp in range(K):
                    coef = np.conj(H[k, m]) * H[kp, mp]
                    if coef != 0:
                        block += coef * Rinv[k * N:(k + 1) * N,
                                             kp * N:(kp + 1) * N]
            F[m * N:(m + 1) * N, mp * N:(mp + 1) * N] = block
    F = hermitize(F)
    w, V = np.linalg.eigh(F)
    w = np.clip(w, 0.0, None)
    return EquivalentChannel(matrix=F, eigenvalues=w, eigenvectors=V)


@dataclass(frozen=True, eq=False)
class SdrConstraintData:
    """Linear trace constraints the codebook must respect.

    One row per protected cell bounds the interference energy leaked into
    that cell's filter output; the final row is the average transmit power
    cap.  ``cells[k]`` labels row k; the power row has no label.  When
    every row acts identically on each transmit antenna (isotropic echo
    covariances), ``blocks`` holds the per-antenna factors B_l with
    E_l = I_M ⊗ B_l, enabling reduced-size dual solves.
    """

    matrices: np.ndarray    # (U, MN, MN) Hermitian PSD
    bounds: np.ndarray      # (U,), last entry N * comm_power_max
    cells: tuple            # (U-1) cell labels, row order
    blocks: np.ndarray | None = None    # (U, N, N) antenna-diagonal factors

    def __post_init__(self):
        self.matrices.setflags(write=False)
        self.bounds.setflags(write=False)
        if self.blocks is not None:
            self.blocks.setflags(write=False)

    @property
    def size(self) -> int:
        return self.bounds.size


def interference_basis(scenario: Scenario, w: np.ndarray,
                       beam: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked weighted slices of a filter, one pair per echo path.

    Returns (columns, weights) such that the interference-energy matrix for
    the filter equals columns @ diag(weights) @ columns^H.
    """
    sysp, stats = scenario.system, scenario.stats
    N, M = sysp.n_cells, sysp.n_tx
    ell = split_offsets(N, sysp.code_len, stats.delay)
    cols = []
    weights = []
    for (i, j), svar in stats.beta_var.items():
        if j != beam:
            continue
        li = int(ell[i])
        # eigen-factor the M x M echo covariance so correlated antennas work
        evals, evecs = np.linalg.eigh(svar.conj())
        head = w[li:]
        tail = w[:li]
        for r in range(M):
            lam = float(evals[r])
            if lam <= 0:
                continue
            u = np.zeros(M * N, dtype=complex)
            v = np.zeros(M * N, dtype=complex)
            for m in range(M):
                u[m * N:m * N + N - li] = evecs[m, r] * head
                v[m * N + N - li:(m + 1) * N] = evecs[m, r] * tail
            cols.append(u)
            weights.append(lam)
            if li:
                cols.append(v)
                weights.append(lam)
    if not cols:
        return (np.zeros((M * N, 0), dtype=complex), np.zeros(0))
    return np.stack(cols, axis=1), np.asarray(weights)


def _isotropic_beta(scenario: Scenario):
    """Per-(bin, beam) scalar weights when every echo matrix is c * I."""
    M = scenario.system.n_tx
    eye = np.eye(M)
    out = {}
    for key, mat in scenario.stats.beta_var.items():
        c = float(mat[0, 0].real)
        if not np.allclose(mat, c * eye, rtol=1e-12, atol=0.0):
            return None
        out[key] = c
    return out


def _interference_block(scenario, w, beam, scalars) -> np.ndarray:
    """Per-antenna factor B with leaked energy = trace((I ⊗ B) C)."""
    sysp = scenario.system
    N = sysp.n_cells
    ell = split_offsets(N, sysp.code_len, scenario.stats.delay)
    cols = []
    weights = []
    for (i, j), c in scalars.items():
        if j != beam or c <= 0:
            continue
        li = int(ell[i])
        head = np.zeros(N, dtype=complex)
        head[:N - li] = w[li:]
        cols.append(head)
        weights.append(c)
        if li:
            tail = np.zeros(N, dtype=complex)
            tail[N - li:] = w[:li]
            cols.append(tail)
            weights.append(c)
    if not cols:
        return np.zeros((N, N), dtype=complex)
    W = np.stack(cols, axis=1)
    return hermitize((W * np.asarray(weights)) @ W.conj().T)


def sdr_constraint_data(scenario: Scenario, filters: dict,
                        radar_power: float) -> SdrConstraintData:
    """Assemble the per-cell interference budgets for the codebook solve."""
    sysp, stats = scenario.system, scenario.stats
    N, M = sysp.n_cells, sysp.n_tx
    MN = sysp.mn
    Q = scenario_code_matrix(scenario)
    cells = tuple(stats.protected_cells)
    U = len(cells) + 1
    mats = np.zeros((U, MN, MN), dtype=complex)
    bounds = np.zeros(U)
    beta_scalars = _isotropic_beta(scenario)
    blocks = np.zeros((U, N, N), dtype=complex) \
        if beta_scalars is not None else None
    eye_m = np.eye(M)
    for k, (n, j) in enumerate(cells):
        w = filters[(n, j)]
        if not np.any(w):
            raise ValueError(f"filter for cell ({n}, {j}) is zero")
        if beta_scalars is not None:
            blocks[k] = _interference_block(scenario, w, j, beta_scalars)
            mats[k] = np.kron(eye_m, blocks[k])
        else:
            cols, weights = interference_basis(scenario, w, j)
            if cols.shape[1]:
                mats[k] = hermitize((cols * weights) @ cols.conj().T)
        qw = np.abs(Q.conj() @ w) ** 2          # |q_i^H w|^2 for all i
        rho = stats.min_sdr[(n, j)]
        gain = radar_power * stats.target_var[(n, j)] / rho * qw[n]
        budget = gain \
            - radar_power * float(stats.clutter_var[j] @ qw) \
            - sysp.radar_noise * float(np.vdot(w, w).real)
        if budget < 0 and -budget <= 1e-9 * gain:
            budget = 0.0        # tight cell; cancellation noise only
        bounds[k] = budget
    mats[U - 1] = np.eye(MN)
    if blocks is not None:
        blocks[U - 1] = np.eye(N)
    bounds[U - 1] = N * sysp.comm_power_max
    return SdrConstraintData(matrices=mats, bounds=bounds, cells=cells,
                             blocks=blocks)


def rate(scenario: Scenario, C: np.ndarray,
         channel: EquivalentChannel) -> float:
    """Achievable rate in bits/second for a codebook covariance."""
    sysp = scenario.system
    sign, logdet = np.linalg.slogdet(
        np.eye(sysp.mn) + channel.matrix @ C)
    return sysp.bandwidth / sysp.n_cells * max(logdet, 0.0) / LOG2


def energy_efficiency(scenario: Scenario, C: np.ndarray,
                      rate_bps: float) -> float:
    """Rate divided by consumed power (PA draw plus circuit), bits/Joule."""
    sysp = scenario.system
    comm_power = float(np.trace(C).real) / sysp.n_cells
    return rate_bps / (comm_power / sysp.amp_efficiency + sysp.circuit_power)


def sdr(scenario: Scenario, C: np.ndarray, radar_power: float,
        w: np.ndarray, cell: tuple) -> float:
    """Signal-to-disturbance ratio at one protected cell, linear scale."""
    n, j = cell
    D = radar_disturbance(scenario, C, radar_power, j)
    return _sdr_from_disturbance(scenario, D, radar_power, w, cell)


def _sdr_from_disturbance(scenario, D, radar_power, w, cell):
    n, j = cell
    sysp = scenario.system
    qn = shifted_code(sysp.code, n, sysp.n_cells)
    num = radar_power * scenario.stats.target_var[(n, j)] * \
        abs(np.vdot(w, qn)) ** 2
    den = float(np.vdot(w, D @ w).real)
    return num / den


def sdr_map(scenario: Scenario, C: np.ndarray, radar_power: float,
            filters: dict) -> dict:
    """SDR of every protected cell, sharing per-beam disturbance matrices."""
    out = {}
    for j in range(scenario.system.n_beams):
        cells = scenario.stats.cells_in_beam(j)
        if not cells:
            continue
        D = radar_disturbance(scenario, C, radar_power, j)
        for cell in cells:
            out[cell] = _sdr_from_disturbance(
                scenario, D, radar_power, filters[cell], cell)
    return out


def covariance_factor(C: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Square root of a PSD matrix, for drawing Gaussian codewords."""
    w, V = np.linalg.eigh(hermitize(C))
    top = float(w[-1]) if w.size else 0.0
    w = np.clip(w, 0.0, None)
    if top > 0:
        w[w < tol * top] = 0.0
    return V * np.sqrt(w)


def simulate_radar_snapshot(scenario: Scenario, C_factor: np.ndarray,
                            radar_power: float, cell: tuple, rng,
                            draws: int = 1):
    """Draw target-echo and disturbance samples at one radar beam.

    ``C_factor`` is a square root of the codebook covariance (see
    :func:`covariance_factor`).  Returns (signal, disturbance), each of
    shape (draws, N).  The echo amplitudes follow the configured
    second-order statistics and each draw uses a fresh pair of consecutive
    codewords, so the split-slice correlation across the pulse boundary is
    reproduced exactly.
    """
    n, j = cell
    sysp, stats = scenario.system, scenario.stats
    N, M = sysp.n_cells, sysp.n_tx
    Q = scenario_code_matrix(scenario)
    ell = split_offsets(N, sysp.code_len, stats.delay)
    sqrt_pr = math.sqrt(radar_power)

    def crandn(*shape):
        return (rng.standard_normal(shape) +
                1j * rng.standard_normal(shape)) / math.sqrt(2.0)

    # target echo
    g = math.sqrt(stats.target_var[(n, j)]) * crandn(draws)
    signal = sqrt_pr * g[:, None] * Q[n]

    # clutter
    dist = np.zeros((draws, N), dtype=complex)
    cvar = stats.clutter_var[j]
    active = np.nonzero(cvar > 0)[0]
    if active.size and radar_power > 0:
        gam = crandn(draws, active.size) * np.sqrt(cvar[active])
        dist += sqrt_pr * (gam @ Q[active])

    # communication echoes: two consecutive codewords per draw
    beta_items = [(i, svar) for (i, jj), svar in stats.beta_var.items()
                  if jj == j]
    if beta_items and C_factor.shape[1]:
        # rows ~ CN(0, C): with x iid CN(0,1), E[(xA)_i (xA)_j^*] = (A^T A*)_ij
        prev = crandn(draws, C_factor.shape[1]) @ C_factor.T
        cur = crandn(draws, C_factor.shape[1]) @ C_factor.T
        for i, svar in beta_items:
            li = int(ell[i])
            evals, evecs = np.linalg.eigh(svar)
            for r in range(M):
                lam = float(evals[r])
                if lam <= 0:
                    continue
                amp = math.sqrt(lam) * crandn(draws)
                win = np.zeros((draws, N), dtype=complex)
                for m in range(M):
                    coef = evecs[m, r]
                    if coef == 0:
                        continue
                    if li:
                        win[:, :li] += coef * \
                            prev[:, m * N + N - li:(m + 1) * N]
                    win[:, li:] += coef * cur[:, m * N:m * N + N - li]
                dist += amp[:, None] * win

    # thermal noise
    dist += math.sqrt(sysp.radar_noise) * crandn(draws, N)
    return signal, dist
