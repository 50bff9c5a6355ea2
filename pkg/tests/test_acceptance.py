"""Acceptance suite: every shipped criterion at its stated tolerance.

The Monte Carlo batches are heavy (hundreds of full-scale solves) and are
shared across criteria through session fixtures.  Set
``COEXIST_ACCEPTANCE_RUNS`` to lower the run count during development
(the shipped default is the full 200) and ``COEXIST_ACCEPTANCE_OUT`` to a
fixed directory to reuse finished batches across sessions.
"""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from support import golden_section_max, primal_pg_oracle, random_instance

from coexist import baselines, comm_opt, experiments, solver
from coexist.scenario import (
    db_to_linear,
    linear_to_db,
    paper_scale_config,
    parse_config,
    scenario_from_config,
)

RUNS = int(os.environ.get("COEXIST_ACCEPTANCE_RUNS", "200"))
JOBS = int(os.environ.get("COEXIST_ACCEPTANCE_JOBS",
                          str(os.cpu_count() or 1)))
BASE_SEED = 20260810

LIGHT = dict(delta=0.2, sigma2=1.2e-13)
STRONG = dict(delta=0.1, sigma2=1.2e-11)
EE_RHO_GRID = [-30.0, -10.0, 0.0, 5.0, 8.0]
MID_RHO = 5.0


def _ok(criterion, message):
    print(f"ACCEPTANCE {criterion}: PASS - {message}")


def _sweep_config(sweep_id, modes, rho_db, *, delta, sigma2, runs=None):
    raw = paper_scale_config(rho_db=MID_RHO, cells=30, delta=delta,
                             sigma2=sigma2)
    raw["montecarlo"]["runs"] = runs or RUNS
    raw["montecarlo"]["base_seed"] = BASE_SEED
    raw["sweep"] = {"id": sweep_id, "rho_db": rho_db, "cells": [30],
                    "modes": modes, "runs": runs or RUNS,
                    "base_seed": BASE_SEED}
    return parse_config(raw)


def _out_root(tmp_path_factory) -> Path:
    override = os.environ.get("COEXIST_ACCEPTANCE_OUT")
    if override:
        root = Path(override)
        root.mkdir(parents=True, exist_ok=True)
        return root
    return tmp_path_factory.mktemp("acceptance")


def _run_batch(config, out_dir, keep_trace=False):
    result = experiments.run_sweep(config, out_dir=out_dir, jobs=JOBS,
                                   keep_trace=keep_trace)
    return result["records"]


def _attach_traces(records, out_dir):
    """Reload per-iteration traces from the run JSONs if absent."""
    if all(r.trace is not None for r in records):
        return {(r.mode, r.seed, r.rho_db): r.trace for r in records}
    traces = {}
    for path in (Path(out_dir) / "runs").glob("*.json"):
        payload = json.loads(path.read_text())
        if payload.get("trace") is not None:
            key = (payload["mode"], payload["seed"], payload["rho_db"])
            traces[key] = payload["trace"]
    return traces


@pytest.fixture(scope="session")
def light_batch(tmp_path_factory):
    """Joint/rate/baseline runs at light interference, common seeds."""
    root = _out_root(tmp_path_factory)
    ee_cfg = _sweep_config("light_ee", ["ee"], EE_RHO_GRID, **LIGHT)
    ee_records = _run_batch(ee_cfg, root / "light_ee", keep_trace=True)
    traces = _attach_traces(ee_records, root / "light_ee")
    rate_cfg = _sweep_config("light_rate", ["rate"], [MID_RHO], **LIGHT)
    rate_records = _run_batch(rate_cfg, root / "light_rate")
    base_cfg = _sweep_config("light_base", ["isolated", "disjoint"],
                             [MID_RHO], **LIGHT)
    base_records = _run_batch(base_cfg, root / "light_base")
    return {"ee": ee_records, "rate": rate_records, "base": base_records,
            "traces": traces}


@pytest.fixture(scope="session")
def strong_batch(tmp_path_factory):
    """Disjoint evaluations and joint spot-solves at strong interference."""
    root = _out_root(tmp_path_factory)
    dis_cfg = _sweep_config("strong_dis", ["disjoint"], [9.0], **STRONG)
    dis_records = _run_batch(dis_cfg, root / "strong_dis")
    joint_cfg = _sweep_config("strong_ee", ["ee"], [9.0], **STRONG,
                              runs=min(10, RUNS))
    joint_records = _run_batch(joint_cfg, root / "strong_ee")
    ceilings = []
    probe = parse_config(paper_scale_config(rho_db=9.1, cells=30, **STRONG))
    for run in range(RUNS):
        scn = scenario_from_config(probe, seed=BASE_SEED + run)
        report = solver.check_feasibility(scn)
        ceilings.append((report.overall_db, report.feasible))
    return {"disjoint": dis_records, "joint": joint_records,
            "ceilings": ceilings}


def test_criterion_01_feasibility_ceilings():
    started = time.perf_counter()
    config = parse_config(paper_scale_config(rho_db=5.0))
    scn = scenario_from_config(config, seed=BASE_SEED)
    with_clutter = solver.check_feasibility(scn).overall_db

    from dataclasses import replace
    clean_spec = replace(config.statistics, clutter_var=0.0)
    scn_clean = scenario_from_config(replace(config, statistics=clean_spec),
                                     seed=BASE_SEED)
    without_clutter = solver.check_feasibility(scn_clean).overall_db
    elapsed = time.perf_counter() - started

    assert with_clutter == pytest.approx(9.2, abs=0.1)
    assert without_clutter == pytest.approx(17.0, abs=0.05)
    assert elapsed < 10.0
    _ok(1, f"ceiling {with_clutter:.3f} dB with clutter, "
           f"{without_clutter:.3f} dB without, in {elapsed:.2f} s")


def test_criterion_02_dual_oracle_equivalence():
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(50):
        n = int(rng.choice([4, 6, 8]))
        rows = int(rng.integers(1, 4))      # U = rows + 1 <= 4
        t, F, cons = random_instance(rng, n, rows)
        state = comm_opt.solve_dual_qn(t, F, cons, tolerance=1e-11,
                                       max_iterations=600)
        obj_dual = _parametric(t, F, state.C)
        _, obj_oracle = primal_pg_oracle(t, F, cons, iters=4000, tol=1e-13)
        err = abs(obj_dual - obj_oracle) / (1.0 + abs(obj_oracle))
        worst = max(worst, err)
        assert err <= 1e-6, f"trial {trial}: objective error {err:.3e}"
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0
    _ok(2, f"50/50 instances within 1e-6 (worst {worst:.2e}) "
           f"in {elapsed:.1f} s")


def _parametric(t, F, C):
    sign, logdet = np.linalg.slogdet(np.eye(F.shape[0]) + F @ C)
    return float(logdet) - t * float(np.trace(C).real)


def test_criterion_03_dinkelbach_scalar_oracle():
    rng = np.random.default_rng(303)
    worst = 0.0
    for trial in range(100):
        gain = float(10.0 ** rng.uniform(1.0, 3.0))
        cap = float(10.0 ** rng.uniform(-3.0, -1.5))
        n = 4
        bw, eta, omega = 1e6, 0.85, 0.01
        F = np.diag([gain] + [0.0] * (n - 1)).astype(complex)
        channel = _channel_of(F)
        cons = _power_only(n, cap)
        C0 = np.zeros((n, n), dtype=complex)
        C0[0, 0] = cap * n * 1e-3
        res = comm_opt.dinkelbach(
            channel, cons, C0, bandwidth=bw, n_cells=n,
            amp_efficiency=eta, circuit_power=omega,
            options=_tight_dinkelbach())
        lams = [row[0] for row in res.trace]
        assert all(b > a for a, b in zip(lams, lams[1:])), \
            f"trial {trial}: ratio sequence not strictly increasing"

        def ee(p):
            return bw / n * math.log2(1.0 + gain * p) / \
                (p / (eta * n) + omega)

        _, ee_star = golden_section_max(ee, 0.0, n * cap, tol=1e-15)
        achieved = res.trace[-1][3] / (res.trace[-1][2] / (eta * n) + omega)
        err = abs(achieved - ee_star) / ee_star
        worst = max(worst, err)
        assert err <= 1e-8, f"trial {trial}: ratio error {err:.3e}"
    _ok(3, f"100/100 scalar instances within 1e-8 of golden section "
           f"(worst {worst:.2e}); ratio strictly increasing on all")


def _channel_of(F):
    from coexist.signal_model import EquivalentChannel
    w, V = np.linalg.eigh(0.5 * (F + F.conj().T))
    return EquivalentChannel(matrix=F, eigenvalues=np.clip(w, 0, None),
                             eigenvectors=V)


def _power_only(n, cap):
    from coexist.signal_model import SdrConstraintData
    return SdrConstraintData(matrices=np.eye(n)[None, :, :].astype(complex),
                             bounds=np.array([float(n * cap)]), cells=())


def _tight_dinkelbach():
    from coexist.scenario import DinkelbachOptions
    return DinkelbachOptions(tolerance=1e-12, max_iterations=100)


def test_criterion_04_gradient_finite_differences():
    rng = np.random.default_rng(404)
    worst = 0.0
    step = 1e-6
    for trial in range(100):
        t, F, cons = random_instance(rng, 8, 2)   # U = 3
        mu = 0.05 + 0.4 * rng.random(cons.size)
        grad = comm_opt.dual_gradient(mu, t, F, cons)
        for l in range(cons.size):
            e = np.zeros(cons.size)
            e[l] = step
            fd = (comm_opt.dual_objective(mu + e, t, F, cons)
                  - comm_opt.dual_objective(mu - e, t, F, cons)) / (2 * step)
            err = abs(grad[l] - fd) / max(abs(fd), abs(grad[l]), 1e-12)
            worst = max(worst, err)
            assert err <= 1e-4, \
                f"trial {trial} coord {l}: relative error {err:.3e}"
    _ok(4, f"100/100 gradient checks within 1e-4 (worst {worst:.2e})")


def test_criterion_05_monotone_ascent(light_batch):
    records = [r for r in light_batch["ee"] if r.rho_db == MID_RHO]
    assert len(records) == RUNS
    assert all(r.status == "converged" for r in records)
    assert all(r.outer_iters <= 100 for r in records)
    for rec in records:
        trace = light_batch["traces"][(rec.mode, rec.seed, rec.rho_db)]
        ees = [row["ee"] for row in trace]
        assert all(b >= a * (1 - 1e-12) for a, b in zip(ees, ees[1:])), \
            f"seed {rec.seed}: objective trace decreased"
    walls = [r.wall_ms for r in records]
    assert max(walls) < 60000.0, "single solve exceeded one minute"
    mean_iters = float(np.mean([r.outer_iters for r in records]))
    _ok(5, f"{RUNS}/{RUNS} runs converged with nondecreasing traces; "
           f"mean outer iterations {mean_iters:.1f}, "
           f"max wall {max(walls) / 1000:.1f} s")


def test_criterion_06_constraint_satisfaction(light_batch, strong_batch):
    margin_floor_db = linear_to_db(1 - 1e-9)
    checked = 0
    for rec in (light_batch["ee"] + light_batch["rate"]
                + strong_batch["joint"]):
        if rec.status == "infeasible":
            continue
        assert rec.min_sdr_margin_db >= margin_floor_db, \
            f"{rec.mode} seed {rec.seed} rho {rec.rho_db}: SDR violated"
        assert rec.comm_power_w <= 0.01 * (1 + 1e-9)
        assert rec.radar_power_w <= 25.0 * (1 + 1e-9)
        assert rec.radar_power_w >= 0.0
        checked += 1
    assert checked >= 5 * RUNS
    _ok(6, f"{checked} designs satisfy all SDR floors within 1e-9 "
           "and both power caps")


def test_criterion_07_orderings_and_limit(light_batch):
    iso = [r.ee for r in light_batch["base"] if r.mode == "isolated"]
    iso_mean = float(np.mean(iso))
    # the disjoint design itself is floor-independent: its record at the
    # reference floor carries the achieved margin, which decides at which
    # grid floors that run is feasible
    dis_all = [r for r in light_batch["base"] if r.mode == "disjoint"]
    by_rho = {}
    for rec in light_batch["ee"]:
        by_rho.setdefault(rec.rho_db, []).append(rec)
    ratios = {}
    for rho, recs in sorted(by_rho.items()):
        joint_mean = float(np.mean([r.ee for r in recs]))
        ratios[rho] = joint_mean / iso_mean
        assert iso_mean >= joint_mean * (1 - 1e-9), \
            f"rho {rho}: joint exceeded the non-interfering bound"
        dis_feasible = [r.ee for r in dis_all
                        if r.min_sdr_margin_db >= rho - MID_RHO]
        if dis_feasible:
            assert joint_mean >= float(np.mean(dis_feasible)) * (1 - 1e-9), \
                f"rho {rho}: joint fell below the disjoint design"
    # limit behavior: the bound is approached as the floor is relaxed
    assert ratios[-30.0] >= 0.97, \
        f"joint at -30 dB reaches only {ratios[-30.0]:.4f} of the bound"
    assert ratios[-30.0] > ratios[-10.0] > ratios[8.0]
    _ok(7, "non-interfering >= joint >= disjoint at every grid floor; "
           f"joint/bound = {ratios[-30.0]:.4f} at -30 dB "
           f"({ratios[-10.0]:.4f} at -10 dB), approaching 1 as the floor "
           "drops")


def test_criterion_08_strong_interference_gap(strong_batch):
    ceilings = strong_batch["ceilings"]
    assert len(ceilings) == RUNS
    assert all(feasible for _, feasible in ceilings), \
        "joint design infeasible below the ceiling on some run"
    ceiling_db = min(db for db, _ in ceilings)

    dis = strong_batch["disjoint"]
    assert len(dis) == RUNS
    rho_star_db = [9.0 + r.min_sdr_margin_db for r in dis]
    fully_feasible_db = min(rho_star_db)
    gap = ceiling_db - fully_feasible_db
    assert gap >= 3.0, f"feasibility gap only {gap:.2f} dB"

    joint = strong_batch["joint"]
    assert all(r.status == "converged" for r in joint)
    assert all(r.min_sdr_margin_db >= linear_to_db(1 - 1e-9)
               for r in joint)
    _ok(8, f"joint feasible to the {ceiling_db:.2f} dB ceiling on all "
           f"{RUNS} runs (and solved at 9.0 dB on {len(joint)}); disjoint "
           f"100%-feasible floor {fully_feasible_db:.2f} dB; gap "
           f"{gap:.2f} dB >= 3 dB")


def test_criterion_09_ee_rate_tradeoff(light_batch):
    ee_by_seed = {r.seed: r for r in light_batch["ee"]
                  if r.rho_db == MID_RHO}
    rate_by_seed = {r.seed: r for r in light_batch["rate"]}
    assert set(ee_by_seed) == set(rate_by_seed)
    for seed in ee_by_seed:
        ee_opt, rate_opt = ee_by_seed[seed], rate_by_seed[seed]
        assert rate_opt.ee < ee_opt.ee, \
            f"seed {seed}: rate-optimal design matched the EE optimum"
        assert ee_opt.rate < rate_opt.rate, \
            f"seed {seed}: EE-optimal design matched the rate optimum"
    ee_loss = 1.0 - float(np.mean([rate_by_seed[s].ee for s in ee_by_seed])
                          / np.mean([ee_by_seed[s].ee for s in ee_by_seed]))
    rate_loss = 1.0 - float(
        np.mean([ee_by_seed[s].rate for s in ee_by_seed])
        / np.mean([rate_by_seed[s].rate for s in ee_by_seed]))
    assert 0.10 <= ee_loss <= 0.35, f"mean EE loss {ee_loss:.3f}"
    assert 0.15 <= rate_loss <= 0.45, f"mean rate loss {rate_loss:.3f}"
    _ok(9, f"strict tradeoff on all {RUNS} runs; mean EE loss of the "
           f"rate design {100 * ee_loss:.1f}%, mean rate loss of the EE "
           f"design {100 * rate_loss:.1f}%")


def test_criterion_10_empirical_sdr_consistency():
    config = parse_config(paper_scale_config(rho_db=MID_RHO, cells=30,
                                             **LIGHT))
    scn = scenario_from_config(config, seed=BASE_SEED)
    design = solver.block_coordinate_ascent(scn, config.solver)
    report = experiments.validate_sdr(scn, design, draws=100000,
                                      seed=BASE_SEED)
    assert report.draws == 100000
    assert len(report.cells) == 30
    assert report.max_rel_deviation < 0.02, \
        f"max deviation {report.max_rel_deviation:.4f}"
    _ok(10, f"validate-sdr over 1e5 draws: max relative deviation "
            f"{100 * report.max_rel_deviation:.2f}% < 2%")


def test_criterion_11_interference_free_equivalence():
    config = parse_config(paper_scale_config(rho_db=MID_RHO, cells=30,
                                             delta=0.0, sigma2=0.0))
    worst = 0.0
    for run in range(50):
        scn = scenario_from_config(config, seed=BASE_SEED + run)
        sol = solver.block_coordinate_ascent(scn, config.solver)
        base = baselines.non_interfering_design(scn)
        err = abs(sol.ee - base.ee) / base.ee
        worst = max(worst, err)
        assert err <= 1e-6, f"run {run}: relative EE gap {err:.3e}"
    _ok(11, f"50/50 interference-free solves match the closed-form "
            f"design (worst gap {worst:.2e})")
