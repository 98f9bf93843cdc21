"""Invariant suite behind ``curvflow selftest``."""

from __future__ import annotations

import math
import tempfile
import time
from pathlib import Path

import numpy as np

from .conformal_geometry import (
    ConformalFactor,
    gaussian_curvature,
    liouville_energy,
    mobius_factor,
    mobius_pullback,
    onofri_gap,
    volume,
)
from .flow_engine import detect_concentration, make_state, random_factor
from .prescribed_curvature import evaluate_f, find_critical_points, preset, verify_hypotheses
from .sphere_core import FOUR_PI, GridField, analyze, integrate, make_grid, synthesize


def _checks(quick: bool):
    grid = make_grid(32)
    one = evaluate_f(preset("round"), grid)

    def round_trip():
        u = random_factor(grid, 7, 0.5, 32)
        err = np.max(np.abs(analyze(synthesize(u.spectral, grid)).coeffs - u.spectral.coeffs))
        return err <= 1e-12, f"max coefficient error {err:.2e}"

    def gauss_bonnet():
        worst = 0.0
        for seed in range(20):
            u = random_factor(grid, seed, 0.5, 16)
            K = gaussian_curvature(u)
            worst = max(worst, abs(integrate(GridField(grid, K.values * np.exp(2 * u.values))) - FOUR_PI))
        return worst <= 1e-6 * FOUR_PI, f"max |int K dv_g - 4pi| = {worst:.2e}"

    def invariance():
        worst, gap = 0.0, math.inf
        for seed in range(10):
            u = random_factor(grid, 100 + seed, 0.3, 8)
            a = 0.6 * (np.random.default_rng(seed).random(3) - 0.5)
            v = mobius_pullback(u, a)
            worst = max(worst, abs(liouville_energy(v) - liouville_energy(u)))
            gap = min(gap, onofri_gap(u), onofri_gap(v))
        return worst <= 1e-6 and gap >= -1e-8, f"max |dE| = {worst:.2e}, min Onofri gap = {gap:.2e}"

    def mobius_volume():
        u = mobius_factor(np.array([0.3, -0.4, 0.5]), grid)
        err = abs(volume(u) / FOUR_PI - 1.0)
        return err <= 1e-10, f"relative volume error {err:.2e}"

    def detector():
        flat = detect_concentration(make_state(ConformalFactor.zero(grid), one))
        bub = detect_concentration(make_state(mobius_factor(np.array([0, 0, 0.9]), grid), one), tol_concentrate=0.3)
        ok = abs(flat.r_star - math.pi / 3) <= 1e-3 and not flat.concentrated and bub.concentrated
        return ok, f"flat r* = {flat.r_star:.6f}, bubble r* = {bub.r_star:.4f}"

    def critical_points():
        rep = find_critical_points(preset("quad-saddle"))
        kinds = sorted(p.kind for p in rep.points)
        check = verify_hypotheses(preset("quad-saddle"), rep)
        ok = kinds == ["max", "max", "min", "min", "saddle", "saddle"] and check.overall is False
        return ok, f"classes {kinds}"

    def run_directory():
        from .cli_io import main

        with tempfile.TemporaryDirectory() as tmp:
            code = main(["run", "--preset", "round", "--u0", "zero", "--out", tmp])
            files = sorted(p.name for p in Path(tmp).iterdir())
            need = {"config.json", "timeseries.csv", "result.json"}
            snaps = [n for n in files if n.startswith("snap_") and n.endswith(".txt")]
            ok = code == 0 and need <= set(files) and len(snaps) >= 1
            return ok, f"exit {code}, files {files}"

    checks = [
        ("harmonic round trip", round_trip),
        ("Gauss-Bonnet", gauss_bonnet),
        ("conformal invariance and Onofri", invariance),
        ("Mobius volume", mobius_volume),
        ("concentration detector", detector),
        ("critical points", critical_points),
        ("run directory", run_directory),
    ]
    if not quick:
        def round_attraction():
            from .flow_engine import FlowConfig, InitialData, run
            from .conformal_geometry import recenter

            res = run(FlowConfig(preset("round"), u0=InitialData("random", 1, 0.1, 8)))
            sup = recenter(res.final_state.u).v.sup_norm() if res.final_state else math.inf
            return res.termination == "converged" and sup <= 1e-4, f"{res.termination} after {res.steps} steps, |v| = {sup:.2e}"

        checks.append(("round attraction", round_attraction))
    return checks


def run_selftest(quick: bool = False) -> int:
    failures = 0
    for name, check in _checks(quick):
        t0 = time.perf_counter()
        try:
            ok, detail = check()
        except Exception as exc:  # report, do not abort the table
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:34s} {time.perf_counter() - t0:6.2f}s  {detail}")
    print(f"{failures} failure(s)")
    return 0 if failures == 0 else 1
