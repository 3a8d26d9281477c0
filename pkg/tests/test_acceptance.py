"""Acceptance criteria, each reported as one PASS/FAIL line in the terminal summary."""
import math
import time

import numpy as np
import pytest

from dualsched import (EpisodeConfig, Laplace, NoiseModel, Uniform, build_inward_shift,
                       build_uniform_counterexample, compare_costs, decode, encode, monte_carlo_cost,
                       simulate_batch, solve_dp, solve_laplace_thresholds)
from dualsched.cli import DEFAULTS, sweep_rows
from dualsched.codec import ChannelParams, codec_for_region
from dualsched.sources import interval_moments
from dualsched.stage import first_order_residuals

from conftest import ACCEPTANCE_LINES, grid_min_laplace, laplace_grid_cost


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def sweep(axis, fixed, top=100):
    cfg = dict(DEFAULTS, axis=axis, fixed=list(fixed), max=top, T=100)
    curves = {}
    for a, f, j in sweep_rows(cfg):
        curves.setdefault(f, []).append(j)
    return {f: np.array(v) for f, v in curves.items()}


def test_01_laplace_threshold_solver():
    start = time.perf_counter()
    sol = solve_laplace_thresholds(0.5, 2.0, 1.0, 1.0)
    elapsed = time.perf_counter() - start
    r1, r2 = first_order_residuals(sol.beta1, sol.beta2, Laplace(1.0), 0.5, 2.0, 1.0)
    j_grid, g1, g2 = grid_min_laplace(0.5, 2.0, 1.0, 1.0, step=1e-3, hi=8.0)
    j_sol = float(laplace_grid_cost(sol.beta1, sol.beta2, 0.5, 2.0, 1.0))
    ok = max(abs(r1), abs(r2)) < 1e-10 and j_grid >= j_sol - 1e-6 and elapsed < 1.0
    record(1, "Laplace threshold solver", ok,
           f"beta=({sol.beta1:.6f}, {sol.beta2:.6f}) residuals=({r1:.1e}, {r2:.1e}) "
           f"J={j_sol:.9f} grid J={j_grid:.9f} at ({g1:.3f}, {g2:.3f}) time={elapsed:.3f}s")


def test_02_boundary_collapse():
    c2s = np.linspace(0.1, 4.0, 10)
    bad = []
    for i, c2 in enumerate(c2s):
        c1 = c2 + 0.3 * i
        sol = solve_laplace_thresholds(c1, c2, 1.0, 1.0)
        if not (sol.beta1 == sol.beta2 == math.sqrt(c2) and sol.used_boundary):
            bad.append((c1, c2))
    record(2, "Boundary collapse for c1 >= c2", not bad, f"10 price pairs, mismatches={bad}")


def test_03_codec_identity():
    rng = np.random.default_rng(2718)
    d = Laplace(1.0)
    gamma = 1.0
    lo, hi = 0.896, 3.41
    chan = ChannelParams(gamma)
    codec = codec_for_region(d, lo, hi, chan)
    target = interval_moments(d, lo, hi).variance / (1 + gamma)
    span = -math.expm1(-(hi - lo))
    n = 100_000
    details, ok = [], True
    for shape in NoiseModel.SHAPES:
        x = lo - np.log1p(-rng.uniform(0, 1, n) * span)
        s = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)
        x = s * x
        v = NoiseModel.from_snr(gamma, shape=shape).sample(rng, n)
        err = (x - decode(encode(x, s, codec) + v, s, codec)) ** 2
        se = err.std(ddof=1) / math.sqrt(n)
        z = (err.mean() - target) / se
        ok &= abs(z) <= 3
        details.append(f"{shape} z={z:+.2f}")
    record(3, "Codec MSE equals Var/(1+gamma)", ok, f"target={target:.6f} " + ", ".join(details))


def test_04_dp_sanity():
    start = time.perf_counter()
    silent = solve_dp(100, 0, 0, Laplace(1.0), 1.0).optimal_cost()
    perfect = solve_dp(100, 0, 100, Laplace(1.0), 1.0).optimal_cost()
    elapsed = time.perf_counter() - start
    ok = silent == 200.0 and perfect == 0.0 and elapsed < 10.0
    record(4, "DP sanity", ok, f"J*(1,0,0)={silent!r} J*(1,0,100)={perfect!r} time={elapsed:.2f}s")


def test_05_dp_monotonicity():
    table = solve_dp(100, 40, 40, Laplace(1.0), 1.0)
    v = table.value[1:101]
    c1 = np.nanmin(table.c1t[1:101])
    c2 = np.nanmin(table.c2t[1:101])
    up1 = np.max(np.diff(v, axis=1))
    up2 = np.max(np.diff(v, axis=2))
    ok = c1 >= -1e-12 and c2 >= -1e-12 and up1 <= 0.0 and up2 <= 0.0
    record(5, "DP monotone in budgets", ok,
           f"min c1t={c1:.3e} min c2t={c2:.3e} max increase En={up1:.3e} Ep={up2:.3e}")


@pytest.mark.slow
def test_06_dp_vs_monte_carlo():
    start = time.perf_counter()
    table = solve_dp(100, 20, 10, Laplace(1.0), 1.0)
    cfg = EpisodeConfig.for_table(table, "gaussian", seed=20240, episodes=100_000)
    mean, se = monte_carlo_cost(cfg, table)
    elapsed = time.perf_counter() - start
    j = table.optimal_cost()
    ok = abs(mean - j) <= 3 * se and elapsed < 120.0
    record(6, "DP value matches Monte Carlo", ok,
           f"J*={j:.6f} MC={mean:.6f} se={se:.6f} z={(mean - j) / se:+.2f} time={elapsed:.1f}s")


def test_07_noisy_budget_sweep():
    curves = sweep("N1", (0, 10, 20))
    base = curves[0]
    nonincreasing = bool(np.all(np.diff(base) <= 0.0))
    flat = np.abs(base - base[-1]) <= 1e-9
    # first index from which the curve stays flat
    n_star = int(np.nonzero(~flat)[0].max()) + 1
    below = all(np.all(curves[f] <= base) for f in (10, 20))
    ok = nonincreasing and n_star < 100 and below
    record(7, "Cost versus noisy budget", ok,
           f"nonincreasing={nonincreasing} flat from N1*={n_star} J(0)={base[0]:.4f} "
           f"J(100)={base[-1]:.6f} N2=10,20 curves below={below}")


def test_08_perfect_budget_sweep():
    curves = sweep("N2", (0, 10, 20))
    base = curves[0]
    strict = bool(np.all(np.diff(base) < 0.0))
    below = all(np.all(curves[f] <= base) for f in (10, 20))
    ok = strict and base[-1] == 0.0 and below
    record(8, "Cost versus perfect budget", ok,
           f"strictly decreasing={strict} J(100)={float(base[-1])!r} N1=10,20 curves below={below}")


def test_09_budget_usage():
    table = solve_dp(100, 40, 40, Laplace(1.0), 1.0)
    cfg = EpisodeConfig.for_table(table, "gaussian", seed=4, episodes=1000)
    res = simulate_batch(cfg, table)
    p_zero = float((res.final_Ep == 0).mean())
    n_zero = float((res.final_En == 0).mean())
    mean_en = float(res.final_En.mean())
    ok = p_zero > n_zero and mean_en > 0
    record(9, "Perfect budget exhausted before noisy", ok,
           f"P(final Ep=0)={p_zero:.3f} P(final En=0)={n_zero:.3f} mean final En={mean_en:.3f}")


def test_10_uniform_counterexample():
    cons = build_uniform_counterexample(10.0, 0.5, 1.0)
    j_orig, j_new = compare_costs(cons, Uniform(10.0), 0.5, 2.0, 1.0)
    diff = j_new - j_orig
    ok = abs(diff + 0.0125) <= 1e-9 and j_new < j_orig
    record(10, "Uniform counterexample", ok, f"J(f')-J(f*)={diff:.12f} mass error={cons.mass_error():.1e}")


def test_11_inward_shift_dominance():
    rng = np.random.default_rng(11)
    d = Laplace(1.0)
    worst = -math.inf
    mass_err = 0.0
    for _ in range(20):
        b1 = rng.uniform(0.0, 2.0)
        left = b1 + rng.uniform(0.05, 2.0)
        right = left + rng.uniform(0.05, 3.0)
        c1 = rng.uniform(0.0, 1.0)
        c2 = c1 + rng.uniform(0.0, 3.0)
        gamma = rng.uniform(0.1, 10.0)
        cons = build_inward_shift(b1, left, right, d)
        j_orig, j_new = compare_costs(cons, d, c1, c2, gamma)
        worst = max(worst, j_new - j_orig)
        mass_err = max(mass_err, cons.mass_error())
    ok = worst <= 1e-10
    record(11, "Inward shift never costs more", ok,
           f"20 instances, max J_shifted-J_original={worst:.3e}, max mass error={mass_err:.1e}")
