import dataclasses
import io
import math

import numpy as np
import pytest
from scipy import optimize

from dualsched import (EpisodeConfig, Laplace, NonConvergence, Tabulated, Uniform,
                       ValidationError, monte_carlo_cost, policy_lookup, solve_dp)
from dualsched import stage
from dualsched.dp import CSV_COLUMNS, DpState, write_table_csv


@pytest.fixture(scope="module")
def table40():
    return solve_dp(100, 40, 40, Laplace(1.0), 1.0)


def test_single_stage_no_channel():
    assert solve_dp(1, 0, 0, Laplace(1.0), 1.0).optimal_cost() == 2.0


def test_full_perfect_budget():
    table = solve_dp(100, 0, 100, Laplace(1.0), 1.0)
    assert table.optimal_cost() == 0.0
    assert np.all(table.beta2[1:101, 0, 1:] >= 0)
    assert table.thresholds(100, 0, 1) == (0.0, 0.0)


def test_no_budget_horizon():
    assert solve_dp(100, 0, 0, Laplace(1.0), 1.0).optimal_cost() == 200.0


def test_lookup_no_budget():
    table = solve_dp(3, 0, 0, Laplace(1.0), 1.0)
    assert np.all(policy_lookup(table, 2, 0, 0, np.linspace(-9, 9, 19)) == 0)


def test_lookup_last_stage_perfect_free():
    table = solve_dp(5, 2, 2, Laplace(1.0), 1.0)
    assert table.c2t[5, 1, 1] == 0.0
    assert np.all(policy_lookup(table, 5, 1, 1, np.array([-3.0, -0.01, 0.2, 4.0])) == 2)


def hand_table(b1, b2):
    base = solve_dp(1, 1, 1, Laplace(1.0), 1.0)
    beta1 = base.beta1.copy()
    beta2 = base.beta2.copy()
    beta1[1], beta2[1] = b1, b2
    return dataclasses.replace(base, beta1=beta1, beta2=beta2)


def test_lookup_interval_membership():
    table = hand_table(0.9, 3.4)
    assert policy_lookup(table, 1, 1, 1, 2.0) == 1
    assert policy_lookup(table, 1, 1, 1, 0.5) == 0
    assert policy_lookup(table, 1, 1, 1, 5.0) == 2
    assert policy_lookup(table, 1, 1, 1, -5.0) == 2
    # ties go to the lower label
    assert policy_lookup(table, 1, 1, 1, 0.9) == 0
    assert policy_lookup(table, 1, 1, 1, 3.4) == 1


def test_lookup_respects_exhausted_channels():
    table = hand_table(0.9, 3.4)
    en = np.array([0, 1, 0])
    ep = np.array([1, 0, 0])
    assert list(policy_lookup(table, 1, en, ep, np.array([2.0, 5.0, 5.0]))) == [0, 0, 0]
    assert policy_lookup(table, 1, 0, 1, 5.0) == 2


def test_budget_monotone(table40):
    v = table40.value[1:101]
    assert np.all(np.diff(v, axis=1) <= 1e-12)
    assert np.all(np.diff(v, axis=2) <= 1e-12)
    assert np.nanmin(table40.c1t[1:101]) >= -1e-12
    assert np.nanmin(table40.c2t[1:101]) >= -1e-12


def test_horizon_monotone(table40):
    v = table40.value[1:102]
    assert np.all(v[1:] <= v[:-1] + 1e-12)
    assert np.all(table40.value[101] == 0.0)


def test_budget_saturation():
    table = solve_dp(10, 16, 3, Laplace(1.0), 1.0)
    tail = table.value[1, 10:, :]
    assert np.all(np.abs(tail - tail[0]) <= 1e-12)
    assert table.value[1, 9, 0] > table.value[1, 10, 0]


def perfect_only_reference(horizon, budget):
    """Perfect-channel-only DP with the threshold found numerically."""
    def stage_cost(beta, c):
        # Laplace(1): 2 * int_0^beta x^2 p + 2 c P(X > beta)
        return 2.0 - math.exp(-beta) * (beta * beta + 2 * beta + 2) + c * math.exp(-beta)

    v = np.zeros((horizon + 2, budget + 1))
    for t in range(horizon, 0, -1):
        v[t, 0] = v[t + 1, 0] + 2.0
        for e in range(1, budget + 1):
            c = v[t + 1, e - 1] - v[t + 1, e]
            r = optimize.minimize_scalar(lambda b: stage_cost(b, c), bounds=(0.0, 60.0), method="bounded",
                                         options={"xatol": 1e-12})
            j = min(r.fun, stage_cost(0.0, c))
            v[t, e] = v[t + 1, e] + j
    return v


def test_perfect_only_matches_reference():
    table = solve_dp(12, 0, 7, Laplace(1.0), 1.0)
    ref = perfect_only_reference(12, 7)
    assert np.max(np.abs(table.value[1:13, 0, :] - ref[1:13])) < 1e-10


def test_generic_matches_closed_form():
    fast = solve_dp(6, 3, 2, Laplace(1.0), 1.0)
    slow = solve_dp(6, 3, 2, Laplace(1.0), 1.0, closed_form=False)
    assert np.max(np.abs(fast.value[1:] - slow.value[1:])) < 1e-9
    a, b = fast.beta1[1:7], slow.beta1[1:7]
    assert np.array_equal(np.isinf(a), np.isinf(b))
    finite = np.isfinite(a)
    assert np.max(np.abs(a[finite] - b[finite])) < 1e-6


def test_generic_density_with_workers():
    d = Tabulated.from_function(lambda x: np.exp(-0.5 * x * x), 6.0, 601)
    serial = solve_dp(3, 2, 1, d, 1.0)
    pooled = solve_dp(3, 2, 1, d, 1.0, workers=2)
    assert np.array_equal(serial.value[1:], pooled.value[1:])
    assert serial.optimal_cost() < 3 * d.variance


def test_csv_export():
    table = solve_dp(2, 1, 1, Laplace(1.0), 1.0)
    buf = io.StringIO()
    write_table_csv(table, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 1 + 2 * 2 * 2


def test_non_convergence_names_state(monkeypatch):
    def fail(*args, **kwargs):
        raise NonConvergence("stuck", (1.0, 1.0))

    monkeypatch.setattr(stage, "solve_generic_thresholds", fail)
    with pytest.raises(NonConvergence) as info:
        solve_dp(4, 2, 2, Uniform(3.0), 1.0)
    st = info.value.state
    assert isinstance(st, DpState)
    assert st.t == 4 and st.En >= 1 and st.Ep >= 1


@pytest.mark.parametrize("args", [(0, 1, 1), (5, -1, 1), (5, 1, 1.5)])
def test_validation(args):
    with pytest.raises(ValidationError):
        solve_dp(*args, Laplace(1.0), 1.0)


def test_small_monte_carlo_agreement():
    table = solve_dp(10, 3, 2, Laplace(1.0), 1.0)
    cfg = EpisodeConfig.for_table(table, seed=3, episodes=40_000)
    mean, se = monte_carlo_cost(cfg, table)
    assert abs(mean - table.optimal_cost()) <= 3 * se
