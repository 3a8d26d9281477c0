"""Backward DP for the hard-constraint (fixed budget) problem.

``J(t, En, Ep)`` is the optimal cost-to-go with En noisy and Ep perfect
opportunities left. Differencing the next layer gives effective prices

    c1t = J(t+1, En-1, Ep) - J(t+1, En, Ep)
    c2t = J(t+1, En, Ep-1) - J(t+1, En, Ep)

and each state reduces to a one-stage soft problem at those prices.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import stage
from .errors import NonConvergence, ValidationError
from .sources import Laplace, SourceDensity

CSV_COLUMNS = ("t", "En", "Ep", "J", "beta1", "beta2", "c1t", "c2t")


@dataclass(frozen=True)
class DpState:
    t: int
    En: int
    Ep: int


@dataclass(frozen=True, eq=False)
class DpTable:
    """Values, thresholds and effective prices indexed ``[t, En, Ep]``.

    ``t`` runs over 1..T+1; row 0 is unused. Thresholds encode channel
    restrictions: ``beta1 == beta2`` means no noisy use, ``beta2 == inf``
    no perfect use.
    """

    horizon: int
    n_noisy: int
    n_perfect: int
    density: SourceDensity
    snr: float
    value: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    c1t: np.ndarray
    c2t: np.ndarray

    def optimal_cost(self, n_noisy=None, n_perfect=None) -> float:
        en = self.n_noisy if n_noisy is None else n_noisy
        ep = self.n_perfect if n_perfect is None else n_perfect
        return float(self.value[1, en, ep])

    def thresholds(self, t, en, ep):
        return float(self.beta1[t, en, ep]), float(self.beta2[t, en, ep])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            write_table_csv(self, fh)


def _fmt(v):
    return f"{v:.12g}"


def write_table_csv(table: DpTable, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for t in range(1, table.horizon + 1):
        for en in range(table.n_noisy + 1):
            for ep in range(table.n_perfect + 1):
                w.writerow([t, en, ep] + [_fmt(float(a[t, en, ep])) for a in
                                           (table.value, table.beta1, table.beta2, table.c1t, table.c2t)])


def _validate(horizon, n_noisy, n_perfect, snr):
    if int(horizon) != horizon or horizon < 1:
        raise ValidationError("T", f"horizon must be an integer >= 1, got {horizon}")
    for name, n in (("N1", n_noisy), ("N2", n_perfect)):
        if int(n) != n or n < 0:
            raise ValidationError(name, f"budget must be a nonnegative integer, got {n}")
    if not snr > 0:
        raise ValidationError("gamma", f"must be positive, got {snr}")


def _laplace_layer(c1, c2, rate, snr):
    """Solve every state of one layer at once for a Laplace source."""
    shape = c1.shape
    b1 = np.full(shape, np.inf)
    b2 = np.full(shape, np.inf)
    cost = np.full(shape, 2.0 / rate**2)

    both = (slice(1, None), slice(1, None))
    if shape[0] > 1 and shape[1] > 1:
        x1, x2, j, _ = stage.laplace_thresholds(c1[both], c2[both], snr, rate)
        b1[both], b2[both], cost[both] = x1, x2, j
    if shape[0] > 1:
        x1, j = stage.laplace_noisy_only(c1[1:, 0], snr, rate)
        b1[1:, 0], cost[1:, 0] = x1, j
    if shape[1] > 1:
        edge = np.sqrt(c2[0, 1:])
        b1[0, 1:] = b2[0, 1:] = edge
        cost[0, 1:] = stage.laplace_threshold_cost(edge, edge, rate, 0.0, c2[0, 1:], snr)
    return b1, b2, cost


def _solve_state(args):
    density, en, ep, c1, c2, snr = args
    if en and ep:
        try:
            sol = stage.solve_generic_thresholds(density, c1, c2, snr)
        except NonConvergence as exc:
            raise NonConvergence(str(exc), exc.residuals, (en, ep)) from exc
    elif en:
        sol = stage.noisy_only(density, c1, snr)
    elif ep:
        sol = stage.perfect_only(density, c2)
    else:
        return math.inf, math.inf, density.variance
    return sol.beta1, sol.beta2, sol.cost


def _generic_layer(density, c1, c2, snr, t, pool=None):
    shape = c1.shape
    jobs = [(density, en, ep, c1[en, ep], c2[en, ep], snr)
            for en in range(shape[0]) for ep in range(shape[1])]
    try:
        results = list(pool.map(_solve_state, jobs)) if pool else [_solve_state(j) for j in jobs]
    except NonConvergence as exc:
        state = DpState(t, *exc.state) if exc.state else None
        raise NonConvergence(f"stage solver failed at {state}: {exc}", exc.residuals, state) from exc
    out = np.array(results, dtype=float).reshape(shape + (3,))
    return out[..., 0], out[..., 1], out[..., 2]


def solve_dp(horizon, n_noisy, n_perfect, density: SourceDensity, snr, workers=1,
             closed_form=True) -> DpTable:
    """Backward induction over (t, En, Ep); returns the full table.

    Laplace sources use the vectorized closed-form stage solver unless
    ``closed_form`` is False, in which case every state goes through the
    generic fixed-point solver (optionally on ``workers`` processes).
    """
    _validate(horizon, n_noisy, n_perfect, snr)
    horizon, n_noisy, n_perfect = int(horizon), int(n_noisy), int(n_perfect)
    shape = (horizon + 2, n_noisy + 1, n_perfect + 1)
    value = np.zeros(shape)
    value[0] = np.nan
    beta1 = np.full(shape, np.nan)
    beta2 = np.full(shape, np.nan)
    c1t = np.full(shape, np.nan)
    c2t = np.full(shape, np.nan)

    fast = closed_form and isinstance(density, Laplace)
    pool = ProcessPoolExecutor(workers) if workers > 1 and not fast else None
    try:
        for t in range(horizon, 0, -1):
            nxt = value[t + 1]
            c1t[t, 1:, :] = nxt[:-1, :] - nxt[1:, :]
            c2t[t, :, 1:] = nxt[:, :-1] - nxt[:, 1:]
            # prices are nonnegative up to rounding; the solver needs them clipped
            c1 = np.maximum(np.nan_to_num(c1t[t], nan=0.0), 0.0)
            c2 = np.maximum(np.nan_to_num(c2t[t], nan=0.0), 0.0)
            if fast:
                b1, b2, cost = _laplace_layer(c1, c2, density.rate, snr)
            else:
                b1, b2, cost = _generic_layer(density, c1, c2, snr, t, pool)
            beta1[t], beta2[t] = b1, b2
            value[t] = nxt + cost
    finally:
        if pool is not None:
            pool.shutdown()
    return DpTable(horizon, n_noisy, n_perfect, density, float(snr), value, beta1, beta2, c1t, c2t)


def policy_lookup(table: DpTable, t, en, ep, x):
    """Action 0/1/2 for source value(s) x at state (t, En, Ep)."""
    en = np.asarray(en)
    ep = np.asarray(ep)
    ax = np.abs(np.asarray(x, dtype=float))
    b1 = table.beta1[t, en, ep]
    b2 = table.beta2[t, en, ep]
    act = np.where(ax <= b1, 0, np.where(ax <= b2, 1, 2))
    act = np.where((act == 1) & (en < 1), 0, act)
    act = np.where((act == 2) & (ep < 1), 0, act)
    return int(act) if act.ndim == 0 else act
