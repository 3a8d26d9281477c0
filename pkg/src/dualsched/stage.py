"""One-stage soft-constraint problem.

Three actions per source value: stay silent (0), use the noisy channel
at price c1 (1), or the perfect channel at price c2 (2). Under symmetric
scheduling with the sign side channel the optimal rule has the
threshold-in-threshold form

    0 if |x| <= beta1,  1 if beta1 < |x| <= beta2,  2 if |x| > beta2

and the thresholds come from the first-order system

    beta1^2 - (beta1 - m)^2 / (1+gamma) - c1 = 0
    (beta2 - m)^2 / (1+gamma) + c1 - c2 = 0

with ``m = E[X | beta1 < X < beta2]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .codec import ChannelParams, CodecParams, codec_for_region
from .errors import AsymmetricPolicy, NoBracket, NonConvergence, ValidationError, ZeroMassInterval
from .sources import Laplace, SourceDensity, interval_moments, union_moments

RESIDUAL_TOL = 1e-10
SYM_TOL = 1e-12


@dataclass(frozen=True)
class StageCostParams:
    c1: float
    c2: float
    snr: float
    offset: float = 0.0
    gain: float = 1.0

    def __post_init__(self):
        if not self.c1 >= 0:
            raise ValidationError("c1", f"must be nonnegative, got {self.c1}")
        if not self.c2 >= 0:
            raise ValidationError("c2", f"must be nonnegative, got {self.c2}")
        if not self.snr > 0:
            raise ValidationError("gamma", f"must be positive, got {self.snr}")
        if not self.gain > 0:
            raise ValidationError("alpha", f"must be positive, got {self.gain}")


def stage_costs(x, params: StageCostParams, noise_variance):
    """Per-realization costs (J0, J1, J2) of silence, noisy and perfect transmission."""
    g = params.snr
    j0 = np.square(x)
    j1 = (
        params.c1
        + (np.abs(x) - params.offset) ** 2 / (g + 1.0) ** 2
        + g * g * noise_variance / (params.gain**2 * (g + 1.0) ** 2)
    )
    j2 = np.full_like(np.asarray(j0, dtype=float), params.c2)
    if np.ndim(j0) == 0:
        return float(j0), float(j1), float(j2)
    return j0, j1, j2


@dataclass(frozen=True)
class PolicyRegions:
    """Labelled half-open intervals ``(lo, hi]`` partitioning the support."""

    intervals: tuple
    symmetric: bool = True

    def __post_init__(self):
        ivs = tuple(sorted((float(a), float(b), int(lab)) for a, b, lab in self.intervals))
        for a, b, lab in ivs:
            if lab not in (0, 1, 2):
                raise ValidationError("regions", f"label must be 0, 1 or 2, got {lab}")
            if not a < b:
                raise ValidationError("regions", f"empty interval ({a}, {b}]")
        for (_, b0, _), (a1, _, _) in zip(ivs, ivs[1:]):
            if a1 < b0 - SYM_TOL * max(1.0, abs(b0)):
                raise ValidationError("regions", "intervals overlap")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def threshold(cls, beta1, beta2, support=(-math.inf, math.inf)):
        lo, hi = support
        pieces = [
            (lo, -beta2, 2),
            (-beta2, -beta1, 1),
            (-beta1, beta1, 0),
            (beta1, beta2, 1),
            (beta2, hi, 2),
        ]
        out = []
        for a, b, lab in pieces:
            a, b = max(a, lo), min(b, hi)
            if a < b:
                out.append((a, b, lab))
        return cls(tuple(out), symmetric=True)

    def label_set(self, label):
        return [(a, b) for a, b, lab in self.intervals if lab == label]

    def merged(self, label):
        out = []
        for a, b in self.label_set(label):
            if out and abs(a - out[-1][1]) <= SYM_TOL * max(1.0, abs(a)):
                out[-1] = (out[-1][0], b)
            else:
                out.append((a, b))
        return out

    def is_symmetric(self) -> bool:
        for lab in (0, 1, 2):
            ivs = self.merged(lab)
            mirror = sorted((-b, -a) for a, b in ivs)
            if len(mirror) != len(ivs):
                return False
            for (a, b), (ma, mb) in zip(ivs, mirror):
                if not (_close(a, ma) and _close(b, mb)):
                    return False
        return True

    def label_of(self, x):
        for a, b, lab in self.intervals:
            if a < x <= b:
                return lab
        raise ValueError(f"{x} not covered by policy regions")


def _close(a, b):
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= SYM_TOL * max(1.0, abs(a), abs(b))


def _mass_and_var(density, intervals):
    try:
        mom = union_moments(density, intervals)
    except ZeroMassInterval:
        return 0.0, 0.0
    return mom.mass, mom.variance


def eval_region_cost(regions: PolicyRegions, density: SourceDensity, params: StageCostParams,
                     side_channel=True) -> float:
    """Expected one-stage cost of an arbitrary region policy.

    Silence is estimated by the conditional mean of the silent set (zero
    for symmetric policies). With the side channel the noisy set is split
    at the origin and each half gets its own affine codec.
    """
    if regions.symmetric and not regions.is_symmetric():
        raise AsymmetricPolicy("policy regions flagged symmetric are not mirror images")
    p0, v0 = _mass_and_var(density, regions.label_set(0))
    p2, _ = _mass_and_var(density, regions.label_set(2))
    noisy = regions.label_set(1)
    if side_channel:
        noisy_term = 0.0
        p1 = 0.0
        for half in ([(max(a, 0.0), b) for a, b in noisy if b > 0.0],
                     [(a, min(b, 0.0)) for a, b in noisy if a < 0.0]):
            half = [(a, b) for a, b in half if a < b]
            ph, vh = _mass_and_var(density, half)
            p1 += ph
            noisy_term += ph * vh
    else:
        p1, v1 = _mass_and_var(density, noisy)
        noisy_term = p1 * v1
    return v0 * p0 + params.c1 * p1 + noisy_term / (params.snr + 1.0) + params.c2 * p2


def _second_moment_core(density, beta1):
    if beta1 <= 0.0:
        return 0.0
    if math.isinf(beta1):
        return density.variance
    try:
        mom = interval_moments(density, -beta1, beta1)
    except ZeroMassInterval:
        return 0.0
    return mom.mass * mom.second_moment


def _one_sided(density, lo, hi):
    """(mass, var) on ``(lo, hi]``, zeros for an empty or massless interval."""
    if not lo < hi:
        return 0.0, 0.0
    try:
        mom = interval_moments(density, lo, hi)
    except ZeroMassInterval:
        return 0.0, 0.0
    return mom.mass, mom.variance


def eval_threshold_cost(beta1, beta2, density: SourceDensity, c1, c2, snr) -> float:
    """Expected cost of the threshold-in-threshold rule (side-channel semantics)."""
    if not 0.0 <= beta1 <= beta2:
        raise ValidationError("thresholds", f"need 0 <= beta1 <= beta2, got ({beta1}, {beta2})")
    silent = _second_moment_core(density, beta1)
    p1, v1 = _one_sided(density, beta1, beta2)
    p2, _ = _one_sided(density, beta2, math.inf)
    return silent + 2.0 * c1 * p1 + 2.0 * v1 * p1 / (snr + 1.0) + 2.0 * c2 * p2


def first_order_residuals(beta1, beta2, density, c1, c2, snr):
    m = interval_moments(density, beta1, beta2).mean
    r1 = beta1 * beta1 - (beta1 - m) ** 2 / (snr + 1.0) - c1
    r2 = (beta2 - m) ** 2 / (snr + 1.0) + c1 - c2
    return r1, r2


def marginal_costs(x, m, c1, c2, snr):
    """Marginal cost of assigning x to each action with the codec re-matched.

    Differs from ``stage_costs`` in that the noisy codec adapts when x
    joins the noisy set; at a stationary point of the expected cost the
    argmin of these reproduces the threshold labelling.
    """
    x = np.abs(np.asarray(x, dtype=float))
    return x * x, c1 + (x - m) ** 2 / (snr + 1.0), np.full_like(x, c2)


@dataclass(frozen=True)
class SoftSolution:
    beta1: float
    beta2: float
    cost: float
    used_boundary: bool
    codec: CodecParams | None = None
    residuals: tuple = (0.0, 0.0)
    boundary: str = "interior"
    candidates: tuple = field(default=(), repr=False)

    def action(self, x):
        ax = np.abs(x)
        return np.where(ax <= self.beta1, 0, np.where(ax <= self.beta2, 1, 2))

    def regions(self, support=(-math.inf, math.inf)) -> PolicyRegions:
        return PolicyRegions.threshold(self.beta1, self.beta2, support)


def _validate_soft(c1, c2, snr):
    StageCostParams(c1, c2, snr)


def _region_codec(density, beta1, beta2, snr):
    if not beta1 < beta2:
        return None
    try:
        return codec_for_region(density, beta1, beta2, ChannelParams(snr))
    except ZeroMassInterval:
        return None


def perfect_only(density, c2) -> SoftSolution:
    """Single perfect channel: threshold at sqrt(c2)."""
    beta = math.sqrt(c2)
    cost = eval_threshold_cost(beta, beta, density, 0.0, c2, 1.0)
    return SoftSolution(beta, beta, cost, True, None, (0.0, 0.0), "perfect_only")


# Laplace closed form


def _delta_lhs(delta, rate):
    # delta * e^{rate delta} / (e^{rate delta} - 1), increasing from 1/rate
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return np.where(delta > 0, delta / -np.expm1(-rate * delta), 1.0 / rate)


def _solve_delta(target, rate, max_doublings=1000):
    """Vectorized bisection for ``delta e^{rate delta}/(e^{rate delta}-1) = target``."""
    target = np.asarray(target, dtype=float)
    lo = np.full_like(target, 1e-12)
    hi = np.ones_like(target)
    for _ in range(max_doublings):
        short = _delta_lhs(hi, rate) < target
        if not short.any():
            break
        hi = np.where(short, 2.0 * hi, hi)
    else:
        raise NoBracket("could not bracket the threshold-gap equation")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.all((mid == lo) | (mid == hi)):
            break
        below = _delta_lhs(mid, rate) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    # pick the endpoint with the smaller residual
    rlo = np.abs(_delta_lhs(lo, rate) - target)
    rhi = np.abs(_delta_lhs(hi, rate) - target)
    return np.where(rlo < rhi, lo, hi)


def _exp_var_factor_vec(u):
    u = np.asarray(u, dtype=float)
    small = u < 1e-2
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        em1 = np.expm1(np.minimum(u, 700.0))
        big = 1.0 - u * u * np.exp(np.minimum(u, 700.0)) / (em1 * em1)
    u2 = np.where(small, u, 0.0) ** 2
    series = u2 / 12.0 - u2 * u2 / 240.0 + u2 * u2 * u2 / 6048.0
    out = np.where(small, series, np.where(u > 700.0, 1.0, big))
    return np.where(np.isinf(u), 1.0, out)


def laplace_threshold_cost(beta1, beta2, rate, c1, c2, snr):
    """Vectorized expected cost of threshold rules under a Laplace source."""
    b1 = np.asarray(beta1, dtype=float)
    b2 = np.asarray(beta2, dtype=float)
    z = rate * b1
    with np.errstate(over="ignore", invalid="ignore"):
        e1 = np.exp(-z)
        core = 2.0 / rate**2 * (1.0 - e1 * (1.0 + z + 0.5 * z * z))
        core = np.where(np.isinf(b1), 2.0 / rate**2, core)
        u = rate * (b2 - b1)
        u = np.where(np.isnan(u), 0.0, u)
        p1 = -0.5 * e1 * np.expm1(-u)
        p1 = np.where(np.isinf(b1), 0.0, p1)
        v1 = _exp_var_factor_vec(u) / rate**2
        p2 = 0.5 * np.exp(-rate * b2)
    return core + 2.0 * c1 * p1 + 2.0 * v1 * p1 / (snr + 1.0) + 2.0 * c2 * p2


def laplace_thresholds(c1, c2, snr, rate):
    """Vectorized Laplace solve: returns (beta1, beta2, cost, used_boundary) arrays.

    Interior candidates from the threshold-gap equation are compared with
    the perfect-only boundary ``beta1 = beta2 = sqrt(c2)``.
    """
    c1, c2 = np.broadcast_arrays(np.atleast_1d(np.asarray(c1, dtype=float)),
                                 np.atleast_1d(np.asarray(c2, dtype=float)))
    shape = c1.shape
    c1, c2 = c1.ravel(), c2.ravel()
    edge = np.sqrt(c2)
    j_edge = laplace_threshold_cost(edge, edge, rate, c1, c2, snr)
    interior = c2 > c1
    b1 = edge.copy()
    b2 = edge.copy()
    cost = j_edge.copy()
    boundary = np.ones(c1.shape, dtype=bool)
    if interior.any():
        ci1 = c1[interior]
        k = np.sqrt((c2[interior] - ci1) * (1.0 + snr))
        delta = _solve_delta(1.0 / rate + k, rate)
        ib1 = np.sqrt(ci1 + (delta - k) ** 2 / (1.0 + snr))
        ib2 = ib1 + delta
        j_in = laplace_threshold_cost(ib1, ib2, rate, ci1, c2[interior], snr)
        better = j_in < j_edge[interior]
        idx = np.flatnonzero(interior)[better]
        b1[idx] = ib1[better]
        b2[idx] = ib2[better]
        cost[idx] = j_in[better]
        boundary[idx] = False
    return b1.reshape(shape), b2.reshape(shape), cost.reshape(shape), boundary.reshape(shape)


def laplace_noisy_only(c1, snr, rate):
    """Noisy channel only (beta2 = inf): beta1 = sqrt(c1 + 1/(rate^2 (1+gamma)))."""
    c1 = np.asarray(c1, dtype=float)
    b1 = np.sqrt(c1 + 1.0 / (rate**2 * (1.0 + snr)))
    cost = laplace_threshold_cost(b1, np.inf, rate, c1, 0.0, snr)
    silent = 2.0 / rate**2
    # silence everywhere is the beta1 = inf limit
    b1 = np.where(cost < silent, b1, np.inf)
    cost = np.minimum(cost, silent)
    return b1, cost


def solve_laplace_thresholds(c1, c2, snr, rate) -> SoftSolution:
    """Optimal thresholds for a Laplace(rate) source via the closed-form gap equation."""
    _validate_soft(c1, c2, snr)
    density = Laplace(rate)
    if c1 >= c2:
        return perfect_only(density, c2)
    b1, b2, cost, boundary = (v[0] for v in laplace_thresholds(c1, c2, snr, rate))
    b1, b2, cost, boundary = float(b1), float(b2), float(cost), bool(boundary)
    if boundary:
        res = (0.0, 0.0)
        codec = None
    else:
        res = first_order_residuals(b1, b2, density, c1, c2, snr)
        codec = _region_codec(density, b1, b2, snr)
    return SoftSolution(b1, b2, cost, boundary, codec, res, "perfect_only" if boundary else "interior")


# Generic densities


def _beta1_from_mean(m, c1, snr):
    # positive root of snr*b^2 + 2 m b - m^2 - c1 (1+snr) = 0
    return (-m + math.sqrt((1.0 + snr) * (m * m + snr * c1))) / snr


def _fixed_point(density, c1, c2, snr, m0, damping=0.5, max_iter=10_000):
    """Damped fixed-point iteration on the first-order system.

    Returns ('converged', b1, b2, res), ('left', ...) when the iterate
    leaves the feasible set, or ('stalled', ...) on iteration exhaustion.
    """
    k = math.sqrt((c2 - c1) * (1.0 + snr))
    hi = density.support[1]
    m = m0
    b1 = _beta1_from_mean(m, c1, snr)
    b2 = m + k
    res = (math.inf, math.inf)
    for _ in range(max_iter):
        if not (0.0 <= b1 < b2) or b1 >= hi:
            return "left", b1, b2, res
        try:
            m = interval_moments(density, b1, b2).mean
        except ZeroMassInterval:
            return "left", b1, b2, res
        r1 = b1 * b1 - (b1 - m) ** 2 / (snr + 1.0) - c1
        r2 = (b2 - m) ** 2 / (snr + 1.0) + c1 - c2
        res = (r1, r2)
        if max(abs(r1), abs(r2)) < RESIDUAL_TOL:
            return "converged", b1, b2, res
        b1 = damping * b1 + (1.0 - damping) * _beta1_from_mean(m, c1, snr)
        b2 = damping * b2 + (1.0 - damping) * (m + k)
    return "stalled", b1, b2, res


def _minimize_1d(func, lo, hi, n=400):
    grid = np.linspace(lo, hi, n)
    vals = np.array([func(v) for v in grid])
    i = int(np.argmin(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, n - 1)]
    if b <= a:
        return float(grid[i]), float(vals[i])
    r = optimize.minimize_scalar(func, bounds=(a, b), method="bounded", options={"xatol": 1e-12})
    if r.fun <= vals[i]:
        return float(r.x), float(r.fun)
    return float(grid[i]), float(vals[i])


def _search_upper(density, c1, c2, snr):
    hi = density.support[1]
    if math.isfinite(hi):
        return hi
    k = math.sqrt(max(c2 - c1, 0.0) * (1.0 + snr))
    return math.sqrt(c2) + k + 40.0 * math.sqrt(density.variance)


def noisy_only(density, c1, snr) -> SoftSolution:
    """Noisy channel only: best beta1 with beta2 = inf, or silence if cheaper."""
    _validate_soft(c1, c1, snr)
    if isinstance(density, Laplace):
        b1, cost = laplace_noisy_only(c1, snr, density.rate)
        b1, cost = float(b1), float(cost)
    else:
        upper = _search_upper(density, c1, c1, snr)
        b1, cost = _minimize_1d(lambda b: eval_threshold_cost(b, math.inf, density, c1, 0.0, snr), 0.0, upper)
        if density.variance <= cost:
            b1, cost = math.inf, density.variance
    codec = _region_codec(density, b1, math.inf, snr) if math.isfinite(b1) else None
    return SoftSolution(b1, math.inf, cost, True, codec, (0.0, 0.0), "noisy_only")


def solve_generic_thresholds(density: SourceDensity, c1, c2, snr, restarts=8, seed=0,
                             damping=0.5, max_iter=10_000, on_failure="raise") -> SoftSolution:
    """Thresholds for any symmetric unimodal density.

    Interior stationary points come from damped fixed-point runs started
    at the midpoint mean and at ``restarts`` random means; they compete
    by direct cost evaluation with the boundaries beta1 = beta2 = sqrt(c2),
    beta1 = 0 and beta2 = inf. ``on_failure="grid"`` replaces a
    NonConvergence error by a 2-D grid refinement.
    """
    _validate_soft(c1, c2, snr)
    if c1 >= c2:
        return perfect_only(density, c2)

    def cost(b1, b2):
        return eval_threshold_cost(b1, b2, density, c1, c2, snr)

    k = math.sqrt((c2 - c1) * (1.0 + snr))
    upper = _search_upper(density, c1, c2, snr)
    rng = np.random.default_rng(seed)
    starts = [0.5 * (math.sqrt(c1) + math.sqrt(c1) + k)]
    starts += list(rng.uniform(0.0, min(upper, math.sqrt(c2) + k), restarts))

    candidates = []
    stalled = []
    for m0 in starts:
        status, b1, b2, res = _fixed_point(density, c1, c2, snr, m0, damping, max_iter)
        if status == "converged":
            if not any(abs(b1 - c[1]) < 1e-8 and abs(b2 - c[2]) < 1e-8 for c in candidates):
                candidates.append((cost(b1, b2), b1, b2, res, "interior"))
        elif status == "stalled":
            stalled.append((b1, b2, res))

    edge = math.sqrt(c2)
    candidates.append((cost(edge, edge), edge, edge, (0.0, 0.0), "perfect_only"))
    b2_0, j_0 = _minimize_1d(lambda b: cost(0.0, b), 0.0, upper)
    candidates.append((j_0, 0.0, b2_0, (0.0, 0.0), "zero_beta1"))
    b1_inf, j_inf = _minimize_1d(lambda b: cost(b, math.inf), 0.0, upper)
    candidates.append((j_inf, b1_inf, math.inf, (0.0, 0.0), "infinite_beta2"))

    if stalled and not any(c[4] == "interior" for c in candidates):
        if on_failure != "grid":
            b1, b2, res = stalled[0]
            raise NonConvergence(f"fixed-point iteration did not converge in {max_iter} steps", res)
        candidates.append(_grid_refine(cost, upper))

    best = min(candidates, key=lambda c: c[0])
    j, b1, b2, res, label = best
    codec = _region_codec(density, b1, b2, snr)
    return SoftSolution(b1, b2, j, label != "interior", codec, res, label,
                        tuple((c[1], c[2], c[0], c[4]) for c in candidates))


def _grid_refine(cost, upper, n=200):
    grid = np.linspace(0.0, upper, n)
    best = (math.inf, 0.0, 0.0)
    for i, b1 in enumerate(grid):
        for b2 in grid[i:]:
            j = cost(b1, b2)
            if j < best[0]:
                best = (j, b1, b2)
    r = optimize.minimize(lambda v: cost(min(abs(v[0]), abs(v[1])), max(abs(v[0]), abs(v[1]))),
                          x0=[best[1], best[2]], method="Nelder-Mead",
                          options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 5000})
    b1, b2 = sorted(abs(float(v)) for v in r.x)
    j = cost(b1, b2)
    if j > best[0]:
        j, b1, b2 = best
    return (j, b1, b2, (math.nan, math.nan), "grid")


def solve_soft(density: SourceDensity, c1, c2, snr, **kwargs) -> SoftSolution:
    """Dispatch to the Laplace closed form when possible."""
    if isinstance(density, Laplace):
        return solve_laplace_thresholds(c1, c2, snr, density.rate)
    return solve_generic_thresholds(density, c1, c2, snr, **kwargs)
