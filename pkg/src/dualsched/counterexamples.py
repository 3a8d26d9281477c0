"""Mass-preserving region shifts that compare scheduling policies.

Two constructions:

* the uniform-source counterexample: without the sign side channel, a
  symmetric threshold-in-threshold policy is beaten by moving the
  negative half of its noisy region next to the positive half;
* the inward shift: with the side channel, a noisy band sitting away
  from the silent region is moved inward to start at beta1, keeping its
  probability, which never increases the cost.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import GeometryViolation, ValidationError, ZeroMassInterval
from .sources import SourceDensity, Uniform, interval_moments, union_moments
from .stage import PolicyRegions, SoftSolution, StageCostParams, eval_region_cost

MASS_TOL = 1e-12


@dataclass(frozen=True)
class ShiftConstruction:
    original: PolicyRegions
    shifted: PolicyRegions
    masses: dict
    side_channel: bool
    name: str = ""

    def mass_error(self) -> float:
        return max(abs(a - b) for a, b in self.masses.values())


def _label_masses(density, regions):
    out = {}
    for lab in (0, 1, 2):
        try:
            out[lab] = union_moments(density, regions.label_set(lab)).mass
        except ZeroMassInterval:
            out[lab] = 0.0
    return out


def _certificate(density, original, shifted):
    a = _label_masses(density, original)
    b = _label_masses(density, shifted)
    return {lab: (a[lab], b[lab]) for lab in (0, 1, 2)}


def build_uniform_counterexample(half_width, beta1, beta2, c1=None, c2=None, snr=None) -> ShiftConstruction:
    """f* (threshold-in-threshold) versus f' (noisy region made connected).

    The prices are accepted for call-site symmetry with the solvers; the
    geometry alone defines both policies.
    """
    L = float(half_width)
    if not 0.0 < beta1 < beta2:
        raise ValidationError("thresholds", f"need 0 < beta1 < beta2, got ({beta1}, {beta2})")
    far = 2.0 * beta2 - beta1
    if far >= L:
        raise GeometryViolation(f"2*beta2 - beta1 = {far} must be < L = {L}")
    density = Uniform(L)
    original = PolicyRegions.threshold(beta1, beta2, density.support)
    shifted = PolicyRegions(
        ((-L, -beta1, 2), (-beta1, beta1, 0), (beta1, far, 1), (far, L, 2)),
        symmetric=False,
    )
    return ShiftConstruction(original, shifted, _certificate(density, original, shifted),
                             side_channel=False, name="uniform_counterexample")


def counterexample_from_solution(half_width, solution: SoftSolution) -> ShiftConstruction:
    return build_uniform_counterexample(half_width, solution.beta1, solution.beta2)


def matched_upper_threshold(density: SourceDensity, beta1, left, right) -> float:
    """beta2' with P(beta1 < X <= beta2') = P(left < X <= right), by bisection."""
    if left == beta1:
        return float(right)
    width = right - left
    if isinstance(density, Uniform) and right <= density.half_width:
        return beta1 + width
    target = interval_moments(density, left, right).mass

    def excess(b):
        if b <= beta1:
            return -target
        try:
            return interval_moments(density, beta1, b).mass - target
        except ZeroMassInterval:
            return -target

    hi = beta1 + width
    if excess(hi) <= 0.0:
        return hi
    return optimize.bisect(excess, beta1, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=400)


def build_inward_shift(beta1, left, right, density: SourceDensity) -> ShiftConstruction:
    """Case with a perfect band between the silent and the noisy region.

    Original: silent on |x| <= beta1, perfect on beta1 < |x| <= left,
    noisy on left < |x| <= right, perfect beyond. Shifted: silent the
    same, noisy on beta1 < |x| <= beta2' with matched mass, perfect beyond.
    """
    if not 0.0 <= beta1 <= left < right:
        raise ValidationError("thresholds", f"need 0 <= beta1 <= left < right, got ({beta1}, {left}, {right})")
    lo, hi = density.support
    if right > hi:
        raise GeometryViolation(f"noisy band ends at {right} beyond the support edge {hi}")
    beta2 = matched_upper_threshold(density, beta1, left, right)

    def clip(pieces):
        out = []
        for a, b, lab in pieces:
            a, b = max(a, lo), min(b, hi)
            if a < b:
                out.append((a, b, lab))
        return tuple(out)

    original = PolicyRegions(clip((
        (-math.inf, -right, 2), (-right, -left, 1), (-left, -beta1, 2),
        (-beta1, beta1, 0),
        (beta1, left, 2), (left, right, 1), (right, math.inf, 2),
    )))
    shifted = PolicyRegions.threshold(beta1, beta2, (lo, hi))
    return ShiftConstruction(original, shifted, _certificate(density, original, shifted),
                             side_channel=True, name="inward_shift")


def compare_costs(construction: ShiftConstruction, density: SourceDensity, c1, c2, snr):
    """(J_original, J_shifted) from the region cost formula."""
    params = StageCostParams(c1, c2, snr)
    j_orig = eval_region_cost(construction.original, density, params, construction.side_channel)
    j_new = eval_region_cost(construction.shifted, density, params, construction.side_channel)
    return j_orig, j_new


def _noisy_variances(density, regions, side_channel):
    noisy = regions.label_set(1)
    if side_channel:
        noisy = [(max(a, 0.0), b) for a, b in noisy if b > 0.0]
    try:
        return union_moments(density, noisy).variance
    except ZeroMassInterval:
        return 0.0


def report(construction: ShiftConstruction, density: SourceDensity, c1, c2, snr) -> dict:
    """JSON-ready summary with a strict-improvement verdict."""
    j_orig, j_new = compare_costs(construction, density, c1, c2, snr)
    if j_new < j_orig:
        verdict = "shifted_cheaper"
    elif j_new == j_orig:
        verdict = "equal"
    else:
        verdict = "original_cheaper"
    return {
        "construction": construction.name,
        "side_channel": construction.side_channel,
        "density": density.to_dict(),
        "params": {"c1": c1, "c2": c2, "gamma": snr},
        "regions": {
            "original": [list(iv) for iv in construction.original.intervals],
            "shifted": [list(iv) for iv in construction.shifted.intervals],
        },
        "masses": {str(k): list(v) for k, v in construction.masses.items()},
        "noisy_variance": {
            "original": _noisy_variances(density, construction.original, construction.side_channel),
            "shifted": _noisy_variances(density, construction.shifted, construction.side_channel),
        },
        "J_original": j_orig,
        "J_shifted": j_new,
        "difference": j_new - j_orig,
        "verdict": verdict,
    }
