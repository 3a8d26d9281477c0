import math

import numpy as np
import pytest
from scipy import integrate

from dualsched import Laplace

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def laplace1():
    return Laplace(1.0)


def laplace_pdf(x, lam=1.0):
    return 0.5 * lam * math.exp(-lam * abs(x))


def quad_interval(pdf, a, b):
    """Plain scipy quadrature of mass/mean/variance; split at 0 for the Laplace kink."""
    pts = [a, b] if not (a < 0.0 < b) else [a, 0.0, b]

    def q(f):
        return sum(integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
                   for lo, hi in zip(pts, pts[1:]))

    mass = q(pdf)
    mean = q(lambda x: x * pdf(x)) / mass
    var = q(lambda x: (x - mean) ** 2 * pdf(x)) / mass
    return mass, mean, var


def laplace_grid_cost(b1, b2, c1, c2, gamma, lam=1.0):
    """Threshold-policy cost from raw partial moments of the exponential.

    Independent of the solver's memoryless formulas: conditional variance
    is formed as M2/M0 - (M1/M0)^2.
    """
    def m0(x):
        return 0.5 * (1.0 - np.exp(-lam * x))

    def m1(x):
        return 0.5 / lam * (1.0 - np.exp(-lam * x) * (1.0 + lam * x))

    def m2(x):
        return 1.0 / lam**2 * (1.0 - np.exp(-lam * x) * (1.0 + lam * x + 0.5 * (lam * x) ** 2))

    p = m0(b2) - m0(b1)
    s1 = m1(b2) - m1(b1)
    s2 = m2(b2) - m2(b1)
    with np.errstate(invalid="ignore", divide="ignore"):
        noisy = np.where(p > 1e-300, s2 - s1 * s1 / p, 0.0)
    return 2.0 * m2(b1) + 2.0 * c1 * p + 2.0 * noisy / (gamma + 1.0) + 2.0 * c2 * (0.5 - m0(b2))


def grid_min_laplace(c1, c2, gamma, lam=1.0, step=1e-3, hi=8.0):
    """Brute-force minimum of the threshold cost over 0 <= b1 <= b2 <= hi."""
    grid = np.arange(0.0, hi + 0.5 * step, step)
    best = (math.inf, 0.0, 0.0)
    for i, b1 in enumerate(grid):
        b2 = grid[i:]
        j = laplace_grid_cost(b1, b2, c1, c2, gamma, lam)
        k = int(np.argmin(j))
        if j[k] < best[0]:
            best = (float(j[k]), float(b1), float(b2[k]))
    return best
