"""Source and channel-noise densities with truncated-interval moments.

Every source density here is zero-mean, symmetric and unimodal. The
Laplace and uniform densities have closed-form interval moments; a
tabulated density falls back on adaptive quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import ValidationError, ZeroMassInterval

ZERO_MASS = 1e-300
QUAD_TOL = 1e-10


@dataclass(frozen=True)
class IntervalMoments:
    """Probability of ``(a, b]`` and the conditional mean/variance of X on it."""

    mass: float
    mean: float
    variance: float

    @property
    def second_moment(self) -> float:
        return self.variance + self.mean * self.mean


def _check_interval(a, b):
    a = float(a)
    b = float(b)
    if math.isnan(a) or math.isnan(b) or not a < b:
        raise ValidationError("interval", f"need a < b, got ({a}, {b})")
    return a, b


class SourceDensity:
    """Common interface; subclasses supply the closed forms or the table."""

    kind = "abstract"

    def pdf(self, x):
        raise NotImplementedError

    @property
    def variance(self) -> float:
        raise NotImplementedError

    @property
    def support(self) -> tuple[float, float]:
        return (-math.inf, math.inf)

    def _moments(self, a: float, b: float) -> tuple[float, float, float]:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Laplace(SourceDensity):
    """Laplace density ``(rate/2) exp(-rate |x|)``."""

    rate: float = 1.0
    kind = "laplace"

    def __post_init__(self):
        if not self.rate > 0 or not math.isfinite(self.rate):
            raise ValidationError("lambda", f"rate must be positive, got {self.rate}")

    def pdf(self, x):
        return 0.5 * self.rate * np.exp(-self.rate * np.abs(x))

    @property
    def variance(self) -> float:
        return 2.0 / self.rate**2

    def _moments(self, a, b):
        if a >= 0.0:
            return _shifted_exponential(self.rate, a, b)
        if b <= 0.0:
            mass, mean, var = _shifted_exponential(self.rate, -b, -a)
            return mass, -mean, var
        # interval straddles the origin: raw moments of each half
        m0 = m1 = m2 = 0.0
        for lo, hi, sgn in ((0.0, b, 1.0), (0.0, -a, -1.0)):
            mass, mean, var = _shifted_exponential(self.rate, lo, hi)
            m0 += mass
            m1 += sgn * mass * mean
            m2 += mass * (var + mean * mean)
        mean = m1 / m0
        return m0, mean, max(m2 / m0 - mean * mean, 0.0)

    def sample(self, rng, size=None):
        return rng.laplace(0.0, 1.0 / self.rate, size)

    def to_dict(self):
        return {"kind": "laplace", "lambda": self.rate}


def _exp_var_factor(u):
    # 1 - u^2 e^u / (e^u - 1)^2, the variance of Exp(1) truncated to (0, u)
    if u < 1e-2:
        u2 = u * u
        return u2 / 12.0 - u2 * u2 / 240.0 + u2 * u2 * u2 / 6048.0
    if u > 700.0:
        return 1.0
    em1 = math.expm1(u)
    return 1.0 - u * u * math.exp(u) / (em1 * em1)


def _shifted_exponential(rate, a, b):
    """Mass, mean and variance of a Laplace variable on ``(a, b]`` with a >= 0."""
    tail = 0.5 * math.exp(-rate * a)
    if math.isinf(b):
        return tail, a + 1.0 / rate, 1.0 / rate**2
    u = rate * (b - a)
    mass = -tail * math.expm1(-u)
    if u > 700.0:
        shift = 1.0 / rate
    else:
        shift = (1.0 - u / math.expm1(u)) / rate if u > 0 else 0.0
    return mass, a + shift, _exp_var_factor(u) / rate**2


@dataclass(frozen=True)
class Uniform(SourceDensity):
    """Uniform density on ``[-half_width, half_width]``."""

    half_width: float = 1.0
    kind = "uniform"

    def __post_init__(self):
        if not self.half_width > 0 or not math.isfinite(self.half_width):
            raise ValidationError("L", f"half-width must be positive, got {self.half_width}")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(np.abs(x) <= self.half_width, 0.5 / self.half_width, 0.0)
        return out if out.ndim else float(out)

    @property
    def variance(self) -> float:
        return self.half_width**2 / 3.0

    @property
    def support(self):
        return (-self.half_width, self.half_width)

    def _moments(self, a, b):
        lo = max(a, -self.half_width)
        hi = min(b, self.half_width)
        if hi <= lo:
            return 0.0, 0.0, 0.0
        width = hi - lo
        return width / (2.0 * self.half_width), 0.5 * (lo + hi), width * width / 12.0

    def sample(self, rng, size=None):
        return rng.uniform(-self.half_width, self.half_width, size)

    def to_dict(self):
        return {"kind": "uniform", "L": self.half_width}


@dataclass(frozen=True, eq=False)
class Tabulated(SourceDensity):
    """Piecewise-linear density through ``(x, pdf)`` nodes on a symmetric grid.

    The table is renormalised on construction and must be symmetric and
    nonincreasing in ``|x|``.
    """

    x: np.ndarray
    values: np.ndarray
    _cdf: np.ndarray = field(init=False, repr=False)
    kind = "tabulated"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        p = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or x.shape != p.shape or x.size < 3:
            raise ValidationError("density.grid", "need matching 1-D x and pdf arrays, length >= 3")
        if np.any(np.diff(x) <= 0):
            raise ValidationError("density.grid", "x must be strictly increasing")
        if np.any(p < 0):
            raise ValidationError("density.pdf", "pdf values must be nonnegative")
        scale = max(1.0, float(np.max(np.abs(x))))
        if not np.allclose(x, -x[::-1], atol=1e-12 * scale, rtol=0):
            raise ValidationError("density.grid", "grid must be symmetric about 0")
        if not np.allclose(p, p[::-1], atol=1e-12 * max(p.max(), 1.0), rtol=0):
            raise ValidationError("density.pdf", "pdf must be symmetric")
        right = p[x >= 0]
        if np.any(np.diff(right) > 1e-12 * max(p.max(), 1.0)):
            raise ValidationError("density.pdf", "pdf must be nonincreasing on [0, inf)")
        p = 0.5 * (p + p[::-1])
        p = p / np.trapezoid(p, x)
        seg = 0.5 * (p[1:] + p[:-1]) * np.diff(x)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "values", p)
        object.__setattr__(self, "_cdf", np.concatenate([[0.0], np.cumsum(seg)]))

    @classmethod
    def from_function(cls, func, half_width, n=2001):
        grid = np.linspace(-half_width, half_width, n)
        vals = np.asarray(func(np.abs(grid)), dtype=float)
        return cls(grid, vals)

    def pdf(self, x):
        out = np.interp(x, self.x, self.values, left=0.0, right=0.0)
        return out if np.ndim(out) else float(out)

    @property
    def support(self):
        return (float(self.x[0]), float(self.x[-1]))

    @property
    def variance(self) -> float:
        return self._moments(*self.support)[2]

    def _moments(self, a, b):
        lo = max(a, self.x[0])
        hi = min(b, self.x[-1])
        if hi <= lo:
            return 0.0, 0.0, 0.0
        # integrands are cubic on each segment, so Simpson's rule is exact
        nodes = np.concatenate([[lo], self.x[(self.x > lo) & (self.x < hi)], [hi]])
        left, right = nodes[:-1], nodes[1:]
        mid = 0.5 * (left + right)
        w = (right - left) / 6.0
        pl, pm, pr = self.pdf(left), self.pdf(mid), self.pdf(right)

        def integral(g):
            return float(np.sum(w * (g(left) * pl + 4.0 * g(mid) * pm + g(right) * pr)))

        mass = integral(lambda t: 1.0)
        if mass <= 0.0:
            return 0.0, 0.0, 0.0
        mean = integral(lambda t: t) / mass
        var = integral(lambda t: (t - mean) ** 2) / mass
        return mass, mean, max(var, 0.0)

    def sample(self, rng, size=None):
        u = rng.uniform(0.0, 1.0, size)
        return self._inverse_cdf(u)

    def _inverse_cdf(self, u):
        u = np.asarray(u, dtype=float)
        i = np.clip(np.searchsorted(self._cdf, u, side="right") - 1, 0, self.x.size - 2)
        h = self.x[i + 1] - self.x[i]
        p0 = self.values[i]
        slope = (self.values[i + 1] - p0) / h
        r = u - self._cdf[i]
        # solve p0 s + slope s^2 / 2 = r for s in [0, h]
        disc = np.sqrt(np.maximum(p0 * p0 + 2.0 * slope * r, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(np.abs(slope) > 1e-14, 2.0 * r / (p0 + disc), r / np.where(p0 > 0, p0, 1.0))
        out = np.clip(self.x[i] + s, self.x[i], self.x[i + 1])
        return out if out.ndim else float(out)

    def to_dict(self):
        return {"kind": "tabulated", "x": self.x.tolist(), "pdf": self.values.tolist()}


def _exp_sub(f, a, sign):
    # x = a - sign*log(u), u in (0, 1]: maps a half-line onto the unit interval
    def g(u):
        if u <= 0.0:
            return 0.0
        return f(a - sign * math.log(u)) / u

    return g


def _quad(f, a, b, breakpoints=None):
    if math.isinf(a) and math.isinf(b):
        return _quad(f, -math.inf, 0.0) + _quad(f, 0.0, math.inf)
    if math.isinf(b):
        return integrate.quad(_exp_sub(f, a, 1.0), 0.0, 1.0, epsabs=QUAD_TOL, epsrel=1e-12, limit=200)[0]
    if math.isinf(a):
        return integrate.quad(_exp_sub(f, b, -1.0), 0.0, 1.0, epsabs=QUAD_TOL, epsrel=1e-12, limit=200)[0]
    pts = None
    limit = 200
    if breakpoints is not None:
        inner = breakpoints[(breakpoints > a) & (breakpoints < b)]
        if inner.size:
            pts = inner
            limit = max(limit, 2 * inner.size + 50)
    return integrate.quad(f, a, b, points=pts, epsabs=QUAD_TOL, epsrel=1e-12, limit=limit)[0]


def quad_moments(pdf, a, b, breakpoints=None):
    """(mass, mean, variance) of a density on ``(a, b)`` by adaptive quadrature.

    Works for any callable pdf; used for tabulated densities and as an
    independent check on closed forms.
    """
    mass = _quad(lambda x: float(pdf(x)), a, b, breakpoints)
    if mass < ZERO_MASS:
        return mass, 0.0, 0.0
    mean = _quad(lambda x: x * float(pdf(x)), a, b, breakpoints) / mass
    var = _quad(lambda x: (x - mean) ** 2 * float(pdf(x)), a, b, breakpoints) / mass
    return mass, mean, max(var, 0.0)


def interval_moments(density: SourceDensity, a, b) -> IntervalMoments:
    """Moments of X conditioned on ``X in (a, b]``; a may be -inf, b may be +inf.

    Raises ZeroMassInterval when the interval has probability below 1e-300.
    """
    a, b = _check_interval(a, b)
    mass, mean, var = density._moments(a, b)
    if not mass >= ZERO_MASS:
        raise ZeroMassInterval(f"interval ({a}, {b}] has mass {mass:.3g}")
    return IntervalMoments(mass=min(mass, 1.0), mean=mean, variance=var)


def union_moments(density: SourceDensity, intervals) -> IntervalMoments:
    """Moments over a union of disjoint intervals (law of total variance)."""
    parts = []
    for a, b in intervals:
        try:
            parts.append(interval_moments(density, a, b))
        except ZeroMassInterval:
            continue
    total = sum(p.mass for p in parts)
    if not total >= ZERO_MASS:
        raise ZeroMassInterval(f"union {list(intervals)} has no mass")
    mean = sum(p.mass * p.mean for p in parts) / total
    var = sum(p.mass * (p.variance + (p.mean - mean) ** 2) for p in parts) / total
    return IntervalMoments(mass=total, mean=mean, variance=var)


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean additive channel noise of given variance."""

    variance: float
    shape: str = "gaussian"

    SHAPES = ("gaussian", "uniform", "laplace")

    def __post_init__(self):
        if not self.variance > 0 or not math.isfinite(self.variance):
            raise ValidationError("noise.variance", f"must be positive, got {self.variance}")
        if self.shape not in self.SHAPES:
            raise ValidationError("noise", f"unknown shape {self.shape!r}; choose from {self.SHAPES}")

    @classmethod
    def from_snr(cls, gamma, power=1.0, shape="gaussian"):
        if not gamma > 0:
            raise ValidationError("gamma", f"SNR must be positive, got {gamma}")
        return cls(power / gamma, shape)

    def sample(self, rng: np.random.Generator, size=None):
        sd = math.sqrt(self.variance)
        if self.shape == "gaussian":
            return rng.normal(0.0, sd, size)
        if self.shape == "uniform":
            w = math.sqrt(3.0) * sd
            return rng.uniform(-w, w, size)
        return rng.laplace(0.0, sd / math.sqrt(2.0), size)


def sample(dist, rng: np.random.Generator, size=None):
    """Draw from a source density or a noise model using a caller-owned generator."""
    return dist.sample(rng, size)


def density_from_config(cfg: dict) -> SourceDensity:
    kind = str(cfg.get("kind", "laplace")).lower()
    if kind == "laplace":
        return Laplace(float(cfg.get("lambda", cfg.get("rate", 1.0))))
    if kind == "uniform":
        return Uniform(float(cfg.get("L", cfg.get("half_width", 1.0))))
    if kind == "tabulated":
        if "x" not in cfg or "pdf" not in cfg:
            raise ValidationError("density", "tabulated density needs 'x' and 'pdf' arrays")
        return Tabulated(np.asarray(cfg["x"], float), np.asarray(cfg["pdf"], float))
    raise ValidationError("density", f"unknown density kind {kind!r}")
