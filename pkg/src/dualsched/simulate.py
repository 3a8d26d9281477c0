"""Closed-loop rollouts: source -> scheduler -> affine codec -> channel -> estimator.

Episodes are vectorized across a batch; each episode draws its source
and noise sequences from its own Philox stream keyed by
``(episode, seed)``, so a single episode can be replayed in isolation
and batch results do not depend on chunking or worker count.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dp import DpTable, policy_lookup
from .errors import ConfigMismatch, ValidationError, ZeroMassInterval
from .sources import Laplace, NoiseModel, SourceDensity, interval_moments
from .stage import _exp_var_factor_vec

PATH_COLUMNS = ("t", "x", "u", "y_tilde", "s", "xhat", "sqerr", "En", "Ep")


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: int
    n_noisy: int
    n_perfect: int
    density: SourceDensity
    noise: NoiseModel
    snr: float
    seed: int = 0
    episodes: int = 1
    power: float = 1.0

    def __post_init__(self):
        if self.episodes < 1:
            raise ValidationError("episodes", f"must be >= 1, got {self.episodes}")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed", "must fit in 64 unsigned bits")
        want = self.power / self.snr
        if not math.isclose(self.noise.variance, want, rel_tol=1e-12):
            raise ValidationError("noise.variance", f"{self.noise.variance} inconsistent with P_T/gamma = {want}")

    @classmethod
    def for_table(cls, table: DpTable, noise_shape="gaussian", seed=0, episodes=1, power=1.0):
        noise = NoiseModel.from_snr(table.snr, power, noise_shape)
        return cls(table.horizon, table.n_noisy, table.n_perfect, table.density, noise,
                   table.snr, seed, episodes, power)


@dataclass(frozen=True, eq=False)
class SamplePath:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y_tilde: np.ndarray
    s: np.ndarray
    xhat: np.ndarray
    sqerr: np.ndarray
    En: np.ndarray
    Ep: np.ndarray
    final_En: int
    final_Ep: int

    @property
    def total_cost(self) -> float:
        return float(self.sqerr.sum())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            write_path_csv(self, fh)


def write_path_csv(path: SamplePath, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(PATH_COLUMNS)
    for i in range(path.t.size):
        yt = path.y_tilde[i]
        w.writerow([int(path.t[i]), f"{path.x[i]:.12g}", int(path.u[i]),
                    "" if math.isnan(yt) else f"{yt:.12g}", int(path.s[i]),
                    f"{path.xhat[i]:.12g}", f"{path.sqerr[i]:.12g}", int(path.En[i]), int(path.Ep[i])])


@dataclass(frozen=True, eq=False)
class BatchResult:
    costs: np.ndarray
    final_En: np.ndarray
    final_Ep: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.costs.mean())

    @property
    def std_error(self) -> float:
        n = self.costs.size
        return float(self.costs.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan


def episode_rng(seed, episode) -> np.random.Generator:
    """Independent stream per episode: Philox keyed by (episode, master seed)."""
    return np.random.Generator(np.random.Philox(key=(int(episode) << 64) | int(seed)))


def _check(config: EpisodeConfig, table: DpTable):
    mismatches = []
    if config.horizon != table.horizon:
        mismatches.append(f"T {config.horizon} != {table.horizon}")
    if config.n_noisy != table.n_noisy:
        mismatches.append(f"N1 {config.n_noisy} != {table.n_noisy}")
    if config.n_perfect != table.n_perfect:
        mismatches.append(f"N2 {config.n_perfect} != {table.n_perfect}")
    if config.density != table.density:
        mismatches.append("source density differs")
    if not math.isclose(config.snr, table.snr, rel_tol=1e-12):
        mismatches.append(f"gamma {config.snr} != {table.snr}")
    if mismatches:
        raise ConfigMismatch("; ".join(mismatches))


_CODEC_CACHE: dict = {}


def state_codecs(table: DpTable, power=1.0):
    """Per-state codec offset b and gain alpha from each state's noisy region."""
    key = (id(table), power)
    if key in _CODEC_CACHE and _CODEC_CACHE[key][0] is table:
        return _CODEC_CACHE[key][1]
    b1, b2 = table.beta1, table.beta2
    active = np.isfinite(b1) & (b2 > b1)
    offset = np.zeros(b1.shape)
    var = np.ones(b1.shape)
    if isinstance(table.density, Laplace):
        lam = table.density.rate
        with np.errstate(invalid="ignore", over="ignore"):
            delta = np.where(active, b2 - b1, 1.0)
            u = lam * delta
            shift = np.where(np.isinf(u), 1.0 / lam, 1.0 / lam - delta / np.expm1(np.minimum(u, 700.0)))
            shift = np.where(u > 700.0, 1.0 / lam, shift)
        offset = np.where(active, b1 + shift, 0.0)
        var = np.where(active, _exp_var_factor_vec(u) / lam**2, 1.0)
    else:
        seen = {}
        for idx in zip(*np.nonzero(active)):
            key_ab = (float(b1[idx]), float(b2[idx]))
            if key_ab not in seen:
                try:
                    mom = interval_moments(table.density, *key_ab)
                    seen[key_ab] = (mom.mean, mom.variance)
                except ZeroMassInterval:
                    seen[key_ab] = (0.0, 1.0)
            offset[idx], var[idx] = seen[key_ab]
    gain = np.sqrt(power / np.maximum(var, 1e-300))
    _CODEC_CACHE.clear()
    _CODEC_CACHE[key] = (table, (offset, gain))
    return offset, gain


def _rollout(table: DpTable, xs, vs, power=1.0):
    """Roll a batch of pre-drawn source/noise sequences through the policy."""
    n, horizon = xs.shape
    offset, gain = state_codecs(table, power)
    shrink = table.snr / (table.snr + 1.0)
    en = np.full(n, table.n_noisy, dtype=np.int64)
    ep = np.full(n, table.n_perfect, dtype=np.int64)
    rec = {k: np.empty((n, horizon)) for k in ("u", "y_tilde", "s", "xhat", "sqerr", "En", "Ep")}
    for t in range(1, horizon + 1):
        x = xs[:, t - 1]
        rec["En"][:, t - 1] = en
        rec["Ep"][:, t - 1] = ep
        u = policy_lookup(table, t, en, ep, x)
        noisy = u == 1
        s = np.where(noisy, np.where(x >= 0, 1.0, -1.0), 0.0)
        b = offset[t, en, ep]
        a = gain[t, en, ep]
        with np.errstate(invalid="ignore"):
            y = s * a * (x - s * b)
            yt = np.where(noisy, y + vs[:, t - 1], np.where(u == 2, x, np.nan))
            dec = s * shrink * yt / a + s * b
        xhat = np.where(u == 2, x, np.where(noisy, dec, 0.0))
        rec["u"][:, t - 1] = u
        rec["y_tilde"][:, t - 1] = yt
        rec["s"][:, t - 1] = s
        rec["xhat"][:, t - 1] = xhat
        rec["sqerr"][:, t - 1] = (x - xhat) ** 2
        en = en - noisy
        ep = ep - (u == 2)
    return rec, en, ep


def _draw(config: EpisodeConfig, episodes):
    xs = np.empty((len(episodes), config.horizon))
    vs = np.empty_like(xs)
    for row, k in enumerate(episodes):
        rng = episode_rng(config.seed, k)
        xs[row] = config.density.sample(rng, config.horizon)
        vs[row] = config.noise.sample(rng, config.horizon)
    return xs, vs


def run_episode(config: EpisodeConfig, table: DpTable, episode=0) -> SamplePath:
    """One seeded episode; bit-identical to the same episode inside a batch."""
    _check(config, table)
    xs, vs = _draw(config, [episode])
    rec, en, ep = _rollout(table, xs, vs, config.power)
    return SamplePath(
        t=np.arange(1, config.horizon + 1),
        x=xs[0],
        u=rec["u"][0].astype(int),
        y_tilde=rec["y_tilde"][0],
        s=rec["s"][0].astype(int),
        xhat=rec["xhat"][0],
        sqerr=rec["sqerr"][0],
        En=rec["En"][0].astype(int),
        Ep=rec["Ep"][0].astype(int),
        final_En=int(en[0]),
        final_Ep=int(ep[0]),
    )


def simulate_batch(config: EpisodeConfig, table: DpTable, chunk=10_000, workers=1) -> BatchResult:
    """Roll out ``config.episodes`` episodes; results are ordered by episode index."""
    _check(config, table)
    bounds = [(lo, min(lo + chunk, config.episodes)) for lo in range(0, config.episodes, chunk)]

    def work(span):
        xs, vs = _draw(config, range(*span))
        rec, en, ep = _rollout(table, xs, vs, config.power)
        return rec["sqerr"].sum(axis=1), en, ep

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    return BatchResult(
        costs=np.concatenate([p[0] for p in parts]),
        final_En=np.concatenate([p[1] for p in parts]),
        final_Ep=np.concatenate([p[2] for p in parts]),
    )


def monte_carlo_cost(config: EpisodeConfig, table: DpTable, workers=1):
    """(sample mean, standard error) of the episode cost."""
    res = simulate_batch(config, table, workers=workers)
    return res.mean, res.std_error
