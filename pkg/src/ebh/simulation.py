"""Seeded Monte-Carlo harnesses: ordered bandit testing and correlated z-tests.

Every trial draws from its own generator, seeded by ``(seed, trial)``, so a
study gives the same numbers whatever the trial order or worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .boosting import LogNormalLR, boost_factor
from .core import EvidenceError, check_alpha, harmonic_sum, norm_cdf
from .procedures import bh, cbh_level, e_bh

BANDIT_PROCEDURES = ("eBH", "BH", "BY", "cBH")
ZTEST_METHODS = ("BH", "eBH_PRDS", "BY", "eBH_AD", "base_eBH", "cBH")


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def _map_trials(fn, args, threads: int | None):
    if threads is None:
        threads = os.cpu_count() or 1
    if threads <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    chunk = max(1, len(args) // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, args, chunksize=chunk))


# --- e-processes --------------------------------------------------------------

def _nonneg(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if np.isnan(x).any() or (x < 0).any():
        raise EvidenceError("e-process inputs must be nonnegative")
    return x


def product_e_process(x) -> float:
    """prod_i x_i, with the empty product 1."""
    return float(np.prod(_nonneg(x)))


def ville_p_process(x) -> float:
    """1 / max_{j} prod_{i<=j} x_i, the running maximum including the starting value 1."""
    x = _nonneg(x)
    if x.size == 0:
        return 1.0
    peak = max(1.0, float(np.max(np.cumprod(x))))
    return 1.0 / peak


def eb_e_process(x, lam: float) -> float:
    """prod_i exp(lam (x_i - 1) - psi(lam) (x_i - 1)^2) with psi(lam) = -lam - log(1 - lam)."""
    if not 0 <= lam < 1:
        raise EvidenceError(f"lambda must lie in [0, 1), got {lam}")
    d = _nonneg(x) - 1.0
    psi = -lam - math.log1p(-lam)
    return float(math.exp(math.fsum(lam * d - psi * d * d)))


# --- bandit -------------------------------------------------------------------

@dataclass(frozen=True)
class BanditConfig:
    K: int = 500
    n: int = 50
    theta: float = 0.5
    mu: float = 1.0
    alpha: float = 0.05
    trials: int = 500
    seed: int = 0
    procedures: tuple = BANDIT_PROCEDURES

    def __post_init__(self):
        if self.K < 1 or self.n < 1 or self.trials < 1:
            raise EvidenceError("K, n and trials must be at least 1")
        if not 0 <= self.theta <= 1:
            raise EvidenceError(f"theta must lie in [0, 1], got {self.theta}")
        check_alpha(self.alpha)
        if not self.mu > 0:
            raise EvidenceError(f"mu must be positive, got {self.mu}")
        unknown = set(self.procedures) - set(BANDIT_PROCEDURES)
        if unknown:
            raise EvidenceError(f"unknown procedures {sorted(unknown)}")


@dataclass(frozen=True)
class TrialMetrics:
    R: float
    B_pct: float
    TD: float
    FDP_pct: float

    @classmethod
    def from_counts(cls, rejected: np.ndarray, nonnull: np.ndarray, pulls: np.ndarray, n: int):
        R = int(rejected.size)
        TD = int(nonnull[rejected].sum())
        budget = n * pulls.size
        return cls(R, 100.0 * (budget - int(pulls.sum())) / budget, TD, 100.0 * (R - TD) / max(R, 1))


@dataclass(frozen=True)
class BanditDraw:
    """One trial's ground truth and the full K x n table of e-process values."""

    nonnull: np.ndarray
    e_path: np.ndarray

    @property
    def p_path(self) -> np.ndarray:
        return 1.0 / np.maximum(1.0, np.maximum.accumulate(self.e_path, axis=1))


def draw_bandit(cfg: BanditConfig, rng: np.random.Generator) -> BanditDraw:
    k = np.arange(1, cfg.K + 1)
    nonnull = rng.random(cfg.K) < cfg.theta * (cfg.K - k + 1) / (cfg.K + 1)
    signal = rng.exponential(cfg.mu, cfg.K)
    z = rng.standard_normal((cfg.K, cfg.n))
    log_x = z + (signal * nonnull)[:, None] - 0.5
    return BanditDraw(nonnull, np.exp(np.cumsum(log_x, axis=1)))


def _e_entry_threshold(done_desc: np.ndarray, K: int, level: float) -> float:
    """Smallest e-value that e-BH would reject when added to the finalized values.

    Pending arms hold e = 1 and are never rejected at level < 1.
    """
    m = np.arange(1, done_desc.size + 1)
    ok = np.flatnonzero(done_desc >= K / (level * (m + 1)))
    kmax = 1 + (int(ok[-1]) + 1 if ok.size else 0)
    return K / (level * kmax)


def _p_entry_threshold(done_asc: np.ndarray, K: int, level: float) -> float:
    """Largest p-value that BH at ``level`` would reject when added to the finalized values."""
    m = np.arange(1, done_asc.size + 1)
    ok = np.flatnonzero(done_asc <= level * (m + 1) / K)
    kmax = 1 + (int(ok[-1]) + 1 if ok.size else 0)
    return level * kmax / K


def run_adaptive(draw: BanditDraw, K: int, n: int, level: float, use_e: bool):
    """Pull arms in order, stopping each on a new discovery or at the budget.

    Returns the finalized evidence vector and the number of pulls per arm.
    A new discovery happens exactly when the current arm's value enters the
    rejection set, so it suffices to compare against the entry threshold
    implied by the arms already finished.
    """
    path = draw.e_path if use_e else draw.p_path
    final = np.ones(K)
    pulls = np.full(K, n, dtype=int)
    done: list[float] = []
    for k in range(K):
        row = path[k]
        if use_e:
            thr = _e_entry_threshold(np.sort(np.array(done))[::-1], K, level)
            hits = np.flatnonzero(row >= thr)
        else:
            thr = _p_entry_threshold(np.sort(np.array(done)), K, level)
            hits = np.flatnonzero(row <= thr)
        if hits.size:
            pulls[k] = int(hits[0]) + 1
        final[k] = row[pulls[k] - 1]
        done.append(final[k])
    return final, pulls


def _bandit_levels(cfg: BanditConfig) -> dict:
    return {
        "eBH": cfg.alpha,
        "BH": cfg.alpha,
        "BY": cfg.alpha / harmonic_sum(cfg.K),
        "cBH": cbh_level(cfg.alpha),
    }


def run_bandit_trial(cfg: BanditConfig, rng: np.random.Generator, procedure: str = "eBH") -> TrialMetrics:
    """One trial for a single procedure."""
    return _bandit_trial(cfg, draw_bandit(cfg, rng), (procedure,))[procedure]


def _bandit_trial(cfg: BanditConfig, draw: BanditDraw, procedures) -> dict:
    levels = _bandit_levels(cfg)
    out = {}
    for name in procedures:
        use_e = name == "eBH"
        final, pulls = run_adaptive(draw, cfg.K, cfg.n, levels[name], use_e)
        rejected = e_bh(final, levels[name]).rejected if use_e else bh(final, levels[name]).rejected
        out[name] = TrialMetrics.from_counts(rejected, draw.nonnull, pulls, cfg.n)
    return out


def _bandit_worker(args):
    cfg, trial = args
    return _bandit_trial(cfg, draw_bandit(cfg, trial_rng(cfg.seed, trial)), cfg.procedures)


@dataclass(frozen=True)
class StudyRow:
    name: str
    means: dict
    ses: dict
    fdr: float
    fdr_se: float
    trials: int


def _summarise(name: str, metrics: list[TrialMetrics]) -> StudyRow:
    arr = {f: np.array([getattr(m, f) for m in metrics], dtype=float) for f in ("R", "B_pct", "TD", "FDP_pct")}
    n = len(metrics)
    se = lambda a: float(a.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    fdp = arr["FDP_pct"] / 100
    return StudyRow(name, {f: float(a.mean()) for f, a in arr.items()}, {f: se(a) for f, a in arr.items()},
                    float(fdp.mean()), se(fdp), n)


def run_bandit_study(cfg: BanditConfig, trials: int | None = None, threads: int | None = 1) -> list[StudyRow]:
    """Average trial metrics per procedure; all procedures share each trial's draws."""
    cfg = replace(cfg, trials=trials) if trials is not None else cfg
    results = _map_trials(_bandit_worker, [(cfg, t) for t in range(cfg.trials)], threads)
    return [_summarise(p, [r[p] for r in results]) for p in cfg.procedures]


# --- correlated z-tests -------------------------------------------------------

class Correlation:
    EQUI = "equi"
    NEG_EXCHANGEABLE = "negexch"
    BANDED = "banded"


@dataclass(frozen=True)
class ZTestConfig:
    K: int = 1000
    K0: int = 800
    delta: float = -3.0
    correlation: str = Correlation.EQUI
    rho: float = 0.0
    alphas: tuple = (0.05,)
    trials: int = 1000
    seed: int = 0
    methods: tuple = ZTEST_METHODS
    ad_mode: str = "exact"
    prds_mode: str = "exact"

    def __post_init__(self):
        if self.K < 2 and self.correlation != Correlation.EQUI:
            raise EvidenceError("negative correlation structures need K >= 2")
        if not 0 <= self.K0 <= self.K or self.K < 1 or self.trials < 1:
            raise EvidenceError("need K >= 1, 0 <= K0 <= K and trials >= 1")
        if self.correlation == Correlation.EQUI and not 0 <= self.rho <= 1:
            raise EvidenceError(f"equicorrelation rho must lie in [0, 1], got {self.rho}")
        if self.correlation not in (Correlation.EQUI, Correlation.NEG_EXCHANGEABLE, Correlation.BANDED):
            raise EvidenceError(f"unknown correlation {self.correlation!r}")
        if self.delta == 0:
            raise EvidenceError("delta must be nonzero")
        for a in self.alphas:
            check_alpha(a)
        unknown = set(self.methods) - set(ZTEST_METHODS)
        if unknown:
            raise EvidenceError(f"unknown methods {sorted(unknown)}")

    @property
    def effective_rho(self) -> float:
        if self.correlation == Correlation.NEG_EXCHANGEABLE:
            return -1.0 / (self.K - 1)
        if self.correlation == Correlation.BANDED:
            return -0.5
        return self.rho


def sample_correlated_gaussians(cfg: ZTestConfig, rng: np.random.Generator) -> np.ndarray:
    """K unit-variance normals with the configured correlation; the first K - K0 are shifted by delta."""
    K = cfg.K
    if cfg.correlation == Correlation.EQUI:
        common = rng.standard_normal()
        x = math.sqrt(cfg.rho) * common + math.sqrt(1 - cfg.rho) * rng.standard_normal(K)
    elif cfg.correlation == Correlation.NEG_EXCHANGEABLE:
        w = rng.standard_normal(K)
        x = (w - w.mean()) * math.sqrt(K / (K - 1))
    else:
        # MA(1) with unit coefficient: adjacent correlation -1/2, zero beyond lag 1
        w = rng.standard_normal(K + 1)
        x = (w[:-1] - w[1:]) / math.sqrt(2)
    x[: K - cfg.K0] += cfg.delta
    return x


def ztest_boost_factors(cfg: ZTestConfig) -> dict:
    """Boosting factors per alpha for the arbitrary-dependence and PRDS variants."""
    model = LogNormalLR(abs(cfg.delta))
    out = {}
    for a in cfg.alphas:
        ad = boost_factor(model, a, cfg.K if cfg.ad_mode == "exact" else None, "ad", cfg.ad_mode).b
        prds = boost_factor(model, a, cfg.K if cfg.prds_mode == "exact" else None, "prds", cfg.prds_mode).b
        out[a] = {"AD": ad, "PRDS": prds}
    return out


def ztest_evidence(cfg: ZTestConfig, x: np.ndarray):
    """Lower-tail p-values and likelihood-ratio e-values for statistics ``x``."""
    d = cfg.delta
    sign = 1.0 if d < 0 else -1.0
    p = norm_cdf(sign * x)
    e = np.exp(d * x - d * d / 2)
    return p, e


def ztest_rejections(cfg: ZTestConfig, x: np.ndarray, factors: dict) -> dict:
    """Rejection index arrays keyed by (method, alpha)."""
    p, e = ztest_evidence(cfg, x)
    K = cfg.K
    out = {}
    for a in cfg.alphas:
        for m in cfg.methods:
            if m == "BH":
                r = bh(p, a)
            elif m == "BY":
                r = bh(p, a / harmonic_sum(K))
            elif m == "cBH":
                r = bh(p, cbh_level(a))
            elif m == "base_eBH":
                r = e_bh(e, a)
            elif m == "eBH_AD":
                r = e_bh(e * factors[a]["AD"], a)
            else:
                r = e_bh(e * factors[a]["PRDS"], a)
            out[(m, a)] = r.rejected
    return out


def _ztest_worker(args):
    cfg, factors, trial = args
    x = sample_correlated_gaussians(cfg, trial_rng(cfg.seed, trial))
    n_signal = cfg.K - cfg.K0
    out = {}
    for key, rej in ztest_rejections(cfg, x, factors).items():
        R = rej.size
        false = int(np.count_nonzero(rej >= n_signal))
        out[key] = (R, 100.0 * false / max(R, 1))
    return out


@dataclass(frozen=True)
class ZTestRow:
    method: str
    alpha: float
    rejections: float
    FDP_pct: float
    rejections_se: float
    fdr: float
    fdr_se: float
    trials: int
    boost: float | None = field(default=None)


def run_ztest_study(cfg: ZTestConfig, threads: int | None = 1) -> list[ZTestRow]:
    factors = ztest_boost_factors(cfg)
    results = _map_trials(_ztest_worker, [(cfg, factors, t) for t in range(cfg.trials)], threads)
    n = len(results)
    rows = []
    for a in cfg.alphas:
        for m in cfg.methods:
            R = np.array([r[(m, a)][0] for r in results], dtype=float)
            F = np.array([r[(m, a)][1] for r in results], dtype=float) / 100
            se = lambda v: float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
            boost = factors[a]["AD"] if m == "eBH_AD" else factors[a]["PRDS"] if m == "eBH_PRDS" else None
            rows.append(ZTestRow(m, a, float(R.mean()), 100 * float(F.mean()), se(R), float(F.mean()), se(F), n, boost))
    return rows
