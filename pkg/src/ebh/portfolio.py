"""Wealth-process evidence for assets with no positive expected return.

Each asset is held as a constant fraction of a unit bankroll, rebalanced every
period.  Final wealth is an e-value; the reciprocal of the running maximum is
a p-value.  Assets that stop trading contribute no evidence.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .core import EvidenceError, check_alpha
from .procedures import by, e_bh


@dataclass(frozen=True)
class PriceSeries:
    asset_id: str
    prices: tuple
    alive: bool = True
    rank: float = math.inf

    def __post_init__(self):
        p = tuple(float(v) for v in self.prices)
        if any(not (v > 0) or math.isinf(v) for v in p):
            raise EvidenceError(f"{self.asset_id}: prices must be positive and finite")
        object.__setattr__(self, "prices", p)


@dataclass(frozen=True)
class StrategyConfig:
    lambda_frac: float = 1.0
    alphas: tuple = (0.05, 0.10)
    universe_size: int | None = None

    def __post_init__(self):
        if not 0 <= self.lambda_frac <= 1:
            raise EvidenceError(f"lambda must lie in [0, 1], got {self.lambda_frac}")
        for a in self.alphas:
            check_alpha(a)
        if self.universe_size is not None and self.universe_size < 1:
            raise EvidenceError("universe size must be positive")


def growth_ratios(series) -> np.ndarray:
    prices = np.asarray(series.prices if isinstance(series, PriceSeries) else series, dtype=float)
    if prices.size < 2:
        raise EvidenceError("need at least two prices to form a growth ratio")
    if (prices <= 0).any():
        raise EvidenceError("prices must be positive")
    return prices[1:] / prices[:-1]


def wealth_process(growth, lambda_frac: float) -> np.ndarray:
    """W_0 = 1, W_t = prod_{j<=t} (1 - lam + lam X_j)."""
    if not 0 <= lambda_frac <= 1:
        raise EvidenceError(f"lambda must lie in [0, 1], got {lambda_frac}")
    x = np.asarray(growth, dtype=float)
    if (x < 0).any() or np.isnan(x).any():
        raise EvidenceError("growth ratios must be nonnegative")
    return np.concatenate(([1.0], np.cumprod(1 - lambda_frac + lambda_frac * x)))


def evidence_from_wealth(w, alive: bool = True) -> tuple[float, float]:
    """(final wealth, 1 / running max); a dead asset gives (0, 1)."""
    if not alive:
        return 0.0, 1.0
    w = np.asarray(w, dtype=float)
    return float(w[-1]), float(1.0 / max(1.0, np.max(w)))


def asset_evidence(series: PriceSeries, lambda_frac: float) -> tuple[float, float]:
    if not series.alive or len(series.prices) < 2:
        return 0.0, 1.0
    return evidence_from_wealth(wealth_process(growth_ratios(series), lambda_frac), True)


@dataclass(frozen=True)
class Selection:
    method: str
    alpha: float
    universe: int
    selected: tuple = field(default=())

    @property
    def count(self) -> int:
        return len(self.selected)


def top_universe(series: list[PriceSeries], size: int | None) -> list[PriceSeries]:
    ordered = sorted(series, key=lambda s: (s.rank, s.asset_id))
    return ordered if size is None else ordered[:size]


def select_assets(series: list[PriceSeries], cfg: StrategyConfig) -> list[Selection]:
    """e-BH on final wealth and BY on running-max p-values over the top-ranked universe.

    K counts every asset in the universe, dead ones included.
    """
    universe = top_universe(series, cfg.universe_size)
    if not universe:
        raise EvidenceError("empty universe")
    ev = [asset_evidence(s, cfg.lambda_frac) for s in universe]
    e = np.array([v[0] for v in ev])
    p = np.array([v[1] for v in ev])
    ids = [s.asset_id for s in universe]
    K = len(universe)
    out = []
    for a in cfg.alphas:
        for method, outcome in (("eBH", e_bh(e, a)), ("BY", by(p, a))):
            out.append(Selection(method, a, K, tuple(ids[i] for i in outcome.rejected)))
    return out


def selection_table(series: list[PriceSeries], lambda_frac: float, alphas, universes) -> dict:
    """{(method, alpha): {universe label: Selection}} for each requested universe size."""
    table: dict = {}
    for u in universes:
        size = None if u in (None, "all") else int(u)
        label = "all" if size is None else str(size)
        for sel in select_assets(series, StrategyConfig(lambda_frac, tuple(alphas), size)):
            table.setdefault((sel.method, sel.alpha), {})[label] = sel
    return table


def read_prices_csv(path) -> list[PriceSeries]:
    """Columns asset_id, rank, then one price per period.

    An empty cell ends an asset's life; a price after an empty cell is an error.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or [c.strip().lower() for c in rows[0][:2]] != ["asset_id", "rank"]:
        raise EvidenceError(f"{path}: header must start with asset_id,rank")
    n_prices = len(rows[0]) - 2
    if n_prices < 1:
        raise EvidenceError(f"{path}: no price columns")
    out = []
    for line, row in enumerate(rows[1:], start=2):
        cells = [c.strip() for c in row[2:]] + [""] * (n_prices - len(row[2:]))
        if len(cells) > n_prices:
            raise EvidenceError(f"{path}:{line}: more cells than header columns")
        filled = [c != "" for c in cells]
        n_live = filled.index(False) if False in filled else n_prices
        if any(filled[n_live:]):
            raise EvidenceError(f"{path}:{line}: price after a missing month")
        if n_live == 0:
            raise EvidenceError(f"{path}:{line}: asset has no prices")
        try:
            prices = [float(c) for c in cells[:n_live]]
            rank = float(row[1])
        except ValueError as exc:
            raise EvidenceError(f"{path}:{line}: {exc}") from None
        out.append(PriceSeries(row[0].strip(), tuple(prices), n_live == n_prices, rank))
    return out
