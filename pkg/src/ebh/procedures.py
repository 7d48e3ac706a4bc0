"""Rejection procedures for e-values and p-values.

All e-value procedures share one comparison, ``e >= K / (level * k)``, and all
p-value step-up procedures compare ``p <= level_k``.  Keeping a single
comparison per family means that procedures which coincide mathematically
(for example e-BH and the linear e-test, or BH and the reciprocal step-up)
also coincide bit-for-bit.

Indices are 0-based throughout the library; the CLI reports 1-based indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import optimize

from .core import (
    EvidenceError,
    Kind,
    Weights,
    as_evidence,
    check_alpha,
    harmonic_sum,
)


@dataclass(frozen=True, eq=False)
class TestOutcome:
    """Result of a rejection procedure.

    ``threshold`` is t_alpha for e-procedures (``inf`` when nothing is
    rejected) and the largest rejected p-value for p-procedures (``0.0`` when
    nothing is rejected).  ``level`` is the level the procedure actually ran
    at, which differs from ``alpha`` for BY, cBH and post-selection.
    """

    __test__ = False  # keep pytest from collecting this class

    rejected: np.ndarray
    k_star: int
    threshold: float
    alpha: float
    procedure_name: str
    K: int
    level: float | None = None

    def __post_init__(self):
        rejected = np.sort(np.asarray(self.rejected, dtype=int))
        rejected.setflags(write=False)
        object.__setattr__(self, "rejected", rejected)
        if self.level is None:
            object.__setattr__(self, "level", self.alpha)
        if rejected.size != self.k_star:
            raise AssertionError("rejected set size disagrees with k_star")

    @property
    def rejected_set(self) -> frozenset:
        return frozenset(int(i) for i in self.rejected)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.K, dtype=bool)
        m[self.rejected] = True
        return m

    def to_dict(self) -> dict:
        """JSON-ready summary with 1-based indices and ``None`` for infinite thresholds."""
        thr = self.threshold if math.isfinite(self.threshold) else None
        return {
            "procedure": self.procedure_name,
            "alpha": self.alpha,
            "level": self.level,
            "K": self.K,
            "k_star": self.k_star,
            "threshold": thr,
            "rejected": [int(i) + 1 for i in self.rejected],
        }


# --- base e-BH and its threshold form -------------------------------------

def _ebh_k_star(e: np.ndarray, level: float) -> int:
    K = e.size
    e_sorted = -np.sort(-e)
    ok = e_sorted >= K / (level * np.arange(1, K + 1))
    hits = np.flatnonzero(ok)
    return int(hits[-1]) + 1 if hits.size else 0


def _ebh(e: np.ndarray, level: float, alpha: float, name: str) -> TestOutcome:
    K = e.size
    k_star = _ebh_k_star(e, level)
    if k_star == 0:
        return TestOutcome(np.empty(0, int), 0, math.inf, alpha, name, K, level)
    t = K / (level * k_star)
    rejected = np.flatnonzero(e >= t)
    return TestOutcome(rejected, k_star, t, alpha, name, K, level)


def e_bh(e, alpha: float) -> TestOutcome:
    """Base e-BH: reject the k* largest e-values, k* = max{k : k e_[k] / K >= 1/alpha}.

    The rejected set is {k : e_k >= t} with ``t * k_star == K / alpha``.

    >>> e_bh([30, 5, 40], 0.1).rejected.tolist()
    [0, 2]
    """
    values = as_evidence(e, Kind.EVALUES)
    alpha = check_alpha(alpha)
    return _ebh(values, alpha, alpha, "e-BH")


def is_self_consistent(e, rejected: Iterable[int], alpha: float) -> bool:
    """True iff every rejected e-value is at least K / (alpha * |rejected|)."""
    values = as_evidence(e, Kind.EVALUES)
    alpha = check_alpha(alpha)
    idx = np.unique(np.asarray(list(rejected), dtype=int))
    if idx.size == 0:
        return True
    if idx.min() < 0 or idx.max() >= values.size:
        raise EvidenceError("rejected indices out of range")
    return bool(np.all(values[idx] >= values.size / (alpha * idx.size)))


# --- p-value step-up procedures -------------------------------------------

def _check_levels(levels, K: int) -> np.ndarray:
    levels = np.asarray(levels, dtype=float)
    if levels.shape != (K,):
        raise EvidenceError(f"need exactly K={K} levels, got shape {levels.shape}")
    if np.isnan(levels).any() or (levels < 0).any() or (levels > 1).any():
        raise EvidenceError("levels must lie in [0, 1]")
    if (np.diff(levels) < 0).any():
        raise EvidenceError("levels must be nondecreasing in k")
    return levels


def _step_up(p: np.ndarray, levels: np.ndarray, alpha: float, level: float, name: str) -> TestOutcome:
    K = p.size
    p_sorted = np.sort(p)
    hits = np.flatnonzero(p_sorted <= levels)
    if not hits.size:
        return TestOutcome(np.empty(0, int), 0, 0.0, alpha, name, K, level)
    k_star = int(hits[-1]) + 1
    t = float(p_sorted[k_star - 1])
    return TestOutcome(np.flatnonzero(p <= t), k_star, t, alpha, name, K, level)


def bh_levels(level: float, K: int) -> np.ndarray:
    return level * np.arange(1, K + 1) / K


def bh(p, alpha: float) -> TestOutcome:
    """Benjamini-Hochberg: reject the k* smallest p-values, k* = max{k : K p_(k) / k <= alpha}."""
    values = as_evidence(p, Kind.PVALUES)
    alpha = check_alpha(alpha)
    return _step_up(values, bh_levels(alpha, values.size), alpha, alpha, "BH")


def by(p, alpha: float) -> TestOutcome:
    """Benjamini-Yekutieli: BH at level alpha / (1 + 1/2 + ... + 1/K)."""
    values = as_evidence(p, Kind.PVALUES)
    alpha = check_alpha(alpha)
    level = alpha / harmonic_sum(values.size)
    return _step_up(values, bh_levels(level, values.size), alpha, level, "BY")


def cbh_level(alpha: float) -> float:
    """Deflated BH level a solving a * (1 + log(1/a)) = alpha."""
    alpha = check_alpha(alpha)
    lo = 1e-12
    g = lambda a: a * (1.0 - math.log(a)) - alpha
    if g(lo) > 0:
        raise EvidenceError(f"alpha={alpha} too small for the cBH level bracket")
    return float(optimize.bisect(g, lo, alpha, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500))


def cbh(p, alpha: float) -> TestOutcome:
    """BH run at :func:`cbh_level`, valid for self-consistent p-testing."""
    values = as_evidence(p, Kind.PVALUES)
    level = cbh_level(alpha)
    return _step_up(values, bh_levels(level, values.size), alpha, level, "cBH")


# --- transforms -----------------------------------------------------------

@dataclass(frozen=True)
class LinearE:
    """Increasing transform t -> alpha * t on e-values (recovers e-BH)."""

    alpha: float

    def phi_inverse_grid(self, K: int) -> np.ndarray:
        return K / (self.alpha * np.arange(1, K + 1))


@dataclass(frozen=True)
class ReciprocalP:
    """Decreasing transform p -> alpha / p (recovers BH)."""

    alpha: float

    def levels(self, K: int) -> np.ndarray:
        return bh_levels(self.alpha, K)

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            return self.alpha / p


@dataclass(frozen=True)
class PowerP:
    """Decreasing transform p -> theta * lam * p**(lam - 1)."""

    theta: float
    lam: float

    def __post_init__(self):
        if not 0 < self.lam < 1 or self.theta <= 0:
            raise EvidenceError("PowerP needs theta > 0 and lam in (0, 1)")

    def levels(self, K: int) -> np.ndarray:
        x = K / np.arange(1, K + 1)
        return np.clip((x / (self.theta * self.lam)) ** (1.0 / (self.lam - 1.0)), 0.0, 1.0)

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            return self.theta * self.lam * np.power(p, self.lam - 1.0)


@dataclass(frozen=True, eq=False)
class LevelTable:
    """General step-up given directly by its levels alpha_k = psi^{-1}(K/k)."""

    table: Sequence[float]

    def __post_init__(self):
        table = np.asarray(self.table, dtype=float)
        _check_levels(table, table.size)
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    def levels(self, K: int) -> np.ndarray:
        return _check_levels(self.table, K)

    def __call__(self, p):
        # Only psi's values on the grid K/k matter; evaluate the step version.
        p = np.asarray(p, dtype=float)
        K = self.table.size
        k_min = np.searchsorted(self.table, p, side="left") + 1
        with np.errstate(divide="ignore"):
            return np.where(k_min <= K, K / np.minimum(k_min, K), 0.0)


TransformSpec = LinearE | ReciprocalP | PowerP | LevelTable


def step_up_psi(p, spec) -> TestOutcome:
    """Step-up procedure rejecting the k* smallest p-values, k* = max{k : p_(k) <= psi^{-1}(K/k)}."""
    values = as_evidence(p, Kind.PVALUES)
    K = values.size
    levels = _check_levels(spec.levels(K), K)
    alpha = getattr(spec, "alpha", math.nan)
    return _step_up(values, levels, alpha, alpha, f"step-up[{type(spec).__name__}]")


def y_psi_from_levels(levels) -> float:
    """FDR bound under arbitrary dependence for the step-up with these levels."""
    levels = np.asarray(levels, dtype=float)
    _check_levels(levels, levels.size)
    K = levels.size
    j = np.arange(1, K, dtype=float)
    return math.fsum(np.concatenate(([levels[-1]], K / (j * (j + 1)) * levels[:-1])))


def z_psi_from_levels(levels) -> float:
    """FDR bound under PRDS for the step-up with these levels."""
    levels = np.asarray(levels, dtype=float)
    _check_levels(levels, levels.size)
    K = levels.size
    return float(np.max(K / np.arange(1, K + 1) * levels))


def e_test_phi(e, phi_inverse) -> TestOutcome:
    """Generalised e-test: k* = max{k : phi(e_[k]) >= K/k}.

    ``phi_inverse`` is either a :class:`LinearE` or the tabulation
    phi^{-1}(K/k) for k = 1..K (nonincreasing, +inf allowed).
    """
    values = as_evidence(e, Kind.EVALUES)
    K = values.size
    if isinstance(phi_inverse, LinearE):
        alpha = check_alpha(phi_inverse.alpha)
        grid = phi_inverse.phi_inverse_grid(K)
    else:
        alpha = math.nan
        grid = np.asarray(phi_inverse, dtype=float)
    if grid.shape != (K,) or np.isnan(grid).any() or (grid < 0).any():
        raise EvidenceError("phi^{-1} tabulation must hold K nonnegative values")
    if (grid[1:] > grid[:-1]).any():
        raise EvidenceError("phi^{-1}(K/k) must be nonincreasing in k")
    e_sorted = -np.sort(-values)
    hits = np.flatnonzero(e_sorted >= grid)
    if not hits.size:
        return TestOutcome(np.empty(0, int), 0, math.inf, alpha, "e-test[phi]", K)
    k_star = int(hits[-1]) + 1
    t = float(grid[k_star - 1])
    return TestOutcome(np.flatnonzero(values >= t), k_star, t, alpha, "e-test[phi]", K)


def weighted_e_bh(e, w, alpha: float) -> TestOutcome:
    """e-BH on the weighted e-values w_k * e_k (weights sum to K)."""
    values = as_evidence(e, Kind.EVALUES)
    alpha = check_alpha(alpha)
    w = w if isinstance(w, Weights) else Weights(w)
    if len(w) != values.size:
        raise EvidenceError("weights and e-values differ in length")
    with np.errstate(invalid="ignore"):
        weighted = np.where(w.w == 0, 0.0, w.w * values)
    return _ebh(weighted, alpha, alpha, "weighted e-BH")


def post_selection_e_bh(e, selected: Iterable[int], alpha: float) -> TestOutcome:
    """e-BH on a data-selected subset S at the amended level alpha * |S| / K."""
    values = as_evidence(e, Kind.EVALUES)
    alpha = check_alpha(alpha)
    sel = np.unique(np.asarray(list(selected), dtype=int))
    if sel.size == 0:
        raise EvidenceError("selection must be nonempty")
    if sel.min() < 0 or sel.max() >= values.size:
        raise EvidenceError("selected indices out of range")
    level = alpha * sel.size / values.size
    inner = _ebh(values[sel], level, level, "post-selection e-BH")
    return TestOutcome(sel[inner.rejected], inner.k_star, inner.threshold, alpha,
                       "post-selection e-BH", values.size, level)


# --- structured e-BH ------------------------------------------------------

@dataclass(frozen=True)
class StructureOracle:
    """Admissible rejection sets.

    ``admissible`` decides membership of a set of indices.  ``expansions``
    optionally restricts which indices may be added to a set during greedy
    growth (for instance graph neighbours); by default any index may be tried.
    """

    admissible: Callable[[frozenset], bool]
    expansions: Callable[[frozenset], Iterable[int]] | None = None
    name: str = "custom"

    @classmethod
    def all_subsets(cls) -> "StructureOracle":
        return cls(lambda s: True, name="all-subsets")

    @classmethod
    def empty_only(cls) -> "StructureOracle":
        return cls(lambda s: len(s) == 0, name="empty-only")

    @classmethod
    def contiguous(cls) -> "StructureOracle":
        """Contiguous runs of indices, i.e. connected subgraphs of a path."""

        def admissible(s):
            return not s or max(s) - min(s) + 1 == len(s)

        def expansions(s):
            return (min(s) - 1, max(s) + 1)

        return cls(admissible, expansions, name="contiguous")

    @classmethod
    def connected(cls, adjacency: dict) -> "StructureOracle":
        """Connected vertex sets of an undirected graph given as {node: neighbours}."""
        adj = {int(k): frozenset(int(v) for v in vs) for k, vs in adjacency.items()}

        def admissible(s):
            if not s:
                return True
            start = next(iter(s))
            seen, stack = {start}, [start]
            while stack:
                for nb in adj.get(stack.pop(), ()):
                    if nb in s and nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
            return len(seen) == len(s)

        def expansions(s):
            out = set()
            for v in s:
                out |= adj.get(v, frozenset())
            return out - s

        return cls(admissible, expansions, name="connected")


def structured_e_bh(e, alpha: float, oracle: StructureOracle) -> TestOutcome:
    """Greedy structured e-BH.

    From every seed (in descending e order) grow an admissible set one index at
    a time, always adding the largest e-value the oracle allows, and keep the
    largest set along the way in which every e-value is at least
    K / (alpha * |S|).  The result is self-consistent but not necessarily the
    largest admissible self-consistent set.
    """
    values = as_evidence(e, Kind.EVALUES)
    alpha = check_alpha(alpha)
    K = values.size
    order = np.argsort(-values, kind="stable")
    # an index below K/(alpha*K) can never sit in a self-consistent set
    useful = [int(i) for i in order if values[i] >= K / (alpha * K)]
    best: frozenset = frozenset()

    for seed in useful:
        if len(best) == len(useful):
            break
        S = frozenset([seed])
        if not oracle.admissible(S):
            continue
        min_e = values[seed]
        if min_e >= K / (alpha * 1) and len(best) < 1:
            best = S
        while True:
            allowed = None if oracle.expansions is None else set(oracle.expansions(S))
            nxt = None
            for j in useful:
                if j in S or (allowed is not None and j not in allowed):
                    continue
                if oracle.admissible(S | {j}):
                    nxt = j
                    break
            if nxt is None:
                break
            S = S | {nxt}
            min_e = min(min_e, values[nxt])
            if len(S) > len(best) and min_e >= K / (alpha * len(S)):
                best = S

    rejected = np.array(sorted(best), dtype=int)
    t = K / (alpha * rejected.size) if rejected.size else math.inf
    return TestOutcome(rejected, rejected.size, t, alpha, f"structured e-BH[{oracle.name}]", K)


# --- multiple transforms --------------------------------------------------

def multi_transform_test(p, specs: Sequence) -> TestOutcome:
    """Reject the k* hypotheses with the largest r_k = psi_k(p_k), k* = max{k : r_[k] >= K/k}.

    Unlike :func:`step_up_psi`, a smaller p-value is not necessarily rejected
    before a larger one.
    """
    values = as_evidence(p, Kind.PVALUES)
    K = values.size
    if len(specs) != K:
        raise EvidenceError(f"need one transform per hypothesis ({K}), got {len(specs)}")
    r = np.array([float(np.asarray(spec(pk))) for spec, pk in zip(specs, values)])
    r = np.where(np.isnan(r), 0.0, r)
    r_sorted = -np.sort(-r)
    hits = np.flatnonzero(r_sorted >= K / np.arange(1, K + 1))
    if not hits.size:
        return TestOutcome(np.empty(0, int), 0, math.inf, math.nan, "multi-transform", K)
    k_star = int(hits[-1]) + 1
    t = K / k_star
    return TestOutcome(np.flatnonzero(r >= t), k_star, t, math.nan, "multi-transform", K)


PROCEDURES = {
    "ebh": e_bh,
    "bh": bh,
    "by": by,
    "cbh": cbh,
}
