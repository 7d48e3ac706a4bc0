"""Shared types and conversions between p-values and e-values.

Evidence is carried around as an :class:`EvidenceVector`, an immutable
numpy array tagged with its kind.  Procedures accept either an
``EvidenceVector`` or a plain array-like (interpreted as the kind the
procedure expects).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import special


class EvidenceError(ValueError):
    """Invalid evidence, level or parameter."""


class KindMismatchError(EvidenceError):
    """An e-value vector was given where p-values were expected, or vice versa."""


class Kind(str, Enum):
    EVALUES = "e"
    PVALUES = "p"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EvidenceVector:
    """K e-values in [0, inf] or K p-values in [0, 1]."""

    values: np.ndarray
    kind: Kind

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if values.ndim != 1:
            raise EvidenceError("evidence must be one-dimensional")
        if values.size < 1:
            raise EvidenceError("evidence must contain at least one value")
        if np.isnan(values).any():
            raise EvidenceError("evidence contains NaN")
        kind = Kind(self.kind)
        if kind is Kind.EVALUES:
            if (values < 0).any():
                raise EvidenceError("e-values must be nonnegative")
        else:
            if (values < 0).any() or (values > 1).any():
                raise EvidenceError("p-values must lie in [0, 1]")
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "kind", kind)

    @classmethod
    def evalues(cls, values) -> "EvidenceVector":
        return cls(values, Kind.EVALUES)

    @classmethod
    def pvalues(cls, values) -> "EvidenceVector":
        return cls(values, Kind.PVALUES)

    def __len__(self) -> int:
        return self.values.size

    def __iter__(self):
        return iter(self.values)

    def __eq__(self, other):
        if not isinstance(other, EvidenceVector):
            return NotImplemented
        return self.kind is other.kind and np.array_equal(self.values, other.values)

    @property
    def K(self) -> int:
        return self.values.size


def as_evidence(x, kind: Kind) -> np.ndarray:
    """Validate ``x`` as evidence of ``kind`` and return its values."""
    if isinstance(x, EvidenceVector):
        if x.kind is not kind:
            raise KindMismatchError(f"expected {kind.name.lower()}, got {x.kind.name.lower()}")
        return x.values
    return EvidenceVector(x, kind).values


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0 < alpha < 1:
        raise EvidenceError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


@dataclass(frozen=True, eq=False)
class Weights:
    """Nonnegative hypothesis weights summing to K."""

    w: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if w.ndim != 1 or w.size < 1:
            raise EvidenceError("weights must be a nonempty 1-d sequence")
        if not np.isfinite(w).all() or (w < 0).any():
            raise EvidenceError("weights must be finite and nonnegative")
        if not math.isclose(w.sum(), w.size, rel_tol=1e-9):
            raise EvidenceError(f"weights must sum to K={w.size}, got {w.sum()!r}")
        object.__setattr__(self, "w", _readonly(w))

    def __len__(self) -> int:
        return self.w.size


def truncation_grid(K: int) -> np.ndarray:
    """The grid {K/k : k = 1..K}, sorted descending from K to 1."""
    K = _check_K(K)
    return K / np.arange(1, K + 1)


def _check_K(K) -> int:
    if isinstance(K, bool) or int(K) != K or K < 1:
        raise EvidenceError(f"K must be a positive integer, got {K!r}")
    return int(K)


def truncate(x, K: int):
    """Round ``x`` down to the largest value in {0} U {K/k : k = 1..K}.

    Works elementwise on arrays; ``truncate(inf, K) == K``.
    """
    K = _check_K(K)
    arr = np.asarray(x, dtype=float)
    if np.isnan(arr).any() or (arr < 0).any():
        raise EvidenceError("truncate requires nonnegative, non-NaN input")
    with np.errstate(divide="ignore", over="ignore"):
        k = np.maximum(np.ceil(K / arr), 1.0)
        # K/x is rounded, so ceil can land one cell off in either direction
        k = np.where((k > 1) & (K / (k - 1) <= arr), k - 1, k)
        k = np.where(K / k > arr, k + 1, k)
        out = np.where(arr >= 1, K / k, 0.0)
    out = np.where(np.isposinf(arr), float(K), out)
    return out if out.ndim else float(out)


def harmonic_sum(K: int) -> float:
    """Partial harmonic sum 1 + 1/2 + ... + 1/K."""
    K = _check_K(K)
    if K <= 2000:
        return float(sum(Fraction(1, k) for k in range(1, K + 1)))
    return float(math.fsum(1.0 / k for k in range(1, K + 1)))


def e_to_p(e) -> EvidenceVector:
    """Convert e-values to p-values by reciprocal, clamped at 1."""
    values = as_evidence(e, Kind.EVALUES)
    with np.errstate(divide="ignore"):
        p = np.minimum(1.0, 1.0 / values)
    return EvidenceVector.pvalues(p)


def norm_cdf(x):
    """Standard Gaussian cdf."""
    return special.ndtr(x)


def norm_sf(x):
    return special.ndtr(-np.asarray(x, dtype=float))


# --- calibrators -----------------------------------------------------------

_QUAD_POINTS = 100_000
_QUAD_LOG_FLOOR = -200.0


def calibrator_integral(f: Callable[[np.ndarray], np.ndarray], n: int = _QUAD_POINTS) -> float:
    """Integral of ``f`` over [0, 1] for functions with an integrable pole at 0.

    Midpoint rule in u = log p on [-200, 0]; the mass below e^-200 is
    extrapolated from the local power-law slope at the floor.
    """
    edges = np.linspace(_QUAD_LOG_FLOOR, 0.0, n + 1)
    h = edges[1] - edges[0]
    mid = 0.5 * (edges[:-1] + edges[1:])
    with np.errstate(over="ignore", invalid="ignore"):
        g = np.asarray(f(np.exp(mid)), dtype=float) * np.exp(mid)
    if not np.isfinite(g).all():
        return math.inf
    body = math.fsum(g * h)
    tail = 0.0
    if g[0] > 0 and g[1] > 0:
        slope = (math.log(g[1]) - math.log(g[0])) / h
        if slope <= 0:
            return math.inf
        tail = g[0] * math.exp(-slope * h / 2) / slope
    return body + tail


class Calibrator:
    """Decreasing map f on [0, 1] with unit integral, turning p-values into e-values."""

    name = "calibrator"

    def __call__(self, p):
        raise NotImplementedError

    def validate(self, tol: float = 1e-6) -> None:
        grid = np.linspace(0.0, 1.0, 2001)[1:]
        vals = np.asarray(self(grid), dtype=float)
        if (np.diff(vals) > 1e-12 * np.maximum(1.0, np.abs(vals[:-1]))).any():
            raise EvidenceError(f"{self.name} is not decreasing on [0, 1]")
        integral = calibrator_integral(self)
        if not abs(integral - 1.0) <= tol:
            raise EvidenceError(f"{self.name} integrates to {integral!r}, not 1")


@dataclass(frozen=True)
class PowerCalibrator(Calibrator):
    """f(p) = lam * p**(lam - 1) for lam in (0, 1)."""

    lam: float

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise EvidenceError(f"lambda must lie in (0, 1), got {self.lam}")
        self.validate()

    @property
    def name(self):
        return f"power(lambda={self.lam})"

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        with np.errstate(divide="ignore"):
            out = self.lam * np.power(p, self.lam - 1.0)
        return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class TableCalibrator(Calibrator):
    """Piecewise-linear calibrator through user-supplied points (p_i, f_i)."""

    p: Sequence[float]
    f: Sequence[float]
    name: str = field(default="table")

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        f = np.asarray(self.f, dtype=float)
        if p.shape != f.shape or p.ndim != 1 or p.size < 2:
            raise EvidenceError("calibrator table needs matching 1-d p and f arrays")
        if (np.diff(p) <= 0).any() or p[0] < 0 or p[-1] > 1:
            raise EvidenceError("table p grid must be strictly increasing within [0, 1]")
        if (np.diff(f) > 0).any() or (f < 0).any() or not np.isfinite(f).all():
            raise EvidenceError("table values must be finite, nonnegative and nonincreasing")
        object.__setattr__(self, "p", _readonly(p))
        object.__setattr__(self, "f", _readonly(f))
        self.validate()

    def __call__(self, p):
        out = np.interp(np.asarray(p, dtype=float), self.p, self.f)
        return out if out.ndim else float(out)


def calibrate_p_to_e(p, calibrator: Calibrator) -> EvidenceVector:
    """Apply ``calibrator`` to each p-value; f(0) may be infinite."""
    values = as_evidence(p, Kind.PVALUES)
    if not isinstance(calibrator, Calibrator):
        raise EvidenceError("calibrator must be a Calibrator instance")
    return EvidenceVector.evalues(np.asarray(calibrator(values), dtype=float))


# --- CSV I/O ---------------------------------------------------------------

def kind_from_path(path) -> Kind | None:
    name = Path(path).name.lower()
    if name.endswith(".evals.csv"):
        return Kind.EVALUES
    if name.endswith(".pvals.csv"):
        return Kind.PVALUES
    return None


def read_values_csv(path) -> np.ndarray:
    """Read a single-column CSV with header ``value``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [r for r in reader if r and not r[0].startswith("#")]
    if not rows or rows[0][0].strip().lower() != "value":
        raise EvidenceError(f"{path}: expected a header row 'value'")
    try:
        return np.array([float(r[0]) for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise EvidenceError(f"{path}: {exc}") from None


def read_evidence_csv(path, kind: Kind | str | None = None) -> EvidenceVector:
    kind = Kind(kind) if kind is not None else kind_from_path(path)
    if kind is None:
        raise EvidenceError(f"{path}: cannot infer evidence kind; name it *.evals.csv or *.pvals.csv")
    return EvidenceVector(read_values_csv(path), kind)


def write_evidence_csv(path, evidence: EvidenceVector) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value"])
        for v in evidence.values:
            writer.writerow([repr(float(v))])
