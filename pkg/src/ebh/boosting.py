"""Boosting factors for e-values with a known null distribution.

A boosting factor b >= 1 multiplies an e-value before e-BH.  It is chosen as
the largest b for which a criterion evaluated at the scale ``s = alpha * b``
stays at or below alpha:

=================  ===================================================
arbitrary, exact   E[T(sE)]                       (depends on K)
arbitrary, cons.   E[sE 1{sE >= 1}]
PRDS, exact        max_{x in K/k} x P(sE >= x)    (depends on K)
PRDS, cons.        sup_{x >= 1} x P(sE >= x)
=================  ===================================================

T is the truncation onto {0} U {K/k}.  Every criterion only needs the null
survival function P(E >= t), which each :class:`NullModel` provides.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import optimize, special

from .core import EvidenceError, EvidenceVector, Kind, as_evidence, check_alpha, norm_cdf, norm_sf


class ConditionError(EvidenceError):
    """The quantile shortcut for PRDS boosting does not apply to this model."""


class Dependence(str, Enum):
    ARBITRARY = "ad"
    PRDS = "prds"


class Mode(str, Enum):
    EXACT = "exact"
    CONSERVATIVE = "conservative"


class Criterion(str, Enum):
    AD_EXACT = "AD_exact"
    AD_CONSERVATIVE = "AD_conservative"
    PRDS_EXACT = "PRDS_exact"
    PRDS_CONSERVATIVE = "PRDS_conservative"


# --- null models ------------------------------------------------------------

class NullModel:
    """Null distribution of a single e-value."""

    continuous = True

    def sf(self, t):
        """P(E >= t)."""
        raise NotImplementedError

    def quantile(self, q: float) -> float:
        """Left q-quantile inf{t : P(E <= t) >= q}."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def upper_support(self) -> float:
        """A point beyond which the tail mass is negligible (< 1e-12)."""
        return self.quantile(1 - 1e-12)

    def y_bar(self, s: float) -> float:
        raise NotImplementedError

    def z_bar(self, s: float) -> float:
        return z_bar_search(self, s)


def z_bar_search(model: NullModel, s: float, n_grid: int = 10_000) -> float:
    """sup_{x >= 1} x P(sE >= x) by a log grid on [1, max(s * support, 1e6)] plus ternary refinement.

    Approximate within grid resolution; used for models without a closed form.
    """
    hi = max(s * model.upper_support(), 1e6)
    xs = np.geomspace(1.0, hi, n_grid)
    vals = xs * model.sf(xs / s)
    i = int(np.argmax(vals))
    best = float(vals[i])
    lo_u = math.log(xs[max(i - 1, 0)])
    hi_u = math.log(xs[min(i + 1, n_grid - 1)])
    f = lambda u: math.exp(u) * float(model.sf(math.exp(u) / s))
    for _ in range(100):
        m1 = lo_u + (hi_u - lo_u) / 3
        m2 = hi_u - (hi_u - lo_u) / 3
        if f(m1) < f(m2):
            lo_u = m1
        else:
            hi_u = m2
    return max(best, f(0.5 * (lo_u + hi_u)))


@dataclass(frozen=True)
class CalibratorNull(NullModel):
    """E = lam * U**(lam - 1) with U uniform on [0, 1]."""

    lam: float

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise EvidenceError(f"lambda must lie in (0, 1), got {self.lam}")

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.minimum(1.0, (self.lam / t) ** (1.0 / (1.0 - self.lam)))
        return np.where(t <= self.lam, 1.0, out)

    def quantile(self, q):
        return self.lam * (1.0 - q) ** (self.lam - 1.0)

    def sample(self, rng, n):
        return self.lam * rng.random(n) ** (self.lam - 1.0)

    def y_bar(self, s):
        u = min(1.0, (self.lam * s) ** (1.0 / (1.0 - self.lam)))
        return s * u**self.lam

    def z_bar(self, s):
        ls = self.lam * s
        return ls ** (1.0 / (1.0 - self.lam)) if ls <= 1 else ls


@dataclass(frozen=True)
class LogNormalLR(NullModel):
    """Gaussian likelihood ratio E = exp(delta X - delta^2 / 2), X standard normal."""

    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise EvidenceError(f"delta must be positive, got {self.delta}")

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            z = (np.log(t) + self.delta**2 / 2) / self.delta
        return norm_sf(z)

    def quantile(self, q):
        return math.exp(self.delta * special.ndtri(q) - self.delta**2 / 2)

    def sample(self, rng, n):
        return np.exp(self.delta * rng.standard_normal(n) - self.delta**2 / 2)

    def y_bar(self, s):
        return s * float(norm_cdf(self.delta / 2 + math.log(s) / self.delta))

    def z_bar(self, s):
        # maximise u + log Phi(a - u / delta) over u = log x >= 0; the objective is concave
        d = self.delta
        a = math.log(s) / d - d / 2
        mills = lambda w: -0.5 * w * w - 0.5 * math.log(2 * math.pi) - special.log_ndtr(w) - math.log(d)
        w_star = optimize.brentq(mills, -60.0, 60.0, xtol=1e-14)
        u = max(0.0, d * (a - w_star))
        return math.exp(u + special.log_ndtr(a - u / d))


class EmpiricalNull(NullModel):
    """Null distribution given by samples of the e-value."""

    continuous = False

    def __init__(self, samples):
        x = np.sort(np.asarray(samples, dtype=float).ravel())
        if x.size == 0 or np.isnan(x).any() or (x < 0).any() or np.isinf(x).any():
            raise EvidenceError("empirical null needs finite, nonnegative samples")
        x.setflags(write=False)
        self.samples = x
        mean = float(x.mean())
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
        if mean > 1 + 3 * se:
            warnings.warn(f"empirical null mean {mean:.4g} exceeds 1 by more than 3 SE", stacklevel=2)

    def __repr__(self):
        return f"EmpiricalNull(n={self.samples.size})"

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        n = self.samples.size
        return (n - np.searchsorted(self.samples, t, side="left")) / n

    def quantile(self, q):
        return float(np.quantile(self.samples, q, method="inverted_cdf"))

    def upper_support(self):
        return float(self.samples[-1])

    def sample(self, rng, n):
        return rng.choice(self.samples, size=n, replace=True)

    def y_bar(self, s):
        v = s * self.samples
        return float(np.where(v >= 1, v, 0.0).mean())

    def z_bar(self, s):
        v = s * self.samples
        n = v.size
        start = np.searchsorted(v, 1.0, side="left")
        if start == n:
            return 0.0
        # x P(sE >= x) peaks at an atom or at x = 1
        xs = v[start:]
        counts = n - np.searchsorted(v, xs, side="left")
        return float(max(np.max(xs * counts / n), (n - start) / n))


def parse_model(text: str) -> NullModel:
    """Parse ``calibrator:LAMBDA``, ``lognormal-lr:DELTA`` or ``empirical:FILE``."""
    from .core import read_values_csv

    kind, _, arg = text.partition(":")
    if not arg:
        raise EvidenceError(f"model {text!r} needs a parameter, e.g. calibrator:0.5")
    kind = kind.strip().lower()
    if kind == "calibrator":
        return CalibratorNull(float(arg))
    if kind in ("lognormal-lr", "lognormal"):
        return LogNormalLR(float(arg))
    if kind == "empirical":
        return EmpiricalNull(read_values_csv(arg))
    raise EvidenceError(f"unknown model family {kind!r}")


# --- criteria ---------------------------------------------------------------

def _scale(alpha, b):
    alpha = check_alpha(alpha)
    if not b >= 1:
        raise EvidenceError(f"boosting factor must be >= 1, got {b}")
    return alpha * b


def y_bar(model: NullModel, alpha: float, b: float) -> float:
    """E[alpha b E 1{alpha b E >= 1}], the K-free bound under arbitrary dependence."""
    return float(model.y_bar(_scale(alpha, b)))


def y_exact(model: NullModel, alpha: float, b: float, K: int) -> float:
    """E[T(alpha b E)] summed cell by cell over the truncation grid."""
    s = _scale(alpha, b)
    k = np.arange(1, K, dtype=float)
    tail = model.sf(K / k / s)
    return math.fsum(np.concatenate(([float(model.sf(1.0 / s))], K / (k * (k + 1)) * tail)))


def z_exact(model: NullModel, alpha: float, b: float, K: int) -> float:
    """max over x in {K/k} of x P(alpha b E >= x)."""
    s = _scale(alpha, b)
    x = K / np.arange(1, K + 1, dtype=float)
    return float(np.max(x * model.sf(x / s)))


def z_bar(model: NullModel, alpha: float, b: float) -> float:
    """sup_{x >= 1} x P(alpha b E >= x), the K-free bound under PRDS."""
    return float(model.z_bar(_scale(alpha, b)))


# --- solvers ------------------------------------------------------------------

@dataclass(frozen=True)
class BoostResult:
    b: float
    criterion: Criterion
    achieved_value: float
    alpha: float
    warning: str | None = None

    def to_dict(self) -> dict:
        return {
            "b": self.b,
            "criterion": self.criterion.value,
            "achieved_value": self.achieved_value,
            "alpha": self.alpha,
            "warning": self.warning,
        }


def _criterion(model, alpha, K, dependence: Dependence, mode: Mode):
    if mode is Mode.EXACT and K is None:
        raise EvidenceError("exact criteria need the number of hypotheses K")
    if dependence is Dependence.ARBITRARY:
        if mode is Mode.EXACT:
            return Criterion.AD_EXACT, lambda b: y_exact(model, alpha, b, K)
        return Criterion.AD_CONSERVATIVE, lambda b: y_bar(model, alpha, b)
    if mode is Mode.EXACT:
        return Criterion.PRDS_EXACT, lambda b: z_exact(model, alpha, b, K)
    return Criterion.PRDS_CONSERVATIVE, lambda b: z_bar(model, alpha, b)


_B_CAP = 1e15


def boost_factor(model: NullModel, alpha: float, K: int | None = None,
                 dependence="ad", mode=None, rtol: float = 1e-9) -> BoostResult:
    """Largest b >= 1 with criterion(b) <= alpha, by bisection on b.

    ``mode`` defaults to exact when K is given and conservative otherwise.
    """
    alpha = check_alpha(alpha)
    dependence = Dependence(dependence)
    mode = Mode(mode) if mode is not None else (Mode.EXACT if K is not None else Mode.CONSERVATIVE)
    if K is not None and (int(K) != K or K < 1):
        raise EvidenceError(f"K must be a positive integer, got {K!r}")
    criterion, crit = _criterion(model, alpha, K, dependence, mode)

    at_one = crit(1.0)
    if at_one > alpha:
        msg = f"criterion at b=1 is {at_one:.6g} > alpha; model is not a valid null e-value"
        warnings.warn(msg, stacklevel=2)
        return BoostResult(1.0, criterion, at_one, alpha, msg)

    lo, hi = 1.0, 10.0 / alpha
    while crit(hi) <= alpha:
        lo, hi = hi, hi * 10
        if hi > _B_CAP:
            msg = "criterion never exceeds alpha; boosting is unbounded for this model"
            return BoostResult(lo, criterion, crit(lo), alpha, msg)
    while hi / lo - 1 > rtol:
        mid = math.sqrt(lo * hi)
        if crit(mid) <= alpha:
            lo = mid
        else:
            hi = mid
    return BoostResult(lo, criterion, crit(lo), alpha)


def min_boost_factor(models, alpha: float, K: int | None = None, dependence="ad", mode=None) -> BoostResult:
    """Boosting factor valid for a composite null: the smallest over candidate models."""
    results = [boost_factor(m, alpha, K, dependence, mode) for m in models]
    if not results:
        raise EvidenceError("need at least one null model")
    return min(results, key=lambda r: r.b)


def tail_mass_decreasing(model: NullModel, alpha: float, n_grid: int = 10_000) -> bool:
    """Whether t -> t P(E >= t) is nonincreasing from the left (1 - alpha)-quantile on.

    Checked on a log grid up to the upper support.  For empirical models each
    point may exceed the running minimum by 3 binomial standard errors of the
    survival estimate.
    """
    alpha = check_alpha(alpha)
    if isinstance(model, CalibratorNull):
        return True
    q = model.quantile(1 - alpha)
    t_max = model.upper_support()
    lo = q if q > 0 else t_max * 1e-8
    if not t_max > lo:
        return True
    t = np.geomspace(lo, t_max, n_grid)
    S = model.sf(t)
    g = t * S
    if isinstance(model, EmpiricalNull):
        # every later point must stay below every earlier one, up to 3 SE on each side
        n = model.samples.size
        slack = 3 * t * np.sqrt(S * (1 - S) / n) + 3 * t / n
        return bool(np.all(g - slack <= np.minimum.accumulate(g + slack)))
    return bool(np.all(np.diff(g) <= 1e-12 * np.maximum(g[:-1], 1e-300)))



def boost_factor_quantile(model: NullModel, alpha: float) -> float:
    """b = 1 / (alpha q_{1-alpha}(E)), the best PRDS factor when t P(E >= t) decreases past q."""
    alpha = check_alpha(alpha)
    if not tail_mass_decreasing(model, alpha):
        raise ConditionError(
            f"t*P(E>=t) is not decreasing beyond the {1 - alpha:g}-quantile for {model!r}; "
            "use boost_factor(..., dependence='prds') instead"
        )
    q = model.quantile(1 - alpha)
    if not q > 0:
        raise ConditionError("the (1-alpha)-quantile is zero; no finite quantile boost")
    return max(1.0, 1.0 / (alpha * q))


def apply_boost(e, factors) -> EvidenceVector:
    """Boosted e-values b_k * e_k."""
    values = as_evidence(e, Kind.EVALUES)
    b = np.broadcast_to(np.asarray(factors, dtype=float), values.shape)
    if np.isnan(b).any() or (b < 1).any() or np.isinf(b).any():
        raise EvidenceError("boosting factors must be finite and >= 1")
    return EvidenceVector.evalues(values * b)
