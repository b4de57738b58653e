"""
Statistical tests on TDOA measurements
Chi-square special functions, mixture null laws, the p-values of the one,
two and three TDOA tests, Benjamini-Hochberg adjustment and Fisher
combination
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special, stats

from .errors import ValidationError
from .geometry import Interval, PairIndex, TripleGroup, check_covariance, pair_order
from .settings import Defaults

logger = logging.getLogger(__name__)


# Chi-square with one degree of freedom

def _check_statistic(x: float) -> float:
    x = float(x)
    if math.isnan(x) or x < 0.0:
        raise ValidationError(f"chi-square argument must be >= 0, got {x}")
    return x


def chi2_cdf_1dof(x: float) -> float:
    """P(1/2, x/2) = erf(sqrt(x/2))"""
    x = _check_statistic(x)
    return float(special.erf(math.sqrt(x / 2.0)))


def chi2_sf_1dof(x: float) -> float:
    """1 - chi2_cdf_1dof(x), accurate in the upper tail"""
    x = _check_statistic(x)
    return float(special.erfc(math.sqrt(x / 2.0)))


def _chi2_pdf_1dof(x: float) -> float:
    return math.exp(-x / 2.0) / math.sqrt(2.0 * math.pi * x)


def chi2_quantile_1dof(p: float) -> float:
    """
    Inverse of chi2_cdf_1dof on [0, 1)

    Bracketed root finding followed by two Newton steps. Above the median the
    root is taken on the survival function to keep tail resolution.
    """
    p = float(p)
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"probability must lie in [0, 1), got {p}")
    if p == 0.0:
        return 0.0

    upper_tail = p > 0.5
    target = 1.0 - p if upper_tail else p

    def residual(x: float) -> float:
        if upper_tail:
            return target - chi2_sf_1dof(x)
        return chi2_cdf_1dof(x) - target

    high = 1.0
    while residual(high) < 0.0:
        high *= 2.0
    x = optimize.brentq(residual, 0.0, high, xtol=1e-14, rtol=4 * np.finfo(float).eps)

    for _ in range(2):
        density = _chi2_pdf_1dof(x)
        if x <= 0.0 or density == 0.0:
            break
        x = max(x - residual(x) / density, 0.0)
    return x


# Null distributions

@dataclass(frozen=True)
class MixtureNull:
    """
    beta0 * chi2_0 + beta1 * chi2_1 + beta2 * chi2_2

    chi2_0 is the point mass at zero. The p-value leaves that atom out, so a
    zero statistic maps to beta1 + beta2.
    """
    beta0: float
    beta1: float
    beta2: float = 0.0

    def __post_init__(self):
        weights = (self.beta0, self.beta1, self.beta2)
        if any(w < 0.0 for w in weights):
            raise ValidationError(f"mixture weights must be nonnegative, got {weights}")
        if abs(sum(weights) - 1.0) > 1e-12:
            raise ValidationError(f"mixture weights must sum to 1, got {weights}")

    def pvalue(self, statistic: float) -> float:
        statistic = _check_statistic(statistic)
        value = self.beta1 * chi2_sf_1dof(statistic)
        if self.beta2:
            value += self.beta2 * math.exp(-statistic / 2.0)
        return value


HALF_CHI2_MIXTURE = MixtureNull(0.5, 0.5, 0.0)


class TestOutcome(NamedTuple):
    """Squared distance, its p-value and the decision at level alpha"""
    statistic: float
    pvalue: float
    reject: bool


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 0.5:
        raise ValidationError(f"alpha must lie in (0, 0.5), got {alpha}", field="alpha")
    return alpha


def g2_acceptance_radius(alpha: float) -> float:
    """Mahalanobis offset of the acceptance region for mixture p-values"""
    return math.sqrt(chi2_quantile_1dof(1.0 - 2.0 * _check_alpha(alpha)))


def g3_acceptance_radius(alpha: float) -> float:
    """Mahalanobis offset of the acceptance region for plain chi2_1 p-values"""
    return math.sqrt(chi2_quantile_1dof(1.0 - _check_alpha(alpha)))


def g1_test(tau_hat: float, d: float, sigma: float, alpha: float) -> Tuple[TestOutcome, Interval]:
    """
    Single-TDOA test against [-d, d]

    Args:
        tau_hat: Measured TDOA (meters)
        d: Distance between the two sensors
        sigma: Noise standard deviation of the TDOA
        alpha: Significance level in (0, 0.5)

    Returns:
        The outcome and the acceptance interval [-d - gamma, d + gamma]
    """
    if d <= 0.0:
        raise ValidationError(f"sensor distance must be > 0, got {d}")
    if sigma <= 0.0:
        raise ValidationError(f"sigma must be > 0, got {sigma}", field="sigma")
    alpha = _check_alpha(alpha)

    distance = max(abs(tau_hat) - d, 0.0) / sigma
    statistic = distance * distance
    pvalue = HALF_CHI2_MIXTURE.pvalue(statistic)
    gamma = sigma * g2_acceptance_radius(alpha)
    return TestOutcome(statistic, pvalue, pvalue <= alpha), Interval(-d - gamma, d + gamma)


def g2_pvalue(f: float) -> float:
    """p-value of a simplified shared-sensor distance: (1 - F(f^2)) / 2"""
    if f < 0.0:
        raise ValidationError(f"distance must be >= 0, got {f}")
    return HALF_CHI2_MIXTURE.pvalue(f * f)


def g3_pvalue(d: float) -> float:
    """p-value of a zero-sum plane distance: 1 - F(d^2)"""
    if d < 0.0:
        raise ValidationError(f"distance must be >= 0, got {d}")
    return chi2_sf_1dof(d * d)


# Noise covariance

class CovarianceForm(Enum):
    ISOTROPIC = "isotropic"
    DIAGONAL = "diagonal"
    FULL = "full"


class CovarianceModel:
    """
    Noise covariance of the canonical TDOAs

    Sub-blocks of oriented groups are sign-conjugated, S cov S with S built
    from the group's sign flags.
    """

    def __init__(self, form: CovarianceForm, sigma: Optional[float] = None,
                 sigmas: Optional[Mapping[PairIndex, float]] = None,
                 matrix=None, pairs: Optional[Sequence[PairIndex]] = None):
        self.form = form
        self._sigma = None
        self._sigmas: Dict[PairIndex, float] = {}
        self._matrix = None
        self._index: Dict[PairIndex, int] = {}

        if form is CovarianceForm.ISOTROPIC:
            if sigma is None or not sigma > 0.0 or not math.isfinite(sigma):
                raise ValidationError(f"must be a finite value > 0, got {sigma}", field="sigma")
            self._sigma = float(sigma)
        elif form is CovarianceForm.DIAGONAL:
            for key, value in (sigmas or {}).items():
                pair = key if isinstance(key, PairIndex) else PairIndex.of(*key)
                if not value > 0.0 or not math.isfinite(value):
                    raise ValidationError(f"pair {tuple(pair)} has sigma {value}", field="sigma")
                self._sigmas[pair] = float(value)
            if not self._sigmas:
                raise ValidationError("diagonal covariance needs at least one pair", field="sigma")
        else:
            pairs = [p if isinstance(p, PairIndex) else PairIndex.of(*p) for p in (pairs or [])]
            if len(set(pairs)) != len(pairs):
                raise ValidationError("duplicate pair in covariance ordering", field="covariance")
            matrix = check_covariance(matrix, len(pairs))
            self._matrix = matrix.copy()
            self._matrix.setflags(write=False)
            self._index = {p: k for k, p in enumerate(pairs)}

    @classmethod
    def isotropic(cls, sigma: float) -> "CovarianceModel":
        return cls(CovarianceForm.ISOTROPIC, sigma=sigma)

    @classmethod
    def diagonal(cls, sigmas: Mapping[PairIndex, float]) -> "CovarianceModel":
        return cls(CovarianceForm.DIAGONAL, sigmas=sigmas)

    @classmethod
    def full(cls, matrix, pairs: Sequence[PairIndex]) -> "CovarianceModel":
        return cls(CovarianceForm.FULL, matrix=matrix, pairs=pairs)

    def _position(self, pair: PairIndex) -> int:
        try:
            return self._index[pair]
        except KeyError:
            raise ValidationError(f"no covariance entry for pair {tuple(pair)}", field="covariance")

    def sigma(self, pair: PairIndex) -> float:
        """Standard deviation of one canonical TDOA"""
        if self.form is CovarianceForm.ISOTROPIC:
            return self._sigma
        if self.form is CovarianceForm.DIAGONAL:
            try:
                return self._sigmas[pair]
            except KeyError:
                raise ValidationError(f"no sigma for pair {tuple(pair)}", field="sigma")
        k = self._position(pair)
        return math.sqrt(self._matrix[k, k])

    def block(self, members: Sequence[PairIndex], signs: Optional[Sequence[int]] = None) -> np.ndarray:
        """Covariance of the (optionally sign-flipped) members"""
        if self.form is not CovarianceForm.FULL:
            # Diagonal blocks are unchanged by sign flips
            return np.diag([self.sigma(p) ** 2 for p in members])
        idx = [self._position(p) for p in members]
        sub = self._matrix[np.ix_(idx, idx)]
        if signs is None:
            return sub.copy()
        s = np.asarray(signs, dtype=float)
        return sub * np.outer(s, s)

    def group_block(self, group: TripleGroup) -> np.ndarray:
        return self.block(group.members, group.signs)

    def restricted(self, pairs: Sequence[PairIndex]) -> np.ndarray:
        """Covariance of the listed canonical pairs"""
        return self.block(pairs)

    def scaled(self, factor: float) -> "CovarianceModel":
        """Model with every standard deviation multiplied by factor"""
        if not factor > 0.0:
            raise ValidationError(f"scale factor must be > 0, got {factor}")
        if self.form is CovarianceForm.ISOTROPIC:
            return CovarianceModel.isotropic(self._sigma * factor)
        if self.form is CovarianceForm.DIAGONAL:
            return CovarianceModel.diagonal({p: s * factor for p, s in self._sigmas.items()})
        pairs = sorted(self._index, key=self._index.get)
        return CovarianceModel.full(self._matrix * factor ** 2, pairs)

    def pairs(self) -> Optional[list]:
        """Pairs with an explicit entry, None when every pair is covered"""
        if self.form is CovarianceForm.ISOTROPIC:
            return None
        keys = self._sigmas if self.form is CovarianceForm.DIAGONAL else self._index
        return sorted(keys, key=pair_order)

    def __repr__(self) -> str:
        if self.form is CovarianceForm.ISOTROPIC:
            return f"<CovarianceModel isotropic sigma={self._sigma}>"
        return f"<CovarianceModel {self.form.value} pairs={len(self.pairs())}>"


# Multiplicity

class BHResult(NamedTuple):
    adjusted: np.ndarray
    minimum: float


class FisherResult(NamedTuple):
    statistic: float
    clamped: bool


def _check_pvalues(pvalues) -> np.ndarray:
    p = np.asarray(pvalues, dtype=float).ravel()
    if p.size == 0:
        raise ValidationError("cannot combine an empty list of p-values")
    if np.any(np.isnan(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ValidationError("p-values must lie in [0, 1]")
    return p


def bh_adjust(pvalues: Sequence[float]) -> BHResult:
    """
    Benjamini-Hochberg scaling of each p-value by M/m, m its rank

    No step-up cumulative minimum is applied. Adjusted values are capped at 1
    and returned in input order; ties keep input order. An adjusted value is
    never below its raw p-value.
    """
    p = _check_pvalues(pvalues)
    M = p.size
    order = np.argsort(p, kind="stable")
    ranks = np.arange(1, M + 1)
    adjusted = np.empty(M)
    adjusted[order] = np.maximum(p[order], np.minimum(p[order] * (M / ranks), 1.0))
    return BHResult(adjusted, float(adjusted.min()))


def fisher_combine(pvalues: Sequence[float], floor: float = Defaults.PVALUE_FLOOR) -> FisherResult:
    """Standardized Fisher combination T = -(2/M) sum(ln p), p clamped at floor"""
    p = _check_pvalues(pvalues)
    clamped = bool(np.any(p < floor))
    if clamped:
        logger.debug("Clamping %d p-value(s) to %g", int(np.count_nonzero(p < floor)), floor)
        p = np.maximum(p, floor)
    statistic, _ = stats.combine_pvalues(p, method="fisher")
    return FisherResult(float(statistic) / p.size, clamped)
