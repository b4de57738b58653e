"""
Maximum-likelihood TDOA localization
Damped Gauss-Newton on the Mahalanobis cost, plus the synthetic
four-tetrahedra case study used to measure what outlier removal buys
"""

import logging
import math
from dataclasses import dataclass
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .errors import NumericError, ValidationError
from .geometry import PairIndex, SensorArray, TdoaSet, mean_tdoa_error, tdoa_jacobian, tdoa_vector
from .removal import ExplorationMode, RemovalConfig, remove_outliers
from .settings import Defaults
from .simharness import inject_noise, inject_outliers, map_trials, study_rng
from .stattests import CovarianceModel

logger = logging.getLogger(__name__)

# Iterates closer than this to a sensor are nudged along the previous step
SENSOR_SNAP = 1e-9
SENSOR_NUDGE = 1e-6


@dataclass(frozen=True)
class LocalizationConfig:
    """
    Args:
        initial_guess: Start point; the sensor centroid when None
        max_iterations: Gauss-Newton iteration cap
        gradient_tolerance: Convergence threshold on the cost gradient norm (1/m)
        damping: Initial Levenberg damping
        damping_factor: Multiplier applied to the damping on rejected or accepted steps
    """
    initial_guess: Optional[Tuple[float, float, float]] = None
    max_iterations: int = 200
    gradient_tolerance: float = 1e-8
    damping: float = 1e-3
    damping_factor: float = 10.0
    max_damping: float = 1e16

    def __post_init__(self):
        for name in ("gradient_tolerance", "damping", "max_damping"):
            if not getattr(self, name) > 0.0:
                raise ValidationError(f"must be > 0, got {getattr(self, name)}", field=name)
        if not self.damping_factor > 1.0:
            raise ValidationError(f"must be > 1, got {self.damping_factor}", field="damping_factor")
        if self.max_iterations < 1:
            raise ValidationError(f"must be >= 1, got {self.max_iterations}", field="max_iterations")
        if self.initial_guess is not None:
            guess = tuple(float(v) for v in self.initial_guess)
            if len(guess) != 3 or not all(math.isfinite(v) for v in guess):
                raise ValidationError(f"expected three finite coordinates, got {self.initial_guess}",
                                      field="initial_guess")
            object.__setattr__(self, "initial_guess", guess)


@dataclass
class LocalizationResult:
    position: np.ndarray
    final_cost: float
    iterations: int
    converged: bool
    gradient_norm: float

    def to_dict(self) -> dict:
        return {
            "position": [float(v) for v in self.position],
            "cost": self.final_cost,
            "iterations": self.iterations,
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
        }


class _WhitenedProblem:
    """Residuals and Jacobian premultiplied by the inverse Cholesky factor"""

    def __init__(self, tdoas: TdoaSet, array: SensorArray, cov: CovarianceModel):
        if not len(tdoas):
            raise ValidationError("measurement set is empty", field="pairs")
        tdoas.check_against(array)
        self.array = array
        self.pairs = tdoas.pairs()
        self.measured = tdoas.values_for(self.pairs)
        self.positions = np.array([array.pair_position(p) for p in self.pairs])
        try:
            self.factor = linalg.cholesky(cov.restricted(self.pairs), lower=True)
        except linalg.LinAlgError:
            raise NumericError("restricted covariance is singular")

    def residual(self, x: np.ndarray) -> np.ndarray:
        r = self.measured - tdoa_vector(x, self.array)[self.positions]
        return linalg.solve_triangular(self.factor, r, lower=True)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Derivative of the model TDOAs (the residual derivative is its negative)"""
        J = tdoa_jacobian(x, self.array, self.pairs)
        return linalg.solve_triangular(self.factor, J, lower=True)

    def cost(self, x: np.ndarray) -> float:
        r = self.residual(x)
        return float(r @ r)


def ml_cost(x, tdoas: TdoaSet, array: SensorArray, cov: CovarianceModel) -> float:
    """(tau_hat - tau(x))^T cov^-1 (tau_hat - tau(x)) over the pairs present"""
    return _WhitenedProblem(tdoas, array, cov).cost(np.asarray(x, dtype=float))


def localize(tdoas: TdoaSet, array: SensorArray, cov: CovarianceModel,
             config: Optional[LocalizationConfig] = None) -> LocalizationResult:
    """
    Minimize ml_cost by Levenberg-damped Gauss-Newton

    Under-determined input (fewer than 3 TDOAs, or a Jacobian of rank below
    3) returns the best iterate with converged=False.
    """
    config = config or LocalizationConfig()
    problem = _WhitenedProblem(tdoas, array, cov)
    x = np.array(config.initial_guess if config.initial_guess is not None else array.centroid, dtype=float)
    cost = problem.cost(x)
    damping = config.damping
    iterations = 0
    determined = len(problem.pairs) >= 3

    while determined and iterations < config.max_iterations:
        J = problem.jacobian(x)
        r = problem.residual(x)
        gradient = -2.0 * J.T @ r
        if np.linalg.norm(gradient) <= config.gradient_tolerance:
            break
        if np.linalg.matrix_rank(J) < 3:
            determined = False
            break
        iterations += 1

        normal = J.T @ J
        rhs = J.T @ r
        accepted = False
        while damping <= config.max_damping:
            step = np.linalg.solve(normal + damping * np.diag(np.diag(normal)), rhs)
            candidate = x + step
            if np.min(np.linalg.norm(array.positions - candidate, axis=1)) < SENSOR_SNAP:
                candidate = candidate + SENSOR_NUDGE * step / np.linalg.norm(step)
            candidate_cost = problem.cost(candidate)
            if candidate_cost < cost:
                x, cost = candidate, candidate_cost
                damping /= config.damping_factor
                accepted = True
                break
            damping *= config.damping_factor
        if not accepted:
            # No descent left at working precision
            break

    gradient_norm = float(np.linalg.norm(2.0 * problem.jacobian(x).T @ problem.residual(x)))
    converged = determined and gradient_norm <= config.gradient_tolerance
    if not converged:
        logger.warning("Localization did not converge after %d iteration(s), gradient norm %.3g",
                       iterations, gradient_norm)
    return LocalizationResult(x, cost, iterations, converged, gradient_norm)


# Case study

def tetrahedra_layout(side: float = Defaults.TETRAHEDRON_SIDE,
                      volume: Tuple[float, float, float] = Defaults.CASE_STUDY_VOLUME
                      ) -> Tuple[SensorArray, List[PairIndex]]:
    """
    Four regular tetrahedra centered at alternating corners of the volume

    Returns the 16-sensor array and its intra-array pairs (6 per tetrahedron).
    """
    L, W, H = volume
    corners = [(0.0, 0.0, 0.0), (L, W, 0.0), (L, 0.0, H), (0.0, W, H)]
    unit = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    unit *= side / (2.0 * math.sqrt(2.0))
    positions = np.vstack([np.asarray(c) + unit for c in corners])
    pairs = [PairIndex(4 * a + j, 4 * a + i) for a in range(4) for i in range(4) for j in range(i + 1, 4)]
    return SensorArray(positions, name="tetrahedra"), pairs


def _sample_in_volume(array: SensorArray, volume: Tuple[float, float, float],
                      rng: np.random.Generator) -> np.ndarray:
    while True:
        point = rng.random(3) * np.asarray(volume)
        if np.min(np.linalg.norm(array.positions - point, axis=1)) >= Defaults.SENSOR_CLEARANCE:
            return point


@dataclass
class StudyRow:
    mode: ExplorationMode
    assumed_sigma: float
    rmse_raw: float
    rmse_filtered: float
    median_raw: float
    median_filtered: float
    improved_fraction: float
    me_raw: float
    me_filtered: Optional[float]
    mean_removed: float
    trials: int


def _study_trial(trial: int, array: SensorArray, pairs: Sequence[PairIndex], sigma: float, Z: int,
                 modes: Sequence[ExplorationMode], seed: int, assumed: Sequence[float],
                 alpha: float, exclusion: float, volume, config: LocalizationConfig) -> Dict:
    rng = study_rng(seed, trial)
    source = _sample_in_volume(array, volume, rng)
    clean = TdoaSet.from_vector(array, tdoa_vector(source, array), mask=pairs)
    noisy = inject_noise(clean, sigma, rng)
    measured, _ = inject_outliers(noisy, clean, Z, sigma, alpha, rng, array, exclusion=exclusion)

    # Isotropic weights do not move the raw minimum, so one raw fit serves every assumed sigma
    raw = localize(measured, array, CovarianceModel.isotropic(sigma), config)
    out = {"raw_error": float(np.linalg.norm(raw.position - source)),
           "me_raw": mean_tdoa_error(measured, clean)}
    for s in assumed:
        cov = CovarianceModel.isotropic(s)
        for mode in modes:
            report = remove_outliers(measured, array, RemovalConfig(alpha=alpha, mode=mode, covariance=cov))
            survivors = report.survivors
            fit = localize(survivors, array, cov, config) if len(survivors) else raw
            out[(mode, s)] = (float(np.linalg.norm(fit.position - source)),
                              mean_tdoa_error(survivors, clean) if len(survivors) else None,
                              len(report.removed_pairs()))
    return out


def run_localization_study(trials: int, sigma: float = Defaults.SIGMA, Z: int = 3,
                           modes: Sequence[ExplorationMode] = (ExplorationMode.G3,),
                           seed: int = 0, assumed_sigmas: Optional[Sequence[float]] = None,
                           alpha: float = Defaults.ALPHA, exclusion_scale: float = 10.0,
                           config: Optional[LocalizationConfig] = None,
                           threads: Optional[int] = None) -> List[StudyRow]:
    """
    Localization error with and without outlier removal on the tetrahedra layout

    Args:
        trials: Number of random sources
        sigma: Simulated noise standard deviation (meters)
        Z: Gross outliers per trial, among the intra-array TDOAs
        modes: Exploration modes to compare
        seed: Root of the random streams
        assumed_sigmas: Sigmas given to the detector; defaults to the simulated one
        alpha: Significance level
        exclusion_scale: Outliers stay this many sigmas away from the truth
        config: Localization settings; the sensor centroid is the room center here
        threads: Worker processes (default from the environment)
    """
    if trials < 1:
        raise ValidationError(f"must be >= 1, got {trials}", field="trials")
    if not sigma > 0.0:
        raise ValidationError(f"must be > 0, got {sigma}", field="sigma")
    assumed = list(assumed_sigmas) if assumed_sigmas else [sigma]
    modes = tuple(modes)
    array, pairs = tetrahedra_layout()
    volume = Defaults.CASE_STUDY_VOLUME
    config = config or LocalizationConfig()
    threads = threads or Defaults.thread_count()

    one = partial(_study_trial, array=array, pairs=pairs, sigma=sigma, Z=Z, modes=modes, seed=seed,
                  assumed=assumed, alpha=alpha, exclusion=exclusion_scale * sigma, volume=volume,
                  config=config)

    logger.info("Localization study: %d trials, Z = %d, %d mode(s)", trials, Z, len(modes))
    outcomes = map_trials(one, list(range(trials)), threads)

    raw_errors = np.array([o["raw_error"] for o in outcomes])
    me_raw = float(np.mean([o["me_raw"] for o in outcomes]))
    rows = []
    for s in assumed:
        for mode in modes:
            errors = np.array([o[(mode, s)][0] for o in outcomes])
            me_filtered = [o[(mode, s)][1] for o in outcomes if o[(mode, s)][1] is not None]
            rows.append(StudyRow(
                mode=mode,
                assumed_sigma=s,
                rmse_raw=float(np.sqrt(np.mean(raw_errors ** 2))),
                rmse_filtered=float(np.sqrt(np.mean(errors ** 2))),
                median_raw=float(np.median(raw_errors)),
                median_filtered=float(np.median(errors)),
                improved_fraction=float(np.mean(errors < raw_errors)),
                me_raw=me_raw,
                me_filtered=float(np.mean(me_filtered)) if me_filtered else None,
                mean_removed=float(np.mean([o[(mode, s)][2] for o in outcomes])),
                trials=trials,
            ))
    return rows
