"""
Monte-Carlo harness
Preset arrays, noise and outlier injection, per-trial metrics and campaign
aggregation

Every random draw comes from a numpy PCG64 stream derived from the master
seed through SeedSequence spawn keys:

    position_rng(seed)              -> (0,)                  source positions
    trial_rng(seed, pos, run, Z)    -> (1, pos, run, Z)      noise and outliers
    study_rng(seed, trial)          -> (2, trial)            localization study

One trial realization is shared by all modes so mode comparisons are paired.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import partial
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from .errors import NumericError, ValidationError
from .geometry import PairIndex, SensorArray, TdoaSet, mean_tdoa_error, tdoa_map
from .removal import ExplorationMode, RemovalConfig, RemovalReport, remove_outliers
from .settings import Defaults
from .stattests import CovarianceModel, g2_acceptance_radius, g3_acceptance_radius

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class ArrayPreset(Enum):
    LINEAR7 = "linear7"
    CROSS7 = "cross7"

    @property
    def planar(self) -> bool:
        """Sources of the linear array are drawn in the plane z = 0"""
        return self is ArrayPreset.LINEAR7


def preset_array(preset: ArrayPreset) -> SensorArray:
    if preset is ArrayPreset.LINEAR7:
        s = Defaults.LINEAR7_SPACING
        return SensorArray([[(k - 3) * s, 0.0, 0.0] for k in range(7)], name=preset.value)
    a = Defaults.CROSS7_ARM
    return SensorArray([[0, 0, 0], [a, 0, 0], [-a, 0, 0], [0, a, 0],
                        [0, -a, 0], [0, 0, a], [0, 0, -a]], name=preset.value)


def _generator(master_seed: int, key: Tuple[int, ...]) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=key)))


def position_rng(master_seed: int) -> np.random.Generator:
    return _generator(master_seed, (0,))


def trial_rng(master_seed: int, position: int, run: int, Z: int) -> np.random.Generator:
    return _generator(master_seed, (1, position, run, Z))


def study_rng(master_seed: int, trial: int) -> np.random.Generator:
    return _generator(master_seed, (2, trial))


def sample_source(array: SensorArray, planar: bool, rng: np.random.Generator,
                  radius: float = Defaults.SOURCE_RADIUS,
                  clearance: float = Defaults.SENSOR_CLEARANCE) -> np.ndarray:
    """
    Uniform source in the disk (planar) or ball of the given radius around
    the array centroid, redrawn while closer than clearance to a sensor
    """
    center = array.centroid
    while True:
        if planar:
            r = radius * math.sqrt(rng.random())
            angle = rng.uniform(0.0, 2.0 * math.pi)
            point = center + np.array([r * math.cos(angle), r * math.sin(angle), 0.0])
        else:
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            point = center + direction * radius * rng.random() ** (1.0 / 3.0)
        if np.min(np.linalg.norm(array.positions - point, axis=1)) >= clearance:
            return point


def inject_noise(clean: TdoaSet, sigma: float, rng: np.random.Generator) -> TdoaSet:
    """Add independent N(0, sigma^2) to every TDOA"""
    if not sigma >= 0.0:
        raise ValidationError(f"must be >= 0, got {sigma}", field="sigma")
    pairs = clean.pairs()
    noise = rng.normal(0.0, sigma, size=len(pairs)) if sigma > 0.0 else np.zeros(len(pairs))
    return TdoaSet({p: clean[p] + e for p, e in zip(pairs, noise)})


def inject_outliers(noisy: TdoaSet, clean: TdoaSet, Z: int, sigma: float, alpha: float,
                    rng: np.random.Generator, array: SensorArray,
                    exclusion: Optional[float] = None) -> Tuple[TdoaSet, FrozenSet[PairIndex]]:
    """
    Replace Z distinct TDOAs by uniform draws over the single-TDOA acceptance
    interval [-d - g, d + g], minus a window around the noiseless value

    Here g = sigma * sqrt(F^-1(1 - 2 alpha)) is the acceptance offset of the
    mixture law, so outliers are never trivially caught by the single-TDOA
    pass.

    Args:
        noisy: Noisy measurements
        clean: Noiseless TDOAs of the same source
        Z: Number of outliers
        sigma: Noise standard deviation used for the support and the window
        alpha: Level fixing g and the window half-width sigma * sqrt(F^-1(1 - alpha))
        rng: Trial generator
        array: Sensor array
        exclusion: Explicit window half-width, overriding sigma and alpha

    Returns:
        The corrupted set and the ground-truth outlier pairs
    """
    pairs = noisy.pairs()
    if not 0 <= Z <= len(pairs):
        raise ValidationError(f"must lie in [0, {len(pairs)}], got {Z}", field="Z")
    gamma = exclusion if exclusion is not None else sigma * g3_acceptance_radius(alpha)
    offset = sigma * g2_acceptance_radius(alpha)

    updates = {}
    for k in sorted(rng.choice(len(pairs), size=Z, replace=False)):
        pair = pairs[int(k)]
        reach = array.distance(pair.j, pair.i) + offset
        truth = clean[pair]
        below = max(truth - gamma + reach, 0.0)
        above = max(reach - truth - gamma, 0.0)
        if below + above <= 0.0:
            raise NumericError(f"no room for an outlier on pair {tuple(pair)}: "
                               f"window {gamma} covers [-{reach}, {reach}]")
        u = rng.uniform(0.0, below + above)
        updates[pair] = -reach + u if u < below else truth + gamma + (u - below)
    return noisy.replaced(updates), frozenset(updates)


@dataclass
class TrialSpec:
    """One Monte-Carlo trial, identified by its stream key"""
    source: Tuple[float, float, float]
    Z: int
    sigma: float
    alpha: float
    modes: Tuple[ExplorationMode, ...]
    seed: int
    position: int = 0
    run: int = 0

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValidationError(f"must be > 0, got {self.sigma}", field="sigma")
        if not 0.0 < self.alpha < 0.5:
            raise ValidationError(f"must lie in (0, 0.5), got {self.alpha}", field="alpha")
        if self.Z < 0:
            raise ValidationError(f"must be >= 0, got {self.Z}", field="Z")


@dataclass
class TrialResult:
    """Confusion rates and mean errors of one trial; undefined rates are None"""
    tpr: Optional[float]
    tnr: Optional[float]
    me_raw: float
    me_filtered: Optional[float]
    removed_count: int
    iterations: int


def evaluate_trial(report: RemovalReport, truth: FrozenSet[PairIndex],
                   clean: TdoaSet, measured: TdoaSet) -> TrialResult:
    removed = set(report.removed_pairs())
    Z = len(truth)
    inliers = len(measured) - Z
    tpr = len(truth & removed) / Z if Z else None
    tnr = (inliers - len(removed - truth)) / inliers if inliers else None
    survivors = report.survivors
    return TrialResult(
        tpr=tpr,
        tnr=tnr,
        me_raw=mean_tdoa_error(measured, clean),
        me_filtered=mean_tdoa_error(survivors, clean) if len(survivors) else None,
        removed_count=len(removed),
        iterations=len(report.iterations),
    )


def run_trial(spec: TrialSpec, array: SensorArray) -> Dict[ExplorationMode, TrialResult]:
    """Draw one realization and run every requested mode on it"""
    rng = trial_rng(spec.seed, spec.position, spec.run, spec.Z)
    clean = tdoa_map(spec.source, array)
    noisy = inject_noise(clean, spec.sigma, rng)
    measured, truth = inject_outliers(noisy, clean, spec.Z, spec.sigma, spec.alpha, rng, array)

    cov = CovarianceModel.isotropic(spec.sigma)
    results = {}
    for mode in spec.modes:
        report = remove_outliers(measured, array, RemovalConfig(alpha=spec.alpha, mode=mode, covariance=cov))
        results[mode] = evaluate_trial(report, truth, clean, measured)
    return results


@dataclass
class CampaignRow:
    mode: ExplorationMode
    Z: int
    mean_tpr: Optional[float]
    se_tpr: Optional[float]
    mean_tnr: Optional[float]
    se_tnr: Optional[float]
    mean_me_raw: Optional[float]
    mean_me_filtered: Optional[float]
    trials: int


def map_trials(task: Callable[[T], R], items: Sequence[T], workers: int) -> List[R]:
    """
    Apply task to every item and return the results in item order

    Trials are CPU bound, so more than one worker means a process pool; task
    and items must then be picklable.
    """
    if workers <= 1 or len(items) <= 1:
        return [task(item) for item in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, items, chunksize=chunk))


def _mean_se(values: Sequence[Optional[float]]) -> Tuple[Optional[float], Optional[float]]:
    defined = np.array([v for v in values if v is not None], dtype=float)
    if defined.size == 0:
        return None, None
    if defined.size == 1:
        return float(defined[0]), None
    return float(defined.mean()), float(defined.std(ddof=1) / math.sqrt(defined.size))


def run_campaign(array: SensorArray, z_values: Sequence[int], runs: int, positions: int,
                 sigma: float, alpha: float, modes: Sequence[ExplorationMode], master_seed: int,
                 planar: Optional[bool] = None, threads: Optional[int] = None) -> List[CampaignRow]:
    """
    Monte-Carlo campaign, one aggregated row per (mode, Z)

    Args:
        array: Sensor array
        z_values: Outlier counts to sweep
        runs: Runs per source position
        positions: Number of random source positions
        sigma: Noise standard deviation (meters)
        alpha: Significance level
        modes: Exploration modes, evaluated on the same trials
        master_seed: Root of every random stream
        planar: Draw sources in the plane z = 0; by default, when every
            sensor lies on that plane
        threads: Worker processes (default from the environment)
    """
    if runs < 1 or positions < 1:
        raise ValidationError(f"runs and positions must be >= 1, got {runs} and {positions}")
    for Z in z_values:
        if not 0 <= Z <= array.q:
            raise ValidationError(f"must lie in [0, {array.q}], got {Z}", field="Z")
    modes = tuple(modes)
    z_values = list(dict.fromkeys(z_values))
    if planar is None:
        planar = bool(np.all(array.positions[:, 2] == 0.0))
    threads = threads or Defaults.thread_count()

    prng = position_rng(master_seed)
    sources = [tuple(sample_source(array, planar, prng)) for _ in range(positions)]
    specs = [TrialSpec(sources[p], Z, sigma, alpha, modes, master_seed, p, r)
             for Z in z_values for p in range(positions) for r in range(runs)]
    logger.info("Campaign: %d trials x %d modes on %d worker(s)", len(specs), len(modes), threads)
    outcomes = map_trials(partial(run_trial, array=array), specs, threads)

    # Deterministic fold over sorted trial keys
    by_key = {(s.Z, s.position, s.run): o for s, o in zip(specs, outcomes)}
    rows = []
    for mode in modes:
        for Z in z_values:
            keys = sorted(k for k in by_key if k[0] == Z)
            trials = [by_key[k][mode] for k in keys]
            mean_tpr, se_tpr = _mean_se([t.tpr for t in trials])
            mean_tnr, se_tnr = _mean_se([t.tnr for t in trials])
            me_raw, _ = _mean_se([t.me_raw for t in trials])
            me_filtered, _ = _mean_se([t.me_filtered for t in trials])
            rows.append(CampaignRow(mode, Z, mean_tpr, se_tpr, mean_tnr, se_tnr,
                                    me_raw, me_filtered, len(trials)))
        logger.info("Mode %s aggregated over %d outlier counts", mode.value, len(z_values))
    return rows
