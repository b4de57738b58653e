"""
Iterative TDOA outlier removal

A single-TDOA pre-processing pass, then one or two stages of group tests.
Each stage repeatedly adjusts and combines the p-values of the groups a TDOA
belongs to and removes the TDOA(s) with the largest Fisher statistic, until
no TDOA is flagged at level alpha. TDOAs a final triple stage leaves without
any group are re-tested in shared-pair groups.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .geometry import (GroupKind, PairIndex, SensorArray, TdoaSet, TripleGroup, pair_order,
                       simplified_distance, theta1_interval, tdoa_map, zsc_plane_distance)
from .settings import Defaults
from .stattests import CovarianceModel, bh_adjust, fisher_combine, g1_test, g2_pvalue, g3_pvalue

logger = logging.getLogger(__name__)


class ExplorationMode(Enum):
    G2 = "g2"
    G3 = "g3"
    G2_THEN_G3 = "g2g3"
    G3_THEN_G2 = "g3g2"

    @property
    def stages(self) -> Tuple[GroupKind, ...]:
        return {
            ExplorationMode.G2: (GroupKind.SHARED_PAIR,),
            ExplorationMode.G3: (GroupKind.TRIPLE,),
            ExplorationMode.G2_THEN_G3: (GroupKind.SHARED_PAIR, GroupKind.TRIPLE),
            ExplorationMode.G3_THEN_G2: (GroupKind.TRIPLE, GroupKind.SHARED_PAIR),
        }[self]

    @property
    def retest_kind(self) -> Optional[GroupKind]:
        """
        Group size used for TDOAs the last stage left without any group

        None after a shared-pair stage: a complete triple holds two
        shared-pair groups, so those TDOAs have no triple either.
        """
        if self.stages[-1] is GroupKind.TRIPLE:
            return GroupKind.SHARED_PAIR
        return None


def _default_covariance() -> CovarianceModel:
    return CovarianceModel.isotropic(Defaults.SIGMA)


@dataclass(frozen=True)
class RemovalConfig:
    """
    Settings of one removal run

    Args:
        alpha: Significance level; the group stages of a combined mode split it evenly
        mode: Group sizes explored, and in which order
        covariance: Noise model of the measured TDOAs
        alpha_g1, alpha_g2, alpha_g3: Optional per-stage levels replacing the split
        alignment_tolerance: Relative tolerance deciding aligned triples
        pvalue_floor: Lower clamp applied before Fisher combination
    """
    alpha: float = Defaults.ALPHA
    mode: ExplorationMode = ExplorationMode.G2_THEN_G3
    covariance: CovarianceModel = field(default_factory=_default_covariance)
    alpha_g1: Optional[float] = None
    alpha_g2: Optional[float] = None
    alpha_g3: Optional[float] = None
    alignment_tolerance: Optional[float] = None
    pvalue_floor: float = Defaults.PVALUE_FLOOR

    def __post_init__(self):
        if not isinstance(self.mode, ExplorationMode):
            try:
                object.__setattr__(self, "mode", ExplorationMode(self.mode))
            except ValueError:
                raise ValidationError(f"unknown mode {self.mode!r}", field="mode")
        for name in ("alpha", "alpha_g1", "alpha_g2", "alpha_g3"):
            value = getattr(self, name)
            if value is None and name != "alpha":
                continue
            if value is None or not 0.0 < value < 0.5:
                raise ValidationError(f"must lie in (0, 0.5), got {value}", field=name)
        if not 0.0 < self.pvalue_floor < 1.0:
            raise ValidationError(f"must lie in (0, 1), got {self.pvalue_floor}", field="pvalue_floor")
        if self.alignment_tolerance is not None and not self.alignment_tolerance >= 0.0:
            raise ValidationError(f"must be >= 0, got {self.alignment_tolerance}",
                                  field="alignment_tolerance")

    def stage_alpha(self, size: int) -> float:
        """
        Level used for groups of the given size (1, 2 or 3)

        g2g3 and g3g2 give each group stage alpha / 2; the single-TDOA pass
        keeps the full alpha.
        """
        override = {1: self.alpha_g1, 2: self.alpha_g2, 3: self.alpha_g3}[size]
        if override is not None:
            return override
        if size == 1:
            return self.alpha
        return self.alpha / len(self.mode.stages)


@dataclass
class WorkCounters:
    """Work done by a removal run, for complexity checks"""
    group_evaluations: int = 0
    outer_iterations: int = 0
    retest_iterations: int = 0
    pvalue_reads: int = 0
    sort_work: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


# Groups

@dataclass(frozen=True)
class GroupRecord:
    """A group with its distance and raw p-value, fixed for the whole stage"""
    group: TripleGroup
    distance: float
    pvalue: float


class GroupTable:
    """
    Groups of one stage plus the index from each TDOA to the groups holding it

    Removing a TDOA drops every group that references it. Group members
    outside `pairs` are used by the tests but never tracked or removed.
    """

    def __init__(self, kind: GroupKind, records: Sequence[GroupRecord], pairs: Sequence[PairIndex]):
        self.kind = kind
        self.records = list(records)
        self._alive = [True] * len(self.records)
        self.index: Dict[PairIndex, List[int]] = {pair: [] for pair in pairs}
        for k, record in enumerate(self.records):
            for member in record.group.members:
                if member in self.index:
                    self.index[member].append(k)

    def pairs(self) -> List[PairIndex]:
        """TDOAs still tracked by the table, testable or not"""
        return sorted(self.index, key=pair_order)

    def groups_of(self, pair: PairIndex) -> List[GroupRecord]:
        return [self.records[k] for k in self.index[pair]]

    def prune(self, removed: Sequence[PairIndex]) -> None:
        for pair in removed:
            for k in self.index.pop(pair, []):
                if not self._alive[k]:
                    continue
                self._alive[k] = False
                for member in self.records[k].group.members:
                    if member in self.index:
                        self.index[member].remove(k)

    def __len__(self) -> int:
        return sum(self._alive)


def preprocess_g1(tdoas: TdoaSet, array: SensorArray, cov: CovarianceModel,
                  alpha: float) -> Tuple[TdoaSet, List["PreprocessedRemoval"]]:
    """Drop every TDOA outside its acceptance interval"""
    removed = []
    for pair, value in tdoas.items():
        interval = theta1_interval(pair, array)
        outcome, _ = g1_test(value, interval.high, cov.sigma(pair), alpha)
        if outcome.reject:
            removed.append(PreprocessedRemoval(pair, value, outcome.pvalue))
    if removed:
        logger.debug("Single-TDOA test removed %s", [tuple(r.pair) for r in removed])
    return tdoas.without(r.pair for r in removed), removed


def _candidate_groups(kind: GroupKind, sensors: Sequence[int]) -> Iterator[TripleGroup]:
    if kind is GroupKind.TRIPLE:
        for a, i in enumerate(sensors):
            for b in range(a + 1, len(sensors)):
                for k in sensors[b + 1:]:
                    yield TripleGroup.triple(i, sensors[b], k)
        return
    for i in sensors:
        others = [s for s in sensors if s != i]
        for a, j in enumerate(others):
            for k in others[a + 1:]:
                yield TripleGroup.shared_pair(i, j, k)


def build_groups(kind: GroupKind, tdoas: TdoaSet, array: SensorArray, cov: CovarianceModel,
                 alignment_tolerance: Optional[float] = None,
                 counters: Optional[WorkCounters] = None,
                 only: Optional[Sequence[PairIndex]] = None) -> GroupTable:
    """
    Evaluate every group whose TDOAs are all present

    Args:
        kind: SHARED_PAIR for two-TDOA groups, TRIPLE for zero-sum triples
        tdoas: Measurements left by the previous stage
        array: Sensor array
        cov: Noise model; group blocks are sign-conjugated
        alignment_tolerance: Relative tolerance deciding aligned triples
        counters: Optional work counters to update
        only: When given, keep the groups holding at least one of these
            TDOAs and track only them
    """
    tracked = set(tdoas.pairs() if only is None else only)
    records = []
    for group in _candidate_groups(kind, tdoas.sensors()):
        if not all(member in tdoas for member in group.members):
            continue
        if only is not None and tracked.isdisjoint(group.members):
            continue
        tau = group.oriented(tdoas)
        block = cov.group_block(group)
        if kind is GroupKind.TRIPLE:
            distance = zsc_plane_distance(tau, block, validate=False)
            pvalue = g3_pvalue(distance)
        else:
            i, j, k = group.sensors
            geom = array.triple_geometry(i, j, k, alignment_tolerance)
            distance = simplified_distance(tau, geom, block, validate=False)
            pvalue = g2_pvalue(distance)
        records.append(GroupRecord(group, distance, pvalue))

    if counters is not None:
        counters.group_evaluations += len(records)
    return GroupTable(kind, records, sorted(tracked, key=pair_order))


# Iterations

class PreprocessedRemoval(NamedTuple):
    pair: PairIndex
    value: float
    pvalue: float


class PairStatistics(NamedTuple):
    """BH minimum and Fisher statistic of one TDOA over its groups"""
    bh_min: float
    fisher: float
    groups: int


@dataclass
class IterationResult:
    stop: bool
    removed: Tuple[PairIndex, ...]
    statistics: Dict[PairIndex, PairStatistics]
    untestable: Tuple[PairIndex, ...]
    clamped: int = 0
    stage: Optional[GroupKind] = None
    retest: bool = False

    @property
    def label(self) -> str:
        if self.stage is None:
            return "g1"
        return f"g{self.stage.value}-retest" if self.retest else f"g{self.stage.value}"


def iterate_once(table: GroupTable, alpha: float,
                 pvalue_floor: float = Defaults.PVALUE_FLOOR,
                 counters: Optional[WorkCounters] = None) -> IterationResult:
    """
    One decision: stop when every testable TDOA has BH minimum above alpha,
    otherwise remove all TDOAs attaining the largest Fisher statistic
    """
    statistics: Dict[PairIndex, PairStatistics] = {}
    untestable = []
    clamped = 0
    for pair in table.pairs():
        records = table.groups_of(pair)
        if not records:
            untestable.append(pair)
            continue
        pvalues = [r.pvalue for r in records]
        bh = bh_adjust(pvalues)
        fisher = fisher_combine(pvalues, pvalue_floor)
        clamped += fisher.clamped
        statistics[pair] = PairStatistics(bh.minimum, fisher.statistic, len(records))
        if counters is not None:
            M = len(records)
            counters.pvalue_reads += M
            counters.sort_work += M * max(1, math.ceil(math.log2(M)))

    if all(s.bh_min > alpha for s in statistics.values()):
        return IterationResult(True, (), statistics, tuple(untestable), clamped, table.kind)

    top = max(s.fisher for s in statistics.values())
    removed = tuple(p for p, s in statistics.items() if s.fisher == top)
    logger.debug("Fisher maximum %.6g at %s", top, [tuple(p) for p in removed])
    return IterationResult(False, removed, statistics, tuple(untestable), clamped, table.kind)


@dataclass
class RemovalReport:
    """Outcome of remove_outliers; iterations include each stage's final stop check"""
    preprocessed_out: List[PreprocessedRemoval]
    iterations: List[IterationResult]
    survivors: TdoaSet
    untestable: List[PairIndex]
    clamped: int
    counters: WorkCounters

    def removed_pairs(self) -> List[PairIndex]:
        """Every removed TDOA, single-TDOA pass first, then in iteration order"""
        pairs = [r.pair for r in self.preprocessed_out]
        for result in self.iterations:
            pairs.extend(result.removed)
        return pairs

    def removals(self) -> List[dict]:
        """One row per removed TDOA with the stage, iteration and statistics that removed it"""
        rows = [{"j": r.pair.j, "i": r.pair.i, "stage": "g1", "iteration": 0,
                 "bh_min": r.pvalue, "fisher": None} for r in self.preprocessed_out]
        for number, result in enumerate(self.iterations, start=1):
            for pair in result.removed:
                stats = result.statistics[pair]
                rows.append({"j": pair.j, "i": pair.i, "stage": result.label,
                             "iteration": number, "bh_min": stats.bh_min, "fisher": stats.fisher})
        return rows


def _run_stage(table: GroupTable, alpha: float, current: TdoaSet, config: RemovalConfig,
               counters: WorkCounters, iterations: List[IterationResult],
               retest: bool = False) -> Tuple[TdoaSet, IterationResult]:
    """Iterate until the stop check passes; returns the survivors and that check"""
    while True:
        if retest:
            counters.retest_iterations += 1
        else:
            counters.outer_iterations += 1
        result = iterate_once(table, alpha, config.pvalue_floor, counters)
        result.retest = retest
        iterations.append(result)
        if result.stop:
            return current, result
        current = current.without(result.removed)
        table.prune(result.removed)


def remove_outliers(tdoas: TdoaSet, array: SensorArray,
                    config: Optional[RemovalConfig] = None) -> RemovalReport:
    """
    Run the single-TDOA pass followed by the stages of config.mode

    Each stage rebuilds its groups from the survivors of the previous one.
    When the last stage used triples, the TDOAs it left without any group are
    tested once more with shared-pair groups built on the survivors; only
    those TDOAs can be removed there. The ones still without a group are
    untestable.
    """
    config = config or RemovalConfig()
    if not len(tdoas):
        raise ValidationError("measurement set is empty", field="pairs")
    tdoas.check_against(array)
    cov = config.covariance
    counters = WorkCounters()

    current, preprocessed = preprocess_g1(tdoas, array, cov, config.stage_alpha(1))
    iterations: List[IterationResult] = []
    untestable: Tuple[PairIndex, ...] = ()

    for kind in config.mode.stages:
        table = build_groups(kind, current, array, cov, config.alignment_tolerance, counters)
        logger.debug("Stage g%d: %d TDOAs, %d groups", kind.value, len(current), len(table))
        current, last = _run_stage(table, config.stage_alpha(kind.value), current, config,
                                   counters, iterations)
        untestable = last.untestable

    kind = config.mode.retest_kind
    if untestable and kind is not None:
        table = build_groups(kind, current, array, cov, config.alignment_tolerance, counters,
                             only=untestable)
        logger.debug("Re-testing %d TDOA(s) left without groups, %d g%d groups",
                     len(untestable), len(table), kind.value)
        current, last = _run_stage(table, config.stage_alpha(kind.value), current, config,
                                   counters, iterations, retest=True)
        untestable = last.untestable

    clamped = sum(result.clamped for result in iterations)
    if clamped:
        logger.warning("%d Fisher combination(s) clamped p-values to %g", clamped, config.pvalue_floor)
    return RemovalReport(preprocessed, iterations, current, list(untestable), clamped, counters)


def complexity_counters(n: int, Z: int, mode: ExplorationMode = ExplorationMode.G3,
                        seed: int = 0, sigma: float = 1e-5) -> WorkCounters:
    """
    Work counters of one run on a random (n+1)-sensor array with Z gross outliers

    Measurements are noiseless apart from the outliers, and the detector
    assumes a tiny sigma, so outliers are unambiguous.
    """
    if n < 2:
        raise ValidationError(f"need n >= 2, got {n}")
    q = n * (n + 1) // 2
    if not 0 <= Z <= q:
        raise ValidationError(f"Z must lie in [0, {q}], got {Z}")
    rng = np.random.default_rng(seed)
    array = SensorArray(rng.random((n + 1, 3)))
    source = array.centroid + rng.normal(size=3)
    clean = tdoa_map(source, array)

    pairs = array.pairs()
    updates = {}
    for k in rng.choice(q, size=Z, replace=False):
        pair = pairs[int(k)]
        d = array.distance(pair.j, pair.i)
        # Push the value at least d/4 away from the truth, staying inside [-d, d]
        truth = clean[pair]
        shift = rng.uniform(0.25, 0.75) * d
        updates[pair] = truth - shift if truth - shift >= -d else truth + shift
    measured = clean.replaced(updates)

    config = RemovalConfig(mode=mode, covariance=CovarianceModel.isotropic(sigma))
    return remove_outliers(measured, array, config).counters
