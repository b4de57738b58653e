"""
TDOA-space geometry
Sensor arrays, the TDOA map, the feasible sets of one and two TDOAs and the
zero-sum plane of sensor triples

Propagation speed is normalized to 1, so every TDOA is a range difference
in meters.
"""

import logging
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import RankAmbiguityError, ValidationError
from .settings import Defaults

logger = logging.getLogger(__name__)


class PairIndex(NamedTuple):
    """Canonical sensor pair (j, i) with j > i"""
    j: int
    i: int

    @classmethod
    def of(cls, j: int, i: int) -> "PairIndex":
        """Build a canonical pair, rejecting reversed or repeated indices"""
        j, i = int(j), int(i)
        if i < 0:
            raise ValidationError(f"negative sensor index in pair ({j}, {i})")
        if j == i:
            raise ValidationError(f"pair ({j}, {i}) repeats a sensor")
        if j < i:
            raise ValidationError(f"pair ({j}, {i}) is not canonical, expected j > i")
        return cls(j, i)

    @classmethod
    def oriented(cls, a: int, b: int) -> Tuple["PairIndex", int]:
        """
        Canonical pair and sign for the oriented TDOA tau_ab

        tau_ab = sign * entries[pair]
        """
        if a == b:
            raise ValidationError(f"pair ({a}, {b}) repeats a sensor")
        if a > b:
            return cls(int(a), int(b)), 1
        return cls(int(b), int(a)), -1


def pair_order(pair: PairIndex) -> Tuple[int, int]:
    """Sort key giving (1,0), (2,0), ..., (n,0), (2,1), ..., (n,n-1)"""
    return (pair.i, pair.j)


class Interval(NamedTuple):
    """Closed interval [low, high]"""
    low: float
    high: float

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high

    @property
    def length(self) -> float:
        return self.high - self.low


class SensorArray:
    """
    Positions of n+1 distinct sensors with cached pairwise distances

    Instances are immutable and picklable; threads may share one.
    """

    def __init__(self, positions, name: str = ""):
        """
        Args:
            positions: (n+1, 3) or (n+1, 2) coordinates in meters; 2D input
                is placed on the plane z = 0
            name: Free-form label carried into files and reports
        """
        pos = np.array(positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] not in (2, 3):
            raise ValidationError("expected a list of 2D or 3D coordinates", field="sensors")
        if pos.shape[1] == 2:
            pos = np.hstack([pos, np.zeros((pos.shape[0], 1))])
        if pos.shape[0] < 2:
            raise ValidationError("at least 2 sensors are required", field="sensors")
        if not np.all(np.isfinite(pos)):
            raise ValidationError("coordinates must be finite", field="sensors")

        dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        masked = dist + np.diag(np.full(pos.shape[0], np.inf))
        a, b = np.unravel_index(np.argmin(masked), masked.shape)
        if masked[a, b] <= 0.0:
            raise ValidationError(f"sensors {min(a, b)} and {max(a, b)} coincide", field="sensors")

        pos.setflags(write=False)
        dist.setflags(write=False)
        self._positions = pos
        self._dist = dist
        self.name = name

        count = pos.shape[0]
        self._pairs = tuple(PairIndex(j, i) for i in range(count - 1) for j in range(i + 1, count))
        self._pair_position = {pair: k for k, pair in enumerate(self._pairs)}
        self._pair_j = np.array([p.j for p in self._pairs], dtype=int)
        self._pair_i = np.array([p.i for p in self._pairs], dtype=int)

        self._geometry_cache: Dict[tuple, "PlanarTripleGeometry"] = {}
        self._cache_lock = threading.Lock()

    def __getstate__(self) -> dict:
        # Sent to worker processes without the lock; the cache is rebuilt there
        state = self.__dict__.copy()
        del state["_cache_lock"]
        state["_geometry_cache"] = {}
        return state

    def __setstate__(self, state: dict) -> None:
        self.__dict__.update(state)
        self._cache_lock = threading.Lock()

    # Shape

    @property
    def positions(self) -> np.ndarray:
        return self._positions

    @property
    def dist(self) -> np.ndarray:
        return self._dist

    @property
    def count(self) -> int:
        return self._positions.shape[0]

    @property
    def n(self) -> int:
        """Index of the last sensor"""
        return self.count - 1

    @property
    def q(self) -> int:
        """Size of the complete TDOA set, n(n+1)/2"""
        return self.n * (self.n + 1) // 2

    @property
    def centroid(self) -> np.ndarray:
        return self._positions.mean(axis=0)

    @property
    def scale(self) -> float:
        """Largest inter-sensor distance"""
        return float(self._dist.max())

    # Pairs

    def pairs(self) -> Tuple[PairIndex, ...]:
        """All canonical pairs in TDOA-vector order"""
        return self._pairs

    def pair_position(self, pair: PairIndex) -> int:
        """Position of a pair inside the complete TDOA vector"""
        try:
            return self._pair_position[pair]
        except KeyError:
            raise ValidationError(f"pair {tuple(pair)} does not belong to a {self.count}-sensor array")

    def pair_indices(self) -> Tuple[np.ndarray, np.ndarray]:
        """Index arrays (J, I) aligned with pairs()"""
        return self._pair_j, self._pair_i

    def check_pair(self, pair: PairIndex) -> None:
        if pair.j > self.n or pair.i < 0 or pair.j <= pair.i:
            raise ValidationError(f"pair {tuple(pair)} references an unknown sensor (n = {self.n})")

    def distance(self, a: int, b: int) -> float:
        return float(self._dist[a, b])

    # Derived arrays

    def scaled(self, factor: float) -> "SensorArray":
        return SensorArray(self._positions * factor, name=self.name)

    def relabeled(self, perm: Sequence[int]) -> "SensorArray":
        """Array where old sensor a becomes sensor perm[a]"""
        perm = list(perm)
        if sorted(perm) != list(range(self.count)):
            raise ValidationError("relabeling must be a permutation of the sensor indices")
        moved = np.empty_like(self._positions)
        for old, new in enumerate(perm):
            moved[new] = self._positions[old]
        return SensorArray(moved, name=self.name)

    def triple_geometry(self, shared: int, j: int, k: int,
                        tol: Optional[float] = None) -> "PlanarTripleGeometry":
        """Memoised classify_triple"""
        key = (shared, j, k, tol)
        geom = self._geometry_cache.get(key)
        if geom is None:
            geom = classify_triple(shared, j, k, self, tol)
            with self._cache_lock:
                self._geometry_cache[key] = geom
        return geom

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<SensorArray{label} sensors={self.count}>"


class TdoaSet:
    """
    Sparse map from canonical pairs to measured range differences (meters)

    Iteration follows the TDOA-vector order. Instances are treated as
    immutable: every modifier returns a new set.
    """

    def __init__(self, entries: Optional[Mapping] = None):
        self._entries: Dict[PairIndex, float] = {}
        for key, value in (entries or {}).items():
            pair = key if isinstance(key, PairIndex) else PairIndex.of(*key)
            if pair in self._entries:
                raise ValidationError(f"duplicate pair {tuple(pair)}")
            value = float(value)
            if not np.isfinite(value):
                raise ValidationError(f"value of pair {tuple(pair)} is not finite")
            self._entries[pair] = value

    @classmethod
    def from_vector(cls, array: SensorArray, vector: Sequence[float],
                    mask: Optional[Iterable[PairIndex]] = None) -> "TdoaSet":
        """Build a set from a complete TDOA vector, keeping the masked pairs only"""
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (array.q,):
            raise ValidationError(f"expected a vector of {array.q} TDOAs, got shape {vector.shape}")
        keep = set(mask) if mask is not None else None
        return cls({pair: vector[k] for k, pair in enumerate(array.pairs())
                    if keep is None or pair in keep})

    def __getitem__(self, pair: PairIndex) -> float:
        return self._entries[pair]

    def get(self, pair: PairIndex, default: Optional[float] = None) -> Optional[float]:
        return self._entries.get(pair, default)

    def value(self, a: int, b: int) -> float:
        """Signed accessor: tau_ab, negated when (a, b) is not canonical"""
        pair, sign = PairIndex.oriented(a, b)
        return sign * self._entries[pair]

    def __contains__(self, pair) -> bool:
        return pair in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[PairIndex]:
        return iter(self.pairs())

    def pairs(self) -> List[PairIndex]:
        return sorted(self._entries, key=pair_order)

    def items(self) -> List[Tuple[PairIndex, float]]:
        return [(pair, self._entries[pair]) for pair in self.pairs()]

    def values_for(self, pairs: Sequence[PairIndex]) -> np.ndarray:
        return np.array([self._entries[p] for p in pairs], dtype=float)

    def sensors(self) -> List[int]:
        return sorted({s for pair in self._entries for s in pair})

    def without(self, pairs: Iterable[PairIndex]) -> "TdoaSet":
        drop = set(pairs)
        return TdoaSet({p: v for p, v in self._entries.items() if p not in drop})

    def restricted(self, pairs: Iterable[PairIndex]) -> "TdoaSet":
        keep = set(pairs)
        return TdoaSet({p: v for p, v in self._entries.items() if p in keep})

    def replaced(self, updates: Mapping[PairIndex, float]) -> "TdoaSet":
        merged = dict(self._entries)
        for pair, value in updates.items():
            if pair not in merged:
                raise ValidationError(f"cannot replace missing pair {tuple(pair)}")
            merged[pair] = value
        return TdoaSet(merged)

    def to_vector(self, array: SensorArray) -> np.ndarray:
        """Complete TDOA vector with NaN for missing pairs"""
        out = np.full(array.q, np.nan)
        for pair, value in self._entries.items():
            out[array.pair_position(pair)] = value
        return out

    def check_against(self, array: SensorArray) -> None:
        for pair in self._entries:
            array.check_pair(pair)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TdoaSet):
            return NotImplemented
        return self._entries == other._entries

    def __repr__(self) -> str:
        return f"<TdoaSet pairs={len(self._entries)}>"


# TDOA map

def tdoa_vector(x, array: SensorArray) -> np.ndarray:
    """Complete noiseless TDOA vector of a source at x, in pairs() order"""
    ranges = np.linalg.norm(array.positions - np.asarray(x, dtype=float), axis=1)
    J, I = array.pair_indices()
    return ranges[J] - ranges[I]


def tdoa_map(x, array: SensorArray) -> TdoaSet:
    """Complete noiseless TDOA set: tau_ji = |x - m_j| - |x - m_i|"""
    return TdoaSet.from_vector(array, tdoa_vector(x, array))


def tdoa_jacobian(x, array: SensorArray, pairs: Sequence[PairIndex]) -> np.ndarray:
    """Rows d tau_ji / dx = (x - m_j)/|x - m_j| - (x - m_i)/|x - m_i|"""
    diff = np.asarray(x, dtype=float) - array.positions
    norms = np.linalg.norm(diff, axis=1)
    units = np.divide(diff, norms[:, None], out=np.zeros_like(diff), where=norms[:, None] > 0)
    J = np.array([p.j for p in pairs], dtype=int)
    I = np.array([p.i for p in pairs], dtype=int)
    return units[J] - units[I]


def theta1_interval(pair: PairIndex, array: SensorArray) -> Interval:
    """Feasible set of a single TDOA: [-d_ji, d_ji]"""
    array.check_pair(pair)
    d = array.distance(pair.j, pair.i)
    return Interval(-d, d)


def zsc_residuals(tdoas: TdoaSet) -> Dict[Tuple[int, int, int], float]:
    """tau_ji - tau_ki + tau_kj for every triple i < j < k fully present"""
    sensors = tdoas.sensors()
    out = {}
    for a, i in enumerate(sensors):
        for b in range(a + 1, len(sensors)):
            j = sensors[b]
            if PairIndex(j, i) not in tdoas:
                continue
            for k in sensors[b + 1:]:
                if PairIndex(k, i) in tdoas and PairIndex(k, j) in tdoas:
                    out[(i, j, k)] = tdoas[PairIndex(j, i)] - tdoas[PairIndex(k, i)] + tdoas[PairIndex(k, j)]
    return out


# Groups of TDOAs

class GroupKind(Enum):
    SHARED_PAIR = 2
    TRIPLE = 3


@dataclass(frozen=True)
class TripleGroup:
    """
    Two or three TDOAs of one sensor triple, with the sign flags mapping the
    canonical storage to the oriented components

    SHARED_PAIR, sensors (i, j, k): components (tau_ji, tau_ki), j < k
    TRIPLE, sensors (i, j, k) with i < j < k: components (tau_ji, tau_ki, tau_kj)
    """
    kind: GroupKind
    sensors: Tuple[int, int, int]
    members: Tuple[PairIndex, ...]
    signs: Tuple[int, ...]

    @classmethod
    def shared_pair(cls, i: int, j: int, k: int) -> "TripleGroup":
        if not (j < k and i != j and i != k):
            raise ValidationError(f"shared-sensor group needs j < k and i distinct, got ({i}, {j}, {k})")
        p_ji, s_ji = PairIndex.oriented(j, i)
        p_ki, s_ki = PairIndex.oriented(k, i)
        return cls(GroupKind.SHARED_PAIR, (i, j, k), (p_ji, p_ki), (s_ji, s_ki))

    @classmethod
    def triple(cls, i: int, j: int, k: int) -> "TripleGroup":
        if not (0 <= i < j < k):
            raise ValidationError(f"triple needs i < j < k, got ({i}, {j}, {k})")
        return cls(GroupKind.TRIPLE, (i, j, k),
                   (PairIndex(j, i), PairIndex(k, i), PairIndex(k, j)), (1, 1, 1))

    def oriented(self, tdoas: TdoaSet) -> np.ndarray:
        return np.array([s * tdoas[p] for p, s in zip(self.members, self.signs)], dtype=float)

    def contains(self, pair: PairIndex) -> bool:
        return pair in self.members


class TripleClass(Enum):
    GENERAL = "general"
    ALIGNED_SHARED_BETWEEN = "aligned-between"
    ALIGNED_SHARED_OUTSIDE = "aligned-outside"


def _rotate(v: np.ndarray) -> np.ndarray:
    # Fixed rotation by +90 degrees in the sensor plane
    return np.array([-v[1], v[0]])


@dataclass(frozen=True, eq=False)
class PlanarTripleGeometry:
    """
    Feasible-set data of a sensor triple seen from the shared sensor

    The local frame puts m_shared at the origin, m_j on the first axis and m_k
    in the upper half-plane, so the signed area determinant W is >= 0.
    """
    shared: int
    j: int
    k: int
    classification: TripleClass
    d_ji: float
    d_ki: float
    d_kj: float
    W: float
    e_ji: np.ndarray
    e_ki: np.ndarray

    @property
    def is_aligned(self) -> bool:
        return self.classification is not TripleClass.GENERAL

    @property
    def scale(self) -> float:
        return max(self.d_ji, self.d_ki, self.d_kj)

    def c(self, s_ji: int, s_ki: int, s_kj: int) -> float:
        """c^{+-+...} = s_ji d_ji + s_ki d_ki + s_kj d_kj"""
        return s_ji * self.d_ji + s_ki * self.d_ki + s_kj * self.d_kj

    @property
    def vertices(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """TDOA pairs of a source at m_shared, m_j and m_k"""
        return (np.array([self.d_ji, self.d_ki]),
                np.array([-self.d_ji, self.d_kj - self.d_ji]),
                np.array([self.d_kj - self.d_ki, -self.d_ki]))

    def _require_general(self):
        if self.is_aligned:
            raise ValidationError(f"triple {self.shared, self.j, self.k} is aligned")

    def ellipse(self, tau_pair) -> float:
        """a(tau): negative inside the ellipse tangent to every hexagon facet"""
        self._require_general()
        t_ji, t_ki = tau_pair
        v = _rotate(t_ki * self.e_ji - t_ji * self.e_ki)
        return float(v @ v - self.W ** 2)

    def cubic(self, tau_pair) -> float:
        """b(tau)"""
        self._require_general()
        t_ji, t_ki = tau_pair
        v = _rotate(t_ki * self.e_ji - t_ji * self.e_ki)
        l0 = _rotate((self.d_ki ** 2 - t_ki ** 2) * self.e_ji
                     - (self.d_ji ** 2 - t_ji ** 2) * self.e_ki) / (2.0 * self.W)
        return float(v @ l0)


def classify_triple(i: int, j: int, k: int, array: SensorArray,
                    tol: Optional[float] = None) -> PlanarTripleGeometry:
    """
    Classify the triple (m_i, m_j, m_k) seen from the shared sensor i

    Args:
        i: Shared sensor
        j, k: The other two sensors
        array: Sensor array
        tol: Relative alignment tolerance (default Defaults.tolerances.alignment)
    """
    if len({i, j, k}) != 3:
        raise ValidationError(f"triple ({i}, {j}, {k}) needs three distinct sensors")
    for s in (i, j, k):
        if not 0 <= s <= array.n:
            raise ValidationError(f"unknown sensor {s} (n = {array.n})")
    tol = Defaults.tolerances.alignment if tol is None else tol

    m = array.positions
    d_ji, d_ki, d_kj = array.distance(j, i), array.distance(k, i), array.distance(k, j)

    # Planar frame anchored at the shared sensor
    D_j = m[j] - m[i]
    D_k = m[k] - m[i]
    axis = D_j / d_ji
    along = float(D_k @ axis)
    height = float(np.linalg.norm(D_k - along * axis))
    e_ji = np.array([d_ji, 0.0])
    e_ki = np.array([along, height])
    W = d_ji * height

    largest = max(d_ji, d_ki, d_kj)
    slack = d_ji + d_ki + d_kj - 2.0 * largest
    if slack > tol * largest:
        classification = TripleClass.GENERAL
    elif d_ji + d_ki - d_kj <= tol * largest:
        classification = TripleClass.ALIGNED_SHARED_BETWEEN
    else:
        classification = TripleClass.ALIGNED_SHARED_OUTSIDE

    e_ji.setflags(write=False)
    e_ki.setflags(write=False)
    return PlanarTripleGeometry(i, j, k, classification, d_ji, d_ki, d_kj, W, e_ji, e_ki)


def hexagon_facets(geom: PlanarTripleGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """Six triangle inequalities A tau <= b bounding the hexagon"""
    A = np.array([[1.0, 0.0], [-1.0, 0.0],
                  [0.0, 1.0], [0.0, -1.0],
                  [-1.0, 1.0], [1.0, -1.0]])
    b = np.array([geom.d_ji, geom.d_ji, geom.d_ki, geom.d_ki, geom.d_kj, geom.d_kj])
    return A, b


def triangle_facets(geom: PlanarTripleGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """
    Three inequalities A tau <= b whose intersection is the closed triangle of
    an aligned triple; rows support l_ji, l_ki and l_kj in that order
    """
    c = geom.c
    A = np.array([[c(-1, -1, 1), 2.0 * geom.d_ji],
                  [2.0 * geom.d_ki, c(-1, -1, 1)],
                  [c(1, -1, -1), c(-1, 1, -1)]])
    b = np.array([geom.d_ji * c(-1, 1, 1),
                  geom.d_ki * c(1, -1, 1),
                  geom.d_kj * c(1, 1, -1)])
    return A, b


def _facet_excess(A: np.ndarray, b: np.ndarray, tau: np.ndarray) -> np.ndarray:
    # Euclidean signed distance beyond each facet line (positive = violated)
    return (A @ tau - b) / np.linalg.norm(A, axis=1)


def theta2_membership(tau_pair, geom: PlanarTripleGeometry,
                      group: Optional[TripleGroup] = None) -> bool:
    """
    Whether the oriented pair (tau_ji, tau_ki) is a noiseless TDOA pair of the triple

    Sets are treated as closed, with absolute tolerance
    Defaults.tolerances.membership * scale.
    """
    tau = np.asarray(tau_pair, dtype=float)
    if tau.shape != (2,):
        raise ValidationError(f"expected an oriented TDOA pair, got shape {tau.shape}")
    if group is not None and (group.kind is not GroupKind.SHARED_PAIR
                              or group.sensors != (geom.shared, geom.j, geom.k)):
        raise ValidationError(f"group {group.sensors} does not match geometry "
                              f"{(geom.shared, geom.j, geom.k)}")
    tol = Defaults.tolerances.membership
    eps = tol * geom.scale

    if geom.is_aligned:
        A, b = triangle_facets(geom)
        return bool(np.all(_facet_excess(A, b, tau) <= eps))

    R0 = geom.vertices[0]
    if np.linalg.norm(tau - R0) <= eps:
        return True
    s = geom.scale
    if geom.ellipse(tau) / s ** 4 < tol:
        return True
    A, b = hexagon_facets(geom)
    return bool(geom.cubic(tau) / s ** 3 > -tol and np.all(_facet_excess(A, b, tau) <= eps))


# Mahalanobis distances

def check_covariance(cov, dim: int) -> np.ndarray:
    """Return cov as a (dim, dim) array, rejecting non-symmetric or non-PD input"""
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (dim, dim):
        raise ValidationError(f"expected a {dim}x{dim} covariance, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise ValidationError("covariance has non-finite entries")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=Defaults.tolerances.symmetry * np.abs(cov).max()):
        raise ValidationError("covariance is not symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValidationError("covariance is not positive-definite")
    return cov


def mahalanobis_norm(v, cov) -> float:
    """sqrt(v^T cov v), the norm of a facet normal under the noise covariance"""
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(v @ cov @ v))


def line_distance(point, normal, offset: float, cov) -> float:
    """Mahalanobis distance from point to the line {normal . tau = offset}"""
    return abs(float(np.dot(normal, point)) - offset) / mahalanobis_norm(normal, cov)


_STRIP_NORMAL = np.array([1.0, -1.0])
_ZSC_NORMAL = np.array([1.0, -1.0, 1.0])


def strip_distance_general(tau_pair, geom: PlanarTripleGeometry, cov2,
                           validate: bool = True) -> float:
    """
    Distance from the strip |tau_ki - tau_ji| <= d_kj, for triples in general position

    The strip contains the feasible set, so this never exceeds the exact distance.
    """
    if geom.is_aligned:
        raise ValidationError(f"triple {geom.shared, geom.j, geom.k} is aligned")
    cov2 = check_covariance(cov2, 2) if validate else np.asarray(cov2, dtype=float)
    t_ji, t_ki = tau_pair
    gap = t_ki - t_ji
    if abs(gap) <= geom.d_kj + Defaults.tolerances.membership * geom.scale:
        return 0.0
    return (abs(gap) - geom.d_kj) / mahalanobis_norm(_STRIP_NORMAL, cov2)


def aligned_distance(tau_pair, geom: PlanarTripleGeometry, cov2,
                     validate: bool = True) -> float:
    """
    Distance from the half-plane(s) of an aligned triple not already enforced
    by the single-TDOA preprocessing

    Shared sensor between the others: only the l_kj side is tested.
    Shared sensor outside: the violated side among l_ji and l_ki, or 0 when
    both or neither hold.
    """
    if not geom.is_aligned:
        raise ValidationError(f"triple {geom.shared, geom.j, geom.k} is not aligned")
    cov2 = check_covariance(cov2, 2) if validate else np.asarray(cov2, dtype=float)
    tau = np.asarray(tau_pair, dtype=float)
    A, b = triangle_facets(geom)
    holds = _facet_excess(A, b, tau) <= Defaults.tolerances.membership * geom.scale

    if geom.classification is TripleClass.ALIGNED_SHARED_BETWEEN:
        if holds[2]:
            return 0.0
        return line_distance(tau, A[2], b[2], cov2)

    if holds[0] and not holds[1]:
        return line_distance(tau, A[1], b[1], cov2)
    if holds[1] and not holds[0]:
        return line_distance(tau, A[0], b[0], cov2)
    return 0.0


def simplified_distance(tau_pair, geom: PlanarTripleGeometry, cov2,
                        validate: bool = True) -> float:
    """Simplified distance f of a shared-sensor pair, whatever the triple layout"""
    if geom.is_aligned:
        return aligned_distance(tau_pair, geom, cov2, validate)
    return strip_distance_general(tau_pair, geom, cov2, validate)


def zsc_plane_distance(triple, cov3, validate: bool = True) -> float:
    """Mahalanobis distance of (tau_ji, tau_ki, tau_kj) from the plane tau_ji - tau_ki + tau_kj = 0"""
    cov3 = check_covariance(cov3, 3) if validate else np.asarray(cov3, dtype=float)
    return line_distance(np.asarray(triple, dtype=float), _ZSC_NORMAL, 0.0, cov3)


# Linear relations

def relation_space_dimension(array: SensorArray, num_sources: int = 200,
                             rng_seed: int = 0) -> int:
    """
    Dimension of the space of linear relations among the complete TDOAs

    Stacks the TDOA vectors of random sources and returns q minus the
    numerical rank. Raises RankAmbiguityError when a singular value falls in
    the ambiguity band instead of guessing.
    """
    if num_sources < array.q:
        raise ValidationError(f"need at least q = {array.q} sources, got {num_sources}")
    tol = Defaults.tolerances
    rng = np.random.default_rng(rng_seed)

    # Sources in a ball of radius 2 * scale around the centroid
    directions = rng.normal(size=(num_sources, 3))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    radii = 2.0 * array.scale * rng.random(num_sources) ** (1.0 / 3.0)
    sources = array.centroid + directions * radii[:, None]

    M = np.array([tdoa_vector(x, array) for x in sources])
    singular = np.linalg.svd(M, compute_uv=False)
    relative = singular / singular[0]

    ambiguous = relative[(relative > tol.rank_gap_low) & (relative < tol.rank_gap_high)]
    if ambiguous.size:
        raise RankAmbiguityError(f"singular values {ambiguous.tolist()} (relative) are "
                                 "too close to the rank threshold")
    rank = int(np.count_nonzero(relative > tol.rank_zero))
    logger.debug("TDOA matrix %s has rank %d", M.shape, rank)
    return array.q - rank


def mean_tdoa_error(tdoas: TdoaSet, clean: TdoaSet) -> float:
    """Mean |tau - tau_hat| over the pairs of tdoas, against noiseless values"""
    if not len(tdoas):
        raise ValidationError("cannot average over an empty measurement set")
    return float(np.mean([abs(value - clean[pair]) for pair, value in tdoas.items()]))
