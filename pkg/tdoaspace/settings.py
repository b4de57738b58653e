"""
TDOA-space defaults
Numeric defaults, tolerances and environment lookups shared by the package
"""

import logging
import os
from dataclasses import dataclass

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances"""
    # Alignment of sensor triples, relative to the largest side
    alignment: float = 1e-6
    alignment_exact: float = 1e-9

    # Closed-set membership, multiplied by the array scale
    membership: float = 1e-12

    # Numerical rank, relative to the largest singular value
    rank_zero: float = 1e-8
    rank_gap_low: float = 1e-10
    rank_gap_high: float = 1e-6

    # Symmetry check for full covariance matrices
    symmetry: float = 1e-12


class Defaults:
    """Default values for the library and the command line"""

    # Statistical pipeline
    ALPHA = 0.05
    SIGMA = 0.007            # meters (0.7 cm)
    PVALUE_FLOOR = 1e-300

    # Units
    SPEED_OF_SOUND = 343.0   # m/s

    # Simulation
    SOURCE_RADIUS = 2.0      # meters around the array centroid
    SENSOR_CLEARANCE = 0.01  # meters
    LINEAR7_SPACING = 0.10
    CROSS7_ARM = 0.30
    RUNS = 100
    POSITIONS = 20

    # Localization case study
    TETRAHEDRON_SIDE = 0.40
    CASE_STUDY_VOLUME = (4.0, 2.5, 2.0)

    # Concurrency
    THREADS_ENV = "TDOASPACE_THREADS"

    tolerances = Tolerances()

    @classmethod
    def thread_count(cls) -> int:
        """Worker count for campaigns, from the environment (default 1)"""
        raw = os.environ.get(cls.THREADS_ENV)
        if not raw:
            return 1
        try:
            count = int(raw)
        except ValueError:
            logger.warning("Ignoring %s=%r: not an integer", cls.THREADS_ENV, raw)
            return 1
        if count < 1:
            logger.warning("Ignoring %s=%r: must be >= 1", cls.THREADS_ENV, raw)
            return 1
        return count
