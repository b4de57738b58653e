"""
tdoaspace
Statistical outlier detection for TDOA measurements, driven by the geometry
of the feasible TDOA set
"""

from .errors import NumericError, RankAmbiguityError, TdoaSpaceError, ValidationError
from .geometry import PairIndex, SensorArray, TdoaSet, tdoa_map
from .localization import LocalizationConfig, localize
from .removal import ExplorationMode, RemovalConfig, RemovalReport, remove_outliers
from .settings import Defaults
from .stattests import CovarianceModel
