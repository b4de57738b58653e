"""
File formats
JSON array and measurement files, JSON/CSV removal reports, and the CSV
tables of campaigns and of the localization study

Column orders below are frozen; plotting scripts depend on them.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, List, Optional, Sequence, Union

import numpy as np

from .errors import ValidationError
from .geometry import PairIndex, SensorArray, TdoaSet
from .localization import LocalizationResult, StudyRow
from .removal import RemovalConfig, RemovalReport
from .settings import Defaults
from .simharness import CampaignRow
from .stattests import CovarianceModel

logger = logging.getLogger(__name__)

CAMPAIGN_COLUMNS = ("mode", "Z", "mean_tpr", "se_tpr", "mean_tnr", "se_tnr",
                    "mean_me_raw", "mean_me_filtered", "trials")
CASESTUDY_COLUMNS = ("mode", "assumed_sigma", "rmse_raw", "rmse_filtered", "median_raw",
                     "median_filtered", "improved_fraction", "me_raw", "me_filtered",
                     "mean_removed", "trials")
REPORT_COLUMNS = ("j", "i", "value", "status", "stage", "iteration", "bh_min", "fisher")

MISSING = "NA"


def load_json(path: Union[str, Path]) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        raise ValidationError(f"cannot read file: {exc.strerror}", field=str(path))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON at line {exc.lineno}: {exc.msg}", field=str(path))


def dump_json(data: Any, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(data, handle, indent=2)
        handle.write("\n")


def _number(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"expected a number, got {value!r}", field=name)
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError("must be finite", field=name)
    return value


def _index(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"expected an integer sensor index, got {value!r}", field=name)
    return value


@dataclass
class ArrayFile:
    """{"sensors": [[x, y, z], ...], "name": "..."} in meters"""
    array: SensorArray

    @classmethod
    def from_dict(cls, data: Any) -> "ArrayFile":
        if not isinstance(data, dict) or "sensors" not in data:
            raise ValidationError("expected an object with a 'sensors' list", field="sensors")
        sensors = data["sensors"]
        if not isinstance(sensors, list):
            raise ValidationError("expected a list of coordinates", field="sensors")
        coords = []
        for k, row in enumerate(sensors):
            if not isinstance(row, list) or len(row) not in (2, 3):
                raise ValidationError(f"entry {k} is not a 2D or 3D coordinate", field="sensors")
            coords.append([_number(v, f"sensors[{k}]") for v in row])
        name = data.get("name", "")
        if not isinstance(name, str):
            raise ValidationError("expected a string", field="name")
        return cls(SensorArray(coords, name=name))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ArrayFile":
        return cls.from_dict(load_json(path))

    def to_dict(self) -> dict:
        return {"sensors": self.array.positions.tolist(), "name": self.array.name}

    def save(self, path: Union[str, Path]) -> None:
        dump_json(self.to_dict(), path)


@dataclass
class MeasurementFile:
    """
    {"pairs": [{"j", "i", "value"}], "units": "meters"|"seconds", "speed": ...,
     "sigma": scalar or list aligned with pairs, "covariance": optional matrix}

    Seconds are converted to meters on load; the in-memory form is always meters.
    """
    tdoas: TdoaSet
    sigma: Union[float, List[float], None] = None
    covariance: Optional[List[List[float]]] = None
    order: List[PairIndex] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: Any) -> "MeasurementFile":
        if not isinstance(data, dict) or not isinstance(data.get("pairs"), list):
            raise ValidationError("expected an object with a 'pairs' list", field="pairs")

        units = data.get("units", "meters")
        if units not in ("meters", "seconds"):
            raise ValidationError(f"expected 'meters' or 'seconds', got {units!r}", field="units")
        factor = 1.0
        if units == "seconds":
            if data.get("speed") is None:
                logger.warning("Measurements in seconds without 'speed': assuming %g m/s",
                               Defaults.SPEED_OF_SOUND)
                factor = Defaults.SPEED_OF_SOUND
            else:
                factor = _number(data["speed"], "speed")
                if factor <= 0.0:
                    raise ValidationError("must be > 0", field="speed")

        entries = {}
        order = []
        for k, item in enumerate(data["pairs"]):
            if not isinstance(item, dict) or not {"j", "i", "value"} <= set(item):
                raise ValidationError(f"entry {k} needs keys j, i and value", field="pairs")
            j, i = _index(item["j"], f"pairs[{k}].j"), _index(item["i"], f"pairs[{k}].i")
            try:
                pair = PairIndex.of(j, i)
            except ValidationError as exc:
                raise ValidationError(str(exc), field=f"pairs[{k}]")
            if pair in entries:
                raise ValidationError(f"duplicate pair ({j}, {i})", field=f"pairs[{k}]")
            entries[pair] = _number(item["value"], f"pairs[{k}].value") * factor
            order.append(pair)

        sigma = data.get("sigma")
        if isinstance(sigma, list):
            if len(sigma) != len(order):
                raise ValidationError(f"expected {len(order)} values, got {len(sigma)}", field="sigma")
            sigma = [_number(s, f"sigma[{k}]") * factor for k, s in enumerate(sigma)]
        elif sigma is not None:
            sigma = _number(sigma, "sigma") * factor

        covariance = data.get("covariance")
        if covariance is not None:
            matrix = np.asarray(covariance, dtype=object)
            if matrix.shape != (len(order), len(order)):
                raise ValidationError(f"expected a {len(order)}x{len(order)} matrix", field="covariance")
            covariance = [[_number(v, "covariance") * factor ** 2 for v in row] for row in covariance]

        return cls(TdoaSet(entries), sigma, covariance, order)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MeasurementFile":
        return cls.from_dict(load_json(path))

    @classmethod
    def from_tdoas(cls, tdoas: TdoaSet, sigma: Union[float, List[float], None] = None) -> "MeasurementFile":
        return cls(tdoas, sigma, None, tdoas.pairs())

    def to_dict(self) -> dict:
        order = self.order or self.tdoas.pairs()
        data = {"pairs": [{"j": p.j, "i": p.i, "value": self.tdoas[p]} for p in order],
                "units": "meters"}
        if self.sigma is not None:
            data["sigma"] = self.sigma
        if self.covariance is not None:
            data["covariance"] = self.covariance
        return data

    def save(self, path: Union[str, Path]) -> None:
        dump_json(self.to_dict(), path)

    def covariance_model(self, sigma_override: Optional[float] = None) -> CovarianceModel:
        """Full matrix when given, else per-pair or shared sigma; the override wins"""
        if sigma_override is not None:
            return CovarianceModel.isotropic(sigma_override)
        order = self.order or self.tdoas.pairs()
        if self.covariance is not None:
            return CovarianceModel.full(self.covariance, order)
        if isinstance(self.sigma, list):
            return CovarianceModel.diagonal(dict(zip(order, self.sigma)))
        if self.sigma is None:
            logger.warning("No sigma in measurement file: assuming %g m", Defaults.SIGMA)
            return CovarianceModel.isotropic(Defaults.SIGMA)
        return CovarianceModel.isotropic(self.sigma)


# Reports

def _cell(value: Any) -> str:
    if value is None:
        return MISSING
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def _write_rows(path: Union[str, Path], columns: Sequence[str], rows: Sequence[dict],
                preamble: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if preamble is not None:
            handle.write(f"# {preamble}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])


def report_to_dict(report: RemovalReport, config: RemovalConfig) -> dict:
    return {
        "mode": config.mode.value,
        "alpha": config.alpha,
        "removed": report.removals(),
        "survivors": [{"j": p.j, "i": p.i, "value": v} for p, v in report.survivors.items()],
        "untestable": [{"j": p.j, "i": p.i} for p in report.untestable],
        "iterations": len(report.iterations),
        "clamped": report.clamped,
        "counters": report.counters.to_dict(),
    }


def report_rows(report: RemovalReport, measured: TdoaSet) -> List[dict]:
    """One row per input TDOA, in TDOA-vector order"""
    removed = {(r["j"], r["i"]): r for r in report.removals()}
    untestable = set(report.untestable)
    rows = []
    for pair, value in measured.items():
        row = {"j": pair.j, "i": pair.i, "value": value, "status": "kept",
               "stage": None, "iteration": None, "bh_min": None, "fisher": None}
        if pair in removed:
            row.update(removed[pair])
            row["status"] = "removed"
        elif pair in untestable:
            row["status"] = "untestable"
        rows.append(row)
    return rows


def write_report(report: RemovalReport, config: RemovalConfig, measured: TdoaSet,
                 path: Union[str, Path], fmt: str = "json") -> None:
    if fmt == "json":
        dump_json(report_to_dict(report, config), path)
    elif fmt == "csv":
        _write_rows(path, REPORT_COLUMNS, report_rows(report, measured))
    else:
        raise ValidationError(f"unknown format {fmt!r}", field="format")


def generator_stamp() -> str:
    """Bit generator and numpy version; seeded streams only replay under both"""
    return f"generator={np.random.PCG64.__name__} numpy={np.__version__}"


def write_campaign_csv(rows: Sequence[CampaignRow], path: Union[str, Path]) -> None:
    """Campaign table, preceded by a '# generator=... numpy=...' comment line"""
    _write_rows(path, CAMPAIGN_COLUMNS, [vars(r) for r in rows], preamble=generator_stamp())


def write_casestudy_csv(rows: Sequence[StudyRow], path: Union[str, Path]) -> None:
    _write_rows(path, CASESTUDY_COLUMNS, [vars(r) for r in rows])


def write_localization_json(result: LocalizationResult, path: Union[str, Path],
                            removed: Optional[List[dict]] = None) -> None:
    data = result.to_dict()
    if removed is not None:
        data["removed"] = removed
    dump_json(data, path)
