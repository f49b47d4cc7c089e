"""
Fleet stocks and well-to-wheel GHG emissions.

A vehicle stays in the fleet for `lifetime` years, so the stock of a technology in year y is the sum of its sales in
y - lifetime + 1 .. y.  Each vehicle-year emits the technology's factor (tCO2e), reported in Mt.
"""

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from tisdyn import errors
from tisdyn.catalog import Role, Technology

logger = logging.getLogger(__name__)

EMISSION_COLUMNS = ["scenario", "year", "technology", "annual_mt", "cumulative_mt"]

TOTAL = "total"


@dataclass(frozen=True)
class FactorPath:
    """tCO2e per vehicle-year: a constant, a straight line from `start` to `end` over the horizon, or annual values."""

    constant: Optional[float] = None
    start: Optional[float] = None
    end: Optional[float] = None
    series: Optional[Mapping[int, float]] = None

    def __post_init__(self):
        kinds = [self.constant is not None, self.start is not None or self.end is not None, self.series is not None]
        if sum(kinds) != 1:
            raise errors.ConfigValidationError("An emission factor is a constant, a {start, end} line or a series.")
        if kinds[1] and (self.start is None or self.end is None):
            raise errors.ConfigValidationError("A linear emission factor needs both start and end.")
        values = [self.constant, self.start, self.end] + list((self.series or {}).values())
        if any(v is not None and not (np.isfinite(v) and v >= 0) for v in values):
            raise errors.ConfigValidationError("Emission factors must be finite and >= 0.")

    def values(self, years: Sequence[int], t_start: float, t_end: float) -> np.ndarray:
        years = np.asarray(years, dtype=float)
        if self.constant is not None:
            return np.full(len(years), float(self.constant))
        if self.series is not None:
            missing = [int(y) for y in years if int(y) not in self.series]
            if missing:
                raise errors.ConfigValidationError(f"The emission factor series has no value for {missing[0]}.")
            return np.array([float(self.series[int(y)]) for y in years])
        fraction = (years - t_start) / (t_end - t_start)
        return self.start + (self.end - self.start) * fraction


@dataclass(frozen=True)
class EmissionFactors:
    paths: Mapping[Role, FactorPath]

    @classmethod
    def default(cls) -> "EmissionFactors":
        return cls(
            {
                Role.INCUMBENT: FactorPath(constant=4.6),
                Role.HYBRID: FactorPath(constant=3.0),
                Role.EMERGING: FactorPath(start=2.5, end=0.5),
            }
        )

    def table(self, technologies: Sequence[Technology], years: Sequence[int], t_start: float, t_end: float):
        columns = {}
        for technology in technologies:
            if technology.role not in self.paths:
                raise errors.ConfigValidationError(f"No emission factor for {technology}.")
            columns[str(technology)] = self.paths[technology.role].values(years, t_start, t_end)
        return pd.DataFrame(columns, index=pd.Index(list(years), name="year"))


@dataclass(frozen=True)
class FleetModel:
    lifetime: int = 15

    def __post_init__(self):
        if self.lifetime < 1:
            raise errors.ConfigValidationError(f"Vehicle lifetime ({self.lifetime}) must be at least one year.")


def stock_from_sales(sales: pd.DataFrame, lifetime: int = 15) -> pd.DataFrame:
    """Rolling `lifetime`-year sum of annual sales; years before the data start contribute nothing."""
    FleetModel(lifetime)
    years = np.asarray(sales.index, dtype=int)
    if len(years) > 1 and np.any(np.diff(years) != 1):
        raise errors.ConfigValidationError("Sales must be given for consecutive years.")
    if (sales.to_numpy() < 0).any():
        raise errors.ConfigValidationError("Sales must be >= 0.")
    stock = sales * 0.0
    for lag in range(min(lifetime, len(sales))):
        stock = stock + sales.shift(lag, fill_value=0.0)
    return stock


@dataclass(frozen=True, eq=False)
class EmissionReport:
    scenario: str
    annual: pd.DataFrame
    cumulative: pd.DataFrame = field(init=False)

    def __post_init__(self):
        annual = self.annual.copy()
        annual[TOTAL] = annual.sum(axis=1)
        object.__setattr__(self, "annual", annual)
        object.__setattr__(self, "cumulative", annual.cumsum())

    def total_cumulative(self, year: Optional[int] = None) -> float:
        column = self.cumulative[TOTAL]
        return float(column.iloc[-1] if year is None else column.loc[year])

    def to_frame(self) -> pd.DataFrame:
        annual = (
            self.annual.rename_axis("year").reset_index().melt("year", var_name="technology", value_name="annual_mt")
        )
        cumulative = (
            self.cumulative.rename_axis("year")
            .reset_index()
            .melt("year", var_name="technology", value_name="cumulative_mt")
        )
        frame = annual.merge(cumulative, on=["year", "technology"], sort=False)
        order = {name: k for k, name in enumerate(self.annual.columns)}
        frame["_order"] = frame["technology"].map(order)
        frame = frame.sort_values(["year", "_order"], kind="mergesort").drop(columns="_order")
        frame.insert(0, "scenario", self.scenario)
        frame["year"] = frame["year"].astype(int)
        return frame[EMISSION_COLUMNS].reset_index(drop=True)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "EmissionReport":
        scenarios = frame["scenario"].unique()
        if len(scenarios) != 1:
            raise errors.ConfigValidationError("An emission report covers exactly one scenario.")
        rows = frame[frame["technology"] != TOTAL]
        annual = rows.pivot(index="year", columns="technology", values="annual_mt")
        annual = annual[list(dict.fromkeys(rows["technology"]))]
        annual.columns.name = None
        return cls(str(scenarios[0]), annual)


def emissions(
    stocks: pd.DataFrame,
    factors: EmissionFactors,
    technologies: Sequence[Technology],
    t_start: float,
    t_end: float,
    scenario: str = "baseline",
) -> EmissionReport:
    years = [int(y) for y in stocks.index]
    table = factors.table(technologies, years, t_start, t_end)
    annual = stocks[[str(t) for t in technologies]] * table.to_numpy() / 1e6
    annual.index = pd.Index(years, name="year")
    report = EmissionReport(scenario, annual)
    logger.debug("%s: %.6g Mt cumulative by %d", scenario, report.total_cumulative(), years[-1] if years else 0)
    return report
