"""
Behaviour of each technology's innovation system, and the sales it turns its market share into.

Summed over one side, the growth rates a say whether the system is creative (positive) or uncreative (negative) and
the self-decline rates b say whether it is exploitative (positive) or explorative (negative).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from tisdyn import errors
from tisdyn.catalog import Side, SideGrouping
from tisdyn.dynamics import ParameterBlock, ParameterTimeline, Trajectory
from tisdyn.modes import EpsilonPolicy

logger = logging.getLogger(__name__)

BEHAVIOR_COLUMNS = ["window_start", "window_end", "technology", "scope", "sum_a", "sum_b", "creativity", "orientation"]


class Creativity(str, Enum):
    CREATIVE = "creative"
    UNCREATIVE = "uncreative"
    NEUTRAL = "neutral"


class Orientation(str, Enum):
    EXPLOITATIVE = "exploitative"
    EXPLORATIVE = "explorative"
    NEUTRAL = "neutral"


@dataclass(frozen=True)
class BehaviorLabel:
    creativity: Creativity
    orientation: Orientation
    sum_a: float
    sum_b: float
    window: Optional[Tuple[float, float]] = None


def side_sum(params: ParameterBlock, members: Sequence[str], technology: int) -> Tuple[float, float]:
    if not members:
        raise errors.ConfigValidationError("Cannot sum over an empty side.")
    columns = [params.sub_dimensions.index(key) for key in members]
    return float(params.a[technology, columns].sum()), float(params.b[technology, columns].sum())


def classify_behavior(
    sum_a: float,
    sum_b: float,
    policy: EpsilonPolicy = EpsilonPolicy(),
    window: Optional[Tuple[float, float]] = None,
) -> BehaviorLabel:
    creativity = {1: Creativity.CREATIVE, -1: Creativity.UNCREATIVE, 0: Creativity.NEUTRAL}[policy.sign(sum_a)]
    orientation = {1: Orientation.EXPLOITATIVE, -1: Orientation.EXPLORATIVE, 0: Orientation.NEUTRAL}[
        policy.sign(sum_b)
    ]
    return BehaviorLabel(creativity, orientation, sum_a, sum_b, window)


def behavior_series(
    timeline: ParameterTimeline,
    sides: SideGrouping,
    t_end: float,
    policy: EpsilonPolicy = EpsilonPolicy(),
    per_sub_dimension: bool = False,
) -> pd.DataFrame:
    """One label per (window, technology, side), and per sub-dimension as well when asked."""
    rows = []
    for start, end in timeline.windows(t_end):
        block = timeline.block_at(start)
        for index, technology in enumerate(block.technologies):
            if not block.active[index]:
                continue
            scopes: List[Tuple[str, Sequence[str]]] = [(f"side:{side.value}", sides.members(side)) for side in Side]
            if per_sub_dimension:
                scopes += [(key, (key,)) for key in block.sub_dimensions]
            for scope, members in scopes:
                sum_a, sum_b = side_sum(block, members, index)
                label = classify_behavior(sum_a, sum_b, policy, (start, end))
                rows.append(
                    {
                        "window_start": int(round(start)),
                        "window_end": int(round(end)),
                        "technology": str(technology),
                        "scope": scope,
                        "sum_a": sum_a,
                        "sum_b": sum_b,
                        "creativity": label.creativity.value,
                        "orientation": label.orientation.value,
                    }
                )
    return pd.DataFrame(rows, columns=BEHAVIOR_COLUMNS)


@dataclass(frozen=True, eq=False)
class MarketSizeSeries:
    years: np.ndarray
    sales: np.ndarray

    def __post_init__(self):
        years = np.asarray(self.years, dtype=int)
        sales = np.asarray(self.sales, dtype=float)
        if years.shape != sales.shape or years.ndim != 1:
            raise errors.ConfigValidationError("Market size years and values must be matching 1-d sequences.")
        if np.any(np.diff(years) <= 0):
            raise errors.ConfigValidationError("Market size years must be strictly increasing.")
        if not np.isfinite(sales).all() or (sales <= 0).any():
            raise errors.ConfigValidationError("Total market size must be positive in every year.")
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "sales", sales)

    @classmethod
    def from_growth(
        cls,
        base_year: int,
        base_size: float,
        growth: Mapping[int, float],
        end_year: int,
        multiplier: float = 1.0,
        elasticity: float = 1.0,
    ) -> "MarketSizeSeries":
        """market[y + 1] = market[y] * (1 + growth[y] * multiplier * elasticity)"""
        years = np.arange(base_year, end_year + 1)
        sizes = np.empty(len(years))
        sizes[0] = base_size
        for k in range(1, len(years)):
            sizes[k] = sizes[k - 1] * (1.0 + float(growth[int(years[k - 1])]) * multiplier * elasticity)
        return cls(years, sizes)

    def at(self, year: int) -> float:
        found = np.flatnonzero(self.years == year)
        if found.size == 0:
            raise errors.MissingMarketYearError(f"The market size series has no value for {year}.")
        return float(self.sales[found[0]])

    def to_series(self) -> pd.Series:
        return pd.Series(self.sales, index=self.years, name="market_size")


def sales_from_share(trajectory: Trajectory, market: MarketSizeSeries, share_key: str = "market_share") -> pd.DataFrame:
    """Annual sales per technology, indexed by year with one column per technology."""
    years, levels = trajectory.annual()
    share = levels[:, :, trajectory.sub_dimensions.index(share_key)]
    missing = sorted(set(years.tolist()) - set(market.years.tolist()))
    if missing:
        raise errors.MissingMarketYearError(f"The market size series has no value for {missing[0]}.")
    size = market.to_series().reindex(years).to_numpy()
    return pd.DataFrame(
        share * size[:, None], index=pd.Index(years, name="year"), columns=[str(t) for t in trajectory.technologies]
    )
