"""
Relationship modes between two technologies, read off the signs of their interaction coefficients.

c_ij is the coefficient in technology i's equation for the effect of technology j, with the subtraction convention: a
positive coefficient harms i, a negative one benefits it.  Coefficients within the epsilon band count as zero.

    (+, +) competition      (-, -) symbiosis        (0, 0) neutralism
    (-, +) parasitism       (-, 0) commensalism     (+, 0) amensalism

For the mixed pairs the label records who benefits and who is harmed.
"""

import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from tisdyn import errors
from tisdyn.catalog import Side, SideGrouping, Technology
from tisdyn.dynamics import ParameterBlock, ParameterTimeline, Trajectory

logger = logging.getLogger(__name__)

Party = Union[Technology, str]

MODE_COLUMNS = ["window_start", "window_end", "pair", "scope", "mode", "beneficiary", "victim"]

GAP = "gap"


class Mode(str, Enum):
    COMPETITION = "competition"
    SYMBIOSIS = "symbiosis"
    PARASITISM = "parasitism"
    COMMENSALISM = "commensalism"
    AMENSALISM = "amensalism"
    NEUTRALISM = "neutralism"


class Aggregation(str, Enum):
    EXTERNALITY = "externality"
    COEFFICIENTS = "coefficients"


@dataclass(frozen=True)
class EpsilonPolicy:
    absolute: float = 1e-6
    relative: Optional[float] = None

    def __post_init__(self):
        if not self.absolute >= 0:
            raise errors.ConfigValidationError(f"epsilon ({self.absolute}) must be >= 0.")
        if self.relative is not None and not self.relative >= 0:
            raise errors.ConfigValidationError(f"relative epsilon ({self.relative}) must be >= 0.")

    def threshold(self, coefficients: Optional[Iterable[float]] = None) -> float:
        if self.relative is None or coefficients is None:
            return self.absolute
        magnitudes = np.abs(np.asarray(list(coefficients), dtype=float))
        if magnitudes.size == 0:
            return self.absolute
        return max(self.absolute, self.relative * float(np.median(magnitudes)))

    def sign(self, value: float, threshold: Optional[float] = None) -> int:
        band = self.absolute if threshold is None else threshold
        if value > band:
            return 1
        if value < -band:
            return -1
        return 0


@dataclass(frozen=True)
class ModeLabel:
    mode: Mode
    beneficiary: Optional[Party] = None
    victim: Optional[Party] = None

    def __post_init__(self):
        named = (self.beneficiary is not None, self.victim is not None)
        expected = {
            Mode.PARASITISM: (True, True),
            Mode.COMMENSALISM: (True, False),
            Mode.AMENSALISM: (False, True),
        }.get(self.mode, (False, False))
        if named != expected:
            raise ValueError(f"{self.mode.value} cannot name beneficiary={self.beneficiary} victim={self.victim}")

    def describe(self, first: Party, second: Party) -> str:
        if self.mode is Mode.PARASITISM:
            return f"{self.beneficiary} parasitizes {self.victim}"
        if self.mode is Mode.COMMENSALISM:
            other = second if self.beneficiary == first else first
            return f"{self.beneficiary} benefits from {other}, which is unaffected"
        if self.mode is Mode.AMENSALISM:
            other = second if self.victim == first else first
            return f"{self.victim} is harmed by {other}, which is unaffected"
        if self.mode is Mode.COMPETITION:
            return f"{first} and {second} compete"
        if self.mode is Mode.SYMBIOSIS:
            return f"{first} and {second} live in symbiosis"
        return f"{first} and {second} do not affect each other"


def classify_pair(
    c_ij: float,
    c_ji: float,
    policy: EpsilonPolicy = EpsilonPolicy(),
    first: Party = "i",
    second: Party = "j",
    threshold: Optional[float] = None,
) -> ModeLabel:
    if not (np.isfinite(c_ij) and np.isfinite(c_ji)):
        raise errors.NonFiniteValueError(f"Cannot classify the non-finite coefficient pair ({c_ij}, {c_ji}).")
    s_ij, s_ji = policy.sign(c_ij, threshold), policy.sign(c_ji, threshold)
    if s_ij == s_ji == 1:
        return ModeLabel(Mode.COMPETITION)
    if s_ij == s_ji == -1:
        return ModeLabel(Mode.SYMBIOSIS)
    if s_ij == s_ji == 0:
        return ModeLabel(Mode.NEUTRALISM)
    if s_ij == -1 and s_ji == 1:
        return ModeLabel(Mode.PARASITISM, beneficiary=first, victim=second)
    if s_ij == 1 and s_ji == -1:
        return ModeLabel(Mode.PARASITISM, beneficiary=second, victim=first)
    if s_ij == -1:
        return ModeLabel(Mode.COMMENSALISM, beneficiary=first)
    if s_ji == -1:
        return ModeLabel(Mode.COMMENSALISM, beneficiary=second)
    if s_ij == 1:
        return ModeLabel(Mode.AMENSALISM, victim=first)
    return ModeLabel(Mode.AMENSALISM, victim=second)


def _side_indices(params: ParameterBlock, members: Sequence[str]) -> List[int]:
    if not members:
        raise errors.ConfigValidationError("Cannot aggregate modes over an empty side.")
    return [params.sub_dimensions.index(key) for key in members]


def aggregate_side_externality(
    trajectory: Trajectory,
    params: ParameterBlock,
    members: Sequence[str],
    pair: Tuple[int, int],
    window: Tuple[float, float],
) -> Tuple[float, float]:
    """
    Net externality each technology of the pair receives from the other over a window, summed over a side.

    E_i<-j is the time average over the window of -c[i,j,d] * X[i,d] * X[j,d], summed over the side's sub-dimensions;
    a positive value means j net-benefits i.
    """
    i, j = pair
    columns = _side_indices(params, members)
    start, end = window
    inside = (trajectory.times >= start - 1e-9) & (trajectory.times < end - 1e-9)
    if not inside.any():
        inside = np.abs(trajectory.times - start) < 1e-9
    if not inside.any():
        raise errors.ConfigValidationError(f"The window {start:g}-{end:g} lies outside the simulated horizon.")
    x = trajectory.levels[inside][:, :, columns]
    product = x[:, i, :] * x[:, j, :]
    received_by_i = -(params.c[i, j, columns] * product).mean(axis=0).sum()
    received_by_j = -(params.c[j, i, columns] * product).mean(axis=0).sum()
    return float(received_by_i), float(received_by_j)


def aggregate_side_coefficients(
    params: ParameterBlock, members: Sequence[str], pair: Tuple[int, int]
) -> Tuple[float, float]:
    i, j = pair
    columns = _side_indices(params, members)
    return float(params.c[i, j, columns].sum()), float(params.c[j, i, columns].sum())


@dataclass(frozen=True)
class ModeEntry:
    window_start: float
    window_end: float
    first: Technology
    second: Technology
    scope: str
    label: Optional[ModeLabel]

    @property
    def pair(self) -> str:
        return f"{self.first}-{self.second}"

    @property
    def is_gap(self) -> bool:
        return self.label is None


@dataclass(frozen=True)
class ModeSeries:
    entries: Tuple[ModeEntry, ...] = ()

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __add__(self, other: "ModeSeries") -> "ModeSeries":
        return ModeSeries(self.entries + other.entries)

    def labels(self, pair: str, scope: str) -> List[Optional[ModeLabel]]:
        return [e.label for e in self.entries if e.pair == pair and e.scope == scope]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for entry in self.entries:
            label = entry.label
            rows.append(
                {
                    "window_start": int(round(entry.window_start)),
                    "window_end": int(round(entry.window_end)),
                    "pair": entry.pair,
                    "scope": entry.scope,
                    "mode": GAP if label is None else label.mode.value,
                    "beneficiary": "" if label is None or label.beneficiary is None else str(label.beneficiary),
                    "victim": "" if label is None or label.victim is None else str(label.victim),
                }
            )
        return pd.DataFrame(rows, columns=MODE_COLUMNS)


def _pairs(block: ParameterBlock) -> List[Tuple[int, int]]:
    active = [i for i in range(block.n_technologies) if block.active[i]]
    return list(itertools.combinations(active, 2))


def mode_series(
    timeline: ParameterTimeline,
    policy: EpsilonPolicy = EpsilonPolicy(),
    t_end: Optional[float] = None,
    windows: Optional[Sequence[Tuple[float, float]]] = None,
) -> ModeSeries:
    """
    One label per window, pair and sub-dimension.

    A window with no fitted block of its own (absent from the timeline, or covered by a forward-filled block) is
    recorded as a gap.
    """
    if windows is None:
        if t_end is None:
            raise errors.ConfigValidationError("mode_series needs either t_end or explicit windows.")
        windows = timeline.windows(t_end)
    own = {piece.start: piece for piece in timeline if not piece.filled}
    technologies = timeline.technologies
    entries = []
    for start, end in windows:
        piece = own.get(start)
        if piece is None:
            logger.info("no fitted parameters for the window starting %g; recording a gap", start)
            for i, j in itertools.combinations(range(len(technologies)), 2):
                for key in timeline.sub_dimensions:
                    entries.append(ModeEntry(start, end, technologies[i], technologies[j], key, None))
            continue
        block = piece.block
        threshold = policy.threshold(block.c[~np.eye(block.n_technologies, dtype=bool)].ravel())
        for i, j in _pairs(block):
            for d, key in enumerate(block.sub_dimensions):
                label = classify_pair(
                    block.c[i, j, d], block.c[j, i, d], policy, technologies[i], technologies[j], threshold
                )
                entries.append(ModeEntry(start, end, technologies[i], technologies[j], key, label))
    return ModeSeries(tuple(entries))


def side_mode_series(
    trajectory: Optional[Trajectory],
    timeline: ParameterTimeline,
    sides: SideGrouping,
    policy: EpsilonPolicy = EpsilonPolicy(),
    aggregation: Aggregation = Aggregation.EXTERNALITY,
    t_end: Optional[float] = None,
) -> ModeSeries:
    """
    One label per window, pair and side, scoped "side:technology" and "side:market".  Externality aggregation weighs
    the coefficients with the trajectory's levels, so it needs one; coefficient aggregation works from the timeline
    alone.
    """
    aggregation = Aggregation(aggregation)
    if trajectory is None and aggregation is Aggregation.EXTERNALITY:
        raise errors.ConfigValidationError("Externality aggregation needs a simulated trajectory.")
    if t_end is None:
        if trajectory is None:
            raise errors.ConfigValidationError("side_mode_series needs either a trajectory or t_end.")
        t_end = float(trajectory.times[-1])
    technologies = timeline.technologies
    entries = []
    for start, end in timeline.windows(t_end):
        piece = timeline.piece_at(start)
        if piece.filled:
            for i, j in itertools.combinations(range(len(technologies)), 2):
                for side in Side:
                    entries.append(ModeEntry(start, end, technologies[i], technologies[j], f"side:{side.value}", None))
            continue
        block = piece.block
        for i, j in _pairs(block):
            for side in Side:
                members = sides.members(side)
                if aggregation is Aggregation.EXTERNALITY:
                    received_i, received_j = aggregate_side_externality(
                        trajectory, block, members, (i, j), (start, end)
                    )
                    pair_values = (-received_i, -received_j)
                else:
                    pair_values = aggregate_side_coefficients(block, members, (i, j))
                label = classify_pair(*pair_values, policy, technologies[i], technologies[j])
                entries.append(ModeEntry(start, end, technologies[i], technologies[j], f"side:{side.value}", label))
    return ModeSeries(tuple(entries))
