"""
The seven scenarios, each a transformation of the baseline parameter timeline plus, for the sociotechnical transition,
a hook that intervenes while the simulation runs.

    baseline                    identity
    landscape-pressure          exogenous drivers raised (150% by default), mapped onto a through elasticities
    niche-incumbent             the hybrid is taken off the market
    hybrid-incumbent            the emerging technology is taken off the market
    sociotechnical-transition   when the emerging share declines, reinforce it and weaken the others for 20 years
    niche-favoured              benefits it receives and harm it inflicts grow, the reverse shrink
    predator-prey               fixed interaction signs with baseline magnitudes
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, ClassVar, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from tisdyn import errors
from tisdyn.catalog import Role, Side, SideGrouping, Technology
from tisdyn.dynamics import ParameterBlock, ParameterModifier, ParameterTimeline, ScenarioHook
from tisdyn.tis_model import MarketSizeSeries

logger = logging.getLogger(__name__)


class Variant(str, Enum):
    BASELINE = "baseline"
    LANDSCAPE_PRESSURE = "landscape-pressure"
    NICHE_INCUMBENT = "niche-incumbent"
    HYBRID_INCUMBENT = "hybrid-incumbent"
    SOCIOTECHNICAL_TRANSITION = "sociotechnical-transition"
    NICHE_FAVOURED = "niche-favoured"
    PREDATOR_PREY = "predator-prey"


class DriverName(str, Enum):
    OIL_PRICE = "oil_price"
    TAX_REGISTRATION_FEES = "tax_registration_fees"
    GDP_GROWTH = "gdp_growth"
    WTW_COSTS = "wtw_costs"


@dataclass(frozen=True, eq=False)
class Driver:
    baseline: pd.Series
    multiplier: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.multiplier) and self.multiplier > 0):
            raise errors.ConfigValidationError(f"Driver multiplier {self.multiplier} must be positive.")
        if not np.isfinite(self.baseline.to_numpy(dtype=float)).all():
            raise errors.ConfigValidationError("Driver baseline values must be finite.")

    def projected(self) -> pd.Series:
        return self.baseline * self.multiplier

    def with_multiplier(self, multiplier: float) -> "Driver":
        return Driver(self.baseline, multiplier)

    def covers(self, first_year: int, last_year: int) -> bool:
        return set(range(first_year, last_year + 1)) <= set(int(y) for y in self.baseline.index)


def growing_series(start_value: float, annual_growth: float, first_year: int, last_year: int) -> pd.Series:
    years = np.arange(first_year, last_year + 1)
    return pd.Series(start_value * (1.0 + annual_growth) ** (years - first_year), index=years)


@dataclass(frozen=True)
class ExogenousDrivers:
    oil_price: Driver
    tax_registration_fees: Driver
    gdp_growth: Driver
    wtw_costs: Driver

    @classmethod
    def default(cls, first_year: int = 1985, last_year: int = 2070) -> "ExogenousDrivers":
        return cls(
            oil_price=Driver(growing_series(2.0, 0.01, first_year, last_year)),
            tax_registration_fees=Driver(growing_series(1500.0, 0.0, first_year, last_year)),
            gdp_growth=Driver(growing_series(0.015, 0.0, first_year, last_year)),
            wtw_costs=Driver(growing_series(100.0, 0.01, first_year, last_year)),
        )

    def get(self, name: DriverName) -> Driver:
        return getattr(self, DriverName(name).value)

    def items(self) -> List[Tuple[DriverName, Driver]]:
        return [(name, self.get(name)) for name in DriverName]

    def with_multipliers(self, multipliers: Mapping[DriverName, float]) -> "ExogenousDrivers":
        changed = {DriverName(k).value: self.get(k).with_multiplier(v) for k, v in multipliers.items()}
        return ExogenousDrivers(**{**{name.value: driver for name, driver in self.items()}, **changed})

    def problems(self, first_year: int, last_year: int) -> List[str]:
        return [
            f"Driver {name.value} does not cover {first_year}-{last_year}."
            for name, driver in self.items()
            if not driver.covers(first_year, last_year)
        ]


ElasticityKey = Tuple[Role, str]


@dataclass(frozen=True)
class ElasticityMap:
    """Per driver, per (technology role, sub-dimension): e in a' = a * (1 + e * (multiplier - 1))."""

    entries: Mapping[DriverName, Mapping[ElasticityKey, float]] = field(default_factory=dict)

    def __post_init__(self):
        for name, cells in self.entries.items():
            for key, value in cells.items():
                if not np.isfinite(value):
                    raise errors.ConfigValidationError(
                        f"Elasticity of {key[1]} for {key[0].value} to {name} is not finite."
                    )

    def elasticity(self, driver: DriverName, role: Role, sub_dimension: str) -> float:
        return float(self.entries.get(DriverName(driver), {}).get((role, sub_dimension), 0.0))

    def factor(self, block: ParameterBlock, drivers: ExogenousDrivers) -> np.ndarray:
        """The product over drivers of (1 + e * (m - 1)) for every (technology, sub-dimension)."""
        factor = np.ones(block.a.shape)
        for name, driver in drivers.items():
            if name not in self.entries:
                continue
            for i, technology in enumerate(block.technologies):
                for d, key in enumerate(block.sub_dimensions):
                    e = self.elasticity(name, technology.role, key)
                    if e:
                        factor[i, d] *= 1.0 + e * (driver.multiplier - 1.0)
        return factor


def default_elasticities(sides: SideGrouping) -> ElasticityMap:
    market = sides.members(Side.MARKET)
    cells: Dict[ElasticityKey, float] = {}
    for key in market:
        cells[(Role.EMERGING, key)] = 0.5
        cells[(Role.HYBRID, key)] = 0.25
    for key in ("market_share", "financial_capital"):
        if key in market:
            cells[(Role.INCUMBENT, key)] = -0.5
    return ElasticityMap({DriverName.OIL_PRICE: dict(cells), DriverName.WTW_COSTS: dict(cells)})


@dataclass(frozen=True)
class ScenarioSpec:
    variant: ClassVar[Variant]

    @property
    def name(self) -> str:
        return self.variant.value


@dataclass(frozen=True)
class Baseline(ScenarioSpec):
    variant: ClassVar[Variant] = Variant.BASELINE


@dataclass(frozen=True)
class LandscapePressure(ScenarioSpec):
    variant: ClassVar[Variant] = Variant.LANDSCAPE_PRESSURE
    multipliers: Mapping[DriverName, float] = field(default_factory=lambda: {name: 1.5 for name in DriverName})


@dataclass(frozen=True)
class NicheIncumbent(ScenarioSpec):
    variant: ClassVar[Variant] = Variant.NICHE_INCUMBENT
    removed: Role = Role.HYBRID


@dataclass(frozen=True)
class HybridIncumbent(ScenarioSpec):
    variant: ClassVar[Variant] = Variant.HYBRID_INCUMBENT
    removed: Role = Role.EMERGING


@dataclass(frozen=True)
class SociotechnicalTransition(ScenarioSpec):
    variant: ClassVar[Variant] = Variant.SOCIOTECHNICAL_TRANSITION
    reinforce_factor: float = 1.25
    weaken_factor: float = 0.75
    duration_years: int = 20
    hev_share_gate: float = 0.5
    decline_window: int = 3
    weaken_decline_rate: bool = False


@dataclass(frozen=True)
class NicheFavoured(ScenarioSpec):
    variant: ClassVar[Variant] = Variant.NICHE_FAVOURED
    toward_scale: float = 1.5
    away_scale: float = 0.5


@dataclass(frozen=True)
class PredatorPrey(ScenarioSpec):
    variant: ClassVar[Variant] = Variant.PREDATOR_PREY


SPEC_CLASSES = {
    cls.variant: cls
    for cls in (
        Baseline,
        LandscapePressure,
        NicheIncumbent,
        HybridIncumbent,
        SociotechnicalTransition,
        NicheFavoured,
        PredatorPrey,
    )
}


def default_spec(variant: Variant) -> ScenarioSpec:
    return SPEC_CLASSES[Variant(variant)]()


def role_index(technologies: Sequence[Technology], role: Role) -> int:
    for index, technology in enumerate(technologies):
        if technology.role is role:
            return index
    raise errors.ConfigValidationError(f"No {role.value} technology is configured.")


def detect_structural_decline(shares: Sequence[float], window: int = 3) -> bool:
    """True iff the mean year-over-year change over the last `window` years is negative."""
    if len(shares) < window + 1:
        return False
    return (shares[-1] - shares[-1 - window]) / window < 0


class SociotechnicalHook:
    """
    Watches the emerging technology's annual market share.  When it declines, the emerging technology's a is multiplied
    by the reinforce factor and the incumbent's by the weaken factor for the following duration_years; the hybrid is
    weakened too while its latest annual share is above the gate.  After the window the detector is armed again.
    """

    def __init__(self, spec: SociotechnicalTransition, technologies: Sequence[Technology], shape, share_index: int):
        self.spec = spec
        self.share_index = share_index
        self.incumbent = role_index(technologies, Role.INCUMBENT)
        self.hybrid = role_index(technologies, Role.HYBRID)
        self.emerging = role_index(technologies, Role.EMERGING)
        self.active_until: Optional[int] = None
        self.firings: List[int] = []
        self._seen_year: Optional[int] = None

        self._scale_base = np.ones(shape)
        self._scale_base[self.emerging] = spec.reinforce_factor
        self._scale_base[self.incumbent] = spec.weaken_factor
        self._scale_gated = self._scale_base.copy()
        self._scale_gated[self.hybrid] = spec.weaken_factor
        self._decline_base = self._scale_base.copy()
        self._decline_base[self.emerging] = 1.0
        self._decline_gated = self._scale_gated.copy()
        self._decline_gated[self.emerging] = 1.0

    def _on_new_year(self, year: int, annual_levels: Sequence[np.ndarray]):
        if self.active_until is not None and year >= self.active_until:
            logger.debug("sociotechnical intervention ended in %d", year)
            self.active_until = None
        if self.active_until is None:
            recent = annual_levels[-(self.spec.decline_window + 1) :]
            shares = [levels[self.emerging, self.share_index] for levels in recent]
            if detect_structural_decline(shares, self.spec.decline_window):
                self.active_until = year + self.spec.duration_years
                self.firings.append(year)
                logger.info("emerging share declined in %d; intervening until %d", year, self.active_until)

    def __call__(self, step: int, t: float, annual_years: Sequence[int], annual_levels: Sequence[np.ndarray]):
        if annual_years and annual_years[-1] != self._seen_year and abs(t - annual_years[-1]) < 1e-9:
            self._seen_year = annual_years[-1]
            self._on_new_year(annual_years[-1], annual_levels)
        if self.active_until is None:
            return None
        gated = annual_levels[-1][self.hybrid, self.share_index] > self.spec.hev_share_gate
        scale = self._scale_gated if gated else self._scale_base
        if not self.spec.weaken_decline_rate:
            return ParameterModifier(scale)
        return ParameterModifier(scale, self._decline_gated if gated else self._decline_base)


@dataclass(frozen=True)
class ScenarioSetup:
    spec: ScenarioSpec
    timeline: ParameterTimeline
    drivers: ExogenousDrivers
    hook_factory: Optional[Callable[[], ScenarioHook]] = None

    def hook(self) -> Optional[ScenarioHook]:
        """A fresh hook for one run."""
        return self.hook_factory() if self.hook_factory is not None else None

    def market_size(self, base_year: int, base_size: float, end_year: int, gdp_elasticity: float = 1.0):
        gdp = self.drivers.gdp_growth
        return MarketSizeSeries.from_growth(
            base_year, base_size, gdp.baseline, end_year, gdp.multiplier, gdp_elasticity
        )


def _remove(block: ParameterBlock, index: int) -> ParameterBlock:
    a, b, c, active = block.a.copy(), block.b.copy(), block.c.copy(), block.active.copy()
    a[index] = 0.0
    b[index] = 0.0
    c[index, :, :] = 0.0
    c[:, index, :] = 0.0
    active[index] = False
    return block.replace(a=a, b=b, c=c, active=active)


def _favour(block: ParameterBlock, emerging: int, toward: float, away: float) -> ParameterBlock:
    c = block.c.copy()
    others = [j for j in range(block.n_technologies) if j != emerging]
    # c < 0 is a benefit to the affected row, c > 0 a harm
    received = c[emerging, others, :]
    c[emerging, others, :] = np.where(received < 0, received * toward, received * away)
    given = c[others, emerging, :]
    c[others, emerging, :] = np.where(given < 0, given * away, given * toward)
    return block.replace(c=c)


def _predator_prey(block: ParameterBlock, incumbent: int, hybrid: int, emerging: int) -> ParameterBlock:
    c = block.c.copy()
    magnitude = np.abs(block.c)
    # (affected, affecting, sign): positive harms the affected technology
    template = (
        (emerging, incumbent, 1.0),
        (incumbent, emerging, 1.0),
        (hybrid, incumbent, -1.0),
        (incumbent, hybrid, 1.0),
        (emerging, hybrid, -1.0),
        (hybrid, emerging, 1.0),
    )
    for i, j, sign in template:
        c[i, j, :] = sign * magnitude[i, j, :]
    return block.replace(c=c)


def scenario_drivers(drivers: ExogenousDrivers, spec: ScenarioSpec) -> ExogenousDrivers:
    if isinstance(spec, LandscapePressure):
        return drivers.with_multipliers(spec.multipliers)
    return drivers


def apply_scenario(
    baseline: ParameterTimeline,
    drivers: ExogenousDrivers,
    spec: ScenarioSpec,
    elasticities: Optional[ElasticityMap] = None,
    share_index: Optional[int] = None,
) -> ScenarioSetup:
    technologies = baseline.technologies
    if isinstance(spec, Baseline):
        return ScenarioSetup(spec, baseline, drivers)
    if isinstance(spec, LandscapePressure):
        pressured = scenario_drivers(drivers, spec)
        mapping = elasticities if elasticities is not None else ElasticityMap()
        timeline = baseline.map(lambda block: block.replace(a=block.a * mapping.factor(block, pressured)))
        return ScenarioSetup(spec, timeline, pressured)
    if isinstance(spec, (NicheIncumbent, HybridIncumbent)):
        index = role_index(technologies, spec.removed)
        logger.info("%s: %s removed from the market", spec.name, technologies[index])
        return ScenarioSetup(spec, baseline.map(lambda block: _remove(block, index)), drivers)
    if isinstance(spec, SociotechnicalTransition):
        if share_index is None:
            raise errors.ConfigValidationError("The sociotechnical transition needs a market share sub-dimension.")
        if spec.reinforce_factor <= 0 or spec.weaken_factor <= 0 or spec.duration_years < 1:
            raise errors.ConfigValidationError(
                "Sociotechnical factors must be positive and the duration at least a year."
            )
        role_index(technologies, Role.HYBRID)
        shape = (len(technologies), len(baseline.sub_dimensions))
        return ScenarioSetup(
            spec, baseline, drivers, lambda: SociotechnicalHook(spec, technologies, shape, share_index)
        )
    if isinstance(spec, NicheFavoured):
        if spec.toward_scale <= 0 or spec.away_scale <= 0:
            raise errors.ConfigValidationError("Externality scales must be positive.")
        emerging = role_index(technologies, Role.EMERGING)
        return ScenarioSetup(
            spec, baseline.map(lambda block: _favour(block, emerging, spec.toward_scale, spec.away_scale)), drivers
        )
    if isinstance(spec, PredatorPrey):
        indices = [role_index(technologies, role) for role in (Role.INCUMBENT, Role.HYBRID, Role.EMERGING)]
        return ScenarioSetup(spec, baseline.map(lambda block: _predator_prey(block, *indices)), drivers)
    raise errors.ConfigValidationError(f"Unknown scenario {spec!r}.")
