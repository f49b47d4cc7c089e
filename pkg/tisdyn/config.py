"""
Run configuration: a YAML file checked against a pydantic schema.

Every block is optional and falls back to the defaults documented in tisdyn/data/default-config.yaml.  Unknown keys
are errors at any depth.  Loading happens in two passes, each reporting every problem it finds: the schema (types,
ranges, unknown keys), then the cross references (technology and sub-dimension names, side partition, step size, file
paths).  Relative paths resolve against the directory of the config file.
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from tisdyn import errors
from tisdyn.calibration import CalibrationMethod, WindowSpec
from tisdyn.catalog import (
    DEFAULT_CATALOG,
    DimensionCatalog,
    Role,
    Side,
    SideGrouping,
    Technology,
    default_side_grouping,
    resolve_technology,
)
from tisdyn.dynamics import SimulationConfig
from tisdyn.emissions import EmissionFactors, FactorPath, FleetModel
from tisdyn.modes import Aggregation, EpsilonPolicy
from tisdyn.patterns import DISPLAY_NAME_PATTERN
from tisdyn.scenarios import (
    Baseline,
    Driver,
    DriverName,
    ElasticityMap,
    ExogenousDrivers,
    HybridIncumbent,
    LandscapePressure,
    NicheFavoured,
    NicheIncumbent,
    PredatorPrey,
    ScenarioSpec,
    SociotechnicalTransition,
    Variant,
    default_elasticities,
    growing_series,
)

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).parent / "data" / "default-config.yaml"


class Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SimulationBlock(Block):
    t_start: int = 1985
    t_end: int = 2070
    dt: float = Field(default=0.125, gt=0)
    renormalize_shares: bool = True
    blow_up_bound: float = Field(default=1e12, gt=0)


class TechnologiesBlock(Block):
    incumbent: str = "ICEV"
    hybrid: str = "HEV"
    emerging: str = "BEV"

    @field_validator("incumbent", "hybrid", "emerging")
    @classmethod
    def validate_display_name(cls, v):
        if not DISPLAY_NAME_PATTERN.match(v):
            raise ValueError(f'"{v}" is not a valid technology name (letters, digits and underscores)')
        return v

    @model_validator(mode="after")
    def validate_distinct(self):
        names = [self.incumbent.lower(), self.hybrid.lower(), self.emerging.lower()]
        if len(set(names)) != 3:
            raise ValueError("technology names must be distinct")
        return self


class CatalogBlock(Block):
    version: int = 1
    side_overrides: Dict[str, Side] = Field(default_factory=dict)


class ParametersBlock(Block):
    source: str = Field(default="demo", pattern="^(demo|file|calibrate)$")
    path: Optional[str] = None
    initial_state: Optional[str] = None

    @model_validator(mode="after")
    def validate_path(self):
        if self.source == "file" and not self.path:
            raise ValueError("parameters.source 'file' needs a path")
        if self.source == "calibrate" and self.path:
            raise ValueError("parameters.source 'calibrate' takes its data from calibration.data, not a path")
        return self


class CalibrationBlock(Block):
    window_length: int = Field(default=5, ge=1)
    stride: int = Field(default=1, ge=1)
    method: CalibrationMethod = CalibrationMethod.OLS
    data: Optional[str] = None


class ModesBlock(Block):
    epsilon: float = Field(default=1e-6, ge=0)
    relative_epsilon: Optional[float] = Field(default=None, ge=0)
    aggregation: Aggregation = Aggregation.EXTERNALITY


class LandscapeBlock(Block):
    oil_price: float = Field(default=1.5, gt=0)
    tax_registration_fees: float = Field(default=1.5, gt=0)
    gdp_growth: float = Field(default=1.5, gt=0)
    wtw_costs: float = Field(default=1.5, gt=0)


class RemovalBlock(Block):
    removed: Role


class SociotechnicalBlock(Block):
    reinforce_factor: float = Field(default=1.25, gt=0)
    weaken_factor: float = Field(default=0.75, gt=0)
    duration_years: int = Field(default=20, ge=1)
    hev_share_gate: float = Field(default=0.5, ge=0, le=1)
    decline_window: int = Field(default=3, ge=1)
    weaken_decline_rate: bool = False


class NicheFavouredBlock(Block):
    toward_scale: float = Field(default=1.5, gt=0)
    away_scale: float = Field(default=0.5, gt=0)


class ScenarioBlock(Block):
    variant: Variant = Variant.BASELINE
    landscape_pressure: LandscapeBlock = LandscapeBlock()
    niche_incumbent: RemovalBlock = RemovalBlock(removed=Role.HYBRID)
    hybrid_incumbent: RemovalBlock = RemovalBlock(removed=Role.EMERGING)
    sociotechnical_transition: SociotechnicalBlock = SociotechnicalBlock()
    niche_favoured: NicheFavouredBlock = NicheFavouredBlock()


class DriverBlock(Block):
    start_value: float
    annual_growth: float = 0.0
    multiplier: float = Field(default=1.0, gt=0)
    file: Optional[str] = None


class DriversBlock(Block):
    oil_price: DriverBlock = DriverBlock(start_value=2.0, annual_growth=0.01)
    tax_registration_fees: DriverBlock = DriverBlock(start_value=1500.0)
    gdp_growth: DriverBlock = DriverBlock(start_value=0.015)
    wtw_costs: DriverBlock = DriverBlock(start_value=100.0, annual_growth=0.01)


class ElasticityEntry(Block):
    driver: DriverName
    technology: str
    sub_dimension: str
    value: float


class MarketBlock(Block):
    base_size: float = Field(default=11e6, gt=0)
    gdp_elasticity: float = 1.0


class FactorBlock(Block):
    constant: Optional[float] = Field(default=None, ge=0)
    start: Optional[float] = Field(default=None, ge=0)
    end: Optional[float] = Field(default=None, ge=0)
    series: Optional[Dict[int, float]] = None

    @field_validator("series")
    @classmethod
    def validate_series(cls, v):
        if v is not None and any(value < 0 for value in v.values()):
            raise ValueError("emission factors must be >= 0")
        return v

    @model_validator(mode="after")
    def validate_kind(self):
        kinds = [self.constant is not None, self.start is not None or self.end is not None, self.series is not None]
        if sum(kinds) != 1:
            raise ValueError("give exactly one of constant, start/end or series")
        if kinds[1] and (self.start is None or self.end is None):
            raise ValueError("a linear factor needs both start and end")
        return self


class EmissionsBlock(Block):
    lifetime: int = Field(default=15, ge=1)
    factors: Dict[Role, FactorBlock] = Field(
        default_factory=lambda: {
            Role.INCUMBENT: FactorBlock(constant=4.6),
            Role.HYBRID: FactorBlock(constant=3.0),
            Role.EMERGING: FactorBlock(start=2.5, end=0.5),
        }
    )


class RunConfig(Block):
    simulation: SimulationBlock = SimulationBlock()
    technologies: TechnologiesBlock = TechnologiesBlock()
    catalog: CatalogBlock = CatalogBlock()
    parameters: ParametersBlock = ParametersBlock()
    calibration: CalibrationBlock = CalibrationBlock()
    modes: ModesBlock = ModesBlock()
    scenario: ScenarioBlock = ScenarioBlock()
    drivers: DriversBlock = DriversBlock()
    elasticities: Optional[List[ElasticityEntry]] = None
    market: MarketBlock = MarketBlock()
    emissions: EmissionsBlock = EmissionsBlock()
    output_dir: Optional[str] = None
    seed: int = 0

    def technology_tuple(self) -> Tuple[Technology, ...]:
        names = self.technologies
        return (
            Technology(Role.INCUMBENT, names.incumbent),
            Technology(Role.HYBRID, names.hybrid),
            Technology(Role.EMERGING, names.emerging),
        )

    def dimension_catalog(self) -> DimensionCatalog:
        return DEFAULT_CATALOG

    def side_grouping(self) -> SideGrouping:
        return default_side_grouping(self.dimension_catalog(), self.catalog.side_overrides)

    def simulation_config(self) -> SimulationConfig:
        block = self.simulation
        return SimulationConfig(
            block.t_start,
            block.t_end,
            block.dt,
            block.renormalize_shares,
            block.blow_up_bound,
            self.dimension_catalog().share_index,
        )

    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.calibration.window_length, self.calibration.stride)

    def epsilon_policy(self) -> EpsilonPolicy:
        return EpsilonPolicy(self.modes.epsilon, self.modes.relative_epsilon)

    def scenario_spec(self, variant: Optional[Variant] = None) -> ScenarioSpec:
        block = self.scenario
        variant = Variant(variant) if variant is not None else block.variant
        if variant is Variant.LANDSCAPE_PRESSURE:
            return LandscapePressure({DriverName(k): v for k, v in block.landscape_pressure.model_dump().items()})
        if variant is Variant.NICHE_INCUMBENT:
            return NicheIncumbent(block.niche_incumbent.removed)
        if variant is Variant.HYBRID_INCUMBENT:
            return HybridIncumbent(block.hybrid_incumbent.removed)
        if variant is Variant.SOCIOTECHNICAL_TRANSITION:
            return SociotechnicalTransition(**block.sociotechnical_transition.model_dump())
        if variant is Variant.NICHE_FAVOURED:
            return NicheFavoured(**block.niche_favoured.model_dump())
        if variant is Variant.PREDATOR_PREY:
            return PredatorPrey()
        return Baseline()

    def exogenous_drivers(self) -> ExogenousDrivers:
        first, last = self.simulation.t_start, self.simulation.t_end
        drivers = {}
        for name in DriverName:
            block: DriverBlock = getattr(self.drivers, name.value)
            if block.file:
                frame = pd.read_csv(block.file)
                series = pd.Series(frame["value"].to_numpy(dtype=float), index=frame["year"].astype(int))
            else:
                series = growing_series(block.start_value, block.annual_growth, first, last)
            drivers[name.value] = Driver(series, block.multiplier)
        return ExogenousDrivers(**drivers)

    def elasticity_map(self) -> ElasticityMap:
        if self.elasticities is None:
            return default_elasticities(self.side_grouping())
        technologies = self.technology_tuple()
        catalog = self.dimension_catalog()
        entries: Dict[DriverName, Dict[Tuple[Role, str], float]] = {}
        for entry in self.elasticities:
            role = technologies[resolve_technology(entry.technology, technologies)].role
            entries.setdefault(entry.driver, {})[(role, catalog.resolve(entry.sub_dimension))] = entry.value
        return ElasticityMap(entries)

    def emission_factors(self) -> EmissionFactors:
        factors = self.emissions.factors
        return EmissionFactors({role: FactorPath(**block.model_dump()) for role, block in factors.items()})

    def fleet_model(self) -> FleetModel:
        return FleetModel(self.emissions.lifetime)

    def with_resolved_paths(self, base: Path) -> "RunConfig":
        def resolve(path: Optional[str]) -> Optional[str]:
            if path is None or os.path.isabs(path):
                return path
            return str((base / path).resolve())

        drivers = {
            name.value: getattr(self.drivers, name.value).model_copy(
                update={"file": resolve(getattr(self.drivers, name.value).file)}
            )
            for name in DriverName
        }
        return self.model_copy(
            update={
                "parameters": self.parameters.model_copy(
                    update={
                        "path": resolve(self.parameters.path),
                        "initial_state": resolve(self.parameters.initial_state),
                    }
                ),
                "calibration": self.calibration.model_copy(update={"data": resolve(self.calibration.data)}),
                "drivers": self.drivers.model_copy(update=drivers),
                "output_dir": resolve(self.output_dir),
            }
        )

    def problems(self) -> List[str]:
        """Every cross-reference problem; empty when the config is ready to run."""
        found = []
        try:
            self.simulation_config()
        except errors.ConfigValidationError as e:
            found += [f"simulation: {problem}" for problem in e.errors]
        if self.catalog.version != DEFAULT_CATALOG.version:
            found.append(f"catalog.version: only version {DEFAULT_CATALOG.version} is built in")
        catalog = self.dimension_catalog()
        for key in self.catalog.side_overrides:
            try:
                catalog.resolve(key)
            except errors.ConfigValidationError as e:
                found.append(f"catalog.side_overrides: {e.message}")
        if not found:
            try:
                self.side_grouping()
            except errors.ConfigValidationError as e:
                found += [f"catalog.side_overrides: {problem}" for problem in e.errors]
        technologies = self.technology_tuple()
        for k, entry in enumerate(self.elasticities or []):
            for check in (
                lambda: resolve_technology(entry.technology, technologies),
                lambda: catalog.resolve(entry.sub_dimension),
            ):
                try:
                    check()
                except errors.ConfigValidationError as e:
                    found.append(f"elasticities.{k}: {e.message}")
        paths = [
            ("parameters.path", self.parameters.path),
            ("parameters.initial_state", self.parameters.initial_state),
            ("calibration.data", self.calibration.data),
        ]
        paths += [(f"drivers.{name.value}.file", getattr(self.drivers, name.value).file) for name in DriverName]
        if self.parameters.source == "calibrate" and self.calibration.data is None:
            found.append("calibration.data: parameters.source 'calibrate' needs observed data")
        for location, path in paths:
            if path is not None and not os.path.isfile(path):
                found.append(f'{location}: no such file "{path}"')
        if not found:
            for name in DriverName:
                path = getattr(self.drivers, name.value).file
                if path is None:
                    continue
                try:
                    frame = pd.read_csv(path)
                except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
                    found.append(f"drivers.{name.value}.file: {e}")
                    continue
                if not {"year", "value"} <= set(frame.columns):
                    found.append(f"drivers.{name.value}.file: needs the columns year,value")
            if not any(problem.startswith("drivers.") for problem in found):
                found += [f"drivers: {problem}" for problem in self.exogenous_drivers().problems(
                    self.simulation.t_start, self.simulation.t_end
                )]
        for role in Role:
            if role not in self.emissions.factors:
                found.append(f"emissions.factors: no factor for the {role.value} technology")
        return found


def _format_location(location) -> str:
    return ".".join(str(part) for part in location)


def validate_config(raw: Any, base: Optional[Path] = None) -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise errors.ConfigValidationError("The configuration must be a mapping of blocks.")
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        problems = [f"{_format_location(error['loc']) or 'config'}: {error['msg']}" for error in e.errors()]
        raise errors.ConfigValidationError(problems[0], problems)
    if base is not None:
        config = config.with_resolved_paths(base)
    problems = config.problems()
    if problems:
        raise errors.ConfigValidationError(problems[0], problems)
    return config


def load_config(path: Optional[str] = None) -> RunConfig:
    path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise errors.ConfigValidationError(f'Cannot read the configuration "{path}": {e.strerror}')
    except yaml.YAMLError as e:
        raise errors.ConfigValidationError(f'"{path}" is not valid YAML: {e}')
    config = validate_config(raw, path.parent)
    logger.info("loaded configuration from %s", path)
    return config


def config_snapshot(config: RunConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json")
