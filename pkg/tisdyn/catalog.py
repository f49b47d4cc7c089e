"""
What every state variable measures.

A technology's innovation system is described by six dimensions (knowledge development, knowledge diffusion,
entrepreneurship, guidance of the search, market formation, resource mobilisation), which are split into sixteen
sub-dimensions, each tracked by one indicator.  Every technology has one level per sub-dimension.  Market share is
the only sub-dimension whose levels are constrained to the simplex: the shares of the active technologies sum to one.

For the explorative/exploitative analysis and the aggregated relationship modes, the sub-dimensions are split into
a technology development side and a market development side.  Collaborations and laws are not placed by the
description of the sides, so they default to the technology side and the market side respectively, and can be moved
by configuration.
"""

import difflib
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from tisdyn import errors
from tisdyn.patterns import KEY_PATTERN


class Role(str, Enum):
    INCUMBENT = "incumbent"
    HYBRID = "hybrid"
    EMERGING = "emerging"


DEFAULT_DISPLAY_NAMES = {Role.INCUMBENT: "ICEV", Role.HYBRID: "HEV", Role.EMERGING: "BEV"}


@dataclass(frozen=True)
class Technology:
    role: Role
    display_name: str

    def __str__(self):
        return self.display_name


def default_technologies(display_names: Optional[Mapping[Role, str]] = None) -> Tuple[Technology, ...]:
    names = dict(DEFAULT_DISPLAY_NAMES)
    if display_names:
        names.update(display_names)
    return tuple(Technology(role, names[role]) for role in Role)


def resolve_technology(name: str, technologies: Sequence[Technology]) -> int:
    """Index of the technology named either by its role or by its display name, case-insensitively."""
    wanted = name.strip().lower()
    for index, technology in enumerate(technologies):
        if wanted in (technology.role.value, technology.display_name.lower()):
            return index
    candidates = [t.display_name for t in technologies] + [t.role.value for t in technologies]
    raise errors.ConfigValidationError(f'Unknown technology "{name}"{suggestion(name, candidates)}.')


class Side(str, Enum):
    TECHNOLOGY = "technology"
    MARKET = "market"


@dataclass(frozen=True)
class SubDimension:
    key: str
    dimension: str
    indicator: str
    unit: str


def suggestion(name: str, candidates: Iterable[str]) -> str:
    matches = difflib.get_close_matches(name, list(candidates), n=1)
    return f' (did you mean "{matches[0]}"?)' if matches else ""


@dataclass(frozen=True)
class DimensionCatalog:
    version: int
    sub_dimensions: Tuple[SubDimension, ...]
    share_key: str = "market_share"

    def __post_init__(self):
        keys = self.keys()
        malformed = [
            f'"{name}" is not a valid catalog key (lower-case letters, digits and underscores).'
            for s in self.sub_dimensions
            for name in (s.key, s.dimension)
            if not KEY_PATTERN.match(name)
        ]
        if malformed:
            raise errors.ConfigValidationError(malformed[0], malformed)
        if len(set(keys)) != len(keys):
            raise errors.ConfigValidationError("Sub-dimension keys in the catalog must be unique.")
        if self.share_key not in keys:
            raise errors.ConfigValidationError(f'The catalog has no "{self.share_key}" sub-dimension.')

    def keys(self) -> Tuple[str, ...]:
        return tuple(s.key for s in self.sub_dimensions)

    def __len__(self):
        return len(self.sub_dimensions)

    @property
    def share_index(self) -> int:
        return self.keys().index(self.share_key)

    def resolve(self, name: str) -> str:
        if name in self.keys():
            return name
        raise errors.ConfigValidationError(f'Unknown sub-dimension "{name}"{suggestion(name, self.keys())}.')

    def index(self, name: str) -> int:
        return self.keys().index(self.resolve(name))

    def get(self, name: str) -> SubDimension:
        return self.sub_dimensions[self.index(name)]

    def dimensions(self) -> Dict[str, Tuple[str, ...]]:
        grouped: Dict[str, List[str]] = {}
        for sub_dimension in self.sub_dimensions:
            grouped.setdefault(sub_dimension.dimension, []).append(sub_dimension.key)
        return {dimension: tuple(keys) for dimension, keys in grouped.items()}


DEFAULT_CATALOG = DimensionCatalog(
    version=1,
    sub_dimensions=(
        SubDimension("publications", "knowledge_development", "scientific publications", "publications"),
        SubDimension("patents", "knowledge_development", "patents", "patents"),
        SubDimension("publication_citations", "knowledge_diffusion", "publication forward citations", "citations"),
        SubDimension("patent_citations", "knowledge_diffusion", "patent forward citations", "citations"),
        SubDimension("publication_collaborations", "knowledge_diffusion", "joint publication links", "links"),
        SubDimension("patent_collaborations", "knowledge_diffusion", "joint patent links", "links"),
        SubDimension("publication_assignees", "entrepreneurship", "publication assignees", "organisations"),
        SubDimension("patent_assignees", "entrepreneurship", "patent assignees", "organisations"),
        SubDimension("vehicle_models", "entrepreneurship", "vehicle models on the market", "models"),
        SubDimension("laws_and_regulations", "guidance_of_the_search", "laws and regulations", "acts"),
        SubDimension("search_popularity", "guidance_of_the_search", "search popularity", "index"),
        SubDimension("incentives", "market_formation", "incentives", "incentives"),
        SubDimension("market_share", "market_formation", "share of vehicle sales", "fraction"),
        SubDimension("publication_authors", "resource_mobilisation", "publication authors", "people"),
        SubDimension("patent_applicants", "resource_mobilisation", "patent applicants", "people"),
        SubDimension("financial_capital", "resource_mobilisation", "financial capital", "billion USD"),
    ),
)

TECHNOLOGY_SIDE_CORE = (
    "publications",
    "patents",
    "publication_citations",
    "patent_citations",
    "publication_authors",
    "patent_applicants",
)

MARKET_SIDE_CORE = (
    "publication_assignees",
    "patent_assignees",
    "vehicle_models",
    "search_popularity",
    "incentives",
    "financial_capital",
    "market_share",
)

ASSIGNABLE_DEFAULTS = {
    "publication_collaborations": Side.TECHNOLOGY,
    "patent_collaborations": Side.TECHNOLOGY,
    "laws_and_regulations": Side.MARKET,
}


@dataclass(frozen=True)
class SideGrouping:
    technology: Tuple[str, ...]
    market: Tuple[str, ...]

    def members(self, side: Side) -> Tuple[str, ...]:
        return self.technology if side is Side.TECHNOLOGY else self.market

    def side_of(self, key: str) -> Side:
        if key in self.technology:
            return Side.TECHNOLOGY
        if key in self.market:
            return Side.MARKET
        raise errors.ConfigValidationError(f'Sub-dimension "{key}" belongs to neither side.')

    def problems(self, catalog: DimensionCatalog) -> List[str]:
        """Every reason this grouping does not partition the catalog; empty when it does."""
        found = []
        both = set(self.technology) & set(self.market)
        for key in sorted(both):
            found.append(f'Sub-dimension "{key}" is on both sides.')
        for key in self.technology + self.market:
            if key not in catalog.keys():
                found.append(f'Side member "{key}" is not in the catalog{suggestion(key, catalog.keys())}.')
        for key in catalog.keys():
            if key not in self.technology and key not in self.market:
                found.append(f'Sub-dimension "{key}" is on neither side.')
        if not self.technology or not self.market:
            found.append("Both sides need at least one sub-dimension.")
        return found


def default_side_grouping(
    catalog: DimensionCatalog = DEFAULT_CATALOG, overrides: Optional[Mapping[str, Side]] = None
) -> SideGrouping:
    placement = dict(ASSIGNABLE_DEFAULTS)
    for key, side in (overrides or {}).items():
        if key not in ASSIGNABLE_DEFAULTS:
            raise errors.ConfigValidationError(
                f'Only {", ".join(sorted(ASSIGNABLE_DEFAULTS))} can be moved between sides, not "{key}".'
            )
        placement[key] = Side(side)
    technology, market = [], []
    for key in catalog.keys():
        if key in TECHNOLOGY_SIDE_CORE or placement.get(key) is Side.TECHNOLOGY:
            technology.append(key)
        elif key in MARKET_SIDE_CORE or placement.get(key) is Side.MARKET:
            market.append(key)
    grouping = SideGrouping(tuple(technology), tuple(market))
    problems = grouping.problems(catalog)
    if problems:
        raise errors.ConfigValidationError(problems[0], problems)
    return grouping
