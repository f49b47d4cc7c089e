"""
The shipped demo parameters: a synthetic, documented fixture that shows the baseline relationship structure of the
ICEV/HEV/BEV case.  They are not calibrated values.

Three windows start in 1985, 2000 and 2010.

* Market share carries the transition.  HEV parasitises ICEV, HEV and BEV live in symbiosis, ICEV and BEV compete.
  BEV's growth rate jumps in 2010.
* Every other sub-dimension is a logistic with carrying capacity K = kappa * scale and cross terms scaled to it,
  c[i,j,d] = gamma[i,j] * a[i] / K[j,d].  On the technology side all three technologies help each other, HEV giving BEV
  the larger benefit.  Until 2010 HEV's collaborations grow with a negative b, so its technology side is explorative.
  The market side moves from HEV parasitising BEV (1985) to HEV parasitising ICEV (2000) to symbiosis (2010).
"""

from typing import Optional, Tuple

import numpy as np

from tisdyn.catalog import DEFAULT_CATALOG, DimensionCatalog, Technology, default_technologies
from tisdyn.dynamics import ParameterBlock, ParameterTimeline, SystemState, TimelinePiece

INCUMBENT, HYBRID, EMERGING = 0, 1, 2

WINDOW_STARTS = (1985, 2000, 2010)

SHARE_GROWTH = {1985: (0.16, 0.08, 0.06), 2000: (0.16, 0.08, 0.06), 2010: (0.13, 0.01, 0.40)}
SHARE_DECLINE = (0.01, 0.9, 0.01)
SHARE_INTERACTION = {
    (INCUMBENT, HYBRID): 0.40,
    (HYBRID, INCUMBENT): -0.24,
    (INCUMBENT, EMERGING): 0.04,
    (EMERGING, INCUMBENT): 0.04,
    (HYBRID, EMERGING): -0.24,
    (EMERGING, HYBRID): -0.25,
}
INITIAL_SHARES = (0.995, 0.004, 0.001)

SCALES = {
    "publications": 800.0,
    "patents": 600.0,
    "publication_citations": 1000.0,
    "patent_citations": 900.0,
    "publication_collaborations": 40.0,
    "patent_collaborations": 30.0,
    "publication_assignees": 300.0,
    "patent_assignees": 200.0,
    "vehicle_models": 60.0,
    "laws_and_regulations": 50.0,
    "search_popularity": 100.0,
    "incentives": 40.0,
    "publication_authors": 1000.0,
    "patent_applicants": 400.0,
    "financial_capital": 50.0,
}
KAPPA = (1.0, 0.4, 0.6)
GROWTH = (0.08, 0.20, 0.25)
INITIAL_FRACTION = (0.5, 0.02, 0.01)

TECHNOLOGY_KEYS = (
    "publications",
    "patents",
    "publication_citations",
    "patent_citations",
    "publication_collaborations",
    "patent_collaborations",
    "publication_authors",
    "patent_applicants",
)
COLLABORATION_KEYS = ("publication_collaborations", "patent_collaborations")
EXPLORATIVE_COLLABORATION = (0.1, -0.005)

TECHNOLOGY_GAMMA = {
    (EMERGING, HYBRID): -0.30,
    (HYBRID, EMERGING): -0.15,
    (INCUMBENT, HYBRID): -0.10,
    (HYBRID, INCUMBENT): -0.10,
    (INCUMBENT, EMERGING): -0.05,
    (EMERGING, INCUMBENT): -0.05,
}
MARKET_GAMMA = {
    1985: {
        (HYBRID, EMERGING): -0.2,
        (EMERGING, HYBRID): 0.1,
        (HYBRID, INCUMBENT): -0.1,
        (INCUMBENT, HYBRID): -0.1,
        (INCUMBENT, EMERGING): 0.05,
        (EMERGING, INCUMBENT): 0.05,
    },
    2000: {
        (HYBRID, EMERGING): -0.2,
        (EMERGING, HYBRID): -0.1,
        (INCUMBENT, HYBRID): 0.1,
        (HYBRID, INCUMBENT): -0.15,
        (INCUMBENT, EMERGING): 0.05,
        (EMERGING, INCUMBENT): 0.05,
    },
    2010: {
        (HYBRID, EMERGING): -0.2,
        (EMERGING, HYBRID): -0.15,
        (HYBRID, INCUMBENT): -0.1,
        (INCUMBENT, HYBRID): -0.1,
        (INCUMBENT, EMERGING): -0.05,
        (EMERGING, INCUMBENT): -0.05,
    },
}


def _capacity(key: str) -> np.ndarray:
    return np.array(KAPPA) * SCALES[key]


def _block(start: int, technologies: Tuple[Technology, ...], catalog: DimensionCatalog) -> ParameterBlock:
    keys = catalog.keys()
    n, m = len(technologies), len(keys)
    a, b, c = np.zeros((n, m)), np.zeros((n, m)), np.zeros((n, n, m))
    for d, key in enumerate(keys):
        if key == catalog.share_key:
            a[:, d] = SHARE_GROWTH[start]
            b[:, d] = SHARE_DECLINE
            for (i, j), value in SHARE_INTERACTION.items():
                c[i, j, d] = value
            continue
        capacity = _capacity(key)
        a[:, d] = GROWTH
        b[:, d] = np.array(GROWTH) / capacity
        gamma = TECHNOLOGY_GAMMA if key in TECHNOLOGY_KEYS else MARKET_GAMMA[start]
        for (i, j), value in gamma.items():
            c[i, j, d] = value * GROWTH[i] / capacity[j]
        if key in COLLABORATION_KEYS and start < 2010:
            a[HYBRID, d], b[HYBRID, d] = EXPLORATIVE_COLLABORATION
    return ParameterBlock(technologies, keys, a, b, c)


def demo_timeline(
    technologies: Optional[Tuple[Technology, ...]] = None, catalog: DimensionCatalog = DEFAULT_CATALOG
) -> ParameterTimeline:
    technologies = technologies or default_technologies()
    return ParameterTimeline(tuple(TimelinePiece(float(s), _block(s, technologies, catalog)) for s in WINDOW_STARTS))


def demo_initial_state(catalog: DimensionCatalog = DEFAULT_CATALOG, t_start: float = 1985) -> SystemState:
    keys = catalog.keys()
    levels = np.zeros((len(KAPPA), len(keys)))
    for d, key in enumerate(keys):
        if key == catalog.share_key:
            levels[:, d] = INITIAL_SHARES
        else:
            levels[:, d] = np.array(INITIAL_FRACTION) * _capacity(key)
    return SystemState(levels, t_start)
