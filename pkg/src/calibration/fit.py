import logging
from typing import Sequence

import attrs
import pandas as pd

from ..catalog import Catalog
from ..parameters import ParameterSet
from .events import CalibrationConfig, Event, availability_series, detect_events
from .rules import AdaptationRuleSet, aggregate_rules, derive_rule_components
from .substitution import SubstitutionResult, derive_substitutability

log = logging.getLogger(__name__)


@attrs.frozen(eq=False)
class CalibrationResult:
    years: list[int]
    events: list[Event]
    components: pd.DataFrame
    rules: AdaptationRuleSet
    substitution: SubstitutionResult


def fit_rules(normalized: Sequence[ParameterSet], catalog: Catalog, config: CalibrationConfig) -> CalibrationResult:
    """
    Detects events on a growth-normalized series and fits the parameter and substitution rules from them.
    """
    years, availability = availability_series(normalized)
    events = detect_events(availability, years, config, n_items=catalog.n_items)
    components = derive_rule_components(events, normalized)
    rules = aggregate_rules(components, catalog.n_areas, catalog.n_items, catalog.n_processes)
    substitution = derive_substitutability(events, normalized, catalog, config)
    return CalibrationResult(years, events, components, rules.with_substitution(substitution.matrix), substitution)
