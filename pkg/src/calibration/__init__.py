from .events import CalibrationConfig, Event, availability_series, detect_events, events_frame
from .fit import CalibrationResult, fit_rules
from .growth import normalize_growth
from .rules import AdaptationRuleSet, RuleFamily, aggregate_rules, derive_rule_components, read_rules, write_rules
from .stability import StabilityReport, matthews_correlation, stability_analysis, stability_sweep
from .substitution import SubstitutionResult, derive_substitutability
