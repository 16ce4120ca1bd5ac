from .hdi import area_changes, hdi_band, hdi_group_losses
from .impacts import ImpactReport, impact_estimators
from .losses import LossReport, aggregate_loss, combined_losses, loss_per_capita
from .reconciliation import ReconciliationResult, market_share, reconciliation_harness
from .superposition import (
    Additivity,
    SuperpositionReport,
    SuperpositionSample,
    classify,
    draw_pairs,
    primary_pool,
    sample_combined_shocks,
    superposition_impact,
)
