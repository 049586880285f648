"""Tolerance-tiered routing over ML service version ensembles."""

from .domain import (
    CONC,
    OBJECTIVE_COST,
    OBJECTIVE_RESPONSE_TIME,
    OBJECTIVES,
    OSFA,
    SEQ,
    DomainError,
    EnsembleConfig,
    RequestRecord,
    SimResult,
    VersionOutcome,
    degradation,
    top1_error,
    wer,
)
from .policysim import (
    RequestOutcome,
    enumerate_candidates,
    simulate,
    simulate_request,
    simulate_trace,
)
from .rulegen import (
    BootstrapSummary,
    RuleEntry,
    TierRuleTable,
    bootstrap,
    bootstrap_candidates,
    confident,
    generate,
    load_rule_table,
    naive_select,
    normal_quantile,
    save_rule_table,
)
from .trace import (
    Category,
    SynthParams,
    Trace,
    asr_preset,
    category_report,
    categorize,
    generate_trace,
    ic_preset,
    load_trace,
    save_trace,
)

__version__ = "0.1.0"
