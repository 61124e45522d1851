"""Legacy-to-service modernization around a behavioral specification graph."""

from .analyzer import analyze
from .artifacts import (BusinessRule, BusinessRuleInventory, LegacyArtifactBundle, PipelineState, Status,
                        load_bundle)
from .bsg import Bsg, BsgEdge, ContractClause, OperationNode, deserialize_bsg, diff_bsg, serialize_bsg, validate_bsg
from .evalkit import Scenario, load_scenarios, run_fair_eval, score_gold
from .metrics import aggregate, compute_ber, compute_brps
from .orchestrator import PipelineConfig, run_pipeline
from .predicate import TriState, evaluate, parse_predicate
from .specgen import check_lossless, generate_bsg
from .transformer import ExecutableServiceModel, ModernizedServicePackage, interpret, transform
from .validator import EquivalenceReport, generate_suite, validate

__version__ = "0.1.0"

__all__ = [
    "Bsg", "BsgEdge", "BusinessRule", "BusinessRuleInventory", "ContractClause", "EquivalenceReport",
    "ExecutableServiceModel", "LegacyArtifactBundle", "ModernizedServicePackage", "OperationNode",
    "PipelineConfig", "PipelineState", "Scenario", "Status", "TriState", "aggregate", "analyze",
    "check_lossless", "compute_ber", "compute_brps", "deserialize_bsg", "diff_bsg", "evaluate",
    "generate_bsg", "generate_suite", "interpret", "load_bundle", "load_scenarios", "parse_predicate",
    "run_fair_eval", "run_pipeline", "score_gold", "serialize_bsg", "transform", "validate", "validate_bsg",
]
