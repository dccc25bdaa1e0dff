"""Zero-shot legal judgment prediction harness: Baseline, Zero-shot CoT and legal syllogism prompting."""

__version__ = "0.1.0"

from .backend import (
    CachedBackend,
    CompletionRequest,
    CompletionResponse,
    HTTPCompletionBackend,
    ReplayBackend,
    ResponseCache,
    UsageLedger,
    cached_complete,
    record_fixtures,
)
from .corpus import (
    CaseRecord,
    ChargeLexicon,
    filter_single_charge,
    load_corpus,
    load_lexicon,
    normalize_charge,
    serialize_corpus,
    stratified_sample,
)
from .estimator import SyllogismChargeClassifier
from .parse import (
    Prediction,
    Syllogism,
    extract_articles,
    extract_charges,
    extract_judgment,
    parse_syllogism,
    verify_articles,
)
from .prompts import PromptBundle, Strategy, TemplateSet, load_templates, render
from .score import EvalReport, Verdict, emit_report, error_taxonomy, judge, micro_accuracy, per_charge_accuracy

__all__ = [
    "CachedBackend",
    "CaseRecord",
    "ChargeLexicon",
    "CompletionRequest",
    "CompletionResponse",
    "EvalReport",
    "HTTPCompletionBackend",
    "Prediction",
    "PromptBundle",
    "ReplayBackend",
    "ResponseCache",
    "Strategy",
    "Syllogism",
    "SyllogismChargeClassifier",
    "TemplateSet",
    "UsageLedger",
    "Verdict",
    "cached_complete",
    "emit_report",
    "error_taxonomy",
    "extract_articles",
    "extract_charges",
    "extract_judgment",
    "filter_single_charge",
    "judge",
    "load_corpus",
    "load_lexicon",
    "load_templates",
    "micro_accuracy",
    "normalize_charge",
    "parse_syllogism",
    "per_charge_accuracy",
    "record_fixtures",
    "render",
    "serialize_corpus",
    "stratified_sample",
    "verify_articles",
]
