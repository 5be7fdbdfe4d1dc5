"""Meta-evaluation of code-summary metrics against human quality ratings."""

from .ask_llm import FINAL_SPEC, PRESETS, PromptSpec, assemble_prompt, ask_llm_metric, parse_verdict
from .dataset import Dataset, QualityDimension, SummaryRecord, ingest_dataset
from .ngram import bleu_a, meteor, rouge_l, tokenize
from .providers import CostLedger, ProviderConfig, forbid_network
from .qa import QA_VARIANTS, QAVariant, qa_metric
from .scores import MetricScoreSet
from .stats import boot_both_ci, paired_permutation_test, spearman

__version__ = "0.1.0"

__all__ = [
    "FINAL_SPEC", "PRESETS", "PromptSpec", "assemble_prompt", "ask_llm_metric", "parse_verdict",
    "Dataset", "QualityDimension", "SummaryRecord", "ingest_dataset",
    "bleu_a", "meteor", "rouge_l", "tokenize",
    "CostLedger", "ProviderConfig", "forbid_network",
    "QA_VARIANTS", "QAVariant", "qa_metric",
    "MetricScoreSet",
    "boot_both_ci", "paired_permutation_test", "spearman",
]
