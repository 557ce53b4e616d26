"""cotanneal: aggregate multi-sample chain-of-thought reasoning.

Sampled completions are decomposed into deduplicated reasoning fragments,
a higher-order binary energy model is built from their co-occurrence
statistics and embedding similarities, the model is minimized by simulated
annealing (or exhaustively, or through an external-solver adapter), and
the fragments that persist across the low-energy ensemble are fed back to
the model as vetted evidence for a final answer.
"""

from .bench import (
    BenchRecord,
    DEFAULT_ENERGY_TABLE,
    EnergyTable,
    RunSummary,
    emit_report,
    estimate_energy,
    load_dataset,
    run_bench,
    score,
)
from .ensemble import (
    StabilityParams,
    StabilityReport,
    inclusion_frequencies,
    low_energy_subset,
    select_stable,
    stability_report,
)
from .errors import (
    AdapterError,
    ConfigurationError,
    CotAnnealError,
    FixtureError,
    InputError,
    ProviderError,
    StageError,
    TransportError,
    UnparsedAnswerError,
    ValidationError,
)
from .hubo_builder import (
    HuboModel,
    HuboParams,
    build_hubo,
    connected_corr2,
    connected_corr3,
    evaluate,
    linear_coeffs,
    normalize_typewise,
    pair_coeffs,
    standardize,
    triple_coeffs,
)
from .llm_client import (
    CassetteStore,
    CompletionTrace,
    DecodingParams,
    EmbeddingVector,
    LlmClient,
    ModelSpec,
    stub_completion,
    stub_embedding,
)
from .pipeline import (
    FinalPrompt,
    PipelineConfig,
    QuestionResult,
    build_final_prompt,
    load_config,
    parse_answer,
    run_question,
)
from .reason_pool import (
    Reason,
    ReasonPool,
    dedup_merge,
    extract_fragments,
    mean_triple_similarity,
    occurrence_counts,
    similarity_matrix,
)
from .solvers import (
    AnnealSchedule,
    ExternalSolverAdapter,
    ReplayAdapter,
    Sample,
    SampleSet,
    SpinModel,
    anneal,
    binary_to_spin,
    brute_force,
    external_solve,
    reduce_cubic_to_quadratic,
    solve,
    spin_to_binary,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterError", "AnnealSchedule", "BenchRecord", "CassetteStore",
    "CompletionTrace", "ConfigurationError", "CotAnnealError",
    "DEFAULT_ENERGY_TABLE", "DecodingParams", "EmbeddingVector", "EnergyTable",
    "ExternalSolverAdapter", "FinalPrompt", "FixtureError", "HuboModel",
    "HuboParams", "InputError", "LlmClient", "ModelSpec", "PipelineConfig",
    "ProviderError", "QuestionResult", "Reason", "ReasonPool", "ReplayAdapter",
    "RunSummary", "Sample", "SampleSet", "SpinModel", "StabilityParams",
    "StabilityReport", "StageError", "TransportError", "UnparsedAnswerError",
    "ValidationError", "anneal", "binary_to_spin", "brute_force",
    "build_final_prompt", "build_hubo", "connected_corr2", "connected_corr3",
    "dedup_merge", "emit_report", "estimate_energy", "evaluate",
    "external_solve", "extract_fragments", "inclusion_frequencies",
    "linear_coeffs", "load_config", "load_dataset", "low_energy_subset",
    "mean_triple_similarity", "normalize_typewise", "occurrence_counts",
    "pair_coeffs", "parse_answer",
    "reduce_cubic_to_quadratic", "run_bench", "run_question", "score",
    "select_stable", "similarity_matrix", "solve", "spin_to_binary",
    "stability_report", "standardize", "stub_completion", "stub_embedding",
    "triple_coeffs",
]
