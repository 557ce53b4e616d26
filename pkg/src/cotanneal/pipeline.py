"""End-to-end orchestration for one question.

Stages, in order: sample N completions per the sampling plan, extract and
merge fragments, build the energy model, solve it, analyze the low-energy
ensemble, render the final prompt from the stable reasons, query the
answer model, and parse the answer label.  Every stage writes a numbered
JSON file into the question's run directory so any stage can be re-run in
isolation from the persisted artifacts.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .ensemble import StabilityParams, StabilityReport, stability_report
from .errors import ConfigurationError, InputError, StageError, UnparsedAnswerError
from .hubo_builder import HuboModel, HuboParams, build_hubo
from .jsonio import content_hash, read_json, write_json
from .llm_client import (
    CompletionTrace,
    DecodingParams,
    LlmClient,
    ModelSpec,
    _safe_name,
)
from .reason_pool import (
    DEFAULT_MERGE_THRESHOLD,
    DEFAULT_MIN_FRAGMENT_CHARS,
    ReasonPool,
    dedup_merge,
    extract_fragments,
    similarity_matrix,
)
from .solvers import AnnealSchedule, ExternalSolverAdapter, SampleSet, solve

STAGE_TRACES = "01_traces.json"
STAGE_POOL = "02_pool.json"
STAGE_HUBO = "03_hubo.json"
STAGE_SAMPLES = "04_samples.json"
STAGE_STABILITY = "05_stability.json"
STAGE_RESULT = "06_result.json"

SAMPLING_TEMPLATE = """{question}

Options:
{options_block}

Think step by step. Write your reasoning as a numbered list of short, \
self-contained statements, one per line. Then finish with a single line in \
the form "Answer: <label>", where <label> is one of: {labels}.
"""

FINAL_TEMPLATE = """The following reasoning steps were distilled from multiple \
independent attempts at this question. Treat them as vetted evidence.

Reasoning steps:
{reasons_block}

{question}

Options:
{options_block}

Using the reasoning steps above, finish with a single line in the form \
"Answer: <label>", where <label> is one of: {labels}.
"""

BARE_TEMPLATE = """{question}

Options:
{options_block}

Finish with a single line in the form "Answer: <label>", where <label> is \
one of: {labels}.
"""


@dataclass(frozen=True)
class PipelineConfig:
    """Everything that determines a run besides the dataset itself."""

    sampling_plan: tuple  # ((ModelSpec, count), ...)
    answer_model: ModelSpec
    embed_model: ModelSpec = field(
        default_factory=lambda: ModelSpec(provider_id="stub", model_name="stub-embed")
    )
    n_samples: int = 20
    decoding: DecodingParams = field(default_factory=DecodingParams)
    hubo_params: HuboParams = field(default_factory=HuboParams)
    stability: StabilityParams = field(default_factory=StabilityParams)
    solver_choice: str = "sa-hubo"
    schedule: AnnealSchedule = field(default_factory=AnnealSchedule)
    seed: int = 0
    merge_threshold: float = DEFAULT_MERGE_THRESHOLD
    min_fragment_chars: int = DEFAULT_MIN_FRAGMENT_CHARS
    energy_table: tuple = ()  # ((model_name, wh_per_token), ...) overrides

    def __post_init__(self):
        object.__setattr__(self, "sampling_plan", tuple(
            (model, int(count)) for model, count in self.sampling_plan
        ))
        object.__setattr__(self, "energy_table", tuple(
            (name, float(v)) for name, v in self.energy_table
        ))
        if self.n_samples < 1:
            raise ConfigurationError("n_samples must be >= 1")
        total = sum(count for _, count in self.sampling_plan)
        if total != self.n_samples:
            raise ConfigurationError(
                f"sampling_plan counts sum to {total}, expected n_samples={self.n_samples}"
            )

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "n_samples": self.n_samples,
            "sampling_plan": [
                {"model": model.to_dict(), "count": count}
                for model, count in self.sampling_plan
            ],
            "answer_model": self.answer_model.to_dict(),
            "embed_model": self.embed_model.to_dict(),
            "decoding": self.decoding.to_dict(),
            "hubo_params": self.hubo_params.to_dict(),
            "stability": self.stability.to_dict(),
            "solver_choice": self.solver_choice,
            "schedule": self.schedule.to_dict(),
            "seed": self.seed,
            "merge_threshold": self.merge_threshold,
            "min_fragment_chars": self.min_fragment_chars,
            "energy_table": {name: v for name, v in self.energy_table},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        try:
            plan = tuple(
                (ModelSpec.from_dict(entry["model"]), entry["count"])
                for entry in doc["sampling_plan"]
            )
            answer_model = ModelSpec.from_dict(doc["answer_model"])
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"config is missing a required field: {exc}") from exc
        kwargs = dict(sampling_plan=plan, answer_model=answer_model)
        if "embed_model" in doc:
            kwargs["embed_model"] = ModelSpec.from_dict(doc["embed_model"])
        if "n_samples" in doc:
            kwargs["n_samples"] = doc["n_samples"]
        if "decoding" in doc:
            kwargs["decoding"] = DecodingParams.from_dict(doc["decoding"])
        if "hubo_params" in doc:
            kwargs["hubo_params"] = HuboParams.from_dict(doc["hubo_params"])
        if "stability" in doc:
            kwargs["stability"] = StabilityParams.from_dict(doc["stability"])
        if "solver_choice" in doc:
            kwargs["solver_choice"] = doc["solver_choice"]
        if "schedule" in doc:
            kwargs["schedule"] = AnnealSchedule.from_dict(doc["schedule"])
        for key in ("seed", "merge_threshold", "min_fragment_chars"):
            if key in doc:
                kwargs[key] = doc[key]
        if "energy_table" in doc:
            kwargs["energy_table"] = tuple(sorted(doc["energy_table"].items()))
        return cls(**kwargs)

    def config_hash(self) -> str:
        return content_hash(self.to_dict())


def load_config(path: str | Path) -> PipelineConfig:
    try:
        doc = read_json(path)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except ValueError as exc:
        raise ConfigurationError(f"config file is not valid JSON: {path}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError(f"config file must hold a JSON object: {path}")
    return PipelineConfig.from_dict(doc)


def derive_seed(master_seed: int, tag: str) -> int:
    """Stable per-question seed, independent of execution order."""
    digest = hashlib.blake2b(f"{master_seed}|{tag}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


# -- prompts and parsing ---------------------------------------------------


def _options_block(options) -> str:
    return "\n".join(f"{label}. {text}" for label, text in options)


def _labels_list(options) -> str:
    return ", ".join(label for label, _ in options)


def sampling_prompt(question: str, options) -> str:
    return SAMPLING_TEMPLATE.format(
        question=question,
        options_block=_options_block(options),
        labels=_labels_list(options),
    )


@dataclass
class FinalPrompt:
    question: str
    stable_reasons: list
    rendered: str


def build_final_prompt(question: str, stable_reasons, options) -> FinalPrompt:
    """Render the answer prompt: vetted reasons first, then the question.

    ``stable_reasons`` must already be ordered (descending inclusion
    frequency, ties by ascending reason id).
    """
    reasons = list(stable_reasons)
    if not reasons:
        raise InputError("stable_reasons must be nonempty; use the bare prompt instead")
    reasons_block = "\n".join(f"{i + 1}. {text}" for i, text in enumerate(reasons))
    rendered = FINAL_TEMPLATE.format(
        reasons_block=reasons_block,
        question=question,
        options_block=_options_block(options),
        labels=_labels_list(options),
    )
    return FinalPrompt(question=question, stable_reasons=reasons, rendered=rendered)


def bare_prompt(question: str, options) -> str:
    return BARE_TEMPLATE.format(
        question=question,
        options_block=_options_block(options),
        labels=_labels_list(options),
    )


_ANSWER_SPAN_RE = re.compile(r"\banswer\s*[:\-]\s*\(?([A-Za-z]+)\)?", re.IGNORECASE)


def parse_answer(completion_text: str, allowed_labels) -> str:
    """Extract the final answered label from a completion.

    Only "Answer: <word>" spans are considered; the last span whose word
    matches an allowed label (case-insensitively) wins and the canonical
    label is returned.
    """
    labels = list(allowed_labels)
    if not labels:
        raise InputError("allowed_labels must be nonempty")
    by_lower = {label.lower(): label for label in labels}
    found = None
    for match in _ANSWER_SPAN_RE.finditer(completion_text):
        candidate = by_lower.get(match.group(1).lower())
        if candidate is not None:
            found = candidate
    if found is None:
        raise UnparsedAnswerError(completion_text, tuple(labels))
    return found


# -- results ---------------------------------------------------------------


@dataclass
class QuestionResult:
    """Final answer plus enough artifact hashes to audit the run."""

    question_id: str
    answer: str | None
    unparsed: bool
    degraded: bool
    n_reasons: int
    selected_ids: list
    selected_texts: list
    pool_hash: str
    model_hash: str
    solver_id: str
    best_energy: float | None
    stability: dict | None
    tokens_in: int
    tokens_out: int
    tokens_by_model: dict
    schema_version: int = 1

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "question_id": self.question_id,
            "answer": self.answer,
            "unparsed": self.unparsed,
            "degraded": self.degraded,
            "n_reasons": self.n_reasons,
            "selected_ids": list(self.selected_ids),
            "selected_texts": list(self.selected_texts),
            "pool_hash": self.pool_hash,
            "model_hash": self.model_hash,
            "solver_id": self.solver_id,
            "best_energy": self.best_energy,
            "stability": self.stability,
            "tokens_in": self.tokens_in,
            "tokens_out": self.tokens_out,
            "tokens_by_model": dict(self.tokens_by_model),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "QuestionResult":
        return cls(
            question_id=doc["question_id"],
            answer=doc["answer"],
            unparsed=doc["unparsed"],
            degraded=doc["degraded"],
            n_reasons=doc["n_reasons"],
            selected_ids=doc["selected_ids"],
            selected_texts=doc["selected_texts"],
            pool_hash=doc["pool_hash"],
            model_hash=doc["model_hash"],
            solver_id=doc["solver_id"],
            best_energy=doc["best_energy"],
            stability=doc["stability"],
            tokens_in=doc["tokens_in"],
            tokens_out=doc["tokens_out"],
            tokens_by_model=doc.get("tokens_by_model", {}),
            schema_version=doc.get("schema_version", 1),
        )


def question_run_dir(out_dir: str | Path, question_id: str, config: PipelineConfig) -> Path:
    return Path(out_dir) / f"{_safe_name(question_id)}__{config.config_hash()[:12]}"


# -- stages ----------------------------------------------------------------


def _write_stage(run_dir: Path | None, name: str, doc: dict) -> None:
    if run_dir is not None:
        write_json(Path(run_dir) / name, doc)


def stage_sample(question_id: str, question: str, options, config: PipelineConfig,
                 client: LlmClient, run_dir: Path | None = None) -> list:
    """Draw completions per the sampling plan; global sample_index 0..N-1."""
    prompt = sampling_prompt(question, options)
    traces: list = []
    offset = 0
    for model, count in config.sampling_plan:
        traces.extend(
            client.sample_completions(
                prompt, model, count, config.decoding,
                question_id=question_id, start_index=offset,
            )
        )
        offset += count
    _write_stage(run_dir, STAGE_TRACES, {
        "schema_version": 1,
        "question_id": question_id,
        "question": question,
        "options": [[label, text] for label, text in options],
        "traces": [t.to_dict() for t in traces],
    })
    return traces


def stage_pool(traces, config: PipelineConfig, client: LlmClient,
               run_dir: Path | None = None) -> ReasonPool:
    """Extract fragments, embed them, merge into a pool with counts."""
    fragments = [extract_fragments(t, config.min_fragment_chars) for t in traces]
    flat = [f for sample in fragments for f in sample]
    if flat:
        vectors = client.embed(flat, config.embed_model)
        embeddings = []
        pos = 0
        for sample in fragments:
            embeddings.append(vectors[pos : pos + len(sample)])
            pos += len(sample)
    else:
        embeddings = [[] for _ in fragments]
    pool = dedup_merge(fragments, embeddings, config.merge_threshold,
                       n_samples=len(traces))
    _write_stage(run_dir, STAGE_POOL, pool.to_dict())
    return pool


def pool_similarity(pool: ReasonPool, config: PipelineConfig, client: LlmClient):
    """Similarity matrix over canonical texts, re-embedding if needed.

    A pool loaded from JSON carries no vectors; embedding the canonical
    texts again gives the same vectors the in-memory path holds, because
    embeddings are a pure function of the text (stub) or cached by text
    hash (cassette).
    """
    missing = [r for r in pool.reasons if r.embedding is None]
    if missing:
        vectors = client.embed([r.canonical_text for r in missing], config.embed_model)
        for reason, vec in zip(missing, vectors):
            reason.embedding = vec
    return similarity_matrix(pool)


def stage_hubo(pool: ReasonPool, config: PipelineConfig, client: LlmClient,
               run_dir: Path | None = None) -> HuboModel:
    sim = pool_similarity(pool, config, client)
    model = build_hubo(pool, sim, config.hubo_params)
    _write_stage(run_dir, STAGE_HUBO, model.to_dict())
    return model


def stage_solve(model: HuboModel, config: PipelineConfig, question_id: str,
                run_dir: Path | None = None,
                adapter: ExternalSolverAdapter | None = None) -> SampleSet:
    schedule = replace(config.schedule, seed=derive_seed(config.seed, question_id))
    sample_set = solve(model, config.solver_choice, schedule=schedule, adapter=adapter)
    _write_stage(run_dir, STAGE_SAMPLES, sample_set.to_dict())
    return sample_set


def stage_rank(sample_set: SampleSet, config: PipelineConfig,
               run_dir: Path | None = None) -> StabilityReport:
    report = stability_report(sample_set, config.stability)
    _write_stage(run_dir, STAGE_STABILITY, report.to_dict())
    return report


def ordered_stable_reasons(pool: ReasonPool, report: StabilityReport) -> list:
    """Selected reasons ordered by descending frequency, ties by id."""
    order = sorted(report.selected, key=lambda i: (-report.frequencies[i], i))
    return [(i, pool.reasons[i].canonical_text) for i in order]


def stage_answer(question_id: str, question: str, options, pool: ReasonPool | None,
                 report: StabilityReport | None, config: PipelineConfig,
                 client: LlmClient, degraded: bool,
                 run_dir: Path | None = None) -> tuple:
    """Query the answer model with the final (or bare) prompt, parse the label."""
    if degraded or pool is None or report is None:
        prompt = bare_prompt(question, options)
        selected: list = []
    else:
        selected = ordered_stable_reasons(pool, report)
        prompt = build_final_prompt(question, [t for _, t in selected], options).rendered
    trace = client.sample_completions(
        prompt, config.answer_model, 1, config.decoding,
        question_id=f"{question_id}::final",
    )[0]
    labels = [label for label, _ in options]
    try:
        answer = parse_answer(trace.raw_text, labels)
        unparsed = False
    except UnparsedAnswerError:
        answer = None
        unparsed = True
    return answer, unparsed, selected, trace


def run_question(question: str, options, config: PipelineConfig, client: LlmClient,
                 *, question_id: str | None = None, out_dir: str | Path | None = None,
                 adapter: ExternalSolverAdapter | None = None) -> QuestionResult:
    """Execute every stage for one question and persist the artifacts."""
    if question_id is None:
        question_id = hashlib.sha256(question.encode("utf-8")).hexdigest()[:16]
    options = [(label, text) for label, text in options]
    if not options:
        raise InputError("options must be nonempty")
    run_dir = question_run_dir(out_dir, question_id, config) if out_dir is not None else None

    def _stage(name, fn):
        try:
            return fn()
        except Exception as exc:
            raise StageError(name, exc) from exc

    traces = _stage("sample", lambda: stage_sample(
        question_id, question, options, config, client, run_dir))
    pool = _stage("pool", lambda: stage_pool(traces, config, client, run_dir))

    degraded = pool.num_reasons == 0
    if degraded:
        model = None
        sample_set = None
        report = None
    else:
        model = _stage("build", lambda: stage_hubo(pool, config, client, run_dir))
        sample_set = _stage("solve", lambda: stage_solve(
            model, config, question_id, run_dir, adapter))
        report = _stage("rank", lambda: stage_rank(sample_set, config, run_dir))

    answer, unparsed, selected, answer_trace = _stage("answer", lambda: stage_answer(
        question_id, question, options, pool, report, config, client, degraded, run_dir))

    tokens_by_model: dict = {}
    tokens_in = 0
    tokens_out = 0
    for trace in [*traces, answer_trace]:
        tokens_in += trace.token_count_in
        tokens_out += trace.token_count_out
        total = trace.token_count_in + trace.token_count_out
        tokens_by_model[trace.model_name] = tokens_by_model.get(trace.model_name, 0) + total

    result = QuestionResult(
        question_id=question_id,
        answer=answer,
        unparsed=unparsed,
        degraded=degraded,
        n_reasons=pool.num_reasons,
        selected_ids=[i for i, _ in selected],
        selected_texts=[t for _, t in selected],
        pool_hash=content_hash(pool.to_dict()),
        model_hash=content_hash(model.to_dict()) if model is not None else "",
        solver_id=sample_set.solver_id if sample_set is not None else "",
        best_energy=sample_set.best().energy if sample_set is not None else None,
        stability=report.to_dict() if report is not None else None,
        tokens_in=tokens_in,
        tokens_out=tokens_out,
        tokens_by_model=tokens_by_model,
    )
    _write_stage(run_dir, STAGE_RESULT, result.to_dict())
    return result


# -- stage-file loaders ----------------------------------------------------


def load_traces(run_dir: str | Path) -> tuple:
    doc = read_json(Path(run_dir) / STAGE_TRACES)
    traces = [CompletionTrace.from_dict(t) for t in doc["traces"]]
    options = [(label, text) for label, text in doc["options"]]
    return doc["question_id"], doc["question"], options, traces


def load_pool(run_dir: str | Path) -> ReasonPool:
    return ReasonPool.from_dict(read_json(Path(run_dir) / STAGE_POOL))


def load_hubo(run_dir: str | Path) -> HuboModel:
    return HuboModel.from_dict(read_json(Path(run_dir) / STAGE_HUBO))


def load_samples(run_dir: str | Path) -> SampleSet:
    return SampleSet.from_dict(read_json(Path(run_dir) / STAGE_SAMPLES))


def load_stability(run_dir: str | Path) -> StabilityReport:
    return StabilityReport.from_dict(read_json(Path(run_dir) / STAGE_STABILITY))


def load_result(run_dir: str | Path) -> QuestionResult:
    return QuestionResult.from_dict(read_json(Path(run_dir) / STAGE_RESULT))
