"""Benchmark harness: dataset loading, scoring, energy accounting, reports.

Datasets are JSON lines, one record per line:

    {"id": "q1", "question": "...", "options": [["A", "..."], ["B", "..."]],
     "target": "A"}

Option labels are free-form strings (Yes/No/Ambiguous or A..J in the
datasets this mirrors); the target must be one of them.
"""

from __future__ import annotations

import csv
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError, InputError, ValidationError
from .jsonio import read_json, write_json
from .llm_client import LlmClient, _safe_name
from .pipeline import PipelineConfig, QuestionResult, run_question

# Watt-hours per token; the DeepSeek V1 figure is the midpoint of the
# published 1.0e-3 to 2.0e-3 range.
DEFAULT_ENERGY_TABLE = {
    "gpt-4o": 3.0e-4,
    "o3-high": 3.3e-2,
    "llama-3.1": 8.6e-4,
    "deepseek-v1": 1.5e-3,
    "deepseek-r1": 4.5e-3,
}


@dataclass(frozen=True)
class BenchRecord:
    id: str
    question: str
    options: tuple  # ((label, text), ...)
    target: str

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(
            (str(label), str(text)) for label, text in self.options
        ))
        labels = [label for label, _ in self.options]
        if len(set(labels)) != len(labels):
            raise ValidationError(f"record {self.id!r}: duplicate option labels")
        if self.target not in labels:
            raise ValidationError(
                f"record {self.id!r}: target {self.target!r} not among labels {labels}"
            )

    @property
    def labels(self) -> list:
        return [label for label, _ in self.options]


def load_dataset(path: str | Path) -> list:
    """Read and validate a JSON-lines dataset."""
    import json

    path = Path(path)
    if not path.exists():
        raise ValidationError(f"dataset file not found: {path}")
    records: list = []
    seen: set = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            try:
                record = BenchRecord(
                    id=str(doc["id"]),
                    question=doc["question"],
                    options=tuple((o[0], o[1]) for o in doc["options"]),
                    target=doc["target"],
                )
            except (KeyError, IndexError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed record: {exc}") from exc
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            if record.id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate id {record.id!r}")
            seen.add(record.id)
            records.append(record)
    return records


@dataclass(frozen=True)
class EnergyTable:
    """Wh-per-token lookup with override support."""

    entries: tuple = ()

    def __post_init__(self):
        merged = dict(DEFAULT_ENERGY_TABLE)
        merged.update({name: float(v) for name, v in self.entries})
        for name, value in merged.items():
            if value <= 0:
                raise InputError(f"energy table entry {name!r} must be positive")
        object.__setattr__(self, "entries", tuple(sorted(merged.items())))

    def wh_per_token(self, model_name: str) -> float:
        table = dict(self.entries)
        if model_name not in table:
            known = ", ".join(sorted(table))
            raise ConfigurationError(
                f"model {model_name!r} not in energy table; known models: {known}"
            )
        return table[model_name]


def estimate_energy(token_counts: dict, table: EnergyTable | None = None) -> float:
    """Total watt-hours: sum of tokens * Wh/token over models."""
    if table is None:
        table = EnergyTable()
    total = 0.0
    for model_name, tokens in sorted(token_counts.items()):
        if tokens < 0:
            raise InputError(f"negative token count for {model_name!r}")
        total += tokens * table.wh_per_token(model_name)
    return total


@dataclass
class RunSummary:
    """Aggregates over one benchmark run."""

    accuracy: float
    n_correct: int
    n_total: int
    n_unparsed: int
    reasons_mean: float
    reasons_median: float
    reasons_min: int
    reasons_max: int
    selected_mean: float
    tokens_total: int
    estimated_wh: float
    per_question: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "accuracy": self.accuracy,
            "n_correct": self.n_correct,
            "n_total": self.n_total,
            "n_unparsed": self.n_unparsed,
            "reasons_mean": self.reasons_mean,
            "reasons_median": self.reasons_median,
            "reasons_min": self.reasons_min,
            "reasons_max": self.reasons_max,
            "selected_mean": self.selected_mean,
            "tokens_total": self.tokens_total,
            "estimated_wh": self.estimated_wh,
            "per_question": self.per_question,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunSummary":
        return cls(**{k: doc[k] for k in (
            "accuracy", "n_correct", "n_total", "n_unparsed",
            "reasons_mean", "reasons_median", "reasons_min", "reasons_max",
            "selected_mean", "tokens_total", "estimated_wh", "per_question",
        )})


def reason_count_stats(counts) -> dict:
    """Mean, median, min, max of a fragment-count distribution."""
    values = list(counts)
    if not values:
        return {"mean": 0.0, "median": 0.0, "min": 0, "max": 0}
    return {
        "mean": statistics.fmean(values),
        "median": float(statistics.median(values)),
        "min": min(values),
        "max": max(values),
    }


def score(results, records, energy_table: EnergyTable | None = None) -> RunSummary:
    """Accuracy and aggregate statistics; unparsed answers count incorrect."""
    by_id = {r.question_id: r for r in results}
    record_ids = {rec.id for rec in records}
    if set(by_id) != record_ids:
        missing = sorted(record_ids - set(by_id))
        extra = sorted(set(by_id) - record_ids)
        raise InputError(f"results/records id mismatch; missing={missing}, extra={extra}")

    ordered = sorted(records, key=lambda rec: rec.id)
    n_total = len(ordered)
    n_correct = 0
    n_unparsed = 0
    tokens_total = 0
    tokens_by_model: dict = {}
    per_question = []
    for rec in ordered:
        result = by_id[rec.id]
        correct = result.answer == rec.target
        n_correct += int(correct)
        n_unparsed += int(result.unparsed)
        tokens_total += result.tokens_in + result.tokens_out
        for model_name, tokens in result.tokens_by_model.items():
            tokens_by_model[model_name] = tokens_by_model.get(model_name, 0) + tokens
        per_question.append({
            "id": rec.id,
            "answer": result.answer,
            "target": rec.target,
            "correct": correct,
            "unparsed": result.unparsed,
            "n_reasons": result.n_reasons,
            "n_selected": len(result.selected_ids),
            "tokens_in": result.tokens_in,
            "tokens_out": result.tokens_out,
        })

    stats = reason_count_stats([row["n_reasons"] for row in per_question])
    selected_mean = (
        statistics.fmean(row["n_selected"] for row in per_question) if per_question else 0.0
    )
    return RunSummary(
        accuracy=(n_correct / n_total) if n_total else 0.0,
        n_correct=n_correct,
        n_total=n_total,
        n_unparsed=n_unparsed,
        reasons_mean=stats["mean"],
        reasons_median=stats["median"],
        reasons_min=stats["min"],
        reasons_max=stats["max"],
        selected_mean=selected_mean,
        tokens_total=tokens_total,
        estimated_wh=estimate_energy(tokens_by_model, energy_table),
        per_question=per_question,
    )


def run_bench(records, config: PipelineConfig, client: LlmClient,
              out_dir: str | Path, workers: int = 1, adapter=None) -> tuple:
    """Run every question (optionally in parallel) and score the results.

    Results are deterministic regardless of worker count: per-question
    seeds derive from (config.seed, question id) and aggregation folds over
    id-sorted results.
    """
    def _one(rec: BenchRecord) -> QuestionResult:
        return run_question(rec.question, rec.options, config, client,
                            question_id=rec.id, out_dir=out_dir, adapter=adapter)

    if workers <= 1:
        results = [_one(rec) for rec in records]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one, records))

    table = EnergyTable(config.energy_table)
    summary = score(results, records, table)
    write_json(Path(out_dir) / "summary.json", summary.to_dict())
    return summary, results


def emit_report(summary: RunSummary, results, out_dir: str | Path, tau: float) -> list:
    """Write summary JSON, a per-question CSV, and one frequency plot each."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    report_dir = Path(out_dir) / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    written = []

    summary_path = report_dir / "summary.json"
    write_json(summary_path, summary.to_dict())
    written.append(summary_path)

    csv_path = report_dir / "results.csv"
    fieldnames = ["id", "answer", "target", "correct", "unparsed",
                  "n_reasons", "n_selected", "tokens_in", "tokens_out"]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in summary.per_question:
            writer.writerow({k: row[k] for k in fieldnames})
    written.append(csv_path)

    by_id = {r.question_id: r for r in results}
    for row in summary.per_question:
        result = by_id.get(row["id"])
        if result is None or result.stability is None:
            continue
        freqs = result.stability["frequencies"]
        fig, ax = plt.subplots(figsize=(max(4.0, 0.3 * len(freqs) + 1.5), 3.0))
        ax.bar(range(len(freqs)), freqs, color="#4878a8")
        ax.axhline(tau, color="#c44e52", linestyle="--", linewidth=1.2,
                   label=f"tau = {tau}")
        ax.set_xlabel("reason id")
        ax.set_ylabel("inclusion frequency")
        ax.set_ylim(0.0, 1.05)
        ax.set_title(row["id"])
        ax.legend(loc="upper right")
        fig.tight_layout()
        plot_path = report_dir / f"{_safe_name(row['id'])}_frequencies.svg"
        fig.savefig(plot_path)
        plt.close(fig)
        written.append(plot_path)
    return written


def load_summary(out_dir: str | Path) -> RunSummary:
    return RunSummary.from_dict(read_json(Path(out_dir) / "summary.json"))
