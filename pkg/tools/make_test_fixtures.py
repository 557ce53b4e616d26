#!/usr/bin/env python3
"""Regenerate the committed replay fixtures under tests/fixtures/.

The fixture models one causal question sampled 20 times from a remote chat
model, with every exchange recorded so the full pipeline can run in
replay-strict mode with no network.  Nine distinct reasons appear across
the completions with popularities [20, 16, 12, 10, 8, 5, 4, 2, 2]; the
three most popular ones occur in several surface variants (case and
punctuation) that the merge stage must collapse.

The script checks its own output: it runs the real extraction + merge
code on the generated completions and asserts the resulting pool matches
the intended popularities, that variant pairs sit above the merge
threshold, and that distinct reasons sit well below it.

Run from the repository root:

    python3 tools/make_test_fixtures.py
"""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from cotanneal.jsonio import write_json
from cotanneal.llm_client import ModelSpec, _safe_name, stub_embedding
from cotanneal.pipeline import PipelineConfig, sampling_prompt
from cotanneal.reason_pool import dedup_merge, extract_fragments
from cotanneal.solvers import AnnealSchedule

FIXTURES = ROOT / "tests" / "fixtures"

QUESTION_ID = "causal-wilt-01"
QUESTION = (
    "A gardener waters a houseplant every morning. One week the gardener "
    "is travelling and nobody else enters the apartment. At the end of the "
    "week the plant has wilted. Did the gardener's absence cause the plant "
    "to wilt?"
)
OPTIONS = (("Yes", "the absence caused the wilting"),
           ("No", "the absence did not cause the wilting"))
TARGET = "Yes"

SEED = 42
N_SAMPLES = 20

CHAT_MODEL = ModelSpec(
    provider_id="openai-compat",
    model_name="fixture-chat",
    endpoint="https://api.example.test/v1",
    credential_ref="FIXTURE_API_KEY",
)
ANSWER_MODEL = ModelSpec(provider_id="stub", model_name="stub-answer")

# (popularity, [surface variants]); the first variant is the intended
# canonical form, the rest differ only in case or trailing punctuation
FRAGMENTS = [
    (20, [
        "The plant received no water at all during the week the gardener was away.",
        "the plant received no water at all during the week the gardener was away.",
        "The plant received no water at all during the week the gardener was away",
    ]),
    (16, [
        "Daily watering was the plant's only source of moisture.",
        "Daily watering was the plant's only source of moisture",
    ]),
    (12, [
        "Wilting is the normal physiological response of a plant to losing water.",
        "wilting is the normal physiological response of a plant to losing water.",
    ]),
    (10, [
        "Had the gardener stayed home, the routine would have kept the soil moist.",
    ]),
    (8, [
        "Nobody else entered the apartment, so no substitute care was possible.",
    ]),
    (5, [
        "No disease, pests, or other damage are mentioned anywhere in the story.",
    ]),
    (4, [
        "Seven days is long enough for an indoor pot to dry out completely.",
    ]),
    (2, [
        "Absence matters here only through the missed waterings it implies.",
    ]),
    (2, [
        "A counterfactual test supports causation: stay home, plant survives.",
    ]),
]

EXPECTED_POPULARITY = [pop for pop, _ in FRAGMENTS]


def assign_samples(rng: np.random.Generator) -> list[list[str]]:
    """Pick which samples mention which fragment and in what surface form."""
    per_sample: list[list[str]] = [[] for _ in range(N_SAMPLES)]
    for pop, variants in FRAGMENTS:
        if pop == N_SAMPLES:
            chosen = np.arange(N_SAMPLES)
        else:
            chosen = np.sort(rng.choice(N_SAMPLES, size=pop, replace=False))
        for slot, sample in enumerate(chosen):
            per_sample[int(sample)].append(variants[slot % len(variants)])
    for lines in per_sample:
        rng.shuffle(lines)
    return per_sample


def completion_text(lines: list[str], answer: str) -> str:
    numbered = [f"{i}. {line}" for i, line in enumerate(lines, start=1)]
    return "\n".join(numbered) + f"\nAnswer: {answer}"


def check_similarities() -> None:
    def unit(text: str) -> np.ndarray:
        return np.asarray(stub_embedding(text, SEED).values)

    for pop, variants in FRAGMENTS:
        vecs = [unit(v) for v in variants]
        for i in range(len(vecs)):
            for j in range(i + 1, len(vecs)):
                sim = float(np.dot(vecs[i], vecs[j]))
                assert sim >= 0.88, (
                    f"variant pair of {variants[0]!r} too dissimilar: {sim:.3f}")
    canon = [unit(variants[0]) for _, variants in FRAGMENTS]
    for i in range(len(canon)):
        for j in range(i + 1, len(canon)):
            sim = float(np.dot(canon[i], canon[j]))
            assert sim < 0.75, (
                f"fragments {i} and {j} too similar to stay distinct: {sim:.3f}")


def check_pool(texts: list[str]) -> None:
    fragments = [extract_fragments(t) for t in texts]
    embeddings = [[stub_embedding(f, SEED) for f in sample] for sample in fragments]
    pool = dedup_merge(fragments, embeddings, n_samples=len(texts))
    assert pool.num_reasons == len(FRAGMENTS), (
        f"expected {len(FRAGMENTS)} merged reasons, got {pool.num_reasons}")
    got = sorted(pool.membership.sum(axis=0).tolist(), reverse=True)
    assert got == sorted(EXPECTED_POPULARITY, reverse=True), (
        f"popularity mismatch: {got} vs {EXPECTED_POPULARITY}")


def cassette_doc(texts: list[str], order: list[int]) -> dict:
    prompt = sampling_prompt(QUESTION, OPTIONS)
    entries = {}
    for index, source in enumerate(order):
        text = texts[source]
        request = {
            "model": CHAT_MODEL.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0.7,
            "top_p": 1.0,
            "max_tokens": 1024,
            "n": 1,
        }
        response = {
            "id": f"fixture-{index}",
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {
                "prompt_tokens": len(prompt.split()),
                "completion_tokens": len(text.split()),
            },
        }
        entries[f"{CHAT_MODEL.model_name}/{index}"] = {
            "request": request, "response": response,
        }
    return {"question_id": QUESTION_ID, "entries": entries}


def main() -> None:
    rng = np.random.default_rng(20250823)
    per_sample = assign_samples(rng)
    answers = ["Yes"] * N_SAMPLES
    for idx in rng.choice(N_SAMPLES, size=3, replace=False):
        answers[int(idx)] = "No"
    texts = [completion_text(lines, answers[k])
             for k, lines in enumerate(per_sample)]

    check_similarities()
    check_pool(texts)

    chat_name = f"{_safe_name(QUESTION_ID)}.json"
    identity = list(range(N_SAMPLES))
    permuted = [int(i) for i in rng.permutation(N_SAMPLES)]
    assert permuted != identity
    write_json(FIXTURES / "replay" / "chat" / chat_name,
               cassette_doc(texts, identity))
    write_json(FIXTURES / "replay_permuted" / "chat" / chat_name,
               cassette_doc(texts, permuted))

    config = PipelineConfig(
        sampling_plan=((CHAT_MODEL, N_SAMPLES),),
        answer_model=ANSWER_MODEL,
        n_samples=N_SAMPLES,
        solver_choice="brute-force",
        schedule=AnnealSchedule(sweeps=200, restarts=8),
        seed=SEED,
        energy_table=(("fixture-chat", 3.0e-4), ("stub-answer", 3.0e-4)),
    )
    write_json(FIXTURES / "config_replay.json", config.to_dict())

    dataset_line = {
        "id": QUESTION_ID,
        "question": QUESTION,
        "options": [list(pair) for pair in OPTIONS],
        "target": TARGET,
    }
    import json
    (FIXTURES / "dataset_replay.jsonl").write_text(
        json.dumps(dataset_line, ensure_ascii=False) + "\n", encoding="utf-8")

    print(f"wrote fixtures for {QUESTION_ID} under {FIXTURES}")


if __name__ == "__main__":
    main()
