"""Chat-completion and embedding access with a record/replay layer.

Remote providers are spoken to over HTTP in the common OpenAI-compatible
JSON shape (``messages`` array for chat, ``input`` array for embeddings).
A cassette directory persists every exchange so the rest of the pipeline
can run offline and byte-identically.

The special provider id ``"stub"`` selects in-process deterministic models:
a hash-derived chat model that always emits a numbered reason list plus an
``Answer: <label>`` line, and an embedder that projects character 3-grams
onto a seeded 64-dimensional unit vector.  Stub calls never touch the
network or the cassette store.

Credentials are read from the environment variable named by
``ModelSpec.credential_ref``; they are never accepted through CLI flags or
configuration files.
"""

from __future__ import annotations

import hashlib
import os
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from urllib.parse import urlparse

import numpy as np
import requests

from .errors import (
    ConfigurationError,
    FixtureError,
    InputError,
    ProviderError,
    TransportError,
)
from .jsonio import read_json, write_json

REPLAY_MODES = ("live", "record", "replay-strict", "replay-fallback")

STUB_PROVIDER = "stub"
STUB_EMBED_DIM = 64


def _safe_name(name: str) -> str:
    clean = re.sub(r"[^A-Za-z0-9._-]", "_", name)
    if clean != name or len(clean) > 64:
        digest = hashlib.sha256(name.encode("utf-8")).hexdigest()[:12]
        clean = f"{clean[:48]}_{digest}"
    return clean


def _text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ModelSpec:
    """Identity of one provider/model pair.

    ``credential_ref`` names the environment variable holding the API key;
    an empty string means the endpoint is called without authentication.
    """

    provider_id: str
    model_name: str
    endpoint: str = "stub://local"
    credential_ref: str = ""

    def __post_init__(self):
        if not self.model_name:
            raise InputError("model_name must be nonempty")
        parsed = urlparse(self.endpoint)
        if not parsed.scheme or not parsed.netloc:
            raise InputError(f"endpoint is not an absolute URL: {self.endpoint!r}")

    @property
    def is_stub(self) -> bool:
        return self.provider_id == STUB_PROVIDER

    def to_dict(self) -> dict:
        return {
            "provider_id": self.provider_id,
            "model_name": self.model_name,
            "endpoint": self.endpoint,
            "credential_ref": self.credential_ref,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        return cls(
            provider_id=doc["provider_id"],
            model_name=doc["model_name"],
            endpoint=doc.get("endpoint", "stub://local"),
            credential_ref=doc.get("credential_ref", ""),
        )


@dataclass(frozen=True)
class DecodingParams:
    """Sampling parameters, held fixed across all completions of a question."""

    temperature: float = 0.7
    top_p: float = 1.0
    max_tokens: int = 1024

    def __post_init__(self):
        if self.temperature < 0:
            raise InputError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise InputError("top_p must be in (0, 1]")
        if self.max_tokens < 1:
            raise InputError("max_tokens must be positive")

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DecodingParams":
        return cls(**{k: doc[k] for k in ("temperature", "top_p", "max_tokens") if k in doc})


@dataclass
class CompletionTrace:
    """One sampled completion with its token accounting.

    ``tokens_estimated`` marks counts that came from the whitespace fallback
    rather than the provider's usage fields.
    """

    question_id: str
    sample_index: int
    raw_text: str
    token_count_in: int
    token_count_out: int
    model_name: str = ""
    tokens_estimated: bool = False

    def __post_init__(self):
        if self.sample_index < 0:
            raise InputError("sample_index must be >= 0")
        if self.token_count_in < 0 or self.token_count_out < 0:
            raise InputError("token counts must be >= 0")

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "sample_index": self.sample_index,
            "raw_text": self.raw_text,
            "token_count_in": self.token_count_in,
            "token_count_out": self.token_count_out,
            "model_name": self.model_name,
            "tokens_estimated": self.tokens_estimated,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CompletionTrace":
        return cls(
            question_id=doc["question_id"],
            sample_index=doc["sample_index"],
            raw_text=doc["raw_text"],
            token_count_in=doc["token_count_in"],
            token_count_out=doc["token_count_out"],
            model_name=doc.get("model_name", ""),
            tokens_estimated=doc.get("tokens_estimated", False),
        )


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple
    norm: float

    @classmethod
    def from_values(cls, values) -> "EmbeddingVector":
        arr = np.asarray(values, dtype=float)
        norm = float(np.linalg.norm(arr))
        if norm <= 0.0:
            raise InputError("embedding vector has zero norm")
        return cls(tuple(float(v) for v in arr), norm)

    @property
    def dim(self) -> int:
        return len(self.values)

    def cosine(self, other: "EmbeddingVector") -> float:
        a = np.asarray(self.values)
        b = np.asarray(other.values)
        return float(a @ b) / (self.norm * other.norm)


def stub_embedding(text: str, seed: int = 0, dim: int = STUB_EMBED_DIM) -> EmbeddingVector:
    """Deterministic unit vector built from hashed character 3-grams.

    Near-duplicate strings share most of their grams and therefore score a
    high cosine similarity, which is all the offline tests need.  Pure
    function of (text, seed).
    """
    if len(text) >= 3:
        grams = [text[i : i + 3] for i in range(len(text) - 2)]
    else:
        grams = [text]
    vec = np.zeros(dim)
    for gram, count in Counter(grams).items():
        digest = hashlib.blake2b(f"{seed}|{gram}".encode("utf-8"), digest_size=8).digest()
        idx = int.from_bytes(digest[:4], "big") % dim
        sign = 1.0 if digest[4] & 1 else -1.0
        vec[idx] += sign * count
    if not np.any(vec):
        # opposing grams cancelled; fall back to a single whole-string bucket
        whole = hashlib.blake2b(f"{seed}|{text}".encode("utf-8"), digest_size=4).digest()
        vec[int.from_bytes(whole, "big") % dim] = 1.0
    return EmbeddingVector.from_values(vec / np.linalg.norm(vec))


_STUB_LABELS_RE = re.compile(r"one of:\s*([A-Za-z][A-Za-z, ]*)")

# mutually dissimilar under the 3-gram embedder, so they survive merging
_STUB_TEMPLATES = (
    "The literal wording of the question admits only one reading, tagged {h}.",
    "Comparing the options pairwise eliminates the weakest candidates near {h}.",
    "A counting argument over the stated quantities rules out extremes, see {h}.",
    "Checking units and magnitudes keeps a single option plausible, marker {h}.",
    "Working backwards from each option, contradictions appear except once at {h}.",
    "The premise fixes the temporal order of events, anchor {h}.",
    "Substituting the simplest concrete example settles the general claim via {h}.",
    "Negating the candidate answer produces an inconsistency, witness {h}.",
    "Every distractor violates at least one stated constraint, audit {h}.",
    "Symmetry between the described cases collapses the choice space, key {h}.",
    "The edge case mentioned last changes nothing material, checksum {h}.",
    "Re-reading the question for scope, the quantifier is universal, label {h}.",
)


def _stub_rng(*parts) -> np.random.Generator:
    digest = hashlib.blake2b("|".join(str(p) for p in parts).encode("utf-8"),
                             digest_size=16).digest()
    return np.random.default_rng(int.from_bytes(digest, "big"))


def stub_completion(prompt: str, model_name: str, sample_index: int, seed: int = 0) -> str:
    """Deterministic chat stub: numbered reasons plus an answer line.

    Reasons are drawn from a prompt-derived vocabulary shared by all
    samples of that prompt, so merged pools get nontrivial co-occurrence
    structure.  The answer label is chosen from the "one of: ..." list in
    the prompt so the downstream parser always succeeds; with no such list
    the stub answers "A".
    """
    match = _STUB_LABELS_RE.search(prompt)
    if match:
        labels = [part.strip() for part in match.group(1).split(",") if part.strip()]
    else:
        labels = ["A"]
    vocab_rng = _stub_rng("vocab", seed, prompt)
    vocab = [t.format(h=f"q{int(vocab_rng.integers(0, 2**32)):08x}")
             for t in _STUB_TEMPLATES]
    rng = _stub_rng("sample", seed, model_name, sample_index, prompt)
    picks = rng.choice(len(vocab), size=int(rng.integers(3, 7)), replace=False)
    lines = [f"{i + 1}. {vocab[p]}" for i, p in enumerate(picks)]
    lines.append(f"Answer: {labels[int(rng.integers(0, len(labels)))]}")
    return "\n".join(lines)


class CassetteStore:
    """Persisted request/response exchanges.

    Layout under the root directory:

    - ``chat/<question_id>.json``: one document per question, entries keyed
      ``<model_name>/<sample_index>``.
    - ``embeddings.json``: shared document, entries keyed
      ``<model_name>/<sha256(text)>``.

    Files are canonical JSON (sorted keys, trailing newline) so recorded
    fixtures diff cleanly.  Writes are serialized by a lock.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    def chat_path(self, question_id: str) -> Path:
        return self.root / "chat" / f"{_safe_name(question_id)}.json"

    @property
    def embeddings_path(self) -> Path:
        return self.root / "embeddings.json"

    def _load_entries(self, path: Path) -> dict:
        if not path.exists():
            return {}
        try:
            doc = read_json(path)
        except ValueError as exc:
            raise FixtureError(f"cassette file is not valid JSON: {path}") from exc
        entries = doc.get("entries")
        if not isinstance(entries, dict):
            raise FixtureError(f"cassette file has no 'entries' object: {path}")
        return entries

    def lookup_chat(self, question_id: str, model_name: str, sample_index: int) -> dict | None:
        entries = self._load_entries(self.chat_path(question_id))
        return entries.get(f"{model_name}/{sample_index}")

    def store_chat(
        self, question_id: str, model_name: str, sample_index: int, request: dict, response: dict
    ) -> None:
        path = self.chat_path(question_id)
        with self._lock:
            entries = self._load_entries(path)
            entries[f"{model_name}/{sample_index}"] = {"request": request, "response": response}
            write_json(path, {"question_id": question_id, "entries": entries})

    def lookup_embedding(self, model_name: str, text: str) -> list | None:
        entries = self._load_entries(self.embeddings_path)
        entry = entries.get(f"{model_name}/{_text_key(text)}")
        if entry is None:
            return None
        return entry["embedding"]

    def store_embeddings(self, model_name: str, texts: Sequence[str], vectors: Sequence[Sequence[float]]) -> None:
        with self._lock:
            entries = self._load_entries(self.embeddings_path)
            for text, vec in zip(texts, vectors):
                entries[f"{model_name}/{_text_key(text)}"] = {
                    "text": text,
                    "embedding": [float(v) for v in vec],
                }
            write_json(self.embeddings_path, {"entries": entries})


class LlmClient:
    """Shared client for chat completions and embeddings.

    A single client instance is safe to share across worker threads: the
    cassette store serializes writes and everything else is read-only.
    """

    def __init__(
        self,
        cassette_dir: str | Path | None = None,
        mode: str = "live",
        seed: int = 0,
        timeout: float = 60.0,
        retry_attempts: int = 3,
        retry_backoff: float = 0.5,
        session: requests.Session | None = None,
    ):
        self.store = CassetteStore(cassette_dir) if cassette_dir is not None else None
        self.seed = seed
        self.timeout = timeout
        self.retry_attempts = retry_attempts
        self.retry_backoff = retry_backoff
        self._session = session
        self.mode = "live"
        self.record_replay_mode(mode)

    # -- configuration ----------------------------------------------------

    def record_replay_mode(self, mode: str) -> "LlmClient":
        """Switch the record/replay mode, validating the cassette path."""
        if mode not in REPLAY_MODES:
            raise ConfigurationError(f"unknown mode {mode!r}; expected one of {REPLAY_MODES}")
        if mode != "live":
            if self.store is None:
                raise ConfigurationError(f"mode {mode!r} requires a cassette directory")
            if mode == "replay-strict" and not self.store.root.exists():
                # strict replay with no recordings at all is a fixture
                # problem, not a config problem
                raise FixtureError(f"cassette directory does not exist: {self.store.root}")
            if mode == "record":
                self.store.root.mkdir(parents=True, exist_ok=True)
        self.mode = mode
        return self

    @property
    def session(self) -> requests.Session:
        if self._session is None:
            self._session = requests.Session()
        return self._session

    # -- chat -------------------------------------------------------------

    def sample_completions(
        self,
        question: str,
        model: ModelSpec,
        n: int,
        decoding: DecodingParams,
        *,
        question_id: str | None = None,
        start_index: int = 0,
    ) -> list[CompletionTrace]:
        """Draw ``n`` completions with sample_index start_index..start_index+n-1."""
        if n < 1:
            raise InputError("n must be >= 1")
        if not question:
            raise InputError("question must be nonempty")
        if question_id is None:
            question_id = _text_key(question)[:16]
        return [
            self._complete_one(question, model, decoding, question_id, start_index + i)
            for i in range(n)
        ]

    def _complete_one(
        self,
        prompt: str,
        model: ModelSpec,
        decoding: DecodingParams,
        question_id: str,
        sample_index: int,
    ) -> CompletionTrace:
        if model.is_stub:
            text = stub_completion(prompt, model.model_name, sample_index, self.seed)
            return CompletionTrace(
                question_id=question_id,
                sample_index=sample_index,
                raw_text=text,
                token_count_in=len(prompt.split()),
                token_count_out=len(text.split()),
                model_name=model.model_name,
                tokens_estimated=True,
            )

        request = {
            "model": model.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": decoding.temperature,
            "top_p": decoding.top_p,
            "max_tokens": decoding.max_tokens,
            "n": 1,
        }

        if self.mode in ("replay-strict", "replay-fallback"):
            entry = self.store.lookup_chat(question_id, model.model_name, sample_index)
            if entry is not None:
                return self._trace_from_response(
                    entry["response"], request, question_id, sample_index, model
                )
            if self.mode == "replay-strict":
                raise FixtureError(
                    f"no cassette entry for question {question_id!r}, "
                    f"model {model.model_name!r}, sample_index {sample_index}"
                )

        response = self._post_chat(model, request)
        if self.mode in ("record", "replay-fallback") and self.store is not None:
            self.store.store_chat(question_id, model.model_name, sample_index, request, response)
        return self._trace_from_response(response, request, question_id, sample_index, model)

    def _trace_from_response(
        self,
        response: dict,
        request: dict,
        question_id: str,
        sample_index: int,
        model: ModelSpec,
    ) -> CompletionTrace:
        try:
            text = response["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(
                f"chat response for {question_id!r}/{sample_index} has no choices[0].message.content"
            ) from exc
        usage = response.get("usage") or {}
        tokens_in = usage.get("prompt_tokens")
        tokens_out = usage.get("completion_tokens")
        estimated = tokens_in is None or tokens_out is None
        if tokens_in is None:
            tokens_in = len(request["messages"][0]["content"].split())
        if tokens_out is None:
            tokens_out = len(text.split())
        return CompletionTrace(
            question_id=question_id,
            sample_index=sample_index,
            raw_text=text,
            token_count_in=int(tokens_in),
            token_count_out=int(tokens_out),
            model_name=model.model_name,
            tokens_estimated=estimated,
        )

    # -- embeddings -------------------------------------------------------

    def embed(self, texts: Sequence[str], model: ModelSpec) -> list[EmbeddingVector]:
        """Embed a batch of texts, preserving input order."""
        if not texts:
            raise InputError("texts must be nonempty")
        for i, text in enumerate(texts):
            if not str(text).strip():
                raise InputError(f"text {i} is empty after trimming")

        if model.is_stub:
            vectors = [stub_embedding(t, self.seed) for t in texts]
        else:
            vectors = self._embed_remote(texts, model)

        dims = {v.dim for v in vectors}
        if len(dims) != 1:
            raise ProviderError(f"embedding dimension mismatch across batch: {sorted(dims)}")
        return vectors

    def _embed_remote(self, texts: Sequence[str], model: ModelSpec) -> list[EmbeddingVector]:
        found: dict[int, EmbeddingVector] = {}
        missing: list[int] = []
        if self.mode in ("replay-strict", "replay-fallback"):
            for i, text in enumerate(texts):
                values = self.store.lookup_embedding(model.model_name, text)
                if values is None:
                    missing.append(i)
                else:
                    found[i] = EmbeddingVector.from_values(values)
            if missing and self.mode == "replay-strict":
                raise FixtureError(
                    f"no cassette embedding for model {model.model_name!r}, "
                    f"text hash {_text_key(texts[missing[0]])}"
                )
        else:
            missing = list(range(len(texts)))

        if missing:
            fresh = self._post_embeddings(model, [texts[i] for i in missing])
            if self.mode in ("record", "replay-fallback") and self.store is not None:
                self.store.store_embeddings(
                    model.model_name, [texts[i] for i in missing], [v.values for v in fresh]
                )
            for i, vec in zip(missing, fresh):
                found[i] = vec
        return [found[i] for i in range(len(texts))]

    # -- HTTP -------------------------------------------------------------

    def _auth_headers(self, model: ModelSpec) -> dict:
        if not model.credential_ref:
            return {}
        key = os.environ.get(model.credential_ref)
        if key is None:
            raise ConfigurationError(
                f"credential environment variable {model.credential_ref!r} is not set"
            )
        return {"Authorization": f"Bearer {key}"}

    def _post(self, model: ModelSpec, path: str, payload: dict) -> dict:
        url = model.endpoint.rstrip("/") + path
        headers = self._auth_headers(model)
        last_error = "no attempt made"
        for attempt in range(1, self.retry_attempts + 1):
            try:
                resp = self.session.post(url, json=payload, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = str(exc)
            else:
                if resp.status_code >= 500:
                    last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
                elif resp.status_code >= 400:
                    raise ProviderError(f"HTTP {resp.status_code} from {url}: {resp.text[:500]}")
                else:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise ProviderError(f"non-JSON response from {url}") from exc
            if attempt < self.retry_attempts:
                time.sleep(self.retry_backoff * 2 ** (attempt - 1))
        raise TransportError(
            f"request to {url} failed after {self.retry_attempts} attempts: {last_error}",
            attempts=self.retry_attempts,
        )

    def _post_chat(self, model: ModelSpec, request: dict) -> dict:
        return self._post(model, "/chat/completions", request)

    def _post_embeddings(self, model: ModelSpec, texts: Sequence[str]) -> list[EmbeddingVector]:
        payload = {"model": model.model_name, "input": list(texts)}
        response = self._post(model, "/embeddings", payload)
        data = response.get("data")
        if not isinstance(data, list) or len(data) != len(texts):
            raise ProviderError(
                f"embeddings response has {len(data) if isinstance(data, list) else 'no'} "
                f"items for {len(texts)} inputs"
            )
        ordered = sorted(data, key=lambda item: item.get("index", 0))
        try:
            return [EmbeddingVector.from_values(item["embedding"]) for item in ordered]
        except (KeyError, TypeError) as exc:
            raise ProviderError("embeddings response item lacks an 'embedding' array") from exc
