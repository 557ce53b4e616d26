"""Assemble the energy model over reason-selection variables.

Coefficients come from pool statistics and embedding similarities:

- linear:   w_i = -mu * p_i + alpha * p_i (1 - p_i)
- pairwise: w_ij = -beta * (c_ij_std - lambda_sim2 * sim(i, j))
  with c_ij = n_ij / N - p_i p_j standardized over all pairs
- cubic:    w_ijk = -gamma * (c_ijk_std - lambda_sim3 * mean pairwise sim)
  with c_ijk = n_ijk / N - p_i p_j p_k standardized over the kept triples

After assembly each order is rescaled so its largest magnitude hits the
configured range exactly, then coefficients below 1e-12 are pruned.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError
from .jsonio import content_hash
from .reason_pool import ReasonPool, mean_triple_similarity, occurrence_counts

PRUNE_TOL = 1e-12


@dataclass(frozen=True)
class HuboParams:
    """Hyperparameters of the model builder.

    The symbols are named in the construction above; none of the defaults
    is privileged, they are unit-scale picks exposed through configuration.
    """

    mu: float = 1.0
    alpha: float = 0.5
    beta: float = 1.0
    gamma: float = 0.5
    lambda_sim2: float = 0.5
    lambda_sim3: float = 0.5
    epsilon: float = 1e-8
    range_a: float = 1.0
    range_b: float = 1.0
    range_c: float = 1.0
    max_order: int = 3
    triple_sparsify_top_m: int | None = None

    def __post_init__(self):
        if self.max_order not in (2, 3):
            raise InputError(f"max_order must be 2 or 3, got {self.max_order}")
        if self.mu <= 0:
            raise InputError("mu must be > 0")
        for name in ("alpha", "beta", "gamma", "lambda_sim2", "lambda_sim3"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0")
        if self.epsilon <= 0:
            raise InputError("epsilon must be > 0")
        for name in ("range_a", "range_b", "range_c"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be > 0")

    def range_for_order(self, order: int) -> float:
        return {1: self.range_a, 2: self.range_b, 3: self.range_c}[order]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "HuboParams":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})


@dataclass
class HuboModel:
    """Sparse polynomial over binary variables x in {0, 1}.

    ``terms`` maps sorted index tuples (size 1..max_order) to coefficients.
    ``constant`` is an energy offset; the builder never emits one, but
    basis round-trips need somewhere to carry it.
    """

    num_vars: int
    max_order: int
    terms: dict
    constant: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        canonical = {}
        for subset, coeff in self.terms.items():
            key = tuple(sorted(int(v) for v in subset))
            if len(key) == 0:
                raise InputError("empty subset key; use the constant field")
            if len(set(key)) != len(key):
                raise InputError(f"repeated variable in subset {subset}")
            if len(key) > self.max_order:
                raise InputError(f"subset {key} exceeds max_order {self.max_order}")
            if key[0] < 0 or key[-1] >= self.num_vars:
                raise InputError(f"subset {key} out of range for num_vars {self.num_vars}")
            if key in canonical:
                raise InputError(f"duplicate subset {key}")
            canonical[key] = float(coeff)
        self.terms = canonical

    def evaluate(self, assignment) -> float:
        bits = _as_bits(assignment, self.num_vars)
        energy = self.constant
        for subset, coeff in self.terms.items():
            prod = coeff
            for v in subset:
                if not bits[v]:
                    prod = 0.0
                    break
            energy += prod
        return energy

    def energy_of_bits(self, assignment) -> float:
        return self.evaluate(assignment)

    def scaled(self, factor: float) -> "HuboModel":
        return HuboModel(
            num_vars=self.num_vars,
            max_order=self.max_order,
            terms={s: c * factor for s, c in self.terms.items()},
            constant=self.constant * factor,
            metadata=dict(self.metadata),
        )

    def order_terms(self, order: int) -> dict:
        return {s: c for s, c in self.terms.items() if len(s) == order}

    def to_dict(self) -> dict:
        doc = {
            "schema_version": 1,
            "num_vars": self.num_vars,
            "max_order": self.max_order,
            "terms": [
                {"vars": list(s), "coeff": c}
                for s, c in sorted(self.terms.items(), key=lambda kv: (len(kv[0]), kv[0]))
            ],
            "metadata": self.metadata,
        }
        if self.constant != 0.0:
            doc["constant"] = self.constant
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "HuboModel":
        return cls(
            num_vars=doc["num_vars"],
            max_order=doc["max_order"],
            terms={tuple(t["vars"]): t["coeff"] for t in doc["terms"]},
            constant=doc.get("constant", 0.0),
            metadata=doc.get("metadata", {}),
        )


def _as_bits(assignment, num_vars: int) -> np.ndarray:
    if isinstance(assignment, str):
        values = [c for c in assignment]
        if any(c not in "01" for c in values):
            raise InputError(f"assignment string must be binary, got {assignment!r}")
        arr = np.array([c == "1" for c in values], dtype=bool)
    else:
        arr = np.asarray(assignment)
        if arr.dtype != bool:
            flat = arr.astype(np.int64)
            if np.any((flat != 0) & (flat != 1)):
                raise InputError("assignment entries must be 0 or 1")
            arr = flat.astype(bool)
    if arr.shape != (num_vars,):
        raise InputError(f"assignment length {arr.shape} does not match num_vars {num_vars}")
    return arr


def evaluate(model: HuboModel, assignment) -> float:
    return model.evaluate(assignment)


# -- coefficient construction ---------------------------------------------


def linear_coeffs(pool: ReasonPool, params: HuboParams) -> dict:
    p = pool.popularity
    risk = pool.risk
    return {i: -params.mu * p[i] + params.alpha * risk[i] for i in range(pool.num_reasons)}


def connected_corr2(pool: ReasonPool) -> dict:
    """c_ij = n_ij / N - p_i p_j over all index pairs."""
    _ensure_counts(pool, 2)
    n = pool.n_samples
    p = pool.popularity
    return {
        (i, j): pool.pair_counts.get((i, j), 0) / n - p[i] * p[j]
        for i, j in combinations(range(pool.num_reasons), 2)
    }


def connected_corr3(pool: ReasonPool, triples=None) -> dict:
    """c_ijk = n_ijk / N - p_i p_j p_k for the given triples (default all)."""
    _ensure_counts(pool, 3)
    n = pool.n_samples
    p = pool.popularity
    if triples is None:
        triples = combinations(range(pool.num_reasons), 3)
    return {
        (i, j, k): pool.triple_counts.get((i, j, k), 0) / n - p[i] * p[j] * p[k]
        for i, j, k in triples
    }


def _ensure_counts(pool: ReasonPool, order: int) -> None:
    if pool.n_i is None or pool.counts_order < order:
        occurrence_counts(pool, max_order=max(order, 2))


def standardize(values: Mapping, epsilon: float) -> dict:
    """Regularized z-scores over the map's own population."""
    if not values:
        return {}
    keys = list(values.keys())
    arr = np.array([values[k] for k in keys], dtype=float)
    mean = float(arr.mean())
    std = float(arr.std())  # population stddev
    return {k: (values[k] - mean) / (std + epsilon) for k in keys}


def pair_coeffs(corr_std: Mapping, sim: np.ndarray, params: HuboParams) -> dict:
    return {
        (i, j): -params.beta * (corr_std[(i, j)] - params.lambda_sim2 * sim[i, j])
        for i, j in corr_std
    }


def triple_coeffs(corr_std: Mapping, sim: np.ndarray, params: HuboParams) -> dict:
    return {
        (i, j, k): -params.gamma
        * (corr_std[(i, j, k)] - params.lambda_sim3 * mean_triple_similarity(sim, i, j, k))
        for i, j, k in corr_std
    }


def select_triples(pool: ReasonPool, params: HuboParams) -> list:
    """Triples that materialize as cubic terms.

    Always every triple with a nonzero co-occurrence count; when
    ``triple_sparsify_top_m`` is set, also the m remaining triples whose
    standardized correlation has the largest magnitude (ranked over the
    full triple population).
    """
    _ensure_counts(pool, 3)
    nonzero = sorted(pool.triple_counts.keys())
    if params.triple_sparsify_top_m is None:
        return nonzero
    chosen = set(nonzero)
    corr_all = connected_corr3(pool)
    ranked = standardize(corr_all, params.epsilon)
    remaining = [t for t in ranked if t not in chosen]
    remaining.sort(key=lambda t: (-abs(ranked[t]), t))
    return sorted(chosen | set(remaining[: params.triple_sparsify_top_m]))


def normalize_typewise(model: HuboModel, params: HuboParams) -> HuboModel:
    """Rescale each order so its max magnitude equals that order's range.

    Scaling uses (w / maxabs) * range so the extreme coefficient lands on
    the bound exactly; relative magnitudes within an order are preserved.
    """
    terms = {}
    for order in (1, 2, 3):
        order_terms = model.order_terms(order)
        if not order_terms:
            continue
        maxabs = max(abs(c) for c in order_terms.values())
        if maxabs == 0.0:
            terms.update(order_terms)
            continue
        bound = params.range_for_order(order)
        terms.update({s: (c / maxabs) * bound for s, c in order_terms.items()})
    return HuboModel(
        num_vars=model.num_vars,
        max_order=model.max_order,
        terms=terms,
        constant=model.constant,
        metadata=dict(model.metadata),
    )


def build_hubo(pool: ReasonPool, sim: np.ndarray, params: HuboParams) -> HuboModel:
    """Full construction: coefficients, standardization, normalization, pruning."""
    r = pool.num_reasons
    if r == 0:
        raise InputError("cannot build a model from an empty reason pool")
    if sim.shape != (r, r):
        raise InputError(f"similarity matrix shape {sim.shape} does not match R={r}")

    terms: dict = {}
    for i, w in linear_coeffs(pool, params).items():
        terms[(i,)] = w

    if r >= 2:
        corr2_std = standardize(connected_corr2(pool), params.epsilon)
        terms.update(pair_coeffs(corr2_std, sim, params))

    if params.max_order == 3 and r >= 3:
        kept = select_triples(pool, params)
        if kept:
            corr3_std = standardize(connected_corr3(pool, kept), params.epsilon)
            terms.update(triple_coeffs(corr3_std, sim, params))

    model = HuboModel(
        num_vars=r,
        max_order=params.max_order,
        terms=terms,
        metadata={
            "params": params.to_dict(),
            "pool_hash": content_hash(pool.to_dict()),
            "num_reasons": r,
        },
    )
    model = normalize_typewise(model, params)
    model.terms = {s: c for s, c in model.terms.items() if abs(c) > PRUNE_TOL}
    return model
