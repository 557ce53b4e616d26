"""Energy minimization: basis changes, cubic reduction, annealing, oracles.

Four solve paths share one SampleSet currency:

- ``sa-hubo``: Metropolis single-flip annealing directly on the binary
  polynomial, cubic terms handled natively.
- ``sa-qubo``: map to spins, redistribute each cubic term over its three
  pairs (an approximate reduction), anneal the quadratic model, then
  rescore the returned assignments on the original binary model.
- ``brute-force``: exhaustive enumeration, the exact oracle.
- ``external``: submit the spin model to an adapter (replayed from a
  cassette) and rescore the returned bitstrings locally.

Assignments are always reported as x-basis bitstrings: character i is
variable i, '1' means included (spin z = -1).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np
from numba import njit

from .errors import AdapterError, ConfigurationError, FixtureError, InputError
from .hubo_builder import HuboModel
from .jsonio import content_hash, read_json, write_json

BRUTE_FORCE_LIMIT = 24
SOLVE_METHODS = ("sa-hubo", "sa-qubo", "brute-force", "external")


@dataclass
class SpinModel:
    """Sparse polynomial over spin variables z in {-1, +1}."""

    num_vars: int
    terms: dict
    constant: float = 0.0

    def __post_init__(self):
        canonical = {}
        for subset, coeff in self.terms.items():
            key = tuple(sorted(int(v) for v in subset))
            if len(key) == 0:
                raise InputError("empty subset key; use the constant field")
            if len(set(key)) != len(key):
                raise InputError(f"repeated variable in subset {subset}")
            if key and (key[0] < 0 or key[-1] >= self.num_vars):
                raise InputError(f"subset {key} out of range for num_vars {self.num_vars}")
            canonical[key] = canonical.get(key, 0.0) + float(coeff)
        self.terms = canonical

    @property
    def max_order(self) -> int:
        return max((len(s) for s in self.terms), default=0)

    def evaluate(self, spins) -> float:
        z = np.asarray(spins, dtype=float)
        if z.shape != (self.num_vars,):
            raise InputError(f"spin vector length {z.shape} does not match num_vars {self.num_vars}")
        if np.any(np.abs(z) != 1.0):
            raise InputError("spin values must be -1 or +1")
        energy = self.constant
        for subset, coeff in self.terms.items():
            prod = coeff
            for v in subset:
                prod *= z[v]
            energy += prod
        return energy

    def energy_of_bits(self, assignment) -> float:
        bits = _bits_array(assignment, self.num_vars)
        return self.evaluate(1.0 - 2.0 * bits)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "num_vars": self.num_vars,
            "constant": self.constant,
            "terms": [
                {"vars": list(s), "coeff": c}
                for s, c in sorted(self.terms.items(), key=lambda kv: (len(kv[0]), kv[0]))
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SpinModel":
        return cls(
            num_vars=doc["num_vars"],
            terms={tuple(t["vars"]): t["coeff"] for t in doc["terms"]},
            constant=doc.get("constant", 0.0),
        )


def _bits_array(assignment, num_vars: int) -> np.ndarray:
    if isinstance(assignment, str):
        if len(assignment) != num_vars or any(c not in "01" for c in assignment):
            raise InputError(f"bad assignment bitstring {assignment!r} for {num_vars} variables")
        return np.array([1.0 if c == "1" else 0.0 for c in assignment])
    arr = np.asarray(assignment, dtype=float)
    if arr.shape != (num_vars,):
        raise InputError(f"assignment length {arr.shape} does not match num_vars {num_vars}")
    return arr


# -- basis changes ---------------------------------------------------------


def binary_to_spin(model: HuboModel) -> SpinModel:
    """Substitute x_i = (1 - z_i) / 2 and expand; energies are preserved."""
    terms: dict = {}
    constant = model.constant
    for subset, coeff in model.terms.items():
        scale = coeff / (2 ** len(subset))
        for r in range(len(subset) + 1):
            for chosen in combinations(subset, r):
                value = scale * ((-1) ** r)
                if r == 0:
                    constant += value
                else:
                    terms[chosen] = terms.get(chosen, 0.0) + value
    terms = {s: c for s, c in terms.items() if c != 0.0}
    return SpinModel(num_vars=model.num_vars, terms=terms, constant=constant)


def spin_to_binary(model: SpinModel) -> HuboModel:
    """Substitute z_i = 1 - 2 x_i and expand; exact inverse of binary_to_spin."""
    terms: dict = {}
    constant = model.constant
    for subset, coeff in model.terms.items():
        for r in range(len(subset) + 1):
            for chosen in combinations(subset, r):
                value = coeff * ((-2.0) ** r)
                if r == 0:
                    constant += value
                else:
                    terms[chosen] = terms.get(chosen, 0.0) + value
    terms = {s: c for s, c in terms.items() if c != 0.0}
    max_order = max((len(s) for s in terms), default=1)
    return HuboModel(num_vars=model.num_vars, max_order=max(max_order, 1),
                     terms=terms, constant=constant)


def reduce_cubic_to_quadratic(model: SpinModel) -> SpinModel:
    """Redistribute each cubic spin term over its three pairs.

    c z_i z_j z_k  ->  (c/2)(z_i z_j + z_i z_k + z_j z_k) - c/2

    The two expressions agree whenever at most one of the three spins is
    -1 and differ by exactly 2|c| otherwise, so this is an approximation,
    not an exact gadget.
    """
    if model.max_order > 3:
        raise InputError(f"reduction handles max order 3, model has order {model.max_order}")
    terms: dict = {}
    constant = model.constant
    for subset, coeff in model.terms.items():
        if len(subset) < 3:
            terms[subset] = terms.get(subset, 0.0) + coeff
        else:
            i, j, k = subset
            half = coeff / 2.0
            for pair in ((i, j), (i, k), (j, k)):
                terms[pair] = terms.get(pair, 0.0) + half
            constant -= half
    terms = {s: c for s, c in terms.items() if c != 0.0}
    return SpinModel(num_vars=model.num_vars, terms=terms, constant=constant)


# -- sample sets -----------------------------------------------------------


@dataclass
class Sample:
    assignment: str
    energy: float
    multiplicity: int = 1

    def __post_init__(self):
        if self.multiplicity < 1:
            raise InputError("multiplicity must be >= 1")

    def to_dict(self) -> dict:
        return {"assignment": self.assignment, "energy": self.energy,
                "multiplicity": self.multiplicity}


@dataclass
class SampleSet:
    """Multiset of solver outputs with provenance metadata."""

    samples: list
    solver_id: str
    num_vars: int
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def total_weight(self) -> int:
        return sum(s.multiplicity for s in self.samples)

    def best(self) -> Sample:
        if not self.samples:
            raise InputError("empty sample set")
        return min(self.samples, key=lambda s: (s.energy, s.assignment))

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "solver_id": self.solver_id,
            "num_vars": self.num_vars,
            "samples": [s.to_dict() for s in self.samples],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SampleSet":
        return cls(
            samples=[Sample(**s) for s in doc["samples"]],
            solver_id=doc["solver_id"],
            num_vars=doc["num_vars"],
            metadata=doc.get("metadata", {}),
        )


# -- simulated annealing ---------------------------------------------------


@dataclass(frozen=True)
class AnnealSchedule:
    """Geometric temperature schedule plus restart and seeding policy.

    ``t_start=None`` resolves at solve time to 2 * max|coeff| * n_terms / R,
    a rough upper bound on the energy swing of one flip.
    """

    t_start: float | None = None
    t_end: float = 1e-3
    sweeps: int = 2000
    restarts: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.t_end <= 0:
            raise InputError("t_end must be > 0")
        if self.t_start is not None and self.t_start <= self.t_end:
            raise InputError("t_start must exceed t_end")
        if self.sweeps < 1 or self.restarts < 1:
            raise InputError("sweeps and restarts must be >= 1")

    def resolve_t_start(self, model) -> float:
        if self.t_start is not None:
            return self.t_start
        coeffs = [abs(c) for c in model.terms.values()]
        if not coeffs:
            return max(1.0, self.t_end * 10.0)
        heuristic = 2.0 * max(coeffs) * len(coeffs) / max(model.num_vars, 1)
        return max(heuristic, self.t_end * 10.0)

    def temperatures(self, t_start: float) -> np.ndarray:
        if self.sweeps == 1:
            return np.array([t_start])
        ratio = self.t_end / t_start
        exponents = np.arange(self.sweeps) / (self.sweeps - 1)
        return t_start * ratio**exponents

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "AnnealSchedule":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})


@njit(cache=True, nogil=True)
def _sa_restart3(vals, term_coeffs, term_ptr, term_vars, inc_ptr, inc_coeff,
                 inc_o1, inc_o2, temps, prop_vars, prop_unifs, is_spin,
                 best_vals, sweep_trace, record_trace):
    # specialization for max order 3: each incident entry carries its
    # coefficient and the at most two partner variables (-1 when absent)
    nvars = vals.shape[0]
    energy = 0.0
    for t in range(term_coeffs.shape[0]):
        prod = term_coeffs[t]
        for q in range(term_ptr[t], term_ptr[t + 1]):
            prod *= vals[term_vars[q]]
        energy += prod
    best_energy = energy
    for i in range(nvars):
        best_vals[i] = vals[i]

    p = 0
    for s in range(temps.shape[0]):
        temp = temps[s]
        for _ in range(nvars):
            v = prop_vars[p]
            u = prop_unifs[p]
            p += 1
            acc = 0.0
            for a in range(inc_ptr[v], inc_ptr[v + 1]):
                prod = inc_coeff[a]
                o1 = inc_o1[a]
                if o1 >= 0:
                    prod *= vals[o1]
                    o2 = inc_o2[a]
                    if o2 >= 0:
                        prod *= vals[o2]
                acc += prod
            if is_spin:
                dval = -2.0 * vals[v]
            else:
                dval = 1.0 - 2.0 * vals[v]
            delta = dval * acc
            if delta <= 0.0 or u < math.exp(-delta / temp):
                vals[v] += dval
                energy += delta
                if energy < best_energy:
                    best_energy = energy
                    for i in range(nvars):
                        best_vals[i] = vals[i]
        if record_trace:
            sweep_trace[s] = best_energy
    return best_energy


@njit(cache=True, nogil=True)
def _sa_restart(vals, term_coeffs, term_ptr, term_vars, inc_ptr, inc_idx,
                temps, prop_vars, prop_unifs, is_spin, best_vals, sweep_trace,
                record_trace):
    nvars = vals.shape[0]
    nterms = term_coeffs.shape[0]
    energy = 0.0
    for t in range(nterms):
        prod = term_coeffs[t]
        for q in range(term_ptr[t], term_ptr[t + 1]):
            prod *= vals[term_vars[q]]
        energy += prod
    best_energy = energy
    for i in range(nvars):
        best_vals[i] = vals[i]

    p = 0
    for s in range(temps.shape[0]):
        temp = temps[s]
        for _ in range(nvars):
            v = prop_vars[p]
            u = prop_unifs[p]
            p += 1
            acc = 0.0
            for a in range(inc_ptr[v], inc_ptr[v + 1]):
                t = inc_idx[a]
                prod = term_coeffs[t]
                for q in range(term_ptr[t], term_ptr[t + 1]):
                    w = term_vars[q]
                    if w != v:
                        prod *= vals[w]
                acc += prod
            if is_spin:
                dval = -2.0 * vals[v]
            else:
                dval = 1.0 - 2.0 * vals[v]
            delta = dval * acc
            if delta <= 0.0 or u < math.exp(-delta / temp):
                vals[v] += dval
                energy += delta
                if energy < best_energy:
                    best_energy = energy
                    for i in range(nvars):
                        best_vals[i] = vals[i]
        if record_trace:
            sweep_trace[s] = best_energy
    return best_energy


def _term_arrays(model):
    subsets = sorted(model.terms.keys(), key=lambda s: (len(s), s))
    coeffs = np.array([model.terms[s] for s in subsets], dtype=float)
    ptr = np.zeros(len(subsets) + 1, dtype=np.int64)
    flat = []
    for t, subset in enumerate(subsets):
        flat.extend(subset)
        ptr[t + 1] = len(flat)
    term_vars = np.array(flat, dtype=np.int64) if flat else np.zeros(0, dtype=np.int64)

    incident: list = [[] for _ in range(model.num_vars)]
    for t, subset in enumerate(subsets):
        for v in subset:
            incident[v].append(t)
    inc_ptr = np.zeros(model.num_vars + 1, dtype=np.int64)
    inc_flat = []
    for v in range(model.num_vars):
        inc_flat.extend(incident[v])
        inc_ptr[v + 1] = len(inc_flat)
    inc_idx = np.array(inc_flat, dtype=np.int64) if inc_flat else np.zeros(0, dtype=np.int64)
    return subsets, coeffs, ptr, term_vars, inc_ptr, inc_idx


def _incidence3(subsets, coeffs, inc_ptr, inc_idx):
    """Per-(variable, term) coefficient and partner indices for order <= 3."""
    size = inc_idx.shape[0]
    inc_coeff = np.empty(size)
    inc_o1 = np.full(size, -1, dtype=np.int64)
    inc_o2 = np.full(size, -1, dtype=np.int64)
    pos = 0
    for v in range(inc_ptr.shape[0] - 1):
        for a in range(inc_ptr[v], inc_ptr[v + 1]):
            t = inc_idx[a]
            inc_coeff[pos] = coeffs[t]
            others = [w for w in subsets[t] if w != v]
            if len(others) >= 1:
                inc_o1[pos] = others[0]
            if len(others) == 2:
                inc_o2[pos] = others[1]
            pos += 1
    return inc_coeff, inc_o1, inc_o2


def anneal(model, schedule: AnnealSchedule, solver_id: str | None = None,
           record_trace: bool = False) -> SampleSet:
    """Metropolis single-flip annealing; one best-so-far sample per restart.

    Proposal variables, uniforms, and initial states are pregenerated from
    per-restart child seeds of ``schedule.seed``, so identical inputs give
    identical output, restart by restart.
    """
    is_spin = isinstance(model, SpinModel)
    if model.num_vars < 1:
        raise InputError("model must have at least one variable")
    if solver_id is None:
        solver_id = "sa-spin" if is_spin else "sa-hubo"

    subsets, coeffs, ptr, term_vars, inc_ptr, inc_idx = _term_arrays(model)
    order3 = all(len(s) <= 3 for s in subsets)
    if order3:
        inc_coeff, inc_o1, inc_o2 = _incidence3(subsets, coeffs, inc_ptr, inc_idx)
    t_start = schedule.resolve_t_start(model)
    temps = schedule.temperatures(t_start)
    nvars = model.num_vars
    n_props = schedule.sweeps * nvars

    children = np.random.SeedSequence(schedule.seed).spawn(schedule.restarts)
    samples = []
    traces = []
    for child in children:
        rng = np.random.default_rng(child)
        bits = rng.integers(0, 2, size=nvars).astype(float)
        vals = (1.0 - 2.0 * bits) if is_spin else bits
        prop_vars = rng.integers(0, nvars, size=n_props)
        prop_unifs = rng.random(n_props)
        best_vals = np.empty(nvars)
        sweep_trace = np.empty(schedule.sweeps) if record_trace else np.empty(0)
        if order3:
            _sa_restart3(vals, coeffs, ptr, term_vars, inc_ptr, inc_coeff,
                         inc_o1, inc_o2, temps, prop_vars, prop_unifs, is_spin,
                         best_vals, sweep_trace, record_trace)
        else:
            _sa_restart(vals, coeffs, ptr, term_vars, inc_ptr, inc_idx, temps,
                        prop_vars, prop_unifs, is_spin, best_vals, sweep_trace,
                        record_trace)
        best_bits = ((1.0 - best_vals) / 2.0) if is_spin else best_vals
        assignment = "".join("1" if b > 0.5 else "0" for b in best_bits)
        # the kernel's running energy accumulates rounding; report the exact value
        samples.append(Sample(assignment=assignment,
                              energy=model.energy_of_bits(assignment)))
        if record_trace:
            traces.append([float(x) for x in sweep_trace])

    metadata = {
        "schedule": {**schedule.to_dict(), "t_start": t_start},
        "reduced": False,
        "basis": "spin" if is_spin else "binary",
    }
    if record_trace:
        metadata["best_energy_trace"] = traces
    return SampleSet(samples=samples, solver_id=solver_id,
                     num_vars=model.num_vars, metadata=metadata)


# -- exhaustive oracle -----------------------------------------------------


def brute_force(model, bottom_fraction: float | None = None,
                limit: int = BRUTE_FORCE_LIMIT) -> SampleSet:
    """Enumerate every assignment; exact ground state, ties included.

    With ``bottom_fraction`` only assignments at or below that energy
    quantile (nearest-rank, inclusive) are kept, which is the useful form
    for more than ~16 variables.
    """
    nvars = model.num_vars
    if nvars > limit:
        raise InputError(f"brute force refuses num_vars {nvars} > limit {limit}")
    if nvars < 1:
        raise InputError("model must have at least one variable")
    is_spin = isinstance(model, SpinModel)

    total = 1 << nvars
    energies = np.empty(total)
    chunk = 1 << 16
    shifts = np.arange(nvars, dtype=np.uint32)
    for lo in range(0, total, chunk):
        hi = min(lo + chunk, total)
        idx = np.arange(lo, hi, dtype=np.uint32)
        bits = ((idx[:, None] >> shifts) & 1).astype(float)
        vals = (1.0 - 2.0 * bits) if is_spin else bits
        chunk_e = np.full(hi - lo, float(model.constant))
        for subset, coeff in model.terms.items():
            prod = np.full(hi - lo, coeff)
            for v in subset:
                prod *= vals[:, v]
            chunk_e += prod
        energies[lo:hi] = chunk_e

    if bottom_fraction is None:
        keep = np.arange(total)
    else:
        if not (0 < bottom_fraction <= 1):
            raise InputError("bottom_fraction must be in (0, 1]")
        rank = max(1, min(total, math.ceil(bottom_fraction * total - 1e-9)))
        threshold = np.partition(energies, rank - 1)[rank - 1]
        keep = np.nonzero(energies <= threshold)[0]

    order = np.lexsort((keep, energies[keep]))
    samples = []
    for pos in order:
        idx = int(keep[pos])
        assignment = "".join("1" if (idx >> i) & 1 else "0" for i in range(nvars))
        samples.append(Sample(assignment=assignment, energy=float(energies[idx])))
    return SampleSet(
        samples=samples,
        solver_id="brute-force",
        num_vars=nvars,
        metadata={"exhaustive": True, "num_assignments": total,
                  "bottom_fraction": bottom_fraction},
    )


# -- external adapter ------------------------------------------------------


class ExternalSolverAdapter:
    """Boundary for out-of-process solvers; implementations supply submit()."""

    adapter_id = "external"

    def submit(self, request: dict) -> dict:
        raise NotImplementedError


class ReplayAdapter(ExternalSolverAdapter):
    """Serves recorded responses keyed by the hash of the request body."""

    def __init__(self, adapter_id: str, cassette_path: str | Path):
        self.adapter_id = adapter_id
        self.cassette_path = Path(cassette_path)

    def submit(self, request: dict) -> dict:
        if not self.cassette_path.exists():
            raise FixtureError(f"adapter cassette not found: {self.cassette_path}")
        try:
            doc = read_json(self.cassette_path)
        except ValueError as exc:
            raise FixtureError(f"adapter cassette is not valid JSON: {self.cassette_path}") from exc
        entries = doc.get("entries")
        if not isinstance(entries, dict):
            raise FixtureError(f"adapter cassette has no 'entries' object: {self.cassette_path}")
        key = content_hash(request)
        if key not in entries:
            raise FixtureError(f"adapter cassette has no entry for request hash {key}")
        return entries[key]["response"]

    @staticmethod
    def record(cassette_path: str | Path, request: dict, response: dict) -> None:
        path = Path(cassette_path)
        doc = read_json(path) if path.exists() else {"entries": {}}
        doc["entries"][content_hash(request)] = {"request": request, "response": response}
        write_json(path, doc)


def adapter_request(model: SpinModel, shots: int) -> dict:
    """Wire format: {num_vars, terms:[{vars, coeff}], shots}; constant omitted."""
    return {
        "num_vars": model.num_vars,
        "terms": [
            {"vars": list(s), "coeff": c}
            for s, c in sorted(model.terms.items(), key=lambda kv: (len(kv[0]), kv[0]))
        ],
        "shots": shots,
    }


def external_solve(adapter: ExternalSolverAdapter, model: SpinModel,
                   shots: int = 1000, score_model=None) -> SampleSet:
    """Submit a spin model, validate the reply, rescore energies locally.

    Adapter-reported energies are never trusted; every bitstring is
    evaluated on ``score_model`` (default: the submitted model).
    """
    if score_model is None:
        score_model = model
    response = adapter.submit(adapter_request(model, shots))
    if not isinstance(response, dict) or not isinstance(response.get("results"), list):
        raise AdapterError(f"adapter {adapter.adapter_id!r} returned no 'results' list")
    samples = []
    for i, item in enumerate(response["results"]):
        if not isinstance(item, dict) or "bitstring" not in item or "count" not in item:
            raise AdapterError(f"result {i} is not a {{bitstring, count}} object")
        bitstring = item["bitstring"]
        count = item["count"]
        if not isinstance(bitstring, str) or len(bitstring) != model.num_vars:
            raise AdapterError(
                f"result {i}: bitstring length "
                f"{len(bitstring) if isinstance(bitstring, str) else '?'} != {model.num_vars}"
            )
        if any(c not in "01" for c in bitstring):
            raise AdapterError(f"result {i}: bitstring has non-binary characters")
        if not isinstance(count, int) or count < 1:
            raise AdapterError(f"result {i}: count must be a positive integer")
        samples.append(Sample(assignment=bitstring,
                              energy=score_model.energy_of_bits(bitstring),
                              multiplicity=count))
    return SampleSet(samples=samples, solver_id=f"external:{adapter.adapter_id}",
                     num_vars=model.num_vars, metadata={"shots": shots})


# -- dispatch --------------------------------------------------------------


def solve(model: HuboModel, method: str, schedule: AnnealSchedule | None = None,
          adapter: ExternalSolverAdapter | None = None, shots: int = 1000,
          bottom_fraction: float | None = None) -> SampleSet:
    """Run one of the named solve paths on a binary model."""
    if method not in SOLVE_METHODS:
        raise InputError(f"unknown solver {method!r}; expected one of {SOLVE_METHODS}")

    if method == "brute-force":
        return brute_force(model, bottom_fraction=bottom_fraction)

    if method == "external":
        if adapter is None:
            raise ConfigurationError("external solve requires an adapter")
        spin = binary_to_spin(model)
        return external_solve(adapter, spin, shots=shots, score_model=model)

    if schedule is None:
        schedule = AnnealSchedule()

    if method == "sa-hubo":
        return anneal(model, schedule, solver_id="sa-hubo")

    # sa-qubo: reduce in spin basis, anneal, rescore on the original model
    spin = binary_to_spin(model)
    had_cubic = spin.max_order == 3
    reduced = reduce_cubic_to_quadratic(spin) if had_cubic else spin
    raw = anneal(reduced, schedule, solver_id="sa-qubo")
    samples = [
        replace(s, energy=model.energy_of_bits(s.assignment)) for s in raw.samples
    ]
    metadata = dict(raw.metadata)
    metadata["reduced"] = had_cubic
    return SampleSet(samples=samples, solver_id="sa-qubo",
                     num_vars=model.num_vars, metadata=metadata)
