"""Low-energy ensemble analysis: quantile cut, inclusion frequencies, selection.

The low-energy subset is everything at or below the nearest-rank quantile
energy of the multiplicity-weighted sample multiset.  Inclusion frequency
of a variable is the weighted fraction of subset assignments that set it.
Selection keeps variables whose frequency reaches tau, or the ground-state
support when a single deterministic chain is wanted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .solvers import SampleSet

SELECTION_MODES = ("threshold", "ground-state")


@dataclass(frozen=True)
class StabilityParams:
    low_energy_quantile: float = 0.25
    tau: float = 0.5
    mode: str = "threshold"

    def __post_init__(self):
        if not (0 < self.low_energy_quantile <= 1):
            raise InputError("low_energy_quantile must be in (0, 1]")
        if not (0 <= self.tau <= 1):
            raise InputError("tau must be in [0, 1]")
        if self.mode not in SELECTION_MODES:
            raise InputError(f"mode must be one of {SELECTION_MODES}, got {self.mode!r}")

    def to_dict(self) -> dict:
        return {"low_energy_quantile": self.low_energy_quantile,
                "tau": self.tau, "mode": self.mode}

    @classmethod
    def from_dict(cls, doc: dict) -> "StabilityParams":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})


def quantile_threshold(sample_set: SampleSet, quantile: float) -> float:
    """Nearest-rank quantile energy over the weighted multiset."""
    if not sample_set.samples:
        raise InputError("empty sample set")
    if not (0 < quantile <= 1):
        raise InputError("quantile must be in (0, 1]")
    weight = sample_set.total_weight
    # the small slack absorbs float fuzz like 0.1 * 30 = 3.0000000000000004
    rank = max(1, min(weight, math.ceil(quantile * weight - 1e-9)))
    cumulative = 0
    for sample in sorted(sample_set.samples, key=lambda s: s.energy):
        cumulative += sample.multiplicity
        if cumulative >= rank:
            return sample.energy
    return max(s.energy for s in sample_set.samples)


def low_energy_subset(sample_set: SampleSet, quantile: float) -> SampleSet:
    """All samples with energy at or below the quantile threshold."""
    threshold = quantile_threshold(sample_set, quantile)
    kept = [s for s in sample_set.samples if s.energy <= threshold]
    metadata = dict(sample_set.metadata)
    metadata["low_energy_threshold"] = threshold
    metadata["low_energy_quantile"] = quantile
    return SampleSet(samples=kept, solver_id=sample_set.solver_id,
                     num_vars=sample_set.num_vars, metadata=metadata)


def inclusion_frequencies(subset: SampleSet) -> np.ndarray:
    """Weighted fraction of subset assignments including each variable."""
    if not subset.samples:
        raise InputError("empty sample set")
    counts = np.zeros(subset.num_vars)
    weight = 0
    for sample in subset.samples:
        bits = np.array([1.0 if c == "1" else 0.0 for c in sample.assignment])
        if bits.shape[0] != subset.num_vars:
            raise InputError(
                f"assignment length {bits.shape[0]} does not match num_vars {subset.num_vars}"
            )
        counts += sample.multiplicity * bits
        weight += sample.multiplicity
    return counts / weight


@dataclass
class StabilityReport:
    """Selection outcome over the low-energy ensemble."""

    frequencies: list
    threshold_energy: float
    subset_size: int
    selected: list
    ground_state: str
    ground_energy: float
    mode: str
    tau: float
    quantile: float
    warnings: list = field(default_factory=list)
    schema_version: int = 1

    def validate(self) -> "StabilityReport":
        for i, f in enumerate(self.frequencies):
            if not (0.0 <= f <= 1.0):
                raise InputError(f"frequency {i} = {f} outside [0, 1]")
        support = {i for i, c in enumerate(self.ground_state) if c == "1"}
        if self.mode == "threshold" and "empty-selection-fallback" not in self.warnings:
            expected = [i for i, f in enumerate(self.frequencies) if f >= self.tau]
            if self.selected != expected:
                raise InputError("selected ids do not match the tau rule")
        elif set(self.selected) != support:
            raise InputError("selected ids do not match the ground-state support")
        return self

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "frequencies": [float(f) for f in self.frequencies],
            "threshold_energy": self.threshold_energy,
            "subset_size": self.subset_size,
            "selected": list(self.selected),
            "ground_state": self.ground_state,
            "ground_energy": self.ground_energy,
            "mode": self.mode,
            "tau": self.tau,
            "quantile": self.quantile,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StabilityReport":
        return cls(
            frequencies=doc["frequencies"],
            threshold_energy=doc["threshold_energy"],
            subset_size=doc["subset_size"],
            selected=doc["selected"],
            ground_state=doc["ground_state"],
            ground_energy=doc["ground_energy"],
            mode=doc["mode"],
            tau=doc["tau"],
            quantile=doc["quantile"],
            warnings=doc.get("warnings", []),
            schema_version=doc.get("schema_version", 1),
        )


def select_stable(frequencies, params: StabilityParams, *, ground_state: str,
                  ground_energy: float, threshold_energy: float,
                  subset_size: int) -> StabilityReport:
    """Apply the selection rule and assemble the report.

    In threshold mode an empty selection falls back to the ground-state
    support with a warning, so the final prompt is never reason-free.
    """
    freqs = [float(f) for f in frequencies]
    warnings: list = []
    support = [i for i, c in enumerate(ground_state) if c == "1"]
    if params.mode == "ground-state":
        selected = support
    else:
        selected = [i for i, f in enumerate(freqs) if f >= params.tau]
        if not selected:
            selected = support
            warnings.append("empty-selection-fallback")
    return StabilityReport(
        frequencies=freqs,
        threshold_energy=threshold_energy,
        subset_size=subset_size,
        selected=selected,
        ground_state=ground_state,
        ground_energy=ground_energy,
        mode=params.mode,
        tau=params.tau,
        quantile=params.low_energy_quantile,
        warnings=warnings,
    ).validate()


def stability_report(sample_set: SampleSet, params: StabilityParams) -> StabilityReport:
    """Full analysis of one SampleSet: subset, frequencies, selection."""
    subset = low_energy_subset(sample_set, params.low_energy_quantile)
    freqs = inclusion_frequencies(subset)
    ground = sample_set.best()
    return select_stable(
        freqs,
        params,
        ground_state=ground.assignment,
        ground_energy=ground.energy,
        threshold_energy=subset.metadata["low_energy_threshold"],
        subset_size=subset.total_weight,
    )
