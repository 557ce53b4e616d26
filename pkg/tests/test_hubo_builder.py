from __future__ import annotations

from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_membership, random_similarity
from cotanneal import (
    HuboModel,
    HuboParams,
    InputError,
    Reason,
    ReasonPool,
    build_hubo,
    connected_corr2,
    connected_corr3,
    linear_coeffs,
    normalize_typewise,
    occurrence_counts,
    pair_coeffs,
    standardize,
    triple_coeffs,
)


def make_pool(membership: np.ndarray) -> ReasonPool:
    n, r = membership.shape
    reasons = [Reason(id=i, canonical_text=f"reason {i}", variants=[]) for i in range(r)]
    pool = ReasonPool(reasons=reasons, n_samples=n, membership=membership.astype(bool))
    occurrence_counts(pool, max_order=3)
    return pool


def pool_with_popularity(p: float, n: int = 10) -> ReasonPool:
    count = round(p * n)
    membership = np.zeros((n, 1), dtype=bool)
    membership[:count, 0] = True
    return make_pool(membership)


# -- params ----------------------------------------------------------------


def test_params_validation():
    with pytest.raises(InputError):
        HuboParams(mu=0.0)
    with pytest.raises(InputError):
        HuboParams(alpha=-0.1)
    with pytest.raises(InputError):
        HuboParams(epsilon=0.0)
    with pytest.raises(InputError):
        HuboParams(range_b=0.0)
    with pytest.raises(InputError):
        HuboParams(max_order=4)


def test_params_round_trip():
    params = HuboParams(mu=2.0, triple_sparsify_top_m=5)
    assert HuboParams.from_dict(params.to_dict()) == params


# -- linear coefficients ---------------------------------------------------


def test_linear_absent_fragment_is_zero():
    pool = pool_with_popularity(0.0)
    assert linear_coeffs(pool, HuboParams(mu=3.0, alpha=7.0))[0] == 0.0


def test_linear_universal_fragment_is_minus_mu():
    pool = pool_with_popularity(1.0)
    assert linear_coeffs(pool, HuboParams(mu=2.5, alpha=9.0))[0] == pytest.approx(-2.5)


def test_linear_half_popularity_cancellation():
    # mu=1, alpha=2, p=0.5: -0.5 + 2 * 0.25 = 0
    pool = pool_with_popularity(0.5)
    assert linear_coeffs(pool, HuboParams(mu=1.0, alpha=2.0))[0] == pytest.approx(0.0)


# -- connected correlations ------------------------------------------------


def test_corr2_independent_occurrence_is_zero():
    # p_i = p_j = 0.5 and n_ij/N = 0.25 on N=4
    membership = np.array([[1, 1], [1, 0], [0, 1], [0, 0]])
    corr = connected_corr2(make_pool(membership))
    assert corr[(0, 1)] == pytest.approx(0.0)


def test_corr2_hand_value():
    # N=4, p_i=p_j=0.5, n_ij=2: 0.5 - 0.25 = 0.25
    membership = np.array([[1, 1], [1, 1], [0, 0], [0, 0]])
    corr = connected_corr2(make_pool(membership))
    assert corr[(0, 1)] == pytest.approx(0.25)


def test_corr2_perfect_anticorrelation():
    # N=4, p_i=p_j=0.5, never together: -0.25
    membership = np.array([[1, 0], [1, 0], [0, 1], [0, 1]])
    corr = connected_corr2(make_pool(membership))
    assert corr[(0, 1)] == pytest.approx(-0.25)


def test_corr3_zero_popularity_gives_zero():
    membership = np.array([[0, 1, 1], [0, 1, 0], [0, 0, 1], [0, 0, 0]])
    corr = connected_corr3(make_pool(membership))
    assert corr[(0, 1, 2)] == pytest.approx(0.0)


def test_corr3_hand_value():
    # N=4, each p=0.5, triple together twice: 0.5 - 0.125 = 0.375
    membership = np.array([[1, 1, 1], [1, 1, 1], [0, 0, 0], [0, 0, 0]])
    corr = connected_corr3(make_pool(membership))
    assert corr[(0, 1, 2)] == pytest.approx(0.375)


def test_corr3_saturated_case():
    # N=2, all reasons in both samples: 1 - 1 = 0
    membership = np.ones((2, 3), dtype=int)
    corr = connected_corr3(make_pool(membership))
    assert corr[(0, 1, 2)] == pytest.approx(0.0)


def test_corr2_covers_all_pairs_even_zero_count():
    membership = np.array([[1, 0, 1], [0, 1, 0]])
    corr = connected_corr2(make_pool(membership))
    assert set(corr) == {(0, 1), (0, 2), (1, 2)}


# -- standardization -------------------------------------------------------


def test_standardize_all_equal_gives_zero():
    got = standardize({(0, 1): 3.5, (0, 2): 3.5, (1, 2): 3.5}, 1e-8)
    assert all(v == pytest.approx(0.0) for v in got.values())


def test_standardize_symmetric_pair():
    got = standardize({"a": -1.0, "b": 1.0}, 1e-12)
    assert got["a"] == pytest.approx(-1.0, abs=1e-9)
    assert got["b"] == pytest.approx(1.0, abs=1e-9)


def test_standardize_singleton_is_zero():
    assert standardize({"x": 5.0}, 1e-8) == {"x": pytest.approx(0.0)}


def test_standardize_empty_map():
    assert standardize({}, 1e-8) == {}


def test_standardize_matches_oracle(rng):
    values = {i: float(rng.normal()) for i in range(17)}
    got = standardize(values, 1e-8)
    want = oracles.zscores(values, 1e-8)
    for key in values:
        assert got[key] == pytest.approx(want[key], abs=1e-12)


# -- pair / triple coefficients --------------------------------------------


def test_pair_coeffs_beta_zero():
    sim = np.eye(2)
    got = pair_coeffs({(0, 1): 2.0}, sim, HuboParams(beta=0.0))
    assert got[(0, 1)] == 0.0


def test_pair_coeffs_reward_and_penalty():
    sim = np.array([[1.0, 0.0], [0.0, 1.0]])
    params = HuboParams(beta=1.0, lambda_sim2=1.0)
    # co-occurring, distinct: rewarded
    assert pair_coeffs({(0, 1): 1.0}, sim, params)[(0, 1)] == pytest.approx(-1.0)
    # redundant pair: penalized
    sim_red = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert pair_coeffs({(0, 1): 0.0}, sim_red, params)[(0, 1)] == pytest.approx(1.0)


def test_triple_coeffs_gamma_zero():
    sim = np.eye(3)
    got = triple_coeffs({(0, 1, 2): 1.0}, sim, HuboParams(gamma=0.0))
    assert got[(0, 1, 2)] == 0.0


def test_triple_coeffs_reward_and_penalty():
    params = HuboParams(gamma=1.0, lambda_sim3=1.0)
    sim0 = np.eye(3)
    assert triple_coeffs({(0, 1, 2): 1.0}, sim0, params)[(0, 1, 2)] == pytest.approx(-1.0)
    sim1 = np.ones((3, 3))
    assert triple_coeffs({(0, 1, 2): 0.0}, sim1, params)[(0, 1, 2)] == pytest.approx(1.0)


# -- normalization ---------------------------------------------------------


def test_normalize_scales_to_range():
    model = HuboModel(num_vars=2, max_order=1, terms={(0,): -2.0, (1,): 4.0})
    got = normalize_typewise(model, HuboParams(range_a=1.0))
    assert got.terms[(0,)] == pytest.approx(-0.5)
    assert got.terms[(1,)] == pytest.approx(1.0)


def test_normalize_fixed_point():
    model = HuboModel(num_vars=2, max_order=1, terms={(0,): -1.0, (1,): 0.25})
    got = normalize_typewise(model, HuboParams(range_a=1.0))
    assert got.terms == model.terms


def test_normalize_bound_is_exact(rng):
    for _ in range(10):
        terms = {}
        terms.update({(i,): float(rng.normal() * 3) for i in range(4)})
        terms.update({(0, j): float(rng.normal() * 5) for j in range(1, 4)})
        terms[(0, 1, 2)] = float(rng.normal() * 7)
        model = HuboModel(num_vars=4, max_order=3, terms=terms)
        params = HuboParams(range_a=1.0, range_b=0.5, range_c=0.25)
        got = normalize_typewise(model, params)
        for order, bound in ((1, 1.0), (2, 0.5), (3, 0.25)):
            coeffs = list(got.order_terms(order).values())
            assert max(abs(c) for c in coeffs) == bound  # exact, not approx


def test_normalize_preserves_ratios(rng):
    model = HuboModel(num_vars=3, max_order=1,
                      terms={(0,): 1.0, (1,): 2.0, (2,): -4.0})
    got = normalize_typewise(model, HuboParams(range_a=1.0))
    assert got.terms[(1,)] / got.terms[(0,)] == pytest.approx(2.0)
    assert got.terms[(2,)] / got.terms[(0,)] == pytest.approx(-4.0)


# -- model type ------------------------------------------------------------


def test_model_canonicalizes_and_validates_keys():
    model = HuboModel(num_vars=3, max_order=2, terms={(2, 0): 1.5})
    assert model.terms == {(0, 2): 1.5}
    with pytest.raises(InputError):
        HuboModel(num_vars=3, max_order=2, terms={(0, 0): 1.0})
    with pytest.raises(InputError):
        HuboModel(num_vars=3, max_order=2, terms={(0, 1, 2): 1.0})
    with pytest.raises(InputError):
        HuboModel(num_vars=2, max_order=2, terms={(0, 2): 1.0})
    with pytest.raises(InputError):
        HuboModel(num_vars=3, max_order=2, terms={(): 1.0})
    with pytest.raises(InputError):
        HuboModel(num_vars=3, max_order=2, terms={(0, 1): 1.0, (1, 0): 2.0})


def test_evaluate_empty_assignment_is_constant():
    model = HuboModel(num_vars=3, max_order=2,
                      terms={(0,): 1.0, (0, 1): 2.0}, constant=0.5)
    assert model.evaluate("000") == pytest.approx(0.5)


def test_evaluate_single_term():
    model = HuboModel(num_vars=1, max_order=1, terms={(0,): -1.0})
    assert model.evaluate("1") == pytest.approx(-1.0)
    assert model.evaluate([1]) == pytest.approx(-1.0)
    assert model.evaluate(np.array([True])) == pytest.approx(-1.0)


def test_evaluate_matches_independent_evaluator(rng):
    from conftest import random_model

    for _ in range(5):
        model = random_model(rng, 10)
        for _ in range(20):
            bits = rng.integers(0, 2, size=10)
            want = oracles.eval_binary(model.terms, model.constant, bits.tolist())
            assert model.evaluate(bits) == pytest.approx(want, abs=1e-9)


def test_evaluate_validates_assignment():
    model = HuboModel(num_vars=2, max_order=1, terms={(0,): 1.0})
    with pytest.raises(InputError):
        model.evaluate("0")
    with pytest.raises(InputError):
        model.evaluate("02")
    with pytest.raises(InputError):
        model.evaluate([0, 2])


def test_model_round_trip():
    model = HuboModel(
        num_vars=4,
        max_order=3,
        terms={(0,): 0.1, (1, 3): -0.25, (0, 1, 2): 1.0 / 3.0},
        constant=-0.75,
        metadata={"note": "fixture"},
    )
    doc = model.to_dict()
    again = HuboModel.from_dict(doc)
    assert again.terms == model.terms
    assert again.constant == model.constant
    assert again.num_vars == model.num_vars
    # terms listed ordered by (order, vars) for stable diffs
    orders = [len(t["vars"]) for t in doc["terms"]]
    assert orders == sorted(orders)


def test_model_scaled():
    model = HuboModel(num_vars=2, max_order=2,
                      terms={(0,): 1.0, (0, 1): -2.0}, constant=3.0)
    double = model.scaled(2.0)
    assert double.terms == {(0,): 2.0, (0, 1): -4.0}
    assert double.constant == 6.0


# -- build_hubo ------------------------------------------------------------


def test_build_single_reason():
    pool = pool_with_popularity(0.7)
    params = HuboParams()
    model = build_hubo(pool, np.ones((1, 1)), params)
    w = -params.mu * 0.7 + params.alpha * 0.7 * 0.3
    # single coefficient normalizes to the signed range bound
    assert model.terms == {(0,): pytest.approx(-params.range_a if w < 0 else params.range_a)}


def test_build_r3_term_count_bound():
    membership = np.array([[1, 1, 1], [1, 1, 0], [1, 0, 1], [0, 1, 1]])
    model = build_hubo(make_pool(membership), np.eye(3), HuboParams())
    assert len(model.terms) <= 3 + 3 + 1
    assert model.num_vars == 3


def test_build_empty_pool_rejected():
    pool = ReasonPool(reasons=[], n_samples=3, membership=np.zeros((3, 0), dtype=bool))
    with pytest.raises(InputError):
        build_hubo(pool, np.zeros((0, 0)), HuboParams())


def test_build_shape_mismatch_rejected():
    pool = pool_with_popularity(0.5)
    with pytest.raises(InputError):
        build_hubo(pool, np.eye(2), HuboParams())


def test_build_matches_reference_construction(rng):
    for trial in range(8):
        n = int(rng.integers(4, 16))
        r = int(rng.integers(2, 9))
        membership = random_membership(rng, n, r)
        sim = random_similarity(rng, r)
        top_m = None if trial % 2 == 0 else int(rng.integers(0, 4))
        params = HuboParams(
            mu=float(rng.uniform(0.5, 2.0)),
            alpha=float(rng.uniform(0.0, 1.0)),
            beta=float(rng.uniform(0.5, 2.0)),
            gamma=float(rng.uniform(0.0, 1.0)),
            lambda_sim2=float(rng.uniform(0.0, 1.0)),
            lambda_sim3=float(rng.uniform(0.0, 1.0)),
            triple_sparsify_top_m=top_m,
        )
        model = build_hubo(make_pool(membership), sim, params)
        want = oracles.reference_coefficients(
            membership.astype(int).tolist(), sim.tolist(), params
        )
        assert set(model.terms) == set(want)
        for subset, coeff in want.items():
            assert model.terms[subset] == pytest.approx(coeff, abs=1e-9)


def test_build_quadratic_only_mode(rng):
    membership = random_membership(rng, 8, 5)
    model = build_hubo(make_pool(membership), np.eye(5),
                       HuboParams(max_order=2))
    assert all(len(s) <= 2 for s in model.terms)
    assert model.max_order == 2


def test_build_metadata_has_pool_hash(rng):
    membership = random_membership(rng, 6, 4)
    model = build_hubo(make_pool(membership), np.eye(4), HuboParams())
    assert "pool_hash" in model.metadata
    assert model.metadata["num_reasons"] == 4
    assert model.metadata["params"]["mu"] == 1.0


def test_build_scale_equivariance(rng):
    # scaling every coefficient by a positive factor scales energies and
    # preserves the argmin set
    membership = random_membership(rng, 10, 6)
    model = build_hubo(make_pool(membership), random_similarity(rng, 6), HuboParams())
    factor = 3.7
    scaled = model.scaled(factor)
    energies = []
    energies_scaled = []
    for bits in product((0, 1), repeat=6):
        energies.append(model.evaluate(list(bits)))
        energies_scaled.append(scaled.evaluate(list(bits)))
    energies = np.array(energies)
    energies_scaled = np.array(energies_scaled)
    assert np.allclose(energies_scaled, factor * energies, atol=1e-9)
    assert set(np.flatnonzero(energies == energies.min())) == set(
        np.flatnonzero(energies_scaled == energies_scaled.min())
    )


def test_build_completeness_against_order_sums(rng):
    # energy equals the sum of the per-order contributions computed separately
    membership = random_membership(rng, 8, 5)
    sim = random_similarity(rng, 5)
    model = build_hubo(make_pool(membership), sim, HuboParams())
    for _ in range(10):
        bits = rng.integers(0, 2, size=5).tolist()
        total = sum(
            oracles.eval_binary(model.order_terms(order), 0.0, bits)
            for order in (1, 2, 3)
        )
        assert model.evaluate(bits) == pytest.approx(total, abs=1e-12)


# -- hypothesis properties -------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**63 - 1))
def test_symmetry_of_built_terms(seed):
    rng = np.random.default_rng(seed)
    membership = random_membership(rng, int(rng.integers(3, 10)), int(rng.integers(2, 7)))
    r = membership.shape[1]
    model = build_hubo(make_pool(membership), random_similarity(rng, r), HuboParams())
    for subset, coeff in model.terms.items():
        assert subset == tuple(sorted(subset))
        assert abs(coeff) > 1e-12  # pruning invariant
        assert abs(coeff) <= 1.0 + 1e-12  # range bound with unit ranges


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.floats(min_value=-100, max_value=100, allow_nan=False), min_size=2, max_size=20),
)
def test_standardize_properties(values):
    mapped = {i: v for i, v in enumerate(values)}
    got = standardize(mapped, 1e-8)
    arr = np.array(list(got.values()))
    # regularized z-scores are mean-zero with stddev <= 1
    assert abs(arr.mean()) < 1e-6 * max(1.0, np.abs(values).max())
    assert arr.std() <= 1.0 + 1e-9
