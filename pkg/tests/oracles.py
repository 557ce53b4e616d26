"""Independent straight-line reference implementations used as test oracles.

Everything here is written directly from the defining formulas with plain
Python loops and no shared code with the package (beyond standard math),
so agreement is meaningful.  These functions are frozen: tests compare the
package against them, never the other way around.
"""

from __future__ import annotations

import math
from itertools import combinations


# -- statistics from a membership matrix ----------------------------------


def occurrences(membership) -> dict:
    """n_i, n_ij, n_ijk and p_i from a list-of-lists membership matrix."""
    n = len(membership)
    r = len(membership[0]) if n else 0
    n_i = [sum(row[i] for row in membership) for i in range(r)]
    n_ij = {}
    for i, j in combinations(range(r), 2):
        n_ij[(i, j)] = sum(1 for row in membership if row[i] and row[j])
    n_ijk = {}
    for i, j, k in combinations(range(r), 3):
        n_ijk[(i, j, k)] = sum(1 for row in membership if row[i] and row[j] and row[k])
    p = [n_i[i] / n for i in range(r)]
    return {"N": n, "R": r, "n_i": n_i, "n_ij": n_ij, "n_ijk": n_ijk, "p": p}


def zscores(values: dict, epsilon: float) -> dict:
    keys = list(values)
    if not keys:
        return {}
    mean = sum(values[k] for k in keys) / len(keys)
    var = sum((values[k] - mean) ** 2 for k in keys) / len(keys)
    std = math.sqrt(var)
    return {k: (values[k] - mean) / (std + epsilon) for k in keys}


def reference_coefficients(membership, sim, params) -> dict:
    """All model coefficients per the defining formulas.

    ``params`` is any object with mu, alpha, beta, gamma, lambda_sim2,
    lambda_sim3, epsilon, range_a/b/c, max_order, triple_sparsify_top_m.
    Mirrors the builder's published rules: every pair materializes, triples
    with nonzero counts always materialize, an optional top-m extension is
    ranked by |z-score| over the full triple population, and the final
    standardization runs over the materialized triples only.  Each order is
    rescaled so its max magnitude equals the order's range, then
    coefficients at or below 1e-12 are dropped.
    """
    stats = occurrences(membership)
    n, r, p = stats["N"], stats["R"], stats["p"]

    terms = {}
    for i in range(r):
        terms[(i,)] = -params.mu * p[i] + params.alpha * p[i] * (1.0 - p[i])

    if r >= 2:
        c2 = {
            (i, j): stats["n_ij"][(i, j)] / n - p[i] * p[j]
            for i, j in combinations(range(r), 2)
        }
        c2_std = zscores(c2, params.epsilon)
        for (i, j), c in c2_std.items():
            terms[(i, j)] = -params.beta * (c - params.lambda_sim2 * sim[i][j])

    if params.max_order == 3 and r >= 3:
        nonzero = sorted(t for t, v in stats["n_ijk"].items() if v > 0)
        kept = list(nonzero)
        if params.triple_sparsify_top_m is not None:
            c3_all = {
                (i, j, k): stats["n_ijk"][(i, j, k)] / n - p[i] * p[j] * p[k]
                for i, j, k in combinations(range(r), 3)
            }
            ranked = zscores(c3_all, params.epsilon)
            rest = sorted(
                (t for t in ranked if t not in set(nonzero)),
                key=lambda t: (-abs(ranked[t]), t),
            )
            kept = sorted(set(nonzero) | set(rest[: params.triple_sparsify_top_m]))
        if kept:
            c3 = {
                (i, j, k): stats["n_ijk"][(i, j, k)] / n - p[i] * p[j] * p[k]
                for i, j, k in kept
            }
            c3_std = zscores(c3, params.epsilon)
            for (i, j, k), c in c3_std.items():
                sim_bar = (sim[i][j] + sim[i][k] + sim[j][k]) / 3.0
                terms[(i, j, k)] = -params.gamma * (c - params.lambda_sim3 * sim_bar)

    ranges = {1: params.range_a, 2: params.range_b, 3: params.range_c}
    for order in (1, 2, 3):
        keys = [s for s in terms if len(s) == order]
        if not keys:
            continue
        maxabs = max(abs(terms[s]) for s in keys)
        if maxabs == 0.0:
            continue
        for s in keys:
            terms[s] = (terms[s] / maxabs) * ranges[order]
    return {s: c for s, c in terms.items() if abs(c) > 1e-12}


# -- polynomial evaluation -------------------------------------------------


def eval_binary(terms: dict, constant: float, bits) -> float:
    total = constant
    for subset, coeff in terms.items():
        prod = coeff
        for v in subset:
            prod *= bits[v]
        total += prod
    return total


def eval_spin(terms: dict, constant: float, spins) -> float:
    total = constant
    for subset, coeff in terms.items():
        prod = coeff
        for v in subset:
            prod *= spins[v]
        total += prod
    return total


# -- clustering ------------------------------------------------------------


def bfs_components(num_items: int, edges) -> list:
    """Connected components by breadth-first search; returns sorted groups."""
    adjacency = {i: set() for i in range(num_items)}
    for a, b in edges:
        adjacency[a].add(b)
        adjacency[b].add(a)
    seen = set()
    components = []
    for start in range(num_items):
        if start in seen:
            continue
        queue = [start]
        seen.add(start)
        group = []
        while queue:
            node = queue.pop()
            group.append(node)
            for neighbor in adjacency[node]:
                if neighbor not in seen:
                    seen.add(neighbor)
                    queue.append(neighbor)
        components.append(sorted(group))
    return sorted(components)


def cosine(u, v) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return dot / (nu * nv)


# -- weighted quantile -----------------------------------------------------


def nearest_rank_threshold(energies_with_mult, quantile: float) -> float:
    """Expand the weighted multiset fully, sort, index the nearest rank."""
    expanded = []
    for energy, mult in energies_with_mult:
        expanded.extend([energy] * mult)
    expanded.sort()
    rank = math.ceil(quantile * len(expanded) - 1e-9)
    rank = max(1, min(len(expanded), rank))
    return expanded[rank - 1]
