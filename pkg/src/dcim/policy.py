"""Policy evaluation and one-step optimum constraint synthesis."""
from __future__ import annotations

import numpy as np

from .errors import PreconditionError, SearchSpaceError
from .model import InfluenceModel, build_constraint_matrix
from .simulation import node_marginals

DEFAULT_MAX_EDGES = 20


def node_sum(values) -> np.ndarray:
    """Sum over the trailing node axis in a fixed left-to-right order."""
    values = np.asarray(values)
    total = values[..., 0].copy()
    for i in range(1, values.shape[-1]):
        total += values[..., i]
    return total


def constraint_expectancy(state, model: InfluenceModel, c, target="N"):
    """Step-wise ``target``-expectancy ``(1/n) sum_i p_i,target[t+1]`` under ``c``."""
    t = model.states.index(target)
    return node_sum(node_marginals(state, model, c, column=t)) / model.n


def stepwise_expectancy(state, model: InfluenceModel, rule, target="N"):
    """Step-wise expectancy of ``target`` when ``rule`` governs the next step.

    Batched over leading axes of ``state``; returns a float for a single state.
    """
    c = build_constraint_matrix(rule, state, model)
    value = constraint_expectancy(state, model, c, target)
    return float(value) if np.ndim(value) == 0 else value


def best_policy(state, model: InfluenceModel, catalog, target="N"):
    """Catalog member with the highest step-wise expectancy; ties go to the lowest index."""
    catalog = list(catalog)
    if not catalog:
        raise ValueError("best_policy needs a non-empty catalog")
    values = [stepwise_expectancy(state, model, rule, target) for rule in catalog]
    k = int(np.argmax(values))
    return catalog[k], values[k]


def optimize_greedy(state, model: InfluenceModel, target="N") -> np.ndarray:
    """Per-edge optimum constraint matrix for fixed internal chains.

    Edge ``j -> i`` is activated iff the receiver's own chain gives no more
    ``target`` probability than the sender's cross row, i.e.
    ``A_ii[s_i, target] <= A_ji[s_j, target]``. Batched over leading axes.
    """
    if model.dynamic:
        raise PreconditionError("greedy optimisation requires fixed internal chains (no dynamic bank)")
    s = np.asarray(state)
    t = model.states.index(target)
    nodes = np.arange(model.n)
    own = model.a_self[nodes, s, t]
    sent = model.a_cross[nodes[:, None], nodes[None, :], s[..., :, None], t]
    with np.errstate(invalid="ignore"):
        c = (own[..., :, None] <= np.swapaxes(sent, -1, -2)) & model.links
    c = c.astype(np.int8)
    c[..., nodes, nodes] = 1
    return c


def candidate_matrices(model: InfluenceModel, codes) -> np.ndarray:
    """Constraint matrices for integer codes over the edge list, first edge = most significant bit."""
    edges = model.edges
    codes = np.asarray(codes, dtype=np.int64)
    weights = np.left_shift(1, np.arange(len(edges) - 1, -1, -1, dtype=np.int64))
    bits = (codes[:, None] & weights) != 0
    cs = np.broadcast_to(np.eye(model.n, dtype=np.int8), (len(codes), model.n, model.n)).copy()
    cs[:, edges[:, 0], edges[:, 1]] = bits
    return cs


def optimize_bruteforce(state, model: InfluenceModel, target="N", max_edges=DEFAULT_MAX_EDGES, chunk=4096):
    """Exhaustive search over every constraint matrix supported by the topology.

    Returns ``(c_opt, value)``. Among equal maxima the lexicographically
    smallest edge assignment wins. Dynamic internal chains are allowed.
    """
    s = np.asarray(state)
    n_edges = len(model.edges)
    if n_edges > max_edges:
        raise SearchSpaceError(
            f"topology has {n_edges} edges: 2^{n_edges} = {2 ** n_edges} candidate constraint "
            f"matrices exceeds the cap of 2^{max_edges} = {2 ** max_edges}"
        )
    total = 1 << n_edges
    best_value, best_c = -np.inf, None
    for start in range(0, total, chunk):
        cs = candidate_matrices(model, np.arange(start, min(start + chunk, total)))
        values = constraint_expectancy(np.broadcast_to(s, (len(cs), model.n)), model, cs, target)
        k = int(np.argmax(values))
        if values[k] > best_value:
            best_value, best_c = values[k], cs[k]
    return best_c, float(best_value)
