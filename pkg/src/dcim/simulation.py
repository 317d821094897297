"""Time evolution: exact one-step marginals and synchronous Monte Carlo sampling.

Every node owns an independent random stream keyed by ``(seed, run, node)``;
each step consumes two uniforms per node (one to pick the determining
neighbour, one to pick the next state), so a run is reproducible no matter
how runs are batched or distributed across workers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .model import (
    InfluenceModel,
    build_constraint_matrix,
    build_effective_influence,
    build_total_influence,
    internal_mc_index,
    one_hot,
)


# --------------------------------------------------------------------------
# random streams


def node_stream(seed: int, run: int, node: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(run, node))))


def initial_stream(seed: int, run: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(run,))))


def random_initial_states(seed: int, run_ids, n: int, m: int) -> np.ndarray:
    """Uniform draw over the ``m**n`` one-hot configurations, one stream per run."""
    return np.array([initial_stream(seed, r).integers(m, size=n) for r in run_ids], dtype=np.intp).reshape(-1, n)


def draw_uniforms(seed: int, run_ids, n: int, horizon: int) -> np.ndarray:
    """Uniforms of shape ``(runs, n, horizon, 2)`` from the per-(run, node) streams."""
    run_ids = list(run_ids)
    out = np.empty((len(run_ids), n, horizon, 2))
    for k, r in enumerate(run_ids):
        for i in range(n):
            out[k, i] = node_stream(seed, r, i).random((horizon, 2))
    return out


# --------------------------------------------------------------------------
# marginals


def node_marginals(states, model: InfluenceModel, c, column=None) -> np.ndarray:
    """Next-step distribution of every node, shape ``(..., n, m)``.

    Evaluates ``p_i = d_ii * own_i + sum_j d_ij * row_ij`` where ``row_ij``
    is the sender's cross row when the edge ``j -> i`` is active and the
    receiver's own internal-chain row ``own_i`` otherwise. This is the
    per-node expansion of ``S @ H`` with the deactivated mass regrouped edge
    by edge. Terms are accumulated in a fixed order (own term, then in-edges
    by sender), so the result is monotone in each per-edge choice even under
    rounding. With ``column`` set only that state's probability is computed
    and the trailing axis is dropped.
    """
    s = np.asarray(states)
    c = np.asarray(c)
    nodes = np.arange(model.n)
    x = internal_mc_index(c, model)
    bank, cross_all = model.self_bank, model.a_cross
    if column is not None:
        bank, cross_all = bank[..., column:column + 1], cross_all[..., column:column + 1]
    own = bank[nodes, x, s]
    acc = model.d[nodes, nodes, None] * own
    edges = model.edges
    if len(edges):
        receiver, sender = edges[:, 0], edges[:, 1]
        weight = model.d[receiver, sender]
        live = (c[..., receiver, sender] != 0) & (weight > 0)
        cross = cross_all[sender, receiver, s[..., sender]]
        terms = weight[:, None] * np.where(live[..., None], cross, own[..., receiver, :])
        zero = np.zeros(terms.shape[:-2] + (1, terms.shape[-1]))
        terms = np.concatenate([terms, zero], axis=-2)
        for slot in model.in_slots.T:
            acc += terms[..., slot, :]
    return acc[..., 0] if column is not None else acc


def marginal_from_constraints(state, model: InfluenceModel, c) -> np.ndarray:
    """``p[t+1] = S[t] H`` for a single state and constraint matrix (length ``n*m``).

    With one-hot ``S`` the product is the sum of one row of ``H`` per node;
    accumulating those rows in node order keeps the result independent of
    the BLAS summation strategy.
    """
    e = build_effective_influence(model.d, c)
    h = build_total_influence(e, model, c)
    rows = np.arange(model.n) * model.m + np.asarray(state)
    acc = np.zeros(h.shape[1])
    for r in rows:
        acc = acc + h[r]
    return acc


def step_marginal(state, model: InfluenceModel, rule) -> np.ndarray:
    """Build C, E and H from ``state`` and return ``S[t] H`` (flat, length ``n*m``)."""
    state = np.asarray(state)
    if state.shape != (model.n,):
        raise ConfigurationError(f"state must hold {model.n} node states, got shape {state.shape}")
    c = build_constraint_matrix(rule, state, model)
    return marginal_from_constraints(state, model, c)


# --------------------------------------------------------------------------
# sampling


def _categorical(p, u):
    cum = np.cumsum(p, axis=-1)
    idx = (cum <= u[..., None]).sum(axis=-1)
    last = p.shape[-1] - 1 - np.argmax(p[..., ::-1] > 0, axis=-1)
    return np.minimum(idx, last)


def sample_next(states, model: InfluenceModel, c, u) -> np.ndarray:
    """Synchronous two-stage update of every node.

    Node ``i`` first picks its determining node ``J`` from row ``i`` of E
    using ``u[..., i, 0]``, then draws its next state from ``A_Ji`` (its own
    selected internal chain when ``J == i``) using ``u[..., i, 1]``.
    """
    s = np.asarray(states)
    n = model.n
    nodes = np.arange(n)
    e = build_effective_influence(model.d, c)
    determining = _categorical(e, u[..., 0])
    x = internal_mc_index(c, model)
    self_rows = model.self_bank[nodes, x, s]
    sender_state = np.take_along_axis(s, determining, axis=-1)
    cross_rows = model.a_cross[determining, nodes, sender_state]
    rows = np.where((determining == nodes)[..., None], self_rows, cross_rows)
    return _categorical(rows, u[..., 1])


def step_sample(state, model: InfluenceModel, rule, rng) -> np.ndarray:
    """Sample ``S[t+1]`` given ``S[t]``.

    ``rng`` is either one generator shared by all nodes or a sequence of
    ``n`` per-node generators; each node consumes two uniforms.
    """
    state = np.asarray(state)
    if isinstance(rng, np.random.Generator):
        u = rng.random((model.n, 2))
    else:
        u = np.array([g.random(2) for g in rng])
    c = build_constraint_matrix(rule, state, model)
    return sample_next(state, model, c, u)


@dataclass
class Trajectory:
    """A sampled path; ``step_probs[t]`` is the marginal that produced ``states[t+1]``."""

    states: np.ndarray
    step_probs: np.ndarray
    seed: int
    run_id: int = 0
    labels: tuple = field(default=())

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    def rows(self):
        """Long-format rows ``(run_id, t, node_id, state_label, p_<label>...)``.

        At ``t = 0`` the probability columns repeat the initial indicator.
        """
        n = self.states.shape[1]
        m = len(self.labels)
        probs = np.concatenate([one_hot(self.states[:1], m), self.step_probs]).reshape(-1, n, m)
        for t, (state, p) in enumerate(zip(self.states, probs)):
            for i in range(n):
                yield (self.run_id, t, i, self.labels[state[i]], *p[i])


def run_trajectory(initial, model: InfluenceModel, rule, horizon: int, seed: int, run_id: int = 0) -> Trajectory:
    """Iterate exact marginal + sampled transition for ``horizon`` steps."""
    if horizon < 1:
        raise ConfigurationError(f"horizon must be >= 1, got {horizon}")
    state = np.asarray(initial, dtype=np.intp)
    streams = [node_stream(seed, run_id, i) for i in range(model.n)]
    states = [state]
    probs = []
    for _ in range(horizon):
        c = build_constraint_matrix(rule, state, model)
        probs.append(marginal_from_constraints(state, model, c))
        u = np.array([g.random(2) for g in streams])
        state = sample_next(state, model, c, u)
        states.append(state)
    return Trajectory(np.array(states), np.array(probs), seed, run_id, model.states.labels)


def expected_state(initial, h_sequence: Sequence) -> np.ndarray:
    """``S[0] H_1 H_2 ... H_t`` for a given sequence of total influence matrices."""
    p = np.asarray(initial, dtype=float).copy()
    for k, h in enumerate(h_sequence):
        h = np.asarray(h)
        if h.ndim != 2 or h.shape[0] != p.shape[-1] or h.shape[1] != p.shape[-1]:
            raise ConfigurationError(f"H #{k} has shape {h.shape}, incompatible with vector length {p.shape[-1]}")
        p = p @ h
    return p
