"""Core matrices of the constraint-based influence model.

A network of ``n`` nodes, each carrying an ``m``-state Markov chain, is
described by

* ``d`` -- the ``n x n`` row-stochastic influence matrix, ``d[i, j]`` being
  the influence node ``i`` receives from node ``j``;
* ``links`` -- the directed topology, ``links[i, j]`` is True iff there is an
  edge ``j -> i`` (node ``j`` may influence node ``i``);
* ``a_self`` -- the internal chain of every node, shape ``(n, m, m)``;
* ``a_cross`` -- the cross-transition matrices, ``a_cross[u, v]`` is the
  ``m x m`` matrix whose row is picked by the state of the sender ``u`` and
  whose columns are the next-state distribution of the receiver ``v``;
* ``a_dynamic`` -- optional per-node banks of internal chains, selected by
  how many other nodes the node is currently influencing.

All index conventions are zero-based. Network states are integer arrays of
per-node state indices; ``one_hot`` converts them into the concatenated
indicator vector used by the matrix formulation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, PreconditionError

STOCHASTIC_TOL = 1e-12
PROPAGATION_TOL = 1e-10
X_CONVENTIONS = ("column-sum", "row-sum")


@dataclass(frozen=True)
class StateSpace:
    """Ordered, unique state labels of the per-node Markov chain."""

    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(label) for label in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ConfigurationError("a state space needs at least two states")
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"state labels must be unique, got {labels}")

    @property
    def m(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        if isinstance(label, (int, np.integer)):
            if not 0 <= label < self.m:
                raise ConfigurationError(f"state index {label} outside 0..{self.m - 1}")
            return int(label)
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigurationError(
                f"unknown state label {label!r}; known labels are {list(self.labels)}"
            ) from None

    def encode(self, labels: Sequence) -> np.ndarray:
        """Map a sequence of labels (or indices) to a network state array."""
        return np.array([self.index(label) for label in labels], dtype=np.intp)

    def decode(self, state) -> list[str]:
        return [self.labels[i] for i in np.asarray(state)]

    def __len__(self):
        return self.m


#: overload, normal, underload
LOAD_STATES = StateSpace(("O", "N", "U"))


def one_hot(state, m: int) -> np.ndarray:
    """Concatenated indicator vector ``S`` of length ``n*m`` (batched over leading axes)."""
    state = np.asarray(state)
    out = np.zeros(state.shape + (m,))
    np.put_along_axis(out, state[..., None], 1.0, axis=-1)
    return out.reshape(state.shape[:-1] + (-1,))


def state_from_one_hot(vector, m: int) -> np.ndarray:
    """Inverse of :func:`one_hot`; raises if any block is not one-hot."""
    blocks = np.asarray(vector, dtype=float).reshape(-1, m)
    if not (np.all((blocks == 0) | (blocks == 1)) and np.all(blocks.sum(axis=1) == 1)):
        raise ConfigurationError("every m-block of a network state vector must be one-hot")
    return blocks.argmax(axis=1)


def _readonly(array, dtype=float) -> np.ndarray:
    out = np.array(array, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class InfluenceModel:
    """Immutable parameter bundle of a (dynamic, constraint-based) influence model.

    Construction only checks shapes. Use :func:`validate_model` (or
    :meth:`validated`) to check the stochasticity and topology invariants.
    Cross matrices for pairs without an edge are stored as NaN.
    """

    states: StateSpace
    d: np.ndarray
    links: np.ndarray
    a_self: np.ndarray
    a_cross: np.ndarray
    a_dynamic: tuple = field(default=None)
    x_convention: str = "column-sum"

    def __post_init__(self):
        d = _readonly(self.d)
        n = d.shape[0] if d.ndim == 2 else -1
        if d.ndim != 2 or d.shape[1] != n:
            raise ConfigurationError(f"d must be square, got shape {d.shape}")
        m = self.states.m
        links = np.array(self.links, dtype=bool)
        if links.shape != (n, n):
            raise ConfigurationError(f"links must have shape {(n, n)}, got {links.shape}")
        np.fill_diagonal(links, False)
        links.setflags(write=False)
        a_self = _readonly(self.a_self)
        if a_self.shape != (n, m, m):
            raise ConfigurationError(f"a_self must have shape {(n, m, m)}, got {a_self.shape}")
        a_cross = _readonly(self.a_cross)
        if a_cross.shape != (n, n, m, m):
            raise ConfigurationError(f"a_cross must have shape {(n, n, m, m)}, got {a_cross.shape}")
        dynamic = self.a_dynamic
        if dynamic is not None:
            if len(dynamic) != n:
                raise ConfigurationError(f"a_dynamic needs one entry per node ({n}), got {len(dynamic)}")
            banks = []
            for i, bank in enumerate(dynamic):
                if bank is None:
                    banks.append(None)
                    continue
                bank = _readonly(bank)
                if bank.ndim != 3 or bank.shape[1:] != (m, m) or bank.shape[0] < 1:
                    raise ConfigurationError(f"a_dynamic[{i}] must have shape (k+1, {m}, {m}), got {bank.shape}")
                banks.append(bank)
            dynamic = tuple(banks) if any(b is not None for b in banks) else None
        if self.x_convention not in X_CONVENTIONS:
            raise ConfigurationError(f"x_convention must be one of {X_CONVENTIONS}, got {self.x_convention!r}")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "a_self", a_self)
        object.__setattr__(self, "a_cross", a_cross)
        object.__setattr__(self, "a_dynamic", dynamic)

    @classmethod
    def build(cls, states, d, a_self, *, links=None, cross=None, default_cross=None,
              a_dynamic=None, x_convention="column-sum") -> "InfluenceModel":
        """Assemble a model from friendlier inputs.

        ``states`` may be a :class:`StateSpace` or a label sequence. ``a_self``
        may be a single ``m x m`` matrix shared by all nodes. ``cross`` maps
        ``(sender, receiver)`` to a matrix and overrides ``default_cross``.
        When ``links`` is omitted the topology is the off-diagonal support of ``d``.
        """
        if not isinstance(states, StateSpace):
            states = StateSpace(tuple(states))
        d = np.asarray(d, dtype=float)
        n, m = d.shape[0], states.m
        a_self = np.asarray(a_self, dtype=float)
        if a_self.ndim == 2:
            a_self = np.broadcast_to(a_self, (n, m, m))
        if links is None:
            links = d > 0
        links = np.array(links, dtype=bool)
        np.fill_diagonal(links, False)
        a_cross = np.full((n, n, m, m), np.nan)
        if default_cross is not None:
            default_cross = np.asarray(default_cross, dtype=float)
            senders, receivers = np.nonzero(links.T)
            a_cross[senders, receivers] = default_cross
        for (u, v), matrix in (cross or {}).items():
            a_cross[u, v] = matrix
        return cls(states, d, links, a_self, a_cross, a_dynamic, x_convention)

    def replace(self, **changes) -> "InfluenceModel":
        params = dict(states=self.states, d=self.d, links=self.links, a_self=self.a_self,
                      a_cross=self.a_cross, a_dynamic=self.a_dynamic, x_convention=self.x_convention)
        params.update(changes)
        return type(self)(**params)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def m(self) -> int:
        return self.states.m

    @property
    def dynamic(self) -> bool:
        return self.a_dynamic is not None

    @cached_property
    def edges(self) -> np.ndarray:
        """``(receiver, sender)`` pairs of every directed edge, row-major order."""
        return np.argwhere(self.links)

    @cached_property
    def in_slots(self) -> np.ndarray:
        """``(n, K)`` edge indices of each node's in-edges in sender order; ``-1`` pads."""
        k = self.in_degree
        slots = np.full((self.n, max(int(k.max(initial=0)), 1)), -1, dtype=np.intp)
        for e, (receiver, _) in enumerate(self.edges):
            slots[receiver, np.argmax(slots[receiver] < 0)] = e
        slots.setflags(write=False)
        return slots

    @property
    def out_degree(self) -> np.ndarray:
        return self.links.sum(axis=0)

    @property
    def in_degree(self) -> np.ndarray:
        return self.links.sum(axis=1)

    @property
    def bank_degree(self) -> np.ndarray:
        """Largest possible activation count ``x`` per node under the x-convention."""
        return self.out_degree if self.x_convention == "column-sum" else self.in_degree

    @cached_property
    def self_bank(self) -> np.ndarray:
        """Internal chains padded to ``(n, K+1, m, m)``; static nodes repeat ``a_self``."""
        n, m = self.n, self.m
        if not self.dynamic:
            return self.a_self[:, None]
        width = max(b.shape[0] for b in self.a_dynamic if b is not None)
        bank = np.empty((n, width, m, m))
        for i in range(n):
            own = self.a_dynamic[i]
            if own is None:
                bank[i] = self.a_self[i]
            else:
                bank[i, :own.shape[0]] = own
                bank[i, own.shape[0]:] = own[-1]
        bank.setflags(write=False)
        return bank

    @cached_property
    def bank_size(self) -> np.ndarray:
        """Number of usable internal chains per node (0 marks a static node)."""
        if not self.dynamic:
            return np.zeros(self.n, dtype=int)
        return np.array([0 if b is None else b.shape[0] for b in self.a_dynamic])

    def validated(self) -> "InfluenceModel":
        report = validate_model(self)
        if not report.ok:
            from .errors import ModelValidationError
            raise ModelValidationError(report)
        return self


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Issue:
    location: str
    message: str

    def __str__(self):
        return f"{self.location}: {self.message}"


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, location, message):
        self.issues.append(Issue(location, message))

    def locations(self) -> list[str]:
        return [issue.location for issue in self.issues]

    def __str__(self):
        if self.ok:
            return "model is valid"
        return "invalid model:\n" + "\n".join(f"  - {issue}" for issue in self.issues)


def _check_stochastic(report, location, matrix, tol=STOCHASTIC_TOL):
    matrix = np.asarray(matrix)
    if not np.all(np.isfinite(matrix)):
        report.add(location, "contains non-finite entries")
        return
    bad = np.nonzero((matrix < 0).any(axis=-1) | (matrix > 1).any(axis=-1))[0]
    for row in bad:
        report.add(f"{location}[{row}]", "entries must lie in [0, 1]")
    sums = matrix.sum(axis=-1)
    for row in np.nonzero(np.abs(sums - 1) > tol)[0]:
        report.add(f"{location}[{row}]", f"row sums to {float(sums[row])!r}, expected 1")


def validate_model(model: InfluenceModel, tol: float = STOCHASTIC_TOL) -> ValidationReport:
    """Check every invariant of ``model`` and report each violation with its location."""
    report = ValidationReport()
    n = model.n
    _check_stochastic(report, "d", model.d, tol)
    off_support = (model.d > 0) & ~model.links & ~np.eye(n, dtype=bool)
    for i, j in np.argwhere(off_support):
        report.add(f"d[{i}][{j}]", f"positive influence {float(model.d[i, j])!r} but no edge {j}->{i} in the topology")
    for i in range(n):
        _check_stochastic(report, f"a_self[{i}]", model.a_self[i], tol)
    for receiver, sender in model.edges:
        location = f"a_cross[{sender}][{receiver}]"
        matrix = model.a_cross[sender, receiver]
        if np.all(np.isnan(matrix)):
            if model.d[receiver, sender] > 0:
                report.add(location, f"edge {sender}->{receiver} has influence but no transition matrix")
            continue
        _check_stochastic(report, location, matrix, tol)
    if model.dynamic:
        degree = model.bank_degree
        for i, bank in enumerate(model.a_dynamic):
            if bank is None:
                continue
            if bank.shape[0] != degree[i] + 1:
                report.add(
                    f"a_dynamic[{i}]",
                    f"bank holds {bank.shape[0]} chains, expected k+1 = {degree[i] + 1} "
                    f"({model.x_convention} degree {degree[i]})",
                )
            for h in range(bank.shape[0]):
                _check_stochastic(report, f"a_dynamic[{i}][{h}]", bank[h], tol)
    return report


# --------------------------------------------------------------------------
# constructions (all broadcast over leading batch axes of the state / c)


def build_constraint_matrix(rule, state, model: InfluenceModel) -> np.ndarray:
    """Evaluate ``rule`` on every edge for the network state(s) ``state``.

    ``c[i, j] = rule(state_i, state_j)`` on edges ``j -> i``, 0 on non-edges
    and 1 on the diagonal. ``state`` may carry leading batch axes.
    """
    s = np.asarray(state)
    table = rule.table(model.states)
    c = table[s[..., :, None], s[..., None, :]] & model.links
    for (i, j), edge_table in rule.edge_tables(model.states):
        c[..., i, j] = edge_table[s[..., i], s[..., j]] & model.links[i, j]
    c = c.astype(np.int8)
    diag = np.arange(model.n)
    c[..., diag, diag] = 1
    return c


def build_effective_influence(d, c) -> np.ndarray:
    """Fold deactivated influences back onto the diagonal.

    ``e = d * c + I * (d @ (1 - c'))``: off-diagonal ``e_ij = d_ij c_ij`` and
    ``e_ii = d_ii c_ii + sum_j d_ij (1 - c_ij)``. Rows stay stochastic.
    """
    d = np.asarray(d, dtype=float)
    c = np.asarray(c)
    if d.ndim != 2 or d.shape[0] != d.shape[1] or c.shape[-2:] != d.shape:
        raise ConfigurationError(f"dimension mismatch between d {d.shape} and c {c.shape}")
    diag = np.arange(d.shape[0])
    e = d * c
    folded = (d * (1 - c)).sum(axis=-1)
    e[..., diag, diag] = d[diag, diag] * c[..., diag, diag] + folded
    return e


def activation_counts(c, model: InfluenceModel) -> np.ndarray:
    """Per-node count ``x`` of active off-diagonal influences.

    ``column-sum`` counts the nodes a node is influencing (``sum_j c_ji``);
    ``row-sum`` counts the nodes influencing it (``sum_j c_ij``).
    """
    c = np.asarray(c)
    diag = np.arange(c.shape[-1])
    axis = -2 if model.x_convention == "column-sum" else -1
    return c.sum(axis=axis, dtype=np.intp) - c[..., diag, diag]


def select_internal_mc(node: int, c, model: InfluenceModel) -> np.ndarray:
    """Internal chain of ``node`` for the activation pattern ``c``."""
    if not model.dynamic or model.a_dynamic[node] is None:
        return model.a_self[node]
    x = int(activation_counts(c, model)[node])
    bank = model.a_dynamic[node]
    if not 0 <= x < bank.shape[0]:
        raise PreconditionError(
            f"node {node} influences {x} nodes but its bank only covers 0..{bank.shape[0] - 1}"
        )
    return bank[x]


def internal_mc_index(c, model: InfluenceModel) -> np.ndarray:
    """Batched bank index per node; zero for static nodes."""
    if not model.dynamic:
        return np.zeros(np.shape(c)[:-1], dtype=np.intp)
    x = activation_counts(c, model)
    size = model.bank_size
    dynamic = size > 0
    over = dynamic & (x >= size)
    if over.any():
        node = int(np.argwhere(over)[0][-1])
        raise PreconditionError(f"activation count of node {node} exceeds its internal chain bank")
    return np.where(dynamic, x, 0)


def build_total_influence(e, model: InfluenceModel, c) -> np.ndarray:
    """Assemble the ``mn x mn`` total influence matrix.

    Block ``(u, v)`` is ``e[v, u] * A_uv``; diagonal blocks use the internal
    chain selected from ``c``. Layout is node-major, state-minor.
    """
    e = np.asarray(e, dtype=float)
    n, m = model.n, model.m
    if e.shape != (n, n):
        raise ConfigurationError(f"e must have shape {(n, n)}, got {e.shape}")
    weights = e.T
    active = weights > 0
    np.fill_diagonal(active, False)
    missing = active & np.isnan(model.a_cross).any(axis=(-2, -1))
    if missing.any():
        u, v = np.argwhere(missing)[0]
        raise ConfigurationError(f"no transition matrix for edge {u}->{v} although e[{v}][{u}] > 0")
    cross = np.where(active[:, :, None, None], model.a_cross, 0.0)
    blocks = weights[:, :, None, None] * cross
    x = internal_mc_index(c, model)
    for i in range(n):
        blocks[i, i] = e[i, i] * model.self_bank[i, x[i]]
    return blocks.transpose(0, 2, 1, 3).reshape(n * m, n * m)
