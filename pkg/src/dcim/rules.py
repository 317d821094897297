"""Boolean activation rules deciding which influences are live at a step.

A rule is a set of ``(receiver_state, sender_state)`` label pairs: node ``i``
is influenced by neighbour ``j`` iff ``(state(i), state(j))`` is in the set.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError


def _pairs(pairs):
    if pairs is None:
        return None
    out = []
    for pair in pairs:
        if len(pair) != 2:
            raise ConfigurationError(f"allowed pair must be [receiver, sender], got {pair!r}")
        out.append((str(pair[0]), str(pair[1])))
    return frozenset(out)


@dataclass(frozen=True)
class ConstraintRule:
    """Activation rule; ``allowed_pairs=None`` activates every edge.

    ``overrides`` maps a ``(receiver, sender)`` node pair to its own pair set.
    """

    name: str
    allowed_pairs: frozenset | None
    overrides: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "allowed_pairs", _pairs(self.allowed_pairs))
        overrides = tuple(sorted(
            ((int(i), int(j)), _pairs(pairs))
            for (i, j), pairs in (dict(self.overrides).items())
        ))
        object.__setattr__(self, "overrides", overrides)

    @classmethod
    def always(cls, name="all"):
        return cls(name, None)

    @classmethod
    def never(cls, name="none"):
        return cls(name, frozenset())

    @staticmethod
    def _table(pairs, states) -> np.ndarray:
        if pairs is None:
            return np.ones((states.m, states.m), dtype=bool)
        table = np.zeros((states.m, states.m), dtype=bool)
        for receiver, sender in pairs:
            table[states.index(receiver), states.index(sender)] = True
        return table

    def table(self, states) -> np.ndarray:
        """``(m, m)`` boolean lookup indexed ``[receiver_state, sender_state]``."""
        return self._table(self.allowed_pairs, states)

    def edge_tables(self, states):
        return [(edge, self._table(pairs, states)) for edge, pairs in self.overrides]

    def allows(self, receiver, sender) -> bool:
        return self.allowed_pairs is None or (receiver, sender) in self.allowed_pairs

    def issubset(self, other: "ConstraintRule") -> bool:
        if other.allowed_pairs is None:
            return True
        if self.allowed_pairs is None:
            return False
        return self.allowed_pairs <= other.allowed_pairs

    def to_json(self) -> dict:
        out = {"name": self.name,
               "allowed_pairs": None if self.allowed_pairs is None else sorted(map(list, self.allowed_pairs))}
        if self.overrides:
            out["overrides"] = [
                {"receiver": i, "sender": j, "allowed_pairs": None if p is None else sorted(map(list, p))}
                for (i, j), p in self.overrides
            ]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ConstraintRule":
        if not isinstance(obj, dict) or "allowed_pairs" not in obj:
            raise ConfigurationError("policy must be an object with 'allowed_pairs'")
        overrides = {}
        for k, item in enumerate(obj.get("overrides", [])):
            try:
                overrides[(item["receiver"], item["sender"])] = item["allowed_pairs"]
            except (KeyError, TypeError):
                raise ConfigurationError(f"$.overrides[{k}] needs receiver, sender and allowed_pairs") from None
        return cls(str(obj.get("name", "custom")), obj["allowed_pairs"], overrides)


O, N, U = "O", "N", "U"

P1 = ConstraintRule("P1", {(U, O)})
P2 = ConstraintRule("P2", {(U, O), (U, N)})
P3 = ConstraintRule("P3", {(U, O), (N, O)})
P4 = ConstraintRule("P4", {(U, O), (U, N), (N, O)})
P5 = ConstraintRule("P5", {(U, O), (U, N), (N, O), (N, N)})

#: the five load-distribution policies, in catalog order
CATALOG = (P1, P2, P3, P4, P5)
BUILTIN = {rule.name: rule for rule in CATALOG + (ConstraintRule.always(), ConstraintRule.never())}


def get_policy(name: str) -> ConstraintRule:
    try:
        return BUILTIN[name]
    except KeyError:
        raise ConfigurationError(f"unknown policy {name!r}; built-ins are {sorted(BUILTIN)}") from None


def load_policy_file(path) -> ConstraintRule:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"policy file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return ConstraintRule.from_json(obj)


def parse_catalog(spec: str) -> list[ConstraintRule]:
    """Comma-separated built-in names, e.g. ``"P1,P2,P3"``."""
    names = [name.strip() for name in spec.split(",") if name.strip()]
    return [get_policy(name) for name in names]
