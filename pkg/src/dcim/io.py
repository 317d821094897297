"""JSON model files, shipped fixtures, trajectory CSV and run manifests.

Model file layout (node ids are 0-based integers)::

    {
      "states": ["O", "N", "U"],
      "nodes": 2,
      "self_influence": [0.4, 0.7],
      "edges": [{"source": 1, "target": 0, "weight": 0.6, "A": [[...], ...]},
                {"source": 0, "target": 1, "weight": 0.3}],
      "internal_mc": [[[...]], {"dynamic": [[[...]], [[...]]]}],
      "default_cross_A": [[0.5, 0.5, 0.0], ...],
      "x_convention": "column-sum"
    }

An edge ``source -> target`` with weight ``w`` sets ``d[target][source] = w``:
the target receives that share of its influence from the source. ``A`` on an
edge overrides ``default_cross_A`` for that pair; rows are indexed by the
source's state. ``internal_mc[i]`` is either one ``m x m`` matrix or a bank
``{"dynamic": [A^(0), ..., A^(k)]}`` selected by how many nodes ``i`` is
currently influencing.
"""
from __future__ import annotations

import csv
import json
import re
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigurationError, ModelValidationError
from .model import X_CONVENTIONS, InfluenceModel, StateSpace, ValidationReport, validate_model

MATRIX = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}

MODEL_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "influence model",
    "type": "object",
    "required": ["states", "nodes", "self_influence", "internal_mc"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "states": {"type": "array", "minItems": 1, "uniqueItems": True, "items": {"type": "string", "minLength": 1}},
        "nodes": {"type": "integer", "minimum": 1},
        "self_influence": {"type": "array", "items": {"type": "number"}},
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["source", "target", "weight"],
                "properties": {
                    "source": {"type": "integer", "minimum": 0},
                    "target": {"type": "integer", "minimum": 0},
                    "weight": {"type": "number"},
                    "A": MATRIX,
                },
                "additionalProperties": False,
            },
        },
        "internal_mc": {
            "type": "array",
            "items": {
                "oneOf": [
                    MATRIX,
                    {
                        "type": "object",
                        "required": ["dynamic"],
                        "properties": {"dynamic": {"type": "array", "minItems": 1, "items": MATRIX}},
                        "additionalProperties": False,
                    },
                ]
            },
        },
        "default_cross_A": MATRIX,
        "x_convention": {"enum": list(X_CONVENTIONS)},
    },
    "additionalProperties": False,
}


def _path(*parts) -> str:
    out = "$"
    for part in parts:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def _matrix(value, m, where, report):
    a = np.asarray(value, dtype=float) if all(isinstance(r, list) and len(r) == m for r in value) else None
    if a is None or a.shape != (m, m):
        report.add(where, f"must be a {m}x{m} matrix")
        return None
    return a


def _translate(location: str, edge_index: dict, own_cross: set, dynamic=frozenset()):
    """Map an in-memory model location such as ``a_cross[1][0][2]`` to a JSON path."""
    idx = [int(k) for k in re.findall(r"\[(\d+)\]", location)]
    head = location.split("[", 1)[0]
    if head == "d" and len(idx) == 1:
        return f"{_path('self_influence', idx[0])} (+ weights of edges targeting node {idx[0]})"
    if head == "d" and len(idx) == 2:
        return _path("edges")
    if head == "a_self":
        if idx[0] in dynamic:
            return None  # reported again under the bank
        return _path("internal_mc", *idx)
    if head == "a_dynamic":
        return _path("internal_mc", idx[0], "dynamic", *idx[1:])
    if head == "a_cross":
        sender, receiver, rest = idx[0], idx[1], idx[2:]
        k = edge_index.get((sender, receiver))
        if k is not None and k in own_cross:
            return _path("edges", k, "A", *rest)
        if rest:
            return _path("default_cross_A", *rest)
        return _path("edges", k) if k is not None else _path("default_cross_A")
    return location


def parse_model(obj, x_convention=None, validate=True) -> InfluenceModel:
    """Build a model from a decoded JSON document, reporting problems by JSON path."""
    validator = jsonschema.Draft202012Validator(MODEL_SCHEMA)
    errors = sorted(validator.iter_errors(obj), key=lambda e: list(e.absolute_path))
    if errors:
        report = ValidationReport()
        for err in errors:
            report.add(err.json_path, err.message)
        raise ModelValidationError(report)

    report = ValidationReport()
    states = StateSpace(tuple(obj["states"]))
    n, m = obj["nodes"], states.m
    d = np.zeros((n, n))
    if len(obj["self_influence"]) != n:
        report.add(_path("self_influence"), f"needs {n} entries, got {len(obj['self_influence'])}")
    else:
        d[np.arange(n), np.arange(n)] = obj["self_influence"]

    default = None
    if "default_cross_A" in obj:
        default = _matrix(obj["default_cross_A"], m, _path("default_cross_A"), report)

    links = np.zeros((n, n), dtype=bool)
    cross = {}
    edge_index, own_cross = {}, set()
    for k, edge in enumerate(obj.get("edges", [])):
        src, dst = edge["source"], edge["target"]
        if src >= n or dst >= n:
            report.add(_path("edges", k), f"node id out of range 0..{n - 1}")
            continue
        if src == dst:
            report.add(_path("edges", k), "self-loops belong in self_influence")
            continue
        if (src, dst) in edge_index:
            report.add(_path("edges", k), f"duplicate edge {src}->{dst} (first at {_path('edges', edge_index[(src, dst)])})")
            continue
        edge_index[(src, dst)] = k
        links[dst, src] = True
        d[dst, src] = edge["weight"]
        if "A" in edge:
            a = _matrix(edge["A"], m, _path("edges", k, "A"), report)
            if a is not None:
                cross[(src, dst)] = a
                own_cross.add(k)

    chains = obj["internal_mc"]
    a_self = np.full((n, m, m), np.nan)
    banks = [None] * n
    if len(chains) != n:
        report.add(_path("internal_mc"), f"needs {n} entries, got {len(chains)}")
    else:
        for i, entry in enumerate(chains):
            if isinstance(entry, dict):
                bank = [_matrix(a, m, _path("internal_mc", i, "dynamic", h), report)
                        for h, a in enumerate(entry["dynamic"])]
                if all(a is not None for a in bank):
                    banks[i] = np.stack(bank)
                    a_self[i] = bank[0]
            else:
                a = _matrix(entry, m, _path("internal_mc", i), report)
                if a is not None:
                    a_self[i] = a
    if not report.ok:
        raise ModelValidationError(report)

    model = InfluenceModel.build(
        states, d, a_self, links=links, cross=cross, default_cross=default,
        a_dynamic=banks if any(b is not None for b in banks) else None,
        x_convention=x_convention or obj.get("x_convention", "column-sum"),
    )
    if validate:
        found = validate_model(model)
        if not found.ok:
            mapped = ValidationReport()
            dynamic = {i for i, b in enumerate(banks) if b is not None}
            for issue in found.issues:
                where = _translate(issue.location, edge_index, own_cross, dynamic)
                if where is not None:
                    mapped.add(where, issue.message)
            raise ModelValidationError(mapped)
    return model


def load_model(path, x_convention=None, validate=True) -> InfluenceModel:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"model file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    try:
        return parse_model(obj, x_convention, validate)
    except ModelValidationError as exc:
        raise ModelValidationError(exc.report, f"{path}: {exc}") from None


def _rows(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def model_to_json(model: InfluenceModel, name=None) -> dict:
    """Serialise ``model``; cross matrices equal to the most common one become ``default_cross_A``."""
    n = model.n
    matrices = [model.a_cross[j, i] for i, j in model.edges if not np.all(np.isnan(model.a_cross[j, i]))]
    default = None
    if matrices:
        keys = [m.tobytes() for m in matrices]
        k = max(range(len(keys)), key=keys.count)
        if keys.count(keys[k]) > 1 or len(matrices) == 1:
            default = matrices[k]
    edges = []
    for i, j in model.edges:
        edge = {"source": int(j), "target": int(i), "weight": float(model.d[i, j])}
        a = model.a_cross[j, i]
        if not np.all(np.isnan(a)) and (default is None or not np.array_equal(a, default)):
            edge["A"] = _rows(a)
        edges.append(edge)
    chains = []
    for i in range(n):
        bank = model.a_dynamic[i] if model.dynamic else None
        chains.append({"dynamic": [_rows(a) for a in bank]} if bank is not None else _rows(model.a_self[i]))
    out = {}
    if name:
        out["name"] = name
    out.update({
        "states": list(model.states.labels),
        "nodes": n,
        "self_influence": [float(v) for v in np.diag(model.d)],
        "edges": edges,
        "internal_mc": chains,
    })
    if default is not None:
        out["default_cross_A"] = _rows(default)
    out["x_convention"] = model.x_convention
    return out


_NUMBER_ROW = re.compile(r"\[\s+([^\[\]{}\"]*?)\s+\]")


def dumps(obj) -> str:
    """Indented JSON with numeric rows kept on one line."""
    text = json.dumps(obj, indent=1)
    return _NUMBER_ROW.sub(lambda m: "[" + ", ".join(v.strip() for v in m.group(1).split(",")) + "]", text)


def save_model(model: InfluenceModel, path, name=None) -> None:
    Path(path).write_text(dumps(model_to_json(model, name)) + "\n")


def fixture_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("dcim.data").iterdir() if p.name.endswith(".json"))


def fixture_path(name: str):
    path = resources.files("dcim.data") / f"{name}.json"
    if not path.is_file():
        raise ConfigurationError(f"unknown fixture {name!r}; available: {fixture_names()}")
    return path


def load_fixture(name: str, x_convention=None) -> InfluenceModel:
    """Load a model shipped with the package (``"pair"`` or ``"lb30"``)."""
    return parse_model(json.loads(fixture_path(name).read_text()), x_convention)


def resolve_model(ref, x_convention=None) -> InfluenceModel:
    """A file path, or ``fixture:<name>`` for a shipped model."""
    ref = str(ref)
    if ref.startswith("fixture:"):
        return load_fixture(ref.split(":", 1)[1], x_convention)
    return load_model(ref, x_convention)


def write_trajectories(path, trajectories) -> None:
    """Long-format CSV ``run_id,t,node_id,state_label,p_<label>...``."""
    trajectories = list(trajectories)
    labels = trajectories[0].labels if trajectories else ()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run_id", "t", "node_id", "state_label", *(f"p_{label}" for label in labels)])
        for traj in trajectories:
            for row in traj.rows():
                writer.writerow([*row[:4], *(repr(float(p)) for p in row[4:])])


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj) + "\n")


def write_manifest(path, command, config: dict, outputs, model_ref=None) -> dict:
    """Record everything needed to regenerate a run; the seed is always present."""
    from . import __version__

    if config.get("seed") is None:
        raise ConfigurationError("manifest requires a concrete seed")
    manifest = {
        "tool": "dcim",
        "version": __version__,
        "command": command,
        "config": config,
        "outputs": sorted(outputs),
    }
    if model_ref is not None:
        manifest["model"] = model_ref
    write_json(path, manifest)
    return manifest
