"""Ensemble experiments: expectancy metrics, policy comparisons, topology sweeps.

Runs are simulated in fixed-size chunks of vectorised paths. All strategies
inside a chunk share initial states and per-(run, node) uniforms (common
random numbers), and the chunk partition depends only on the problem size,
so serial and parallel execution give bitwise-identical reports.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import ConfigurationError, PreconditionError
from .model import LOAD_STATES, InfluenceModel, build_constraint_matrix
from .policy import constraint_expectancy, node_sum, optimize_greedy
from .simulation import draw_uniforms, node_marginals, random_initial_states, sample_next

CHUNK_BUDGET = 4_000_000


# --------------------------------------------------------------------------
# topologies and default parameters


@dataclass(frozen=True)
class TopologySpec:
    """Random digraph (``kind="random"``, ``param`` = edge probability) or
    random regular graph with symmetric links (``kind="regular"``, ``param`` = degree)."""

    kind: str = "random"
    n: int = 30
    param: float = 0.15
    seed: int = 0
    self_weight: float = 0.5

    @property
    def label(self) -> str:
        return f"{self.kind}(n={self.n}, {'p' if self.kind == 'random' else 'degree'}={self.param:g})"

    def to_json(self) -> dict:
        return {"kind": self.kind, "n": self.n, "param": self.param, "seed": self.seed, "self_weight": self.self_weight}


@dataclass(frozen=True)
class Topology:
    links: np.ndarray
    d: np.ndarray
    spec: TopologySpec | None = None


def influence_weights(links, self_weight=0.5) -> np.ndarray:
    """``d_ii = self_weight`` and the rest split evenly over in-neighbours; ``d_ii = 1`` without in-neighbours."""
    links = np.array(links, dtype=bool)
    np.fill_diagonal(links, False)
    n = len(links)
    k = links.sum(axis=1)
    d = np.zeros((n, n))
    share = np.divide(1.0 - self_weight, k, out=np.zeros(n), where=k > 0)
    d[links] = np.repeat(share, k)
    np.fill_diagonal(d, np.where(k > 0, self_weight, 1.0))
    return d


def generate_topology(spec: TopologySpec) -> Topology:
    n = spec.n
    if n < 1:
        raise ConfigurationError(f"node count must be >= 1, got {n}")
    if not 0 <= spec.self_weight <= 1:
        raise ConfigurationError(f"self weight must lie in [0, 1], got {spec.self_weight}")
    links = np.zeros((n, n), dtype=bool)
    if spec.kind == "random":
        if not 0 <= spec.param <= 1:
            raise ConfigurationError(f"edge probability must lie in [0, 1], got {spec.param}")
        graph = nx.gnp_random_graph(n, spec.param, seed=spec.seed, directed=True)
        for sender, receiver in graph.edges():
            links[receiver, sender] = True
    elif spec.kind == "regular":
        degree = int(spec.param)
        if degree != spec.param or not 0 <= degree < n or (n * degree) % 2:
            raise ConfigurationError(f"regular graph needs an integer degree in [0, n) with n*degree even, got {spec.param}")
        graph = nx.random_regular_graph(degree, n, seed=spec.seed)
        for a, b in graph.edges():
            links[a, b] = links[b, a] = True
    else:
        raise ConfigurationError(f"unknown topology kind {spec.kind!r} (random or regular)")
    if n > 1 and links.any() and not nx.is_weakly_connected(nx.from_numpy_array(links.T.astype(int), create_using=nx.DiGraph)):
        warnings.warn(f"{spec.label} is not weakly connected", stacklevel=2)
    return Topology(links, influence_weights(links, spec.self_weight), spec)


def random_chains(rng, n, m, concentration=1.0) -> np.ndarray:
    return rng.dirichlet(np.full(m, concentration), size=(n, m))


def relief_bank(chain, k, strength=0.5) -> np.ndarray:
    """``k+1`` chains where influencing ``h`` nodes shifts mass one state toward the last label."""
    m = chain.shape[0]
    shift = np.zeros((m, m))
    shift[np.arange(m), np.minimum(np.arange(m) + 1, m - 1)] = 1.0
    return np.stack([(1 - strength * h / max(k, 1)) * chain + strength * h / max(k, 1) * chain @ shift
                     for h in range(k + 1)])


def load_balancing_model(topology: Topology, seed=0, cross_row=(0.5, 0.5, 0.0), states=LOAD_STATES,
                         dynamic=False, concentration=1.0) -> InfluenceModel:
    """Load-balancing parameters on ``topology``: seeded random internal chains and
    identical cross matrices whose rows all equal ``cross_row``."""
    rng = np.random.default_rng(seed)
    n, m = len(topology.d), states.m
    a_self = random_chains(rng, n, m, concentration)
    cross = np.tile(np.asarray(cross_row, dtype=float), (m, 1))
    bank = None
    if dynamic:
        degree = topology.links.sum(axis=0)
        bank = [relief_bank(a_self[i], int(degree[i])) for i in range(n)]
    return InfluenceModel.build(states, topology.d, a_self, links=topology.links, default_cross=cross, a_dynamic=bank)


# --------------------------------------------------------------------------
# strategies


class FixedPolicy:
    def __init__(self, rule):
        self.rule = rule
        self.name = rule.name

    def choose(self, states, model, target):
        return build_constraint_matrix(self.rule, states, model), {}


class BestPolicy:
    """Per-step argmax of the step-wise expectancy over a catalog (lowest index on ties)."""

    name = "BestPolicy"

    def __init__(self, catalog):
        self.catalog = list(catalog)
        if not self.catalog:
            raise ConfigurationError("BestPolicy needs a non-empty catalog")

    def choose(self, states, model, target):
        cs = np.stack([build_constraint_matrix(rule, states, model) for rule in self.catalog])
        values = np.stack([constraint_expectancy(states, model, c, target) for c in cs])
        pick = np.argmax(values, axis=0)
        runs = np.arange(values.shape[1])
        chosen = values[pick, runs]
        return cs[pick, runs], {"selected": pick, "violations": int((values > chosen).sum())}


class Optimum:
    """Greedy per-edge optimum; compares itself against ``catalog`` at every visited state."""

    name = "Optimum"

    def __init__(self, catalog=()):
        self.catalog = list(catalog)

    def choose(self, states, model, target):
        c = optimize_greedy(states, model, target)
        info = {}
        if self.catalog:
            value = constraint_expectancy(states, model, c, target)
            others = np.stack([constraint_expectancy(states, model, build_constraint_matrix(rule, states, model), target)
                               for rule in self.catalog])
            info["violations"] = int((others > value).sum())
        return c, info


# --------------------------------------------------------------------------
# ensemble engine


@dataclass
class StrategyStats:
    """Per-run expectancies of one strategy under both estimators."""

    name: str
    labels: tuple
    run_prob: np.ndarray
    run_indicator: np.ndarray
    series: np.ndarray
    selection_counts: np.ndarray | None = None
    selection_names: tuple = ()
    violations: int | None = None
    states: np.ndarray | None = None
    probs: np.ndarray | None = None

    @staticmethod
    def _stderr(values):
        if len(values) < 2:
            return np.zeros(values.shape[1:])
        return values.std(axis=0, ddof=1) / np.sqrt(len(values))

    @property
    def prob(self):
        return self.run_prob.mean(axis=0)

    @property
    def prob_stderr(self):
        return self._stderr(self.run_prob)

    @property
    def indicator(self):
        return self.run_indicator.mean(axis=0)

    @property
    def indicator_stderr(self):
        return self._stderr(self.run_indicator)

    def estimate(self, estimator="prob"):
        if estimator == "prob":
            return self.prob, self.prob_stderr
        if estimator == "indicator":
            return self.indicator, self.indicator_stderr
        raise ConfigurationError(f"unknown estimator {estimator!r} (prob or indicator)")

    def estimator_agreement(self, z=3.0):
        """Paired comparison of the two estimators: ``(max |gap| / stderr, agree)``."""
        diff = self.run_prob - self.run_indicator
        gap = np.abs(diff.mean(axis=0))
        se = self._stderr(diff)
        ratio = np.divide(gap, se, out=np.where(gap > 0, np.inf, 0.0), where=se > 0)
        return float(ratio.max()), bool(np.all(ratio <= z))

    def selection_totals(self) -> dict:
        if self.selection_counts is None:
            return {}
        return dict(zip(self.selection_names, self.selection_counts.sum(axis=0).tolist()))

    def to_json(self, include_runs=False) -> dict:
        out = {
            "name": self.name,
            "prob": dict(zip(self.labels, self.prob.tolist())),
            "prob_stderr": dict(zip(self.labels, self.prob_stderr.tolist())),
            "indicator": dict(zip(self.labels, self.indicator.tolist())),
            "indicator_stderr": dict(zip(self.labels, self.indicator_stderr.tolist())),
            "series": {label: self.series[:, k].tolist() for k, label in enumerate(self.labels)},
        }
        if self.selection_counts is not None:
            out["selection_counts"] = self.selection_totals()
            out["selection_counts_per_run"] = self.selection_counts.tolist()
        if self.violations is not None:
            out["dominance_violations"] = self.violations
        if include_runs:
            out["run_prob"] = self.run_prob.tolist()
            out["run_indicator"] = self.run_indicator.tolist()
        return out


@dataclass
class ExpectancyReport:
    labels: tuple
    strategies: list
    runs: int
    horizon: int
    seed: int
    target: str = "N"
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name) -> StrategyStats:
        for strategy in self.strategies:
            if strategy.name == name:
                return strategy
        raise KeyError(name)

    @property
    def names(self):
        return [s.name for s in self.strategies]

    def normalization_error(self) -> float:
        return max(max(abs(s.prob.sum() - 1), abs(s.indicator.sum() - 1)) for s in self.strategies)

    def rows(self, estimator="prob"):
        """``(policy, state, expectancy, stderr)`` rows."""
        for s in self.strategies:
            mean, se = s.estimate(estimator)
            for label, value, err in zip(self.labels, mean, se):
                yield s.name, label, float(value), float(err)

    def plot_rows(self, state=None):
        """Long-format ``(series, x=step, y=expectancy)`` rows for one state."""
        k = self.labels.index(state or self.target)
        for s in self.strategies:
            for t, value in enumerate(s.series[:, k], start=1):
                yield s.name, t, float(value)

    def to_json(self, include_runs=False) -> dict:
        return {
            "states": list(self.labels),
            "target": self.target,
            "runs": self.runs,
            "horizon": self.horizon,
            "seed": self.seed,
            "meta": self.meta,
            "strategies": [s.to_json(include_runs) for s in self.strategies],
        }


def chunk_size(n, horizon, runs) -> int:
    return max(1, min(runs, CHUNK_BUDGET // max(1, 2 * n * horizon)))


def _simulate_chunk(model, strategies, run_ids, horizon, seed, target, initial=None, record=False):
    n, m = model.n, model.m
    if initial is None:
        start = random_initial_states(seed, run_ids, n, m)
    else:
        start = np.broadcast_to(np.asarray(initial, dtype=np.intp), (len(run_ids), n)).copy()
    u = draw_uniforms(seed, run_ids, n, horizon)
    results = []
    for strategy in strategies:
        s = start.copy()
        runs = len(run_ids)
        prob = np.zeros((runs, m))
        indicator = np.zeros((runs, m))
        series = np.zeros((horizon, m))
        catalog = getattr(strategy, "catalog", ())
        selections = np.zeros((runs, len(catalog)), dtype=np.int64) if isinstance(strategy, BestPolicy) else None
        violations = None
        states_rec = np.empty((runs, horizon + 1, n), dtype=np.intp) if record else None
        probs_rec = np.empty((runs, horizon, n, m)) if record else None
        if record:
            states_rec[:, 0] = s
        for t in range(horizon):
            c, info = strategy.choose(s, model, target)
            p = node_marginals(s, model, c)
            frac = node_sum(np.swapaxes(p, -1, -2)) / n
            prob += frac
            series[t] = frac.sum(axis=0)
            s = sample_next(s, model, c, u[:, :, t])
            indicator += (s[..., None] == np.arange(m)).sum(axis=1) / n
            if selections is not None:
                selections[np.arange(runs), info["selected"]] += 1
            if "violations" in info:
                violations = (violations or 0) + info["violations"]
            if record:
                states_rec[:, t + 1] = s
                probs_rec[:, t] = p
        results.append((prob / horizon, indicator / horizon, series, selections, violations, states_rec, probs_rec))
    return results


def _chunk_job(args):
    return _simulate_chunk(*args)


def run_ensemble(model: InfluenceModel, strategies, horizon, runs, seed, target="N", workers=1,
                 initial=None, record=False, meta=None) -> ExpectancyReport:
    """Simulate every strategy on the same ``runs`` random paths (common random numbers)."""
    if horizon < 1 or runs < 1:
        raise ConfigurationError("horizon and runs must be >= 1")
    model.states.index(target)
    strategies = list(strategies)
    size = chunk_size(model.n, horizon, runs)
    jobs = [(model, strategies, list(range(start, min(start + size, runs))), horizon, seed, target, initial, record)
            for start in range(0, runs, size)]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_chunk_job, jobs))
    else:
        chunks = [_chunk_job(job) for job in jobs]

    stats = []
    labels = model.states.labels
    for k, strategy in enumerate(strategies):
        parts = [chunk[k] for chunk in chunks]
        series = parts[0][2].copy()
        for part in parts[1:]:
            series += part[2]
        violations = [p[4] for p in parts if p[4] is not None]
        stats.append(StrategyStats(
            name=strategy.name,
            labels=labels,
            run_prob=np.concatenate([p[0] for p in parts]),
            run_indicator=np.concatenate([p[1] for p in parts]),
            series=series / runs,
            selection_counts=np.concatenate([p[3] for p in parts]) if parts[0][3] is not None else None,
            selection_names=tuple(rule.name for rule in getattr(strategy, "catalog", ())),
            violations=sum(violations) if violations else None,
            states=np.concatenate([p[5] for p in parts]) if record else None,
            probs=np.concatenate([p[6] for p in parts]) if record else None,
        ))
    return ExpectancyReport(labels, stats, runs, horizon, seed, target, dict(meta or {}))


def overall_expectancy(model, rule, horizon, runs, seed, target="N", workers=1) -> ExpectancyReport:
    """Long-run state occupancy under one fixed rule, averaged over random initial states."""
    return run_ensemble(model, [FixedPolicy(rule)], horizon, runs, seed, target, workers)


def compare_policies(model, catalog, horizon, runs, seed, best_policy=True, target="N", workers=1) -> ExpectancyReport:
    catalog = list(catalog)
    if not catalog:
        raise ConfigurationError("compare_policies needs a non-empty catalog")
    strategies = [FixedPolicy(rule) for rule in catalog]
    if best_policy:
        strategies.append(BestPolicy(catalog))
    return run_ensemble(model, strategies, horizon, runs, seed, target, workers)


def compare_with_optimum(model, catalog, horizon, runs, seed, target="N", workers=1) -> ExpectancyReport:
    """Catalog policies, the per-step Best Policy and the greedy Optimum on shared paths."""
    if model.dynamic:
        raise PreconditionError("the optimum strategy requires fixed internal chains")
    catalog = list(catalog)
    strategies = [FixedPolicy(rule) for rule in catalog]
    if catalog:
        strategies.append(BestPolicy(catalog))
    strategies.append(Optimum(catalog))
    return run_ensemble(model, strategies, horizon, runs, seed, target, workers)


@dataclass
class SweepResult:
    specs: list
    reports: list

    def table(self, state="N"):
        """``(topology, kind, param, policy, expectancy, stderr)`` rows."""
        for spec, report in zip(self.specs, self.reports):
            k = report.labels.index(state)
            for s in report.strategies:
                yield spec.label, spec.kind, spec.param, s.name, float(s.prob[k]), float(s.prob_stderr[k])

    def to_json(self) -> dict:
        return {"points": [{"topology": spec.to_json(), "report": report.to_json()}
                           for spec, report in zip(self.specs, self.reports)]}


def topology_sweep(specs, catalog, horizon, runs, seed, model_seed=0, best_policy=False, optimum=False,
                   target="N", workers=1) -> SweepResult:
    """Run the policy comparison on a generated topology per spec, with the same chain seed."""
    reports = []
    for spec in specs:
        topology = generate_topology(spec)
        model = load_balancing_model(topology, model_seed)
        if optimum:
            report = compare_with_optimum(model, catalog, horizon, runs, seed, target, workers)
        else:
            report = compare_policies(model, catalog, horizon, runs, seed, best_policy, target, workers)
        report.meta["topology"] = spec.to_json()
        report.meta["edges"] = int(topology.links.sum())
        reports.append(report)
    return SweepResult(list(specs), reports)
