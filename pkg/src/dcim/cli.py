"""``dcim`` command line: simulate, compare, optimize, analyze and sweep.

Every flag can also be set through the environment as
``DCIM_<SUBCOMMAND>_<FLAG>`` (for example ``DCIM_COMPARE_RUNS=50``).
Exit codes: 0 success, 1 user or configuration error, 2 internal error.
"""
from __future__ import annotations

import csv
import hashlib
import os
import secrets
import sys
import traceback
from pathlib import Path

import click
import numpy as np

from . import __version__
from .errors import DCIMError
from .experiments import (
    BestPolicy,
    FixedPolicy,
    Optimum,
    TopologySpec,
    run_ensemble,
    topology_sweep,
)
from .io import resolve_model, write_json, write_manifest, write_trajectories
from .model import X_CONVENTIONS
from .policy import DEFAULT_MAX_EDGES, constraint_expectancy, optimize_bruteforce, optimize_greedy
from .rules import CATALOG, get_policy, load_policy_file, parse_catalog
from .simulation import random_initial_states, run_trajectory
from .steady_state import empirical_convergence, enumerate_family, limit_exists, rcp_conditions

EXIT_OK, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2
DEFAULT_CATALOG = ",".join(rule.name for rule in CATALOG)


def _default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def model_options(f):
    f = click.option("--x-convention", type=click.Choice(X_CONVENTIONS), default=None,
                     help="How x counts activations for dynamic internal chains (default: model file, else column-sum).")(f)
    f = click.option("--model", "model_ref", required=True,
                     help="Model JSON file, or fixture:<name> for a shipped model (pair, lb30).")(f)
    return f


def output_options(f):
    f = click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)(f)
    f = click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True,
                     help="Output directory (created if missing).")(f)
    f = click.option("--seed", type=click.IntRange(min=0), default=None,
                     help="Master seed; generated and recorded in the manifest when omitted.")(f)
    return f


def ensemble_options(f):
    f = click.option("--workers", type=click.IntRange(min=1), default=_default_workers, show_default="all CPUs")(f)
    f = click.option("--runs", type=click.IntRange(min=1), default=100, show_default=True)(f)
    f = click.option("--horizon", type=click.IntRange(min=1), default=100, show_default=True)(f)
    return f


class Run:
    """Shared bookkeeping for one subcommand invocation."""

    def __init__(self, command, out, seed, model_ref=None, x_convention=None):
        self.command = command
        self.out = Path(out)
        self.seed = seed if seed is not None else secrets.randbits(63)
        self.model_ref = model_ref
        self.outputs = []
        self.model = resolve_model(model_ref, x_convention) if model_ref is not None else None
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, name) -> Path:
        self.outputs.append(name)
        return self.out / name

    def model_json(self):
        if self.model_ref is None:
            return None
        ref = {"ref": self.model_ref}
        if not str(self.model_ref).startswith("fixture:"):
            ref["sha256"] = hashlib.sha256(Path(self.model_ref).read_bytes()).hexdigest()
        return ref

    def finish(self, config: dict):
        config = {"seed": self.seed, **config}
        write_manifest(self.out / "manifest.json", self.command, config, self.outputs, self.model_json())
        click.echo(f"wrote {', '.join(sorted(self.outputs))} and manifest.json to {self.out}")


def _rule(policy, policy_file):
    return load_policy_file(policy_file) if policy_file else get_policy(policy)


def _catalog(policies, policy_files):
    catalog = parse_catalog(policies) if policies else []
    catalog += [load_policy_file(p) for p in policy_files]
    if not catalog:
        raise click.BadParameter("at least one policy is required", param_hint="--policies")
    return catalog


def _parse_state(text, model):
    labels = [t.strip() for t in text.replace(" ", ",").split(",") if t.strip()]
    if len(labels) == 1 and len(labels[0]) == model.n:
        labels = list(labels[0])
    if len(labels) != model.n:
        raise click.BadParameter(f"expected {model.n} node states, got {len(labels)}", param_hint="--state")
    return model.states.encode(labels)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _write_report(run, report, fmt, estimator):
    if fmt == "csv":
        _write_csv(run.path("report.csv"), ["policy", "state", "expectancy", "stderr"], report.rows(estimator))
        _write_csv(run.path("plot_steps.csv"), ["series", "step", "expectancy"], report.plot_rows())
        selected = [s for s in report.strategies if s.selection_counts is not None]
        if selected:
            rows = [(s.name, rule, count) for s in selected for rule, count in s.selection_totals().items()]
            _write_csv(run.path("selections.csv"), ["strategy", "policy", "steps_selected"], rows)
    else:
        obj = report.to_json()
        obj["estimator"] = estimator
        write_json(run.path("report.json"), obj)


@click.group(context_settings={"auto_envvar_prefix": "DCIM", "show_default": True})
@click.version_option(__version__, prog_name="dcim")
def cli():
    """Dynamic constraint-based influence models of networked Markov chains."""


@cli.command()
@model_options
@click.option("--policy", default="all", help="Built-in constraint rule: P1..P5, all or none.")
@click.option("--policy-file", type=click.Path(dir_okay=False), default=None, help="Custom rule JSON (overrides --policy).")
@click.option("--horizon", type=click.IntRange(min=1), default=100)
@click.option("--runs", type=click.IntRange(min=1), default=1)
@click.option("--initial", default=None, help="Initial labels, e.g. 'U,N,O'. Default: uniform random per run.")
@output_options
def simulate(model_ref, x_convention, policy, policy_file, horizon, runs, initial, seed, out, fmt):
    """Sample trajectories with their exact step-wise marginals."""
    run = Run("simulate", out, seed, model_ref, x_convention)
    model = run.model
    rule = _rule(policy, policy_file)
    if initial is not None:
        starts = np.broadcast_to(_parse_state(initial, model), (runs, model.n))
    else:
        starts = random_initial_states(run.seed, range(runs), model.n, model.m)
    trajectories = [run_trajectory(starts[r], model, rule, horizon, run.seed, run_id=r) for r in range(runs)]
    if fmt == "csv":
        write_trajectories(run.path("trajectories.csv"), trajectories)
    else:
        write_json(run.path("trajectories.json"), {
            "states": list(model.states.labels),
            "runs": [{"run_id": t.run_id,
                      "states": [model.states.decode(s) for s in t.states],
                      "step_probs": t.step_probs.reshape(horizon, model.n, model.m).tolist()}
                     for t in trajectories],
        })
    run.finish({"policy": rule.to_json(), "horizon": horizon, "runs": runs, "initial": initial,
                "x_convention": model.x_convention, "format": fmt})


@cli.command()
@model_options
@click.option("--policies", default=DEFAULT_CATALOG, help="Comma-separated built-in rules.")
@click.option("--policy-file", "policy_files", multiple=True, type=click.Path(dir_okay=False),
              help="Extra rule JSON appended to the catalog (repeatable).")
@click.option("--best-policy/--no-best-policy", default=False, help="Add the per-step best catalog policy.")
@click.option("--optimum/--no-optimum", default=False, help="Add the per-step greedy optimum (fixed chains only).")
@click.option("--estimator", type=click.Choice(["prob", "indicator"]), default="prob",
              help="Expectancy from accumulated marginals or from sampled state counts.")
@click.option("--target", default="N", help="State whose expectancy drives policy selection.")
@ensemble_options
@output_options
def compare(model_ref, x_convention, policies, policy_files, best_policy, optimum, estimator, target,
            horizon, runs, workers, seed, out, fmt):
    """Compare policies on shared random paths (common random numbers)."""
    run = Run("compare", out, seed, model_ref, x_convention)
    catalog = _catalog(policies, policy_files)
    strategies = [FixedPolicy(rule) for rule in catalog]
    if best_policy:
        strategies.append(BestPolicy(catalog))
    if optimum:
        if run.model.dynamic:
            raise click.BadParameter("the optimum strategy requires fixed internal chains", param_hint="--optimum")
        strategies.append(Optimum(catalog))
    report = run_ensemble(run.model, strategies, horizon, runs, run.seed, target, workers)
    _write_report(run, report, fmt, estimator)
    run.finish({"policies": [rule.to_json() for rule in catalog], "best_policy": best_policy, "optimum": optimum,
                "estimator": estimator, "target": target, "horizon": horizon, "runs": runs,
                "x_convention": run.model.x_convention, "format": fmt})


@cli.command()
@model_options
@click.option("--state", "state_text", required=True, help="Current network state, e.g. 'U,N,O' or 'UNO'.")
@click.option("--mode", "--optimize", "mode", type=click.Choice(["greedy", "bruteforce"]), default="greedy")
@click.option("--max-edges", type=click.IntRange(min=0), default=DEFAULT_MAX_EDGES, help="Brute-force edge cap.")
@click.option("--target", default="N")
@output_options
def optimize(model_ref, x_convention, state_text, mode, max_edges, target, seed, out, fmt):
    """One-step optimum constraint matrix for a given network state."""
    run = Run("optimize", out, seed, model_ref, x_convention)
    model = run.model
    state = _parse_state(state_text, model)
    if mode == "greedy":
        c = optimize_greedy(state, model, target)
        value = float(constraint_expectancy(state, model, c, target))
    else:
        c, value = optimize_bruteforce(state, model, target, max_edges=max_edges)
    active = [{"source": int(j), "target": int(i)} for i, j in model.edges if c[i, j]]
    write_json(run.path("constraint.json"), {
        "mode": mode,
        "target": target,
        "state": model.states.decode(state),
        "expectancy": value,
        "matrix": c.astype(int).tolist(),
        "active_edges": active,
    })
    click.echo(f"{mode}: step-wise {target}-expectancy {value!r} with {len(active)}/{len(model.edges)} edges active")
    run.finish({"state": state_text, "mode": mode, "max_edges": max_edges, "target": target,
                "x_convention": model.x_convention})


@cli.command()
@model_options
@click.option("--policy", default="all")
@click.option("--policy-file", type=click.Path(dir_okay=False), default=None)
@click.option("--sample-family", type=click.IntRange(min=1), default=None,
              help="Sample this many random states instead of enumerating all m^n (lower-bound family).")
@click.option("--family-cap", type=click.IntRange(min=1), default=64, help="Maximum distinct H matrices.")
@click.option("--max-states", type=click.IntRange(min=1), default=3 ** 10, help="Exhaustive enumeration cap.")
@click.option("--depth", type=click.IntRange(min=1), default=4, help="Product length for the JSR bounds.")
@click.option("--horizon", type=click.IntRange(min=1), default=200, help="Steps per empirical path.")
@click.option("--runs", type=click.IntRange(min=1), default=20, help="Empirical ensemble size.")
@click.option("--initial", default=None, help="Initial labels for the empirical paths (default: random).")
@output_options
def analyze(model_ref, x_convention, policy, policy_file, sample_family, family_cap, max_states, depth,
            horizon, runs, initial, seed, out, fmt):
    """Steady-state report: family eigen data, RCP checks, JSR bounds, empirical spread."""
    run = Run("analyze", out, seed, model_ref, x_convention)
    model = run.model
    rule = _rule(policy, policy_file)
    family = enumerate_family(model, rule, cap=family_cap, max_states=max_states, sample=sample_family, seed=run.seed)
    members = [limit_exists(h, block_size=model.m) for h in family]
    rcp = rcp_conditions(family, depth=depth, block_size=model.m)
    start = _parse_state(initial, model) if initial else random_initial_states(run.seed, [0], model.n, model.m)[0]
    empirical = empirical_convergence(start, model, rule, horizon, runs, seed=run.seed)
    write_json(run.path("analysis.json"), {
        "policy": rule.to_json(),
        "family": {
            "size": len(family),
            "lower_bound": family.lower_bound,
            "members": [{"witness_state": model.states.decode(w), **r.to_json()}
                        for w, r in zip(family.witnesses, members)],
        },
        "rcp": rcp.to_json(),
        "empirical": {"initial": model.states.decode(start), **empirical.to_json()},
    })
    click.echo(f"family of {len(family)} matrices; RCP verdict: {rcp.verdict}")
    run.finish({"policy": rule.to_json(), "sample_family": sample_family, "family_cap": family_cap,
                "max_states": max_states, "depth": depth, "horizon": horizon, "runs": runs, "initial": initial,
                "x_convention": model.x_convention})


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from None


@cli.command()
@click.option("--kind", type=click.Choice(["random", "regular"]), default="random",
              help="random: directed G(n, p), param = p. regular: symmetric d-regular, param = degree.")
@click.option("--params", default="0.05,0.1,0.15,0.2,0.3", help="Comma-separated generator parameters.")
@click.option("--nodes", type=click.IntRange(min=1), default=30)
@click.option("--topology-seed", type=click.IntRange(min=0), default=0)
@click.option("--model-seed", type=click.IntRange(min=0), default=0, help="Seed of the random internal chains.")
@click.option("--policies", default=DEFAULT_CATALOG)
@click.option("--best-policy/--no-best-policy", default=False)
@click.option("--optimum/--no-optimum", default=False)
@click.option("--estimator", type=click.Choice(["prob", "indicator"]), default="prob")
@click.option("--target", default="N")
@ensemble_options
@output_options
def sweep(kind, params, nodes, topology_seed, model_seed, policies, best_policy, optimum, estimator, target,
          horizon, runs, workers, seed, out, fmt):
    """Policy comparison across generated topologies."""
    run = Run("sweep", out, seed)
    catalog = _catalog(policies, ())
    values = _floats(params)
    if kind == "regular" and any(v != int(v) for v in values):
        raise click.BadParameter("regular topologies need integer degrees", param_hint="--params")
    specs = [TopologySpec(kind, nodes, v, topology_seed) for v in values]
    result = topology_sweep(specs, catalog, horizon, runs, run.seed, model_seed, best_policy, optimum, target, workers)
    if fmt == "csv":
        rows = []
        for spec, report in zip(result.specs, result.reports):
            for name, state, value, err in report.rows(estimator):
                rows.append((spec.label, spec.kind, spec.param, report.meta["edges"] / nodes, name, state, value, err))
        _write_csv(run.path("sweep.csv"),
                   ["topology", "kind", "param", "mean_degree", "policy", "state", "expectancy", "stderr"], rows)
        plot = [(row[3], row[4], row[6]) for row in rows if row[5] == target]
        _write_csv(run.path("plot_degree.csv"), ["mean_degree", "series", "expectancy"], plot)
    else:
        obj = result.to_json()
        obj["estimator"] = estimator
        write_json(run.path("sweep.json"), obj)
    run.finish({"kind": kind, "params": values, "nodes": nodes, "topology_seed": topology_seed,
                "model_seed": model_seed, "policies": [rule.name for rule in catalog], "best_policy": best_policy,
                "optimum": optimum, "estimator": estimator, "target": target, "horizon": horizon, "runs": runs,
                "format": fmt})


def main(argv=None) -> int:
    """Console entry point; returns the process exit code instead of raising."""
    try:
        cli.main(args=argv, prog_name="dcim", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except (DCIMError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except Exception:
        click.echo("internal error:\n" + traceback.format_exc(), err=True)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
