"""Convergence diagnostics for the family of total influence matrices.

The set of matrices the process can visit is finite (one per distinct
activation signature). Products of its members converge when every member
has a dominant eigenvalue 1, the members share their eigenvalue-1 left
eigenspace, and the joint spectral radius away from that eigenspace is
below one. The checks here are numerical: spectral tests with tolerance
bands, bounded-depth joint spectral radius brackets, and ensembles of
sampled paths.

Joint spectral radius bounds are computed on the zero-block-sum subspace
``{x : every m-block of x sums to 0}``. Every valid total influence matrix
leaves it invariant (it maps block-probability vectors to block-probability
vectors), and it is exactly the set of differences between two valid
probability vectors, so contraction there is what convergence of the
process requires.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import null_space, subspace_angles
from scipy.spatial.distance import pdist

from .errors import SearchSpaceError
from .model import (
    InfluenceModel,
    build_constraint_matrix,
    build_effective_influence,
    build_total_influence,
    internal_mc_index,
)
from .simulation import draw_uniforms, node_marginals, sample_next

DOMINANCE_BAND = 1e-9
UNIT_CIRCLE_TOL = 1e-12
ANGLE_TOL = 1e-8


class Verdict(str, Enum):
    CONVERGES = "converges"
    OSCILLATES = "oscillates"
    INDETERMINATE = "indeterminate"


def _inf_norm(a) -> float:
    return float(np.abs(a).sum(axis=-1).max()) if np.size(a) else 0.0


def _eigen_json(values, limit=12):
    order = np.argsort(-np.abs(values), kind="stable")[:limit]
    return [{"re": float(values[k].real), "im": float(values[k].imag), "abs": float(abs(values[k]))} for k in order]


@dataclass
class LimitReport:
    verdict: Verdict
    dominance: bool
    eigenvalues: np.ndarray
    spectral_gap: float
    power_converged: bool
    power_steps: int | None = None
    period: int | None = None
    power_limit: np.ndarray | None = None
    stationary: np.ndarray | None = None
    projector_error: float | None = None
    diagnostic: str = ""

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "dominance": self.dominance,
            "spectral_gap": self.spectral_gap,
            "leading_eigenvalues": _eigen_json(self.eigenvalues) if self.eigenvalues is not None else None,
            "power_converged": self.power_converged,
            "power_steps": self.power_steps,
            "period": self.period,
            "stationary": None if self.stationary is None else self.stationary.tolist(),
            "projector_error": self.projector_error,
            "diagnostic": self.diagnostic,
        }


def _normalise_left(w, block_size):
    w = np.real_if_close(w, tol=1e6).real
    blocks = w.reshape(-1, block_size)
    scale = blocks.sum(axis=1).mean()
    return w / scale if scale != 0 else w


def limit_exists(h, tol=1e-10, band=DOMINANCE_BAND, block_size=None, max_squarings=64, max_period=16) -> LimitReport:
    """Does ``lim_t H^t`` exist with a dominant eigenvalue at 1?

    Spectral test first (dominance iff an eigenvalue sits at 1 and every
    other modulus is below ``1 - band``), cross-checked by repeated squaring
    until ``H^(2T)`` and ``H^(2T) H`` both agree with ``H^T`` to ``tol``.
    Eigenvalues on the unit circle other than a single 1 (repeated 1,
    periodic chains) give ``oscillates``; a gap inside the tolerance band or
    a stalled power iteration gives ``indeterminate``.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"h must be square, got shape {h.shape}")
    size = h.shape[0]
    block_size = block_size or size
    try:
        values = np.linalg.eigvals(h)
    except np.linalg.LinAlgError as exc:
        return LimitReport(Verdict.INDETERMINATE, False, None, float("nan"), False, diagnostic=f"eigensolver failed: {exc}")

    at_one = int(np.argmin(np.abs(values - 1)))
    has_one = abs(values[at_one] - 1) < band
    others = np.delete(values, at_one)
    second = float(np.abs(others).max()) if others.size else 0.0
    gap = 1.0 - second
    dominance = bool(has_one and gap >= band)

    # repeated squaring cross-check
    p, converged, steps, limit = h, False, None, None
    for k in range(max_squarings):
        q = p @ p
        if not np.all(np.isfinite(q)) or _inf_norm(q) > 1e12:
            break
        if _inf_norm(q - p) < tol and _inf_norm(q @ h - q) < tol:
            converged, steps, limit = True, 2 ** (k + 1), q
            break
        p = q

    period = None
    if not converged and np.all(np.isfinite(p)):
        shifted = p
        for lag in range(1, max_period + 1):
            shifted = shifted @ h
            if _inf_norm(shifted - p) < max(tol, 1e-8):
                period = lag
                break

    report = LimitReport(Verdict.INDETERMINATE, dominance, values, gap, converged, steps, period, limit)
    if dominance:
        left_vals, left_vecs = np.linalg.eig(h.T)
        w = left_vecs[:, int(np.argmin(np.abs(left_vals - 1)))]
        right_vals, right_vecs = np.linalg.eig(h)
        v = right_vecs[:, int(np.argmin(np.abs(right_vals - 1)))]
        projector = np.real(np.outer(v, w) / (w @ v))
        report.stationary = _normalise_left(w, block_size)
        if converged:
            report.verdict = Verdict.CONVERGES
            report.projector_error = _inf_norm(limit - projector)
        else:
            report.diagnostic = "eigenvalue 1 dominates but powers did not settle within the squaring budget"
    else:
        radius = float(np.abs(values).max())
        if radius > 1 + band:
            report.diagnostic = f"spectral radius {radius:.6g} exceeds 1"
        elif not has_one and radius < 1 - band:
            report.diagnostic = "no eigenvalue at 1: powers decay to zero"
        elif has_one and abs(gap) <= UNIT_CIRCLE_TOL:
            report.verdict = Verdict.OSCILLATES
            ones = int(np.sum(np.abs(values - 1) < band))
            if converged:
                report.diagnostic = (f"eigenvalue 1 has multiplicity {ones}: powers settle but the limit "
                                     "depends on the initial vector")
            else:
                report.diagnostic = "eigenvalue 1 does not dominate: other eigenvalues lie on the unit circle"
        elif not has_one and abs(1 - radius) <= UNIT_CIRCLE_TOL:
            report.verdict = Verdict.OSCILLATES
            report.diagnostic = "unit-modulus eigenvalues without an eigenvalue at 1"
        else:
            report.diagnostic = f"spectral gap {gap:.3g} inside the tolerance band {band:g}"
    return report


# --------------------------------------------------------------------------
# matrix families


@dataclass
class MatrixFamily:
    """Distinct total influence matrices, indexed in first-seen order."""

    members: list
    signatures: list = field(default_factory=list)
    witnesses: list = field(default_factory=list)
    block_size: int | None = None
    lower_bound: bool = False

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


def _as_family(family) -> MatrixFamily:
    if isinstance(family, MatrixFamily):
        return family
    return MatrixFamily([np.asarray(h, dtype=float) for h in family])


def _state_chunks(n, m, chunk=4096):
    it = itertools.product(range(m), repeat=n)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield np.array(block, dtype=np.intp).reshape(-1, n)


def enumerate_family(model: InfluenceModel, rule, cap=64, max_states=3 ** 10, sample=None, seed=0) -> MatrixFamily:
    """Every distinct H reachable under ``rule``, keyed by the (C, x) signature.

    Sweeps all ``m**n`` joint states when that count is within
    ``max_states``; otherwise refuses unless ``sample`` gives a number of
    random states to draw, in which case the result is flagged as a lower
    bound on the true family.
    """
    n, m = model.n, model.m
    total = m ** n
    if sample is None:
        if total > max_states:
            raise SearchSpaceError(
                f"{m}^{n} = {total} joint states exceeds the enumeration cap of {max_states}; "
                "use sampling to obtain a lower-bound family"
            )
        chunks = _state_chunks(n, m)
    else:
        rng = np.random.default_rng(seed)
        states = rng.integers(m, size=(int(sample), n))
        chunks = (states[k:k + 4096] for k in range(0, len(states), 4096))

    seen = {}
    for states in chunks:
        cs = build_constraint_matrix(rule, states, model)
        xs = internal_mc_index(cs, model)
        for state, c, x in zip(states, cs, xs):
            key = c.tobytes() + x.tobytes()
            if key in seen:
                continue
            if len(seen) >= cap:
                raise SearchSpaceError(f"more than {cap} distinct total influence matrices (family cap)")
            seen[key] = (c.copy(), x.copy(), state.copy())

    family = MatrixFamily([], block_size=m, lower_bound=sample is not None)
    for c, x, state in seen.values():
        e = build_effective_influence(model.d, c)
        family.members.append(build_total_influence(e, model, c))
        family.signatures.append((c, x))
        family.witnesses.append(state)
    return family


def left_eigenspace(h, tol=1e-9) -> np.ndarray:
    """Orthonormal basis (columns) of ``{w : w H = w}``."""
    h = np.asarray(h, dtype=float)
    a = h.T - np.eye(h.shape[0])
    _, s, vt = np.linalg.svd(a)
    return vt[s < tol * max(1.0, s[0] if s.size else 1.0)].T


def zero_block_sum_basis(size, block_size) -> np.ndarray:
    blocks = np.kron(np.eye(size // block_size), np.ones((block_size, 1)))
    return null_space(blocks.T)


@dataclass
class JSRBounds:
    lower: float
    upper: float
    depth: int
    levels: list = field(default_factory=list)

    def below_one(self):
        """True / False when conclusive, None when ``[lower, upper]`` contains 1."""
        if self.upper < 1:
            return True
        if self.lower >= 1:
            return False
        return None

    def to_json(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "depth": self.depth, "levels": self.levels}


def restricted_members(family, block_size=None, restrict=True):
    family = _as_family(family)
    mats = [np.asarray(h, dtype=float) for h in family.members]
    if not restrict:
        return mats
    size = mats[0].shape[0]
    q = zero_block_sum_basis(size, block_size or family.block_size or size)
    return [q.T @ h @ q for h in mats]


def estimate_jsr(family, depth, block_size=None, restrict=True, max_products=1 << 16) -> JSRBounds:
    """Bracket the joint spectral radius by enumerating products up to ``depth``.

    ``lower = max_l max_P rho(P)^(1/l)`` and ``upper = min_l max_P ||P||_2^(1/l)``
    over products of length ``l <= depth``; both are valid at every length,
    so the bracket tightens monotonically with depth.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    mats = restricted_members(family, block_size, restrict)
    k = len(mats)
    if k == 0:
        raise ValueError("family is empty")
    count = sum(k ** l for l in range(1, depth + 1))
    if count > max_products:
        raise SearchSpaceError(f"{k} members to depth {depth} needs {count} products, above the cap of {max_products}")
    if mats[0].size == 0:
        return JSRBounds(0.0, 0.0, depth, [])
    lower, upper, levels = 0.0, np.inf, []
    level = mats
    for length in range(1, depth + 1):
        if length > 1:
            level = [p @ a for p in level for a in mats]
        rho = max(float(np.abs(np.linalg.eigvals(p)).max()) for p in level) ** (1 / length)
        norm = max(float(np.linalg.norm(p, 2)) for p in level) ** (1 / length)
        lower, upper = max(lower, rho), min(upper, norm)
        levels.append({"length": length, "spectral": rho, "norm": norm})
    return JSRBounds(lower, upper, depth, levels)


@dataclass
class RCPReport:
    members: list
    all_converge: bool
    eigenspace_dims: list
    max_angle: float
    shared_eigenspace: bool
    jsr: JSRBounds | None
    jsr_below_one: bool | None
    verdict: str
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "all_members_converge": self.all_converge,
            "shared_eigenspace": self.shared_eigenspace,
            "max_principal_angle": self.max_angle,
            "eigenspace_dims": self.eigenspace_dims,
            "jsr": None if self.jsr is None else self.jsr.to_json(),
            "jsr_below_one": self.jsr_below_one,
            "members": [member.to_json() for member in self.members],
            "notes": self.notes,
        }


_VERDICT_CLASS = {Verdict.CONVERGES: "satisfied", Verdict.OSCILLATES: "violated", Verdict.INDETERMINATE: "inconclusive"}


def rcp_conditions(family, tol=1e-10, angle_tol=ANGLE_TOL, depth=4, block_size=None, max_products=1 << 14) -> RCPReport:
    """Check the sufficient conditions for convergence of infinite products.

    The overall verdict is ``satisfied``, ``violated`` or ``inconclusive``
    (some member is indeterminate, or the JSR bracket contains 1). A
    one-member family reduces to that member's limit test.
    """
    family = _as_family(family)
    if len(family) == 0:
        raise ValueError("family is empty")
    block_size = block_size or family.block_size
    members = [limit_exists(h, tol=tol, block_size=block_size) for h in family.members]
    all_converge = all(r.verdict is Verdict.CONVERGES for r in members)
    spaces = [left_eigenspace(h) for h in family.members]
    dims = [s.shape[1] for s in spaces]
    max_angle = 0.0
    shared = dims[0] > 0 and len(set(dims)) == 1
    if shared:
        for other in spaces[1:]:
            max_angle = max(max_angle, float(np.max(subspace_angles(spaces[0], other))))
        shared = max_angle < angle_tol
    else:
        max_angle = float("inf") if len(spaces) > 1 else 0.0
    notes = []
    if family.lower_bound:
        notes.append("family was sampled: it is a lower bound on the reachable set")

    jsr, below = None, None
    if len(family) == 1:
        mat = restricted_members(family, block_size)[0]
        rho = float(np.abs(np.linalg.eigvals(mat)).max()) if mat.size else 0.0
        jsr = JSRBounds(rho, rho, 1, [{"length": 1, "spectral": rho, "norm": rho}])
        below = rho < 1 - DOMINANCE_BAND
        verdict = _VERDICT_CLASS[members[0].verdict]
    else:
        k = len(family)
        usable = max((l for l in range(1, depth + 1) if sum(k ** i for i in range(1, l + 1)) <= max_products), default=0)
        if usable:
            jsr = estimate_jsr(family, usable, block_size, max_products=max_products)
            below = jsr.below_one()
            if usable < depth:
                notes.append(f"JSR depth reduced from {depth} to {usable} by the product cap")
        else:
            notes.append(f"JSR skipped: {k} members exceed the product cap {max_products}")
        flags = [
            False if any(r.verdict is Verdict.OSCILLATES for r in members) else
            (None if not all_converge else True),
            shared,
            below,
        ]
        verdict = "violated" if False in flags else ("inconclusive" if None in flags else "satisfied")
    return RCPReport(members, all_converge, dims, max_angle, shared, jsr, below, verdict, notes)


# --------------------------------------------------------------------------
# sampled paths


@dataclass
class ConvergenceReport:
    runs: int
    horizon: int
    tol: float
    window: int
    converged: np.ndarray
    converged_at: np.ndarray
    final_averages: np.ndarray
    spread: float
    mean: np.ndarray
    max_block_error: float

    def to_json(self) -> dict:
        return {
            "runs": self.runs,
            "horizon": self.horizon,
            "tol": self.tol,
            "window": self.window,
            "converged_runs": int(self.converged.sum()),
            "converged_at": [None if t < 0 else int(t) for t in self.converged_at],
            "spread": self.spread,
            "mean_average": self.mean.tolist(),
            "max_block_error": self.max_block_error,
        }


def empirical_convergence(initial, model: InfluenceModel, rule, horizon, ensemble, tol=1e-3, seed=0, window=None) -> ConvergenceReport:
    """Track running time-averages of the step-wise marginals over an ensemble of paths.

    A run is flagged converged when the running average moved by less than
    ``tol`` (L-infinity) over its last window. ``spread`` is the largest
    pairwise L-infinity distance between the final averages of converged
    runs; near zero suggests a path-independent limit.
    """
    if horizon < 1 or ensemble < 1:
        raise ValueError("horizon and ensemble must be >= 1")
    window = window or max(1, horizon // 20)
    n, m = model.n, model.m
    states = np.broadcast_to(np.asarray(initial, dtype=np.intp), (ensemble, n)).copy()
    u = draw_uniforms(seed, range(ensemble), n, horizon)
    total = np.zeros((ensemble, n, m))
    previous = None
    converged = np.zeros(ensemble, dtype=bool)
    converged_at = np.full(ensemble, -1)
    max_block_error = 0.0
    for t in range(horizon):
        c = build_constraint_matrix(rule, states, model)
        p = node_marginals(states, model, c)
        total += p
        states = sample_next(states, model, c, u[:, :, t])
        if (t + 1) % window == 0 or t + 1 == horizon:
            average = total / (t + 1)
            max_block_error = max(max_block_error, float(np.abs(average.sum(axis=-1) - 1).max()))
            if previous is not None:
                change = np.abs(average - previous).reshape(ensemble, -1).max(axis=1)
                converged = change < tol
                newly = converged & (converged_at < 0)
                converged_at[newly] = t + 1
                converged_at[~converged] = -1
            previous = average
    final = total / horizon
    flat = final.reshape(ensemble, -1)
    picked = flat[converged]
    spread = float(pdist(picked, "chebyshev").max()) if len(picked) > 1 else 0.0
    return ConvergenceReport(ensemble, horizon, tol, window, converged, converged_at, final, spread,
                             final.mean(axis=0), max_block_error)
