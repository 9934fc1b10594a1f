"""Backup-CBF safety filter: the implicit-safe-set margin along the backup
rollout, collocation-based constraint assembly from flow sensitivities, and
the projection-QP filter built on them.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import FilterDecision, SafetySpec, alpha, margin_C, margin_S0
from .dynamics import (
    SensitivityTrace,
    flow_steps,
    saturate,
    step_offsets,
    variational_steps,
)
from .qp import QpProblem, solve_qp

__all__ = [
    "BackupCbfContext",
    "BcbfEvaluation",
    "collocation_offsets",
    "eval_h_bcbf",
    "assemble_constraints",
    "constraint_rows",
    "bcbf_filter",
    "bcbf_inactive",
]


@dataclass(frozen=True)
class BackupCbfContext:
    """Parameters of the backup-CBF filter.

    The collocation grid is ``n_collocation`` evenly spaced points spanning
    [0, t_b] inclusive; path constraints are enforced at each, the terminal
    constraint at t_b. ``norm_facets`` controls the polygonal outer
    approximation used when the input set carries a Euclidean norm bound.
    """

    model: object
    pi_b: object
    spec: SafetySpec
    t_b: float
    n_collocation: int = 25
    dt: float = 0.05
    qp_tol: float = 1e-8
    qp_max_iter: int = 200
    fd_eps: float = 1e-5
    norm_facets: int = 16
    inactive_factor: float = 10.0

    def __post_init__(self):
        if self.n_collocation < 2:
            raise ValueError("need at least 2 collocation points")
        if self.t_b <= 0 or self.dt <= 0:
            raise ValueError("horizons and steps must be positive")


@dataclass(frozen=True)
class BcbfEvaluation:
    h_bcbf: float
    constraints: list
    backup_trace: SensitivityTrace


def collocation_offsets(ctx: BackupCbfContext) -> np.ndarray:
    return np.linspace(0.0, ctx.t_b, ctx.n_collocation)


def _merged_grid(ctx: BackupCbfContext):
    """Integration grid = dt grid merged with collocation times; flags mark
    which grid entries are collocation samples."""
    coll = collocation_offsets(ctx)
    base = step_offsets(ctx.t_b, ctx.dt)
    grid = np.union1d(base, coll)
    keep = np.concatenate(([True], np.diff(grid) > 1e-12))
    grid = grid[keep]
    is_coll = np.array([bool(np.any(np.abs(coll - g) <= 1e-12)) for g in grid])
    return grid, is_coll


def eval_h_bcbf(ctx: BackupCbfContext, t, x):
    """Minimum safety margin along the backup rollout from x.

    min( terminal-set margin at the horizon end,
         min over collocation points of the constraint-set margin ).
    Nonnegative exactly when x belongs to the implicit safe set (with the
    matching slack). Batch-transparent over leading axes of x.
    """
    grid, is_coll = _merged_grid(ctx)
    h_min = None
    state = None
    for k, t_abs, z, _u in flow_steps(ctx.model, ctx.pi_b, x, t, grid):
        state = z
        if is_coll[k]:
            m = margin_C(ctx.spec, t_abs, z)
            h_min = m if h_min is None else np.minimum(h_min, m)
    term = margin_S0(ctx.spec, float(t) + float(grid[-1]), state)
    h = np.minimum(h_min, term)
    return float(h) if np.ndim(h) == 0 else h


def _margin_gradient(margin_fn, spec, t_abs, z, eps_rel):
    """Central finite-difference state gradient of a margin function."""
    z = np.asarray(z, dtype=float)
    n = z.shape[-1]
    eps = eps_rel * np.maximum(1.0, np.abs(z))
    stack = np.broadcast_to(z, (2 * n,) + z.shape).copy()
    for i in range(n):
        stack[i, ..., i] += eps[..., i]
        stack[n + i, ..., i] -= eps[..., i]
    vals = margin_fn(spec, t_abs, stack)
    grad = np.empty(z.shape)
    for i in range(n):
        grad[..., i] = (vals[i] - vals[n + i]) / (2.0 * eps[..., i])
    return grad


def constraint_rows(ctx: BackupCbfContext, t, x, collect_trace: bool = False):
    """Assemble the filter's inequality rows a^T u >= b in input space.

    For each collocation point with state z and flow Jacobian Q:
    a = (grad_h(z)^T Q g(x))^T, b = -grad_h(z)^T Q f(x) - alpha(h(z)), with
    the constraint-set margin on path rows and the terminal-set margin on the
    single terminal row. Returns (A, b, h_bcbf[, trace]); batched over leading
    axes of x with A of shape (..., R, m).
    """
    x = np.asarray(x, dtype=float)
    grid, is_coll = _merged_grid(ctx)
    f0 = ctx.model.drift(t, x)
    g0 = ctx.model.input_matrix(t, x)

    a_rows, b_rows = [], []
    h_min = None
    trace_t, trace_x, trace_q = [], [], []
    last = None
    for k, t_abs, z, q in variational_steps(ctx.model, ctx.pi_b, x, t, grid, ctx.fd_eps):
        last = (t_abs, z, q)
        if not is_coll[k]:
            continue
        if collect_trace:
            trace_t.append(t_abs - float(t))
            trace_x.append(z)
            trace_q.append(q)
        h_val = margin_C(ctx.spec, t_abs, z)
        grad = _margin_gradient(margin_C, ctx.spec, t_abs, z, ctx.fd_eps)
        w = np.einsum("...i,...ij->...j", grad, q)
        a_rows.append(np.einsum("...j,...jm->...m", w, g0))
        b_rows.append(-np.einsum("...j,...j->...", w, f0) - alpha(ctx.spec.rate, h_val))
        h_min = h_val if h_min is None else np.minimum(h_min, h_val)

    t_abs, z, q = last
    h_term = margin_S0(ctx.spec, t_abs, z)
    grad = _margin_gradient(margin_S0, ctx.spec, t_abs, z, ctx.fd_eps)
    w = np.einsum("...i,...ij->...j", grad, q)
    a_rows.append(np.einsum("...j,...jm->...m", w, g0))
    b_rows.append(-np.einsum("...j,...j->...", w, f0) - alpha(ctx.spec.rate, h_term))

    amat = np.stack(a_rows, axis=-2)
    bvec = np.stack(b_rows, axis=-1)
    h_bcbf = np.minimum(h_min, h_term)
    if collect_trace:
        trace = SensitivityTrace(
            times=np.array(trace_t),
            states=np.stack(trace_x, axis=0),
            jacobians=np.stack(trace_q, axis=0),
        )
        return amat, bvec, h_bcbf, trace
    return amat, bvec, h_bcbf


def assemble_constraints(ctx: BackupCbfContext, t, x) -> list:
    """Constraint rows for a single state, as a list of (a, b) pairs."""
    amat, bvec, _h = constraint_rows(ctx, t, x)
    return [(amat[i], float(bvec[i])) for i in range(amat.shape[0])]


def evaluate(ctx: BackupCbfContext, t, x) -> BcbfEvaluation:
    amat, bvec, h, trace = constraint_rows(ctx, t, x, collect_trace=True)
    rows = [(amat[i], float(bvec[i])) for i in range(amat.shape[0])]
    return BcbfEvaluation(h_bcbf=float(h), constraints=rows, backup_trace=trace)


def _norm_ball_rows(limit: float, facets: int):
    """Tangent half-planes outer-approximating the norm ball (2-d inputs)."""
    rows = []
    for j in range(facets):
        theta = 2.0 * math.pi * j / facets
        d = np.array([math.cos(theta), math.sin(theta)])
        rows.append((-d, -limit))
    return rows


def bcbf_filter(ctx: BackupCbfContext, pi_nom, t, x) -> FilterDecision:
    """One filter step: project the nominal input onto the assembled rows.

    Commits the QP solution; when the nominal input already satisfies every
    row the decision is flagged inactive (source 'nominal'). An infeasible QP
    falls back to the saturated backup input.
    """
    start = time.perf_counter()
    x = np.asarray(x, dtype=float)
    u_nom = np.asarray(pi_nom(t, x), dtype=float)
    amat, bvec, h_bcbf = constraint_rows(ctx, t, x)
    rows = [(amat[i], float(bvec[i])) for i in range(amat.shape[0])]
    bounds = ctx.model.bounds
    if bounds.norm_limit is not None and u_nom.shape[-1] == 2:
        rows = rows + _norm_ball_rows(bounds.norm_limit, ctx.norm_facets)

    sol = solve_qp(QpProblem(u_nom, rows, bounds), tol=ctx.qp_tol, max_iter=ctx.qp_max_iter)
    elapsed = (time.perf_counter() - start) * 1e3

    if sol.status == "optimal":
        inactive = bool(np.all(np.abs(sol.u_star - u_nom) <= ctx.inactive_factor * ctx.qp_tol))
        u_commit = saturate(bounds, sol.u_star)
        return FilterDecision(
            input=u_commit,
            source="nominal" if inactive else "qp",
            t_s_star=None,
            compute_ms=elapsed,
            diagnostics={
                "h_bcbf": float(h_bcbf),
                "qp_status": sol.status,
                "kkt_residual": sol.kkt_residual,
                "filter_inactive": inactive,
            },
        )
    u_commit = saturate(bounds, ctx.pi_b(t, x))
    return FilterDecision(
        input=u_commit,
        source="backup",
        t_s_star=None,
        compute_ms=elapsed,
        diagnostics={
            "h_bcbf": float(h_bcbf),
            "qp_status": sol.status,
            "kkt_residual": sol.kkt_residual,
            "filter_inactive": False,
            "fallback": True,
        },
    )


def bcbf_inactive(ctx: BackupCbfContext, pi_nom, t, x):
    """Filter-inactive membership: the nominal input satisfies every
    assembled row within the QP tolerance. Batch-transparent."""
    x = np.asarray(x, dtype=float)
    u_nom = np.asarray(pi_nom(t, x), dtype=float)
    amat, bvec, _h = constraint_rows(ctx, t, x)
    slack = np.einsum("...rm,...m->...r", amat, u_nom) - bvec
    ok = np.all(slack >= -ctx.qp_tol, axis=-1)
    return bool(ok) if np.ndim(ok) == 0 else ok
