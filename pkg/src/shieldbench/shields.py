"""Predictive-shield decision rules: model-predictive shielding (single
switching time) and the gatekeeper search over a switching-time grid, with a
stateful monitor, a process-pool parallel search, and filter-inactive
membership tests for all three methods.
"""

from __future__ import annotations

import hashlib
import os
import pickle
import time
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import multiprocessing as mp
import numpy as np

from .backup_cbf import BackupCbfContext, bcbf_inactive
from .core import FilterDecision, SafetySpec
from .dynamics import saturate
from .validity import (
    BatchValidity,
    ValidityReport,
    backup_validity,
    build_candidate,
    check_valid,
    nominal_prefix,
)

__all__ = [
    "ShieldContext",
    "MonitorState",
    "FilterContexts",
    "GkWorkerPool",
    "default_workers",
    "mps_step",
    "gk_search",
    "gk_search_parallel",
    "gk_step",
    "mps_inactive",
    "gk_inactive",
    "inactive_membership",
    "shutdown_pools",
]


@dataclass(frozen=True)
class ShieldContext:
    """Shared data of the predictive shields.

    ``delta_t`` is the monitor interval, ``t_b`` the backup horizon, ``t_h``
    the gatekeeper search horizon (a whole multiple of delta_t), and ``dt``
    the candidate rollout step (delta_t must be a whole multiple of dt so
    switch states land on rollout samples).
    """

    model: object
    pi_nom: object
    pi_b: object
    spec: SafetySpec
    delta_t: float
    t_b: float
    t_h: float
    dt: float

    def __post_init__(self):
        if not (0 < self.delta_t <= self.t_h):
            raise ValueError("need 0 < delta_t <= t_h")
        if self.t_b < 0 or self.dt <= 0:
            raise ValueError("t_b >= 0 and dt > 0 required")
        if abs(self.t_h / self.delta_t - round(self.t_h / self.delta_t)) > 1e-9:
            raise ValueError("t_h must be a whole multiple of delta_t")
        if abs(self.delta_t / self.dt - round(self.delta_t / self.dt)) > 1e-9:
            raise ValueError("delta_t must be a whole multiple of dt")

    @property
    def n_h(self) -> int:
        return int(round(self.t_h / self.delta_t))

    @property
    def stride(self) -> int:
        """Rollout samples per monitor interval."""
        return int(round(self.delta_t / self.dt))

    @property
    def ts_grid(self) -> np.ndarray:
        """Switching-time grid {0, delta_t, ..., t_h}."""
        return self.delta_t * np.arange(self.n_h + 1)


@dataclass(frozen=True)
class MonitorState:
    """Gatekeeper monitor memory: remaining certified nominal duration."""

    certified_t_s: float = 0.0
    last_search_time: float = float("-inf")


@dataclass(frozen=True)
class FilterContexts:
    shield: ShieldContext
    bcbf: BackupCbfContext | None = None


def default_workers() -> int:
    env = os.environ.get("SHIELD_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def mps_step(ctx: ShieldContext, t_k: float, x_k) -> FilterDecision:
    """Single-candidate shield: nominal iff the candidate with switching time
    delta_t is valid, otherwise the saturated backup input."""
    start = time.perf_counter()
    candidate = build_candidate(
        ctx.model, ctx.pi_nom, ctx.pi_b, x_k, t_k, ctx.delta_t, ctx.t_b, ctx.dt
    )
    report = check_valid(candidate, ctx.spec)
    elapsed = (time.perf_counter() - start) * 1e3
    if report.valid:
        return FilterDecision(
            input=np.asarray(ctx.pi_nom(t_k, x_k), dtype=float),
            source="nominal",
            t_s_star=ctx.delta_t,
            compute_ms=elapsed,
            diagnostics={"reports": [report]},
        )
    return FilterDecision(
        input=saturate(ctx.model.bounds, ctx.pi_b(t_k, x_k)),
        source="backup",
        t_s_star=0.0,
        compute_ms=elapsed,
        diagnostics={"reports": [report]},
    )


def gk_search(ctx: ShieldContext, t_k: float, x_k):
    """Sequential switching-time search, largest candidate first.

    Scans T_S = t_h, t_h - delta_t, ..., 0 and returns the first valid
    switching time (0 when none is valid; a valid 0 is recorded for
    diagnostics but still means the backup is committed). The nominal segment
    is rolled out once; each candidate reuses its prefix, which is bitwise
    identical to a fresh shorter rollout on the same step grid.
    """
    traj, prefix_min, prefix_fv = nominal_prefix(
        ctx.model, ctx.pi_nom, ctx.spec, x_k, t_k, ctx.t_h, ctx.dt
    )
    reports = []
    for i in range(ctx.n_h, -1, -1):
        t_s = float(ctx.ts_grid[i])
        idx = i * ctx.stride
        if not np.isnan(prefix_fv[idx]):
            # the nominal segment already violates; no rollout needed
            reports.append(
                ValidityReport(
                    valid=False,
                    min_margin_c=float(prefix_min[idx]),
                    terminal_margin_s0=float("nan"),
                    first_violation_time=float(prefix_fv[idx]),
                    t_s=t_s,
                )
            )
            continue
        res = backup_validity(
            ctx.model,
            ctx.pi_b,
            ctx.spec,
            float(traj.times[idx]),
            traj.states[idx],
            ctx.t_b,
            ctx.dt,
            prefix_min_c=prefix_min[idx],
            prefix_first_violation=prefix_fv[idx],
            early_stop=True,
        )
        report = res.report(t_s=t_s)
        reports.append(report)
        if report.valid:
            return t_s, reports
    return 0.0, reports


# --- parallel search -------------------------------------------------------

_WORKER_CTX = None


def _pool_init(payload: bytes):
    global _WORKER_CTX
    _WORKER_CTX = pickle.loads(payload)


def _pool_eval(task):
    """Evaluate one chunk of candidates as a single batched rollout.

    Candidates whose nominal prefix already violates are skipped (invalid
    without a rollout), mirroring the sequential scan's verdicts exactly.
    """
    t_switch, x_switch, pmin, pfv = task
    model, pi_b, spec, t_b, dt = _WORKER_CTX
    n = len(t_switch)
    valid = np.zeros(n, dtype=bool)
    min_c = np.array(pmin, dtype=float, copy=True)
    term = np.full(n, np.nan)
    first_t = np.array(pfv, dtype=float, copy=True)
    todo = np.isnan(pfv)
    if np.any(todo):
        res = backup_validity(
            model, pi_b, spec, t_switch[todo], x_switch[todo], t_b, dt,
            prefix_min_c=pmin[todo], prefix_first_violation=pfv[todo],
        )
        valid[todo] = res.valid
        min_c[todo] = res.min_margin_c
        term[todo] = res.terminal_margin_s0
        first_t[todo] = res.first_violation_time
    return valid, min_c, term, first_t


class GkWorkerPool:
    """Persistent process pool evaluating candidate chunks for one context.

    Workers receive the (model, backup policy, spec, horizon, step) bundle at
    start-up; each search ships only switch states and prefix data. Every
    worker evaluates its chunk as one batched rollout.
    """

    def __init__(self, ctx: ShieldContext, workers: int):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.ctx = ctx
        self.workers = workers
        payload = pickle.dumps((ctx.model, ctx.pi_b, ctx.spec, ctx.t_b, ctx.dt))
        self._executor = ProcessPoolExecutor(
            max_workers=workers,
            mp_context=mp.get_context("fork"),
            initializer=_pool_init,
            initargs=(payload,),
        )

    def search(self, t_k: float, x_k):
        ctx = self.ctx
        traj, prefix_min, prefix_fv = nominal_prefix(
            ctx.model, ctx.pi_nom, ctx.spec, x_k, t_k, ctx.t_h, ctx.dt
        )
        order = np.arange(ctx.n_h, -1, -1)  # descending T_S indices
        chunks = np.array_split(order, min(self.workers, len(order)))
        futures = []
        for chunk in chunks:
            idxs = chunk * ctx.stride
            task = (
                traj.times[idxs],
                traj.states[idxs],
                prefix_min[idxs],
                prefix_fv[idxs],
            )
            futures.append(self._executor.submit(_pool_eval, task))

        reports = []
        t_s_star = 0.0
        for chunk, fut in zip(chunks, futures):
            valid, min_c, term, first_t = fut.result()
            res = BatchValidity(
                np.asarray(valid), np.asarray(min_c),
                np.asarray(term), np.asarray(first_t),
            )
            for j, i in enumerate(chunk):
                t_s = float(ctx.ts_grid[i])
                reports.append(res.report(i=j, t_s=t_s))
                if reports[-1].valid and t_s > t_s_star:
                    t_s_star = t_s
        return t_s_star, reports

    def close(self):
        self._executor.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


_POOL_CACHE: "OrderedDict[tuple, GkWorkerPool]" = OrderedDict()
_POOL_CACHE_MAX = 4


def _cached_pool(ctx: ShieldContext, workers: int) -> GkWorkerPool:
    key = (hashlib.sha1(pickle.dumps(ctx)).hexdigest(), workers)
    pool = _POOL_CACHE.get(key)
    if pool is None:
        pool = GkWorkerPool(ctx, workers)
        _POOL_CACHE[key] = pool
        while len(_POOL_CACHE) > _POOL_CACHE_MAX:
            _k, old = _POOL_CACHE.popitem(last=False)
            old.close()
    else:
        _POOL_CACHE.move_to_end(key)
    return pool


def shutdown_pools():
    while _POOL_CACHE:
        _k, pool = _POOL_CACHE.popitem()
        pool.close()


def gk_search_parallel(ctx: ShieldContext, t_k: float, x_k, workers: int, pool: GkWorkerPool | None = None):
    """Evaluate every grid candidate independently and take the largest valid
    switching time. Bit-identical to :func:`gk_search` for every input and
    any worker count; reports cover all candidates (the sequential scan stops
    at the first hit)."""
    if pool is None:
        pool = _cached_pool(ctx, workers)
    return pool.search(t_k, x_k)


def gk_step(
    ctx: ShieldContext,
    monitor: MonitorState,
    t_k: float,
    x_k,
    trigger: str = "every_step",
    workers: int | None = None,
    pool: GkWorkerPool | None = None,
):
    """One monitor update: re-search or decrement the stored certificate,
    then commit nominal iff the certified duration is positive.

    ``trigger`` 'every_step' re-searches at every update (the default used
    for metrics); 'certificate' re-searches only when the stored certificate
    has run down to one monitor interval.
    """
    if trigger not in ("every_step", "certificate"):
        raise ValueError(f"unknown trigger policy {trigger!r}")
    start = time.perf_counter()
    do_search = trigger == "every_step" or monitor.certified_t_s <= ctx.delta_t + 1e-12
    reports = []
    if do_search:
        if workers is not None and workers > 1 or pool is not None:
            t_s_star, reports = gk_search_parallel(ctx, t_k, x_k, workers or default_workers(), pool)
        else:
            t_s_star, reports = gk_search(ctx, t_k, x_k)
        new_state = MonitorState(certified_t_s=t_s_star, last_search_time=t_k)
    else:
        new_state = MonitorState(
            certified_t_s=max(monitor.certified_t_s - ctx.delta_t, 0.0),
            last_search_time=monitor.last_search_time,
        )
    elapsed = (time.perf_counter() - start) * 1e3

    if new_state.certified_t_s > 0.0:
        decision = FilterDecision(
            input=np.asarray(ctx.pi_nom(t_k, x_k), dtype=float),
            source="nominal",
            t_s_star=new_state.certified_t_s,
            compute_ms=elapsed,
            diagnostics={"reports": reports, "searched": do_search},
        )
    else:
        decision = FilterDecision(
            input=saturate(ctx.model.bounds, ctx.pi_b(t_k, x_k)),
            source="backup",
            t_s_star=new_state.certified_t_s,
            compute_ms=elapsed,
            diagnostics={"reports": reports, "searched": do_search},
        )
    return decision, new_state


# --- filter-inactive membership --------------------------------------------


def mps_inactive(ctx: ShieldContext, t, x):
    """Validity of the delta_t candidate; batch-transparent over x."""
    traj, prefix_min, prefix_fv = nominal_prefix(
        ctx.model, ctx.pi_nom, ctx.spec, x, t, ctx.delta_t, ctx.dt
    )
    res = backup_validity(
        ctx.model, ctx.pi_b, ctx.spec,
        float(traj.times[-1]), traj.states[-1], ctx.t_b, ctx.dt,
        prefix_min_c=prefix_min[-1], prefix_first_violation=prefix_fv[-1],
    )
    return bool(res.valid) if res.valid.ndim == 0 else res.valid


def gk_inactive(ctx: ShieldContext, t, x):
    """Existence of a positive valid switching time; batch-transparent.

    Scans the grid top-down, skipping points already certified; per-point
    verdicts equal ``gk_search(...) > 0`` exactly.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    traj, prefix_min, prefix_fv = nominal_prefix(
        ctx.model, ctx.pi_nom, ctx.spec, xb, t, ctx.t_h, ctx.dt
    )
    n_pts = xb.shape[0]
    member = np.zeros(n_pts, dtype=bool)
    undecided = np.arange(n_pts)
    for i in range(ctx.n_h, 0, -1):
        if undecided.size == 0:
            break
        idx = i * ctx.stride
        res = backup_validity(
            ctx.model, ctx.pi_b, ctx.spec,
            float(traj.times[idx]), traj.states[idx][undecided], ctx.t_b, ctx.dt,
            prefix_min_c=prefix_min[idx][undecided],
            prefix_first_violation=prefix_fv[idx][undecided],
        )
        hits = undecided[np.asarray(res.valid).reshape(-1)]
        member[hits] = True
        undecided = undecided[~np.asarray(res.valid).reshape(-1)]
    return bool(member[0]) if single else member


def inactive_membership(method: str, contexts: FilterContexts, t, x):
    """Filter-inactive membership under shared policies and horizons."""
    if method == "mps":
        return mps_inactive(contexts.shield, t, x)
    if method == "gk":
        return gk_inactive(contexts.shield, t, x)
    if method == "bcbf":
        if contexts.bcbf is None:
            raise ValueError("bcbf context required")
        return bcbf_inactive(contexts.bcbf, contexts.shield.pi_nom, t, x)
    raise ValueError(f"unknown method {method!r}")
