"""Grid sampling of filter-inactive sets, empirical verification of the
set-inclusion theorems, and horizon/resolution sweeps.

All membership predicates are evaluated through the same batched code paths
the filters use online, so grid verdicts match per-point filter calls bit for
bit. Grids are ordered canonically (y-major rows, x fastest) and exported as
CSV plus JSON summaries.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, replace

import numpy as np

from .backup_cbf import bcbf_inactive, eval_h_bcbf
from .core import margin_S0
from .scenarios import Scenario, build_scenario, slice_grid
from .shields import gk_inactive, gk_search, mps_inactive
from .validity import membership_S

__all__ = [
    "SetSample",
    "TheoremReport",
    "sample_sets",
    "verify_theorem3",
    "verify_theorem4",
    "sweep_horizon",
    "write_set_csv",
    "set_summary",
]


@dataclass
class SetSample:
    scenario: str
    resolution: int
    t: float
    points: np.ndarray  # (N, n) grid states, canonical order
    in_s: np.ndarray
    in_s0: np.ndarray
    bcbf: np.ndarray
    mps: np.ndarray
    gk: np.ndarray
    h_bcbf: np.ndarray

    def grid_shape(self) -> tuple:
        return (self.resolution, self.resolution)


@dataclass
class TheoremReport:
    theorem: str
    points_tested: int
    violations: list
    passed: bool
    detail: dict

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "points_tested": self.points_tested,
            "violations": [list(map(float, v)) for v in self.violations],
            "n_violations": len(self.violations),
            "passed": bool(self.passed),
            "detail": self.detail,
        }


def sample_sets(source, resolution: int = 101, t: float = 0.0) -> SetSample:
    """Evaluate recoverable-set and filter-inactive memberships on the slice
    grid with shared policies and horizons."""
    scenario = source if isinstance(source, Scenario) else build_scenario(source)
    pts = slice_grid(scenario, resolution)
    ctx = scenario.shield_ctx
    in_s = membership_S(scenario.model, scenario.pi_b, scenario.spec, pts, t, ctx.t_b, ctx.dt)
    in_s0 = np.asarray(margin_S0(scenario.spec, t, pts) >= 0.0)
    mps = mps_inactive(ctx, t, pts)
    gk = gk_inactive(ctx, t, pts)
    h = eval_h_bcbf(scenario.bcbf_ctx, t, pts)
    bcbf = bcbf_inactive(scenario.bcbf_ctx, scenario.pi_nom, t, pts)
    return SetSample(
        scenario=scenario.config.name,
        resolution=resolution,
        t=t,
        points=pts,
        in_s=np.asarray(in_s),
        in_s0=in_s0,
        bcbf=np.asarray(bcbf),
        mps=np.asarray(mps),
        gk=np.asarray(gk),
        h_bcbf=np.asarray(h),
    )


def verify_theorem3(sample: SetSample) -> TheoremReport:
    """Inclusion of the single-switching-time inactive set in the gatekeeper
    inactive set; exact since both predicates share the validity routine."""
    mask = sample.mps & ~sample.gk
    violations = [tuple(p[:2]) for p in sample.points[mask]]
    return TheoremReport(
        theorem="thm3",
        points_tested=int(np.sum(sample.mps)),
        violations=violations,
        passed=len(violations) == 0,
        detail={
            "mps_count": int(np.sum(sample.mps)),
            "gk_count": int(np.sum(sample.gk)),
        },
    )


def _neighbor_ok(flat: np.ndarray, in_s: np.ndarray, shape: tuple) -> np.ndarray:
    """True where every 4-neighbor that belongs to S is also a member of
    ``flat``; out-of-grid neighbors are vacuous."""
    grid = flat.reshape(shape)
    s_grid = in_s.reshape(shape)
    ok = np.ones(shape, dtype=bool)
    for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        nb = np.roll(grid, shift, axis=axis)
        nb_s = np.roll(s_grid, shift, axis=axis)
        cond = nb | ~nb_s
        # roll wraps around; mark wrapped rows/cols vacuous
        idx = [slice(None)] * 2
        idx[axis] = 0 if shift == 1 else -1
        cond[tuple(idx)] = True
        ok &= cond
    return ok.reshape(-1)


def _boundary_adjacent(member_flat: np.ndarray, shape: tuple) -> np.ndarray:
    """True where some 8-neighbor is not a member (one grid cell from the
    sampled set boundary)."""
    grid = member_flat.reshape(shape)
    near = np.zeros(shape, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nb = np.roll(np.roll(grid, dy, axis=0), dx, axis=1)
            if dy == 1:
                nb[0, :] = True
            elif dy == -1:
                nb[-1, :] = True
            if dx == 1:
                nb[:, 0] = True
            elif dx == -1:
                nb[:, -1] = True
            near |= ~nb
    return near.reshape(-1)


def verify_theorem4(sample: SetSample, epsilon_int: float = 0.05) -> TheoremReport:
    """Grid proxy for the relative-interior inclusion: test points are
    backup-CBF-inactive with margin at least epsilon whose in-S 4-neighbors
    are all inactive too; each must be gatekeeper-inactive. Violations are
    classified by adjacency to the sampled inactive-set boundary."""
    shape = sample.grid_shape()
    interior = (
        sample.bcbf
        & (sample.h_bcbf >= epsilon_int)
        & _neighbor_ok(sample.bcbf, sample.in_s, shape)
    )
    viol_mask = interior & ~sample.gk
    boundary = _boundary_adjacent(sample.bcbf & sample.in_s, shape)
    n_boundary = int(np.sum(viol_mask & boundary))
    n_interior = int(np.sum(viol_mask & ~boundary))
    violations = [tuple(p[:2]) for p in sample.points[viol_mask]]
    return TheoremReport(
        theorem="thm4",
        points_tested=int(np.sum(interior)),
        violations=violations,
        passed=len(violations) == 0,
        detail={
            "epsilon_int": float(epsilon_int),
            "bcbf_count": int(np.sum(sample.bcbf)),
            "gk_count": int(np.sum(sample.gk)),
            "boundary_adjacent_violations": n_boundary,
            "interior_violations": n_interior,
        },
    )


def sweep_horizon(source, t_h_values, resolutions, timing_samples: int = 16) -> list:
    """Gatekeeper inactive-set fraction and mean sequential search time as the
    search horizon and grid resolution vary.

    Returns one row dict per (t_h, resolution). The fraction is nondecreasing
    in t_h at fixed resolution (the switching-time grid only grows), and at
    t_h = delta_t the set coincides with the single-candidate filter's.
    """
    scenario = source if isinstance(source, Scenario) else build_scenario(source)
    base = scenario.shield_ctx
    rows = []
    for resolution in resolutions:
        pts = slice_grid(scenario, resolution)
        for t_h in t_h_values:
            ctx = replace(base, t_h=float(t_h))
            member = gk_inactive(ctx, 0.0, pts)
            sub = pts[:: max(1, len(pts) // timing_samples)][:timing_samples]
            start = time.perf_counter()
            for p in sub:
                gk_search(ctx, 0.0, p)
            mean_ms = (time.perf_counter() - start) * 1e3 / len(sub)
            rows.append(
                {
                    "t_h": float(t_h),
                    "resolution": int(resolution),
                    "gk_fraction": float(np.mean(member)),
                    "mean_search_ms": mean_ms,
                }
            )
    return rows


def write_set_csv(sample: SetSample, path) -> None:
    """One row per grid point: x, y, memberships, backup-CBF margin."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "in_S", "in_S0", "bcbf", "mps", "gk", "h_bcbf"])
        for i in range(sample.points.shape[0]):
            writer.writerow(
                [
                    f"{sample.points[i, 0]:.10g}",
                    f"{sample.points[i, 1]:.10g}",
                    int(sample.in_s[i]),
                    int(sample.in_s0[i]),
                    int(sample.bcbf[i]),
                    int(sample.mps[i]),
                    int(sample.gk[i]),
                    f"{sample.h_bcbf[i]:.12g}",
                ]
            )


def set_summary(sample: SetSample) -> dict:
    n = sample.points.shape[0]
    return {
        "scenario": sample.scenario,
        "resolution": sample.resolution,
        "points": n,
        "fractions": {
            "S": float(np.mean(sample.in_s)),
            "S0": float(np.mean(sample.in_s0)),
            "bcbf": float(np.mean(sample.bcbf)),
            "mps": float(np.mean(sample.mps)),
            "gk": float(np.mean(sample.gk)),
        },
        "mps_subset_gk_violations": int(np.sum(sample.mps & ~sample.gk)),
    }


def save_summary(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
