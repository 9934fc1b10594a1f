"""Candidate-trajectory construction and the validity indicator shared by the
predictive shields.

A candidate follows the nominal policy for a switching duration, then the
backup policy for the backup horizon; it is valid when every sample stays in
the constraint set and the terminal state lands in the terminal set (both
tested with the configured slack). ``backup_validity`` is the streaming,
batch-capable core used by the sequential search, the worker pool, and the
grid analysis alike, so every consumer sees bit-identical verdicts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SafetySpec, margin_C, margin_S0
from .dynamics import FlowDivergenceError, Trajectory, _rk4_step, integrate_flow, saturate, step_offsets

__all__ = [
    "CandidateTrajectory",
    "ValidityReport",
    "BatchValidity",
    "build_candidate",
    "check_valid",
    "membership_S",
    "backup_validity",
    "nominal_prefix",
]


@dataclass(frozen=True)
class CandidateTrajectory:
    """Nominal-then-backup rollout from (t_k, x_k) with switching time t_s."""

    x_k: np.ndarray
    t_k: float
    t_s: float
    t_b: float
    nominal_segment: Trajectory
    backup_segment: Trajectory


@dataclass(frozen=True)
class ValidityReport:
    valid: bool
    min_margin_c: float
    terminal_margin_s0: float
    first_violation_time: float | None = None
    t_s: float | None = None


@dataclass(frozen=True)
class BatchValidity:
    """Array-valued validity results (one entry per candidate or grid point)."""

    valid: np.ndarray
    min_margin_c: np.ndarray
    terminal_margin_s0: np.ndarray
    first_violation_time: np.ndarray  # nan where no violation

    def report(self, i=None, t_s=None) -> ValidityReport:
        pick = (lambda a: a if i is None else a[i])
        fv = float(pick(self.first_violation_time))
        return ValidityReport(
            valid=bool(pick(self.valid)),
            min_margin_c=float(pick(self.min_margin_c)),
            terminal_margin_s0=float(pick(self.terminal_margin_s0)),
            first_violation_time=None if np.isnan(fv) else fv,
            t_s=t_s,
        )


def _aligned_times(times: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Reshape a (T,) time vector so it broadcasts against (T, ..., n) states."""
    batch_ndim = states.ndim - 2
    return times.reshape(times.shape + (1,) * batch_ndim)


def build_candidate(model, pi_nom, pi_b, x_k, t_k, t_s, t_b, dt) -> CandidateTrajectory:
    """Roll the nominal policy for t_s, then the backup policy for t_b.

    Wall-clock time advances continuously across the switch so time-varying
    margins see absolute time; the backup segment starts from the exact final
    nominal state (shared array, no re-integration).
    """
    if t_s < 0 or t_b < 0:
        raise ValueError("switching and backup horizons must be nonnegative")
    nominal = integrate_flow(model, pi_nom, x_k, t_k, t_s, dt)
    backup = integrate_flow(model, pi_b, nominal.final_state, nominal.final_time, t_b, dt)
    return CandidateTrajectory(
        x_k=np.asarray(x_k, dtype=float),
        t_k=float(t_k),
        t_s=float(t_s),
        t_b=float(t_b),
        nominal_segment=nominal,
        backup_segment=backup,
    )


def check_valid(candidate: CandidateTrajectory, spec: SafetySpec):
    """Evaluate the validity indicator on a candidate trajectory.

    The constraint-set margin is minimized over every sample of both segments
    (endpoints included); the terminal-set margin is evaluated at the final
    sample. Returns a :class:`ValidityReport` (scalar candidates) or a
    :class:`BatchValidity` when the candidate carries batched states.
    """
    nom, bak = candidate.nominal_segment, candidate.backup_segment
    m_nom = margin_C(spec, _aligned_times(nom.times, nom.states), nom.states)
    m_bak = margin_C(spec, _aligned_times(bak.times, bak.states), bak.states)
    vm = spec.validity_margin

    min_c = np.minimum(np.min(m_nom, axis=0), np.min(m_bak, axis=0))
    term = margin_S0(spec, bak.final_time, bak.final_state)
    valid = (min_c >= -vm) & (term >= -vm)

    margins = np.concatenate([m_nom, m_bak], axis=0)
    times = np.concatenate([nom.times, bak.times], axis=0)
    violating = margins < -vm
    any_viol = np.any(violating, axis=0)
    first_idx = np.argmax(violating, axis=0)
    first_t = np.where(any_viol, times[first_idx], np.nan)

    if min_c.ndim == 0:
        return ValidityReport(
            valid=bool(valid),
            min_margin_c=float(min_c),
            terminal_margin_s0=float(term),
            first_violation_time=None if not any_viol else float(first_t),
            t_s=candidate.t_s,
        )
    return BatchValidity(valid, min_c, term, first_t)


def backup_validity(
    model,
    pi_b,
    spec: SafetySpec,
    t_switch,
    x_switch,
    t_b: float,
    dt: float,
    prefix_min_c=None,
    prefix_first_violation=None,
    early_stop: bool = False,
    block: int = 40,
) -> BatchValidity:
    """Roll the backup policy from the switch state and fold in margins.

    ``t_switch`` may be a scalar or an array matching the batch shape of
    ``x_switch`` (candidates with different switching times evaluate in one
    call). ``prefix_min_c``/``prefix_first_violation`` carry the nominal
    segment's running margin minimum and earliest violation time, so the
    result equals :func:`check_valid` on the full candidate bit for bit.

    Margins are evaluated block-wise over the stored trajectory (identical
    values, far fewer array dispatches). With ``early_stop`` the rollout
    aborts once every candidate has a recorded violation; verdicts are
    unchanged, but the reported margin minimum of an already-invalid
    candidate then covers only the scanned prefix and the terminal margin is
    reported as nan.
    """
    x = np.asarray(x_switch, dtype=float)
    t0 = np.asarray(t_switch, dtype=float)
    vm = spec.validity_margin
    offsets = step_offsets(t_b, dt)
    batch_ndim = x.ndim - 1

    def _fold(buf_x, buf_off, min_c, first_t):
        states = np.stack(buf_x, axis=0)
        offs = np.array(buf_off)
        t_al = t0 + offs.reshape(offs.shape + (1,) * batch_ndim)
        m = margin_C(spec, t_al, states)
        blk_min = np.min(m, axis=0)
        min_c = blk_min if min_c is None else np.minimum(min_c, blk_min)
        violating = m < -vm
        any_v = np.any(violating, axis=0)
        idx = np.argmax(violating, axis=0)
        t_first = t0 + offs[idx]
        if first_t is None:
            first_t = np.where(any_v, t_first, np.nan)
        else:
            first_t = np.where(np.isnan(first_t) & any_v, t_first, first_t)
        return min_c, first_t

    min_c, first_t = _fold([x], [float(offsets[0])], None, None)
    k = 0
    stopped = False
    n_steps = len(offsets) - 1
    while k < n_steps:
        if early_stop and np.all(~np.isnan(first_t)):
            stopped = True
            break
        buf_x, buf_off = [], []
        end = min(k + block, n_steps)
        while k < end:
            t_k = t0 + offsets[k]
            h = float(offsets[k + 1] - offsets[k])
            u = saturate(model.bounds, pi_b(t_k, x))
            x = _rk4_step(model, t_k, x, u, h)
            if not np.all(np.isfinite(x)):
                raise FlowDivergenceError(k + 1, float(np.min(t_k)) + h)
            k += 1
            buf_x.append(x)
            buf_off.append(float(offsets[k]))
        min_c, first_t = _fold(buf_x, buf_off, min_c, first_t)

    if stopped:
        term = np.full(np.shape(min_c), np.nan) if np.ndim(min_c) else np.nan
    else:
        term = margin_S0(spec, t0 + offsets[-1], x)
    if prefix_min_c is not None:
        min_c = np.minimum(np.asarray(prefix_min_c, dtype=float), min_c)
    if prefix_first_violation is not None:
        pf = np.asarray(prefix_first_violation, dtype=float)
        first_t = np.where(~np.isnan(pf), pf, first_t)
    with np.errstate(invalid="ignore"):
        valid = (min_c >= -vm) & (term >= -vm)
    return BatchValidity(
        valid=np.asarray(valid),
        min_margin_c=np.asarray(min_c, dtype=float),
        terminal_margin_s0=np.asarray(term, dtype=float),
        first_violation_time=np.asarray(first_t, dtype=float),
    )


def nominal_prefix(model, pi_nom, spec: SafetySpec, x_k, t_k, horizon: float, dt: float):
    """Roll the nominal policy once and precompute per-sample prefix data.

    Returns (trajectory, prefix_min_c, prefix_first_violation): the running
    margin minimum over samples 0..k and the earliest violation time within
    the prefix (nan when clean). Prefixes of a single rollout are bitwise
    identical to fresh shorter rollouts on the same step grid.
    """
    traj = integrate_flow(model, pi_nom, x_k, t_k, horizon, dt)
    margins = margin_C(spec, _aligned_times(traj.times, traj.states), traj.states)
    vm = spec.validity_margin
    prefix_min = np.minimum.accumulate(margins, axis=0)
    violating = margins < -vm
    seen = np.maximum.accumulate(violating, axis=0)
    first_idx = np.argmax(violating, axis=0)
    times = _aligned_times(traj.times, traj.states)[..., 0] if margins.ndim > 1 else traj.times
    # earliest violation time within each prefix
    first_t_full = np.where(
        np.any(violating, axis=0), np.take(traj.times, first_idx), np.nan
    )
    prefix_first = np.where(seen, first_t_full, np.nan)
    return traj, prefix_min, prefix_first


def membership_S(model, pi_b, spec: SafetySpec, x, t, t_b: float, dt: float):
    """Membership in the recoverable set induced by the backup policy.

    True iff the pure-backup candidate from x stays in the constraint set for
    the whole horizon and ends in the terminal set; identical to
    ``check_valid`` on the switching-time-zero candidate. Batch-transparent.
    """
    result = backup_validity(model, pi_b, spec, t, x, t_b, dt)
    if result.valid.ndim == 0:
        return bool(result.valid)
    return result.valid
