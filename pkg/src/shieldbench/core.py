"""Shared semantic types: input bounds, the class-K rate, safety specifications,
filter decisions, and closed-form signed-distance helpers.

Array convention used throughout the package: states and inputs are numpy
arrays whose *last* axis is the state/input dimension. Every function accepts
arbitrary leading batch axes and broadcasts over them, so a single state of
shape ``(n,)`` and a grid of shape ``(N, n)`` go through identical code paths
(and produce bit-identical per-element results). Time arguments are scalars
or arrays broadcastable against the leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "InputBounds",
    "ClassKRate",
    "SafetySpec",
    "FilterDecision",
    "alpha",
    "disk_margin",
    "interval_margin",
    "box_margin",
    "rect_obstacle_margin",
]


@dataclass(frozen=True)
class InputBounds:
    """Admissible input set: a box, optionally intersected with a Euclidean ball.

    ``lower``/``upper`` are componentwise box limits. ``norm_limit``, when set,
    additionally caps the Euclidean norm (inputs are radially scaled back onto
    the ball, see :func:`shieldbench.dynamics.saturate`).
    """

    lower: np.ndarray
    upper: np.ndarray
    norm_limit: float | None = None

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("bounds must be 1-d vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        if self.norm_limit is not None and self.norm_limit <= 0:
            raise ValueError("norm_limit must be positive")

    @property
    def m(self) -> int:
        return self.lower.shape[0]

    @staticmethod
    def box(limit: float, m: int) -> "InputBounds":
        """Symmetric box [-limit, limit]^m."""
        return InputBounds(-limit * np.ones(m), limit * np.ones(m))

    @staticmethod
    def norm_ball(limit: float, m: int) -> "InputBounds":
        """Euclidean ball of radius ``limit`` (box set to the enclosing cube)."""
        return InputBounds(-limit * np.ones(m), limit * np.ones(m), norm_limit=limit)


@dataclass(frozen=True)
class ClassKRate:
    """Linear class-K function alpha(h) = gain * h with gain > 0 (1/s)."""

    gain: float = 1.0

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("class-K gain must be positive")


def alpha(rate: ClassKRate, h):
    """Evaluate the class-K rate function on a margin value (broadcasts)."""
    return rate.gain * np.asarray(h, dtype=float)


@dataclass(frozen=True)
class SafetySpec:
    """Safety specification: time-parameterized margins for the state
    constraint set and the terminal set, plus the barrier rate.

    ``margin_c(t, x)`` is nonnegative iff x lies in the constraint set at time
    t; ``margin_s0(t, x)`` is nonnegative iff x lies in the terminal set. Both
    must be pure functions and must broadcast over leading axes of ``x``.
    ``validity_margin`` is a nonnegative slack subtracted before sign tests to
    absorb integration error near set boundaries.
    """

    margin_c: Callable[[float, np.ndarray], np.ndarray]
    margin_s0: Callable[[float, np.ndarray], np.ndarray]
    rate: ClassKRate = field(default_factory=ClassKRate)
    validity_margin: float = 0.0

    def __post_init__(self):
        if self.validity_margin < 0:
            raise ValueError("validity_margin must be nonnegative")


def margin_C(spec: SafetySpec, t, x):
    """Signed margin of the state constraint set; >= 0 iff x in C(t)."""
    return spec.margin_c(t, np.asarray(x, dtype=float))


def margin_S0(spec: SafetySpec, t, x):
    """Signed margin of the terminal set; >= 0 iff x in S0(t)."""
    return spec.margin_s0(t, np.asarray(x, dtype=float))


@dataclass(frozen=True)
class FilterDecision:
    """Outcome of one safety-filter step.

    ``source`` is 'nominal' when the nominal input passes through unchanged,
    'backup' when the backup policy (or its saturated output) is committed,
    and 'qp' when a quadratic program returned a modified input.
    ``t_s_star`` is the certified switching time where applicable.
    ``compute_ms`` is wall-clock and excluded from determinism guarantees.
    """

    input: np.ndarray
    source: str
    t_s_star: float | None = None
    compute_ms: float = 0.0
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Closed-form signed distances used by scenario margins.
# All broadcast over leading axes; positions are (..., 2) arrays.
# ---------------------------------------------------------------------------


def disk_margin(pos, center, radius):
    """Distance from ``pos`` to a disk's center minus its radius.

    Positive outside the disk, zero on its boundary, negative inside.
    """
    pos = np.asarray(pos, dtype=float)
    d = pos - np.asarray(center, dtype=float)
    dist = np.sqrt(np.sum(d * d, axis=-1))
    return dist - radius


def interval_margin(value, lo, hi):
    """Signed distance of a scalar field into the interval [lo, hi].

    Positive inside (distance to the nearer endpoint), negative outside.
    """
    value = np.asarray(value, dtype=float)
    return np.minimum(value - lo, hi - value)


def box_margin(pos, lo, hi):
    """Signed distance of a point into the axis-aligned box [lo, hi].

    Positive inside (distance to the nearest face), negative outside
    (minus the max componentwise violation; an inner approximation of the
    true exterior distance, exact inside).
    """
    pos = np.asarray(pos, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    per_axis = np.minimum(pos - lo, hi - pos)
    return np.min(per_axis, axis=-1)


def rect_obstacle_margin(pos, center, half_extent):
    """Exact signed distance from ``pos`` to an axis-aligned rectangle.

    Positive outside, negative inside. Used for slab-shaped moving obstacles.
    """
    pos = np.asarray(pos, dtype=float)
    q = np.abs(pos - np.asarray(center, dtype=float)) - np.asarray(
        half_extent, dtype=float
    )
    outside = np.sqrt(np.sum(np.maximum(q, 0.0) ** 2, axis=-1))
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside
