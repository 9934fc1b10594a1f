"""Nominal and backup feedback laws for all scenarios.

Every policy is a frozen dataclass with ``__call__(t, x) -> input``; outputs
are always saturated to the owning model's bounds, and evaluation is pure and
batch-transparent, so policies can be rolled out concurrently and pickled
into worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import InputBounds
from .dynamics import saturate

__all__ = [
    "PdGains",
    "CascadeGains",
    "PolicySpec",
    "ZeroPolicy",
    "ConstantPolicy",
    "LineTracker",
    "GoalPd",
    "PocketBackup",
    "CenterlineTracker",
    "LaneChangeBackup",
    "line_tracker",
    "goal_pd",
    "pocket_backup",
    "centerline_tracker",
    "lane_change_backup",
    "build_policy",
]


@dataclass(frozen=True)
class PdGains:
    kp: float
    kd: float

    def __post_init__(self):
        if self.kp < 0 or self.kd < 0:
            raise ValueError("PD gains must be nonnegative")


@dataclass(frozen=True)
class CascadeGains:
    """Gains of the steering/torque cascade for the bicycle model.

    Outer loop: lateral error -> course target -> steering target; inner
    loops are proportional in the steering and torque tracking errors.
    """

    k_lat: float = 0.25  # lateral error to heading target (rad/m)
    heading_cap: float = 0.55  # max commanded heading offset (rad)
    k_psi: float = 4.0  # heading error to steering target
    k_r: float = 0.35  # yaw-rate damping on the steering target
    k_delta: float = 10.0  # steering tracking loop (1/s)
    k_speed: float = 900.0  # speed error to torque target (N*m per m/s)
    k_tau: float = 12.0  # torque tracking loop (1/s)


@dataclass(frozen=True)
class ZeroPolicy:
    m: int

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.m,))


@dataclass(frozen=True)
class ConstantPolicy:
    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.u, x.shape[:-1] + self.u.shape).copy()


@dataclass(frozen=True)
class LineTracker:
    """Double-integrator PD toward the horizontal line y = y_ref at forward
    speed v_ref: a_y = kp (y_ref - y) - kd vy, a_x = kd (v_ref - vx)."""

    gains: PdGains
    y_ref: float
    v_ref: float
    bounds: InputBounds

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        u = np.empty(x.shape[:-1] + (2,))
        u[..., 0] = self.gains.kd * (self.v_ref - x[..., 2])
        u[..., 1] = self.gains.kp * (self.y_ref - x[..., 1]) - self.gains.kd * x[..., 3]
        return saturate(self.bounds, u)


def _capped_velocity_pd(x, target, gains: PdGains, speed_cap: float, bounds: InputBounds):
    """PD toward a point with the commanded velocity capped in norm.

    Keeps closed-loop speed under the cap, which encodes the scenario's robot
    speed limit without touching the double-integrator model itself.
    """
    p = x[..., :2]
    v = x[..., 2:4]
    v_des = gains.kp * (np.asarray(target, dtype=float) - p)
    speed = np.sqrt(np.sum(v_des * v_des, axis=-1, keepdims=True))
    v_des = v_des * np.where(speed > speed_cap, speed_cap / np.maximum(speed, 1e-300), 1.0)
    return saturate(bounds, gains.kd * (v_des - v))


@dataclass(frozen=True)
class GoalPd:
    """Drives the double integrator toward a goal point, cruising at most at
    ``speed_cap``."""

    gains: PdGains
    goal: np.ndarray
    speed_cap: float
    bounds: InputBounds

    def __post_init__(self):
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float))

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return _capped_velocity_pd(x, self.goal, self.gains, self.speed_cap, self.bounds)


@dataclass(frozen=True)
class PocketBackup:
    """Retreats to the pocket center and parks; when already inside the goal
    region it holds position near the goal center instead."""

    gains: PdGains
    pocket_center: np.ndarray
    goal_center: np.ndarray
    goal_radius: float
    speed_cap: float
    bounds: InputBounds

    def __post_init__(self):
        object.__setattr__(self, "pocket_center", np.asarray(self.pocket_center, dtype=float))
        object.__setattr__(self, "goal_center", np.asarray(self.goal_center, dtype=float))

    def target(self, x):
        x = np.asarray(x, dtype=float)
        d = x[..., :2] - self.goal_center
        in_goal = np.sum(d * d, axis=-1) <= self.goal_radius**2
        return np.where(in_goal[..., None], self.goal_center, self.pocket_center)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return _capped_velocity_pd(x, self.target(x), self.gains, self.speed_cap, self.bounds)


def _steer_torque_cascade(x, y_target, v_ref, gains: CascadeGains, bounds: InputBounds,
                          delta_max: float, tau_max: float):
    psi = x[..., 2]
    r = x[..., 3]
    v = x[..., 5]
    delta = x[..., 6]
    tau = x[..., 7]

    e_y = x[..., 1] - y_target
    psi_des = np.clip(-gains.k_lat * e_y, -gains.heading_cap, gains.heading_cap)
    delta_des = np.clip(gains.k_psi * (psi_des - psi) - gains.k_r * r, -delta_max, delta_max)
    d_delta = gains.k_delta * (delta_des - delta)
    # hold at the steering stop rather than winding past it
    d_delta = np.where((delta >= delta_max) & (d_delta > 0), 0.0, d_delta)
    d_delta = np.where((delta <= -delta_max) & (d_delta < 0), 0.0, d_delta)

    tau_des = np.clip(gains.k_speed * (v_ref - v), -tau_max, tau_max)
    d_tau = gains.k_tau * (tau_des - tau)
    d_tau = np.where((tau >= tau_max) & (d_tau > 0), 0.0, d_tau)
    d_tau = np.where((tau <= -tau_max) & (d_tau < 0), 0.0, d_tau)

    u = np.stack([d_delta, d_tau], axis=-1)
    return saturate(bounds, u)


@dataclass(frozen=True)
class CenterlineTracker:
    """Tracks a fixed lane centerline at a speed setpoint (bicycle model)."""

    lane_center: float
    v_ref: float
    bounds: InputBounds
    gains: CascadeGains = field(default_factory=CascadeGains)
    delta_max: float = math.radians(20.0)
    tau_max: float = 4000.0

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return _steer_torque_cascade(
            x, self.lane_center, self.v_ref, self.gains, self.bounds, self.delta_max, self.tau_max
        )


@dataclass(frozen=True)
class LaneChangeBackup:
    """Cascaded PD lane change to a designated backup lane centerline."""

    target_lane_center: float
    v_ref: float
    bounds: InputBounds
    gains: CascadeGains = field(default_factory=CascadeGains)
    delta_max: float = math.radians(20.0)
    tau_max: float = 4000.0

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return _steer_torque_cascade(
            x, self.target_lane_center, self.v_ref, self.gains, self.bounds,
            self.delta_max, self.tau_max,
        )


def line_tracker(gains: PdGains, y_ref: float, v_ref: float, bounds: InputBounds) -> LineTracker:
    return LineTracker(gains, y_ref, v_ref, bounds)


def goal_pd(gains: PdGains, goal, speed_cap: float, bounds: InputBounds) -> GoalPd:
    return GoalPd(gains, goal, speed_cap, bounds)


def pocket_backup(gains: PdGains, pocket_center, goal_center, goal_radius: float,
                  speed_cap: float, bounds: InputBounds) -> PocketBackup:
    return PocketBackup(gains, pocket_center, goal_center, goal_radius, speed_cap, bounds)


def centerline_tracker(lane_center: float, v_ref: float, bounds: InputBounds,
                       gains: CascadeGains | None = None) -> CenterlineTracker:
    return CenterlineTracker(lane_center, v_ref, bounds, gains or CascadeGains())


def lane_change_backup(target_lane_center: float, v_ref: float, bounds: InputBounds,
                       gains: CascadeGains | None = None) -> LaneChangeBackup:
    return LaneChangeBackup(target_lane_center, v_ref, bounds, gains or CascadeGains())


@dataclass(frozen=True)
class PolicySpec:
    """Configuration-level policy record: kind plus kind-specific parameters."""

    kind: str
    parameters: dict

    _KINDS = (
        "line_tracker",
        "goal_pd",
        "pocket_backup",
        "centerline_tracker",
        "lane_change_backup",
    )

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {self._KINDS}")


def build_policy(spec: PolicySpec, bounds: InputBounds):
    """Instantiate the feedback law described by a PolicySpec."""
    p = dict(spec.parameters)
    if spec.kind == "line_tracker":
        return LineTracker(PdGains(p["kp"], p["kd"]), p["y_ref"], p["v_ref"], bounds)
    if spec.kind == "goal_pd":
        return GoalPd(PdGains(p["kp"], p["kd"]), np.asarray(p["goal"]), p["speed_cap"], bounds)
    if spec.kind == "pocket_backup":
        return PocketBackup(
            PdGains(p["kp"], p["kd"]),
            np.asarray(p["pocket_center"]),
            np.asarray(p["goal_center"]),
            p["goal_radius"],
            p["speed_cap"],
            bounds,
        )
    gains = CascadeGains(**p.get("gains", {}))
    if spec.kind == "centerline_tracker":
        return CenterlineTracker(p["lane_center"], p.get("v_ref", 10.0), bounds, gains)
    if spec.kind == "lane_change_backup":
        return LaneChangeBackup(p["target_lane_center"], p.get("v_ref", 10.0), bounds, gains)
    raise AssertionError(spec.kind)
