"""Control-affine continuous-time models, fixed-step RK4 flow integration, and
first-order sensitivity propagation along closed-loop trajectories.

Models expose ``drift(t, x)``, ``input_matrix(t, x)`` and a fused
``rhs(t, x, u)``; the fused form is written elementwise so batched and single
evaluations are bit-identical. All operations broadcast over leading axes of
``x`` (see :mod:`shieldbench.core`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .core import InputBounds

__all__ = [
    "FlowDivergenceError",
    "DoubleIntegrator",
    "BicycleModel",
    "Trajectory",
    "SensitivityTrace",
    "eval_dynamics",
    "saturate",
    "integrate_flow",
    "propagate_sensitivity",
    "closed_loop_field",
    "jacobian_fd",
    "step_offsets",
]

log = logging.getLogger(__name__)

_GRAVITY = 9.81
_V_FLOOR = 0.1  # speed floor guarding the sideslip equation


class FlowDivergenceError(RuntimeError):
    """Raised when a rollout produces a non-finite state."""

    def __init__(self, step: int, t: float):
        super().__init__(f"state became non-finite at step {step} (t={t:.6g})")
        self.step = step
        self.t = t


def saturate(bounds: InputBounds, u: np.ndarray) -> np.ndarray:
    """Project an input onto the admissible set.

    Radial scaling onto the norm ball (when one is configured) followed by a
    componentwise clamp to the box. Idempotent.
    """
    u = np.asarray(u, dtype=float)
    if bounds.norm_limit is not None:
        norm = np.sqrt(np.sum(u * u, axis=-1, keepdims=True))
        scale = np.where(norm > bounds.norm_limit, bounds.norm_limit / np.maximum(norm, 1e-300), 1.0)
        u = u * scale
    return np.clip(u, bounds.lower, bounds.upper)


@dataclass(frozen=True)
class DoubleIntegrator:
    """Planar double integrator: state [x, y, vx, vy], input [ax, ay]."""

    bounds: InputBounds

    n: int = field(default=4, init=False)
    m: int = field(default=2, init=False)

    def drift(self, t, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 0] = x[..., 2]
        out[..., 1] = x[..., 3]
        return out

    def input_matrix(self, t, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape[:-1] + (4, 2))
        g[..., 2, 0] = 1.0
        g[..., 3, 1] = 1.0
        return g

    def rhs(self, t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        out = np.empty(np.broadcast_shapes(x.shape[:-1], u.shape[:-1]) + (4,))
        out[..., 0] = x[..., 2]
        out[..., 1] = x[..., 3]
        out[..., 2] = u[..., 0]
        out[..., 3] = u[..., 1]
        return out


def _fiala_lateral(slip, c_alpha, f_max):
    """Brush-model lateral tire force: cubic in tan(slip), saturating at f_max."""
    tan_a = np.tan(slip)
    abs_t = np.abs(tan_a)
    t_slide = 3.0 * f_max / c_alpha
    cubic = (
        -c_alpha * tan_a
        + c_alpha**2 * tan_a * abs_t / (3.0 * f_max)
        - c_alpha**3 * tan_a**3 / (27.0 * f_max**2)
    )
    return np.where(abs_t < t_slide, cubic, -f_max * np.sign(tan_a))


@dataclass(frozen=True)
class BicycleModel:
    """Dynamic single-track model with Fiala tires.

    State [px, py, psi, r, beta, V, delta, tau]: global position, yaw, yaw
    rate, sideslip, speed, steering angle, rear-wheel torque. Inputs are the
    steering and torque rates [ddelta, dtau]. Steering angle, torque and speed
    magnitude limits are enforced inside the model (actuator values clamp to
    their limits; the speed derivative gates at the cap) with a debug-level
    log event; the rate limits live in ``bounds``.
    """

    bounds: InputBounds
    mass: float = 1500.0
    inertia_z: float = 2500.0
    lf: float = 1.2
    lr: float = 1.6
    cornering_front: float = 8.0e4
    cornering_rear: float = 8.0e4
    mu: float = 0.9
    wheel_radius: float = 0.3
    v_max: float = 20.0
    delta_max: float = math.radians(20.0)
    tau_max: float = 4000.0

    n: int = field(default=8, init=False)
    m: int = field(default=2, init=False)

    @staticmethod
    def default_bounds() -> InputBounds:
        return InputBounds(
            np.array([-math.radians(25.0), -8000.0]),
            np.array([math.radians(25.0), 8000.0]),
        )

    def drift(self, t, x):
        x = np.asarray(x, dtype=float)
        psi = x[..., 2]
        r = x[..., 3]
        beta = x[..., 4]
        v = x[..., 5]
        delta = x[..., 6]
        tau = x[..., 7]

        delta_eff = np.clip(delta, -self.delta_max, self.delta_max)
        tau_eff = np.clip(tau, -self.tau_max, self.tau_max)
        if np.any(delta_eff != delta) or np.any(tau_eff != tau):
            log.debug("actuator state clamped to magnitude limit")

        v_safe = np.maximum(v, _V_FLOOR)
        u_b = v_safe * np.cos(beta)
        v_b = v_safe * np.sin(beta)

        slip_f = np.arctan2(v_b + self.lf * r, u_b) - delta_eff
        slip_r = np.arctan2(v_b - self.lr * r, u_b)

        wheelbase = self.lf + self.lr
        fz_front = self.mass * _GRAVITY * self.lr / wheelbase
        fz_rear = self.mass * _GRAVITY * self.lf / wheelbase
        fy_front = _fiala_lateral(slip_f, self.cornering_front, self.mu * fz_front)
        fy_rear = _fiala_lateral(slip_r, self.cornering_rear, self.mu * fz_rear)
        fx_rear = tau_eff / self.wheel_radius

        ax_body = (fx_rear - fy_front * np.sin(delta_eff)) / self.mass
        ay_body = (fy_front * np.cos(delta_eff) + fy_rear) / self.mass

        du_b = ax_body + r * v_b
        dv_b = ay_body - r * u_b
        v_dot = np.cos(beta) * du_b + np.sin(beta) * dv_b
        beta_dot = (np.cos(beta) * dv_b - np.sin(beta) * du_b) / v_safe

        # speed magnitude limit: gate the derivative at the cap / floor
        v_dot = np.where((v >= self.v_max) & (v_dot > 0.0), 0.0, v_dot)
        v_dot = np.where((v <= _V_FLOOR) & (v_dot < 0.0), 0.0, v_dot)

        out = np.zeros_like(x)
        out[..., 0] = v * np.cos(psi + beta)
        out[..., 1] = v * np.sin(psi + beta)
        out[..., 2] = r
        out[..., 3] = (self.lf * fy_front * np.cos(delta_eff) - self.lr * fy_rear) / self.inertia_z
        out[..., 4] = beta_dot
        out[..., 5] = v_dot
        return out

    def input_matrix(self, t, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape[:-1] + (8, 2))
        g[..., 6, 0] = 1.0
        g[..., 7, 1] = 1.0
        return g

    def rhs(self, t, x, u):
        u = np.asarray(u, dtype=float)
        out = self.drift(t, x)
        out = np.broadcast_to(out, np.broadcast_shapes(out.shape, u.shape[:-1] + (8,))).copy()
        out[..., 6] = u[..., 0]
        out[..., 7] = u[..., 1]
        return out


def eval_dynamics(model, t, x, u) -> np.ndarray:
    """Evaluate the control-affine right-hand side f(t,x) + g(t,x) u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != model.n:
        raise ValueError(f"state dimension {x.shape[-1]} != model n={model.n}")
    if u.shape[-1] != model.m:
        raise ValueError(f"input dimension {u.shape[-1]} != model m={model.m}")
    out = model.rhs(t, x, u)
    return out


@dataclass(frozen=True)
class Trajectory:
    """Sampled rollout. ``states`` has shape (K+1, ..., n); ``inputs`` holds
    the saturated zero-order-hold input of each step, shape (K, ..., m)."""

    t0: float
    dt: float
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class SensitivityTrace:
    """Samples (tau, state, Q) of the state and flow Jacobian along a
    closed-loop rollout; Q(0) is the identity."""

    times: np.ndarray
    states: np.ndarray
    jacobians: np.ndarray

    def __len__(self) -> int:
        return self.times.shape[0]

    def sample(self, i: int):
        return float(self.times[i]), self.states[i], self.jacobians[i]


def step_offsets(duration: float, dt: float) -> np.ndarray:
    """Sample offsets [0, dt, 2dt, ..., duration]; the last step is shortened
    when duration is not a multiple of dt."""
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_full = int(math.floor(duration / dt + 1e-9))
    offs = dt * np.arange(n_full + 1)
    if duration - offs[-1] > 1e-9 * max(1.0, duration):
        offs = np.append(offs, duration)
    else:
        offs[-1] = duration
    offs[0] = 0.0
    return offs


def _rk4_step(model, t, x, u, h):
    k1 = model.rhs(t, x, u)
    k2 = model.rhs(t + 0.5 * h, x + (0.5 * h) * k1, u)
    k3 = model.rhs(t + 0.5 * h, x + (0.5 * h) * k2, u)
    k4 = model.rhs(t + h, x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def flow_steps(model, policy, x0, t0, offsets) -> Iterator[tuple[int, float, np.ndarray, np.ndarray]]:
    """Generator over rollout samples: yields (index, t, state, held input).

    The input entry is the saturated policy output applied over the step that
    *starts* at the yielded sample (None-equivalent zeros past the last step
    are never yielded; the final sample repeats the last held input shape).
    """
    x = np.asarray(x0, dtype=float)
    yield 0, float(t0) + float(offsets[0]), x, None
    for k in range(len(offsets) - 1):
        t_k = float(t0) + float(offsets[k])
        h = float(offsets[k + 1] - offsets[k])
        u = saturate(model.bounds, policy(t_k, x))
        x = _rk4_step(model, t_k, x, u, h)
        if not np.all(np.isfinite(x)):
            raise FlowDivergenceError(k + 1, t_k + h)
        yield k + 1, float(t0) + float(offsets[k + 1]), x, u


def integrate_flow(model, policy, x0, t0, duration, dt) -> Trajectory:
    """Fixed-step RK4 rollout under a feedback policy.

    The policy is evaluated at each step start, saturated, and held constant
    over the step (zero-order hold). The final sample lands exactly at
    ``t0 + duration``.
    """
    offsets = step_offsets(duration, dt)
    states = []
    inputs = []
    for k, t, x, u in flow_steps(model, policy, x0, t0, offsets):
        states.append(x)
        if u is not None:
            inputs.append(u)
    x0a = np.asarray(x0, dtype=float)
    states_arr = np.stack(states, axis=0)
    if inputs:
        inputs_arr = np.stack(inputs, axis=0)
    else:
        inputs_arr = np.zeros((0,) + x0a.shape[:-1] + (model.m,))
    return Trajectory(
        t0=float(t0),
        dt=float(dt),
        times=float(t0) + offsets,
        states=states_arr,
        inputs=inputs_arr,
    )


def closed_loop_field(model, policy) -> Callable:
    """Closed-loop vector field F(t, x) = f(t,x) + g(t,x) sat(policy(t,x))."""

    def field(t, x):
        return model.rhs(t, x, saturate(model.bounds, policy(t, x)))

    return field


def jacobian_fd(field, t, x, eps_rel: float = 1e-5) -> np.ndarray:
    """Jacobian of a vector field by central finite differences.

    Per-component perturbation ``eps_rel * max(1, |x_i|)``. Batched: the 2n
    perturbed evaluations run as one stacked call.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    eps = eps_rel * np.maximum(1.0, np.abs(x))
    stack = np.broadcast_to(x, (2 * n,) + x.shape).copy()
    for i in range(n):
        stack[i, ..., i] += eps[..., i]
        stack[n + i, ..., i] -= eps[..., i]
    values = field(t, stack)
    jac = np.empty(x.shape[:-1] + (n, n))
    for i in range(n):
        jac[..., :, i] = (values[i] - values[n + i]) / (2.0 * eps[..., i, None])
    return jac


def variational_steps(
    model, policy, x0, t0, offsets, fd_eps: float = 1e-5
) -> Iterator[tuple[int, float, np.ndarray, np.ndarray]]:
    """Generator jointly integrating state and variational equation by RK4.

    Yields (index, t, state, Q) at every offset; Q(offset 0) is the identity.
    The Jacobian of the closed-loop field is evaluated by central finite
    differences at each RK4 stage.
    """
    field = closed_loop_field(model, policy)
    x = np.asarray(x0, dtype=float)
    n = x.shape[-1]
    q = np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)).copy()
    yield 0, float(t0) + float(offsets[0]), x, q
    for k in range(len(offsets) - 1):
        t_k = float(t0) + float(offsets[k])
        h = float(offsets[k + 1] - offsets[k])

        k1x = field(t_k, x)
        k1q = jacobian_fd(field, t_k, x, fd_eps) @ q
        x2 = x + (0.5 * h) * k1x
        k2x = field(t_k + 0.5 * h, x2)
        k2q = jacobian_fd(field, t_k + 0.5 * h, x2, fd_eps) @ (q + (0.5 * h) * k1q)
        x3 = x + (0.5 * h) * k2x
        k3x = field(t_k + 0.5 * h, x3)
        k3q = jacobian_fd(field, t_k + 0.5 * h, x3, fd_eps) @ (q + (0.5 * h) * k2q)
        x4 = x + h * k3x
        k4x = field(t_k + h, x4)
        k4q = jacobian_fd(field, t_k + h, x4, fd_eps) @ (q + h * k3q)

        x = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        q = q + (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(q))):
            raise FlowDivergenceError(k + 1, t_k + h)
        yield k + 1, float(t0) + float(offsets[k + 1]), x, q


def propagate_sensitivity(
    model, backup_policy, x0, t0, horizon, dt, fd_eps: float = 1e-5, record_offsets=None
) -> SensitivityTrace:
    """Propagate state and flow Jacobian along a backup rollout.

    When ``record_offsets`` is given, integration sub-steps so that samples
    land exactly on those offsets (merged with the regular dt grid); otherwise
    every dt-grid point is recorded.
    """
    base = step_offsets(horizon, dt)
    if record_offsets is None:
        grid = base
        record = np.ones(len(base), dtype=bool)
    else:
        extra = np.asarray(record_offsets, dtype=float)
        if np.any(extra < 0) or np.any(extra > horizon + 1e-9):
            raise ValueError("record offsets must lie in [0, horizon]")
        grid = np.union1d(base, extra)
        # snap near-duplicates introduced by float arithmetic
        keep = np.concatenate(([True], np.diff(grid) > 1e-12))
        grid = grid[keep]
        record = np.array([np.any(np.abs(extra - g) <= 1e-12) for g in grid])
        if record_offsets is None or len(extra) == 0:
            record[:] = True
    times, states, jacs = [], [], []
    for k, t, x, q in variational_steps(model, backup_policy, x0, t0, grid, fd_eps):
        if record[k]:
            times.append(t - float(t0))
            states.append(x)
            jacs.append(q)
    return SensitivityTrace(
        times=np.array(times),
        states=np.stack(states, axis=0),
        jacobians=np.stack(jacs, axis=0),
    )
