"""Experiment worlds and episode execution.

Three built-in scenarios: a planar double-integrator slice with a static disk
obstacle ("di-slice"), a corridor reach-avoid task with a faster moving
obstacle and a side safety pocket ("reach-avoid"), and a five-lane highway
overtake with the dynamic bicycle model ("highway"). Scenario configurations
are plain JSON documents; unknown keys are rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .backup_cbf import BackupCbfContext, bcbf_filter
from .core import (
    ClassKRate,
    InputBounds,
    SafetySpec,
    box_margin,
    disk_margin,
    margin_C,
    rect_obstacle_margin,
)
from .dynamics import BicycleModel, DoubleIntegrator, FlowDivergenceError, integrate_flow
from .policies import ConstantPolicy, PolicySpec, build_policy
from .shields import GkWorkerPool, MonitorState, ShieldContext, default_workers, gk_step, mps_step

__all__ = [
    "ScenarioConfig",
    "Scenario",
    "EpisodeLog",
    "Metrics",
    "CorridorRunner",
    "LaneRunner",
    "obstacle_state",
    "default_config",
    "load_config",
    "build_scenario",
    "run_episode",
    "compute_metrics",
    "slice_grid",
    "SCENARIO_NAMES",
    "FILTER_NAMES",
]

SCENARIO_NAMES = ("di-slice", "reach-avoid", "highway")
FILTER_NAMES = ("bcbf", "mps", "gk", "gk-par")


# --------------------------------------------------------------------------
# Obstacle scripts
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CorridorRunner:
    """Slab obstacle sweeping the corridor at constant speed, respawning from
    the left after passing the wrap point. Spans the full corridor width."""

    speed: float = 3.0
    extent: float = 1.0
    spawn_x: float = -6.0
    wrap_x: float = 25.0
    half_height: float = 1.5

    @property
    def period(self) -> float:
        return (self.wrap_x - self.spawn_x) / self.speed

    def center_x(self, t):
        t = np.asarray(t, dtype=float)
        return self.spawn_x + self.speed * np.mod(t, self.period)

    def state(self, t) -> dict:
        return {
            "x": self.center_x(t),
            "y": 0.0,
            "vx": self.speed,
            "vy": 0.0,
            "extent": self.extent,
            "half_height": self.half_height,
        }


@dataclass(frozen=True)
class LaneRunner:
    """Vehicle-like disk obstacle moving along a lane at constant speed."""

    lane_center_y: float = 10.0
    speed: float = 5.0
    x0: float = 30.0

    def center(self, t):
        t = np.asarray(t, dtype=float)
        x = self.x0 + self.speed * t
        y = np.broadcast_to(self.lane_center_y, x.shape)
        return np.stack([x, y], axis=-1)

    def state(self, t) -> dict:
        c = self.center(t)
        return {"x": c[..., 0], "y": c[..., 1], "vx": self.speed, "vy": 0.0}


def obstacle_state(script, t) -> dict:
    """Obstacle position/velocity record at time t; pure in t."""
    return script.state(t)


# --------------------------------------------------------------------------
# Margin objects (picklable, batch-transparent)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SliceMarginC:
    obstacle_center: tuple = (0.0, 0.0)
    obstacle_radius: float = 1.0

    def __call__(self, t, x):
        return disk_margin(x[..., :2], np.asarray(self.obstacle_center), self.obstacle_radius)


@dataclass(frozen=True)
class StripMarginS0:
    y_center: float = -2.0
    y_tol: float = 0.2
    speed_tol: float = 0.2

    def __call__(self, t, x):
        lateral = self.y_tol - np.abs(x[..., 1] - self.y_center)
        speed = np.sqrt(x[..., 2] ** 2 + x[..., 3] ** 2)
        return np.minimum(lateral, self.speed_tol - speed)


@dataclass(frozen=True)
class CorridorMarginC:
    """Corridor band plus pocket column, minus the sweeping slab obstacle.

    The free space is the union of the hallway band and the pocket column;
    the margin of a union is the max of the member margins. All wall margins
    are robot-center clearances (robot radius already subtracted).
    """

    length: float
    half_width: float
    robot_radius: float
    pocket_x: tuple
    pocket_top: float
    obstacle: CorridorRunner

    def __call__(self, t, x):
        px = x[..., 0]
        py = x[..., 1]
        r = self.robot_radius
        band = np.minimum(
            np.minimum(px - r, self.length - px - r),
            np.minimum(self.half_width - py - r, py + self.half_width - r),
        )
        column = np.minimum(
            np.minimum(px - self.pocket_x[0] - r, self.pocket_x[1] - px - r),
            np.minimum(self.pocket_top - py - r, py + self.half_width - r),
        )
        free = np.maximum(band, column)

        cx = self.obstacle.center_x(t)
        center = np.stack([cx, np.zeros_like(cx)], axis=-1)
        half = np.array([self.obstacle.extent / 2.0, self.obstacle.half_height])
        slab = rect_obstacle_margin(x[..., :2], center, half) - r
        return np.minimum(free, slab)


@dataclass(frozen=True)
class PocketGoalMarginS0:
    """Terminal set: parked inside the pocket box or inside the goal disk,
    slowly in either case."""

    pocket_box: tuple  # (x0, x1, y0, y1), already inset by radius + slack
    goal_center: tuple
    goal_radius: float
    speed_tol: float

    def __call__(self, t, x):
        lo = np.array([self.pocket_box[0], self.pocket_box[2]])
        hi = np.array([self.pocket_box[1], self.pocket_box[3]])
        pocket = box_margin(x[..., :2], lo, hi)
        goal = self.goal_radius - np.sqrt(
            np.sum((x[..., :2] - np.asarray(self.goal_center)) ** 2, axis=-1)
        )
        speed = np.sqrt(x[..., 2] ** 2 + x[..., 3] ** 2)
        return np.minimum(np.maximum(pocket, goal), self.speed_tol - speed)


@dataclass(frozen=True)
class HighwayMarginC:
    road_width: float
    edge_clearance: float
    combined_radius: float
    obstacle: LaneRunner

    def __call__(self, t, x):
        py = x[..., 1]
        edges = np.minimum(py - self.edge_clearance, self.road_width - py - self.edge_clearance)
        gap = disk_margin(x[..., :2], self.obstacle.center(t), self.combined_radius)
        return np.minimum(edges, gap)


@dataclass(frozen=True)
class LaneBandMarginS0:
    """Settled in the backup lane: small lateral offset, small heading, speed
    inside a wide band. Heading is scaled to meters so the min is comparable."""

    y_center: float
    y_tol: float = 1.2
    psi_tol: float = 0.25
    psi_scale: float = 8.0
    v_lo: float = 4.0
    v_hi: float = 16.0

    def __call__(self, t, x):
        lateral = self.y_tol - np.abs(x[..., 1] - self.y_center)
        heading = self.psi_scale * (self.psi_tol - np.abs(x[..., 2]))
        v = x[..., 5]
        return np.minimum(np.minimum(lateral, heading), np.minimum(self.v_hi - v, v - self.v_lo))


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    """JSON-serializable scenario description. Unknown keys are rejected by
    :func:`load_config`; numeric sanity is checked on construction."""

    name: str
    world: str  # 'di_slice' | 'corridor' | 'highway'
    model: str  # 'double_integrator' | 'bicycle'
    input: dict
    nominal: dict
    backup: dict
    safety: dict
    obstacles: list
    delta_t: float
    t_b: float
    t_h: float
    dt: float
    dt_sim: float
    duration: float
    validity_margin: float
    rate_gain: float
    n_collocation: int
    init: dict
    goal: dict | None
    seed: int

    def __post_init__(self):
        if self.world not in ("di_slice", "corridor", "highway"):
            raise ValueError(f"unknown world {self.world!r}")
        if self.model not in ("double_integrator", "bicycle"):
            raise ValueError(f"unknown model {self.model!r}")
        if not (self.delta_t > 0 and self.t_h >= self.delta_t):
            raise ValueError("need 0 < delta_t <= t_h")
        if self.t_b < 0 or self.dt <= 0 or self.dt_sim <= 0 or self.duration <= 0:
            raise ValueError("horizons, steps and duration must be positive")
        if self.validity_margin < 0:
            raise ValueError("validity_margin must be nonnegative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def load_config(source) -> ScenarioConfig:
    """Build a config from a dict, JSON path, or built-in scenario name.

    Rejects unknown keys so typos fail loudly instead of silently falling back
    to defaults.
    """
    if isinstance(source, ScenarioConfig):
        return source
    if isinstance(source, str) and source in SCENARIO_NAMES:
        return default_config(source)
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            data = json.load(fh)
    elif isinstance(source, dict):
        data = dict(source)
    else:
        raise TypeError(f"cannot load config from {type(source)!r}")
    allowed = {f.name for f in fields(ScenarioConfig)}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    missing = allowed - set(data)
    if missing:
        raise ValueError(f"missing config keys: {sorted(missing)}")
    return ScenarioConfig(**data)


def default_config(name: str, seed: int = 0) -> ScenarioConfig:
    if name == "di-slice":
        return ScenarioConfig(
            name="di-slice",
            world="di_slice",
            model="double_integrator",
            input={"kind": "box", "limit": 0.5},
            nominal={"kind": "line_tracker", "parameters": {"kp": 1.0, "kd": 2.0, "y_ref": 2.0, "v_ref": 2.0}},
            backup={"kind": "line_tracker", "parameters": {"kp": 1.0, "kd": 2.0, "y_ref": -2.0, "v_ref": 0.0}},
            safety={
                "obstacle_center": [0.0, 0.0],
                "obstacle_radius": 1.0,
                "strip_y": -2.0,
                "strip_tol": 0.2,
                "strip_speed_tol": 0.2,
            },
            obstacles=[],
            delta_t=0.05,
            t_b=10.0,
            t_h=3.0,
            dt=0.05,
            dt_sim=0.01,
            duration=20.0,
            validity_margin=0.0,
            rate_gain=1.0,
            n_collocation=201,
            init={"low": [-5.0, 1.5, 2.0, 0.0], "high": [-4.0, 2.5, 2.0, 0.0]},
            goal=None,
            seed=seed,
        )
    if name == "reach-avoid":
        return ScenarioConfig(
            name="reach-avoid",
            world="corridor",
            model="double_integrator",
            input={"kind": "norm", "limit": 2.0},
            nominal={
                "kind": "goal_pd",
                "parameters": {"kp": 1.0, "kd": 2.5, "goal": [27.5, 0.0], "speed_cap": 1.4},
            },
            backup={
                "kind": "pocket_backup",
                "parameters": {
                    "kp": 1.0,
                    "kd": 2.5,
                    "pocket_center": [15.0, 3.0],
                    "goal_center": [27.5, 0.0],
                    "goal_radius": 0.7,
                    "speed_cap": 1.4,
                },
            },
            safety={
                "corridor_length": 30.0,
                "half_width": 1.5,
                "robot_radius": 0.5,
                "speed_limit": 1.5,
                "pocket_x": [13.0, 17.0],
                "pocket_top": 4.5,
                "pocket_inset": 0.8,
                "goal_center": [27.5, 0.0],
                "goal_radius": 0.7,
                "s0_goal_radius": 0.5,
                "s0_speed_tol": 0.3,
            },
            obstacles=[
                {"kind": "corridor_runner", "speed": 3.0, "extent": 1.0, "spawn_x": -6.0, "wrap_x": 25.0}
            ],
            delta_t=0.05,
            t_b=12.0,
            t_h=10.0,
            dt=0.05,
            dt_sim=0.01,
            duration=60.0,
            validity_margin=0.05,
            rate_gain=1.0,
            n_collocation=25,
            init={"low": [8.5, -0.4, 0.0, 0.0], "high": [10.0, 0.4, 0.0, 0.0]},
            goal={"kind": "disk", "center": [27.5, 0.0], "radius": 0.7},
            seed=seed,
        )
    if name == "highway":
        return ScenarioConfig(
            name="highway",
            world="highway",
            model="bicycle",
            input={"kind": "bicycle_rates", "delta_rate_deg": 25.0, "tau_rate": 8000.0},
            nominal={
                "kind": "centerline_tracker",
                "parameters": {"lane_center": 14.0, "v_ref": 10.0},
            },
            backup={
                "kind": "lane_change_backup",
                "parameters": {"target_lane_center": 6.0, "v_ref": 10.0},
            },
            safety={
                "road_length": 300.0,
                "lane_count": 5,
                "lane_width": 4.0,
                "nominal_lane": 3,
                "backup_lane": 1,
                "edge_clearance": 1.0,
                "combined_radius": 2.5,
                "s0_y_tol": 1.2,
                "s0_psi_tol": 0.25,
                "v_max": 20.0,
                "delta_max_deg": 20.0,
                "tau_max": 4000.0,
            },
            obstacles=[{"kind": "lane_runner", "lane_center_y": 10.0, "speed": 5.0, "x0": 30.0}],
            delta_t=0.05,
            t_b=3.0,
            t_h=6.0,
            dt=0.05,
            dt_sim=0.01,
            duration=40.0,
            validity_margin=0.05,
            rate_gain=1.0,
            n_collocation=25,
            init={
                "low": [-1.0, 13.8, 0.0, 0.0, 0.0, 10.0, 0.0, 0.0],
                "high": [1.0, 14.2, 0.0, 0.0, 0.0, 10.0, 0.0, 0.0],
            },
            goal={"kind": "x_min", "x_min": 285.0},
            seed=seed,
        )
    raise ValueError(f"unknown scenario {name!r}; expected one of {SCENARIO_NAMES}")


# --------------------------------------------------------------------------
# Runtime bundle
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    model: object
    pi_nom: object
    pi_b: object
    spec: SafetySpec
    shield_ctx: ShieldContext
    bcbf_ctx: BackupCbfContext
    goal_test: object | None
    slice_velocity: tuple | None = None
    window: tuple | None = None


@dataclass(frozen=True)
class DiskGoal:
    center: tuple
    radius: float

    def __call__(self, t, x):
        d = np.asarray(x, dtype=float)[..., :2] - np.asarray(self.center)
        return np.sum(d * d, axis=-1) <= self.radius**2


@dataclass(frozen=True)
class XMinGoal:
    x_min: float

    def __call__(self, t, x):
        return np.asarray(x, dtype=float)[..., 0] >= self.x_min


def _build_bounds(cfg: ScenarioConfig) -> InputBounds:
    spec = cfg.input
    if spec["kind"] == "box":
        return InputBounds.box(spec["limit"], 2)
    if spec["kind"] == "norm":
        return InputBounds.norm_ball(spec["limit"], 2)
    if spec["kind"] == "bicycle_rates":
        d = math.radians(spec.get("delta_rate_deg", 25.0))
        tr = spec.get("tau_rate", 8000.0)
        return InputBounds(np.array([-d, -tr]), np.array([d, tr]))
    raise ValueError(f"unknown input bound kind {spec['kind']!r}")


def build_scenario(source) -> Scenario:
    """Instantiate models, policies, margins and filter contexts for a config."""
    cfg = load_config(source)
    bounds = _build_bounds(cfg)

    if cfg.model == "double_integrator":
        model = DoubleIntegrator(bounds)
    else:
        s = cfg.safety
        model = BicycleModel(
            bounds,
            v_max=s.get("v_max", 20.0),
            delta_max=math.radians(s.get("delta_max_deg", 20.0)),
            tau_max=s.get("tau_max", 4000.0),
        )

    if cfg.world == "di_slice":
        s = cfg.safety
        m_c = SliceMarginC(tuple(s["obstacle_center"]), s["obstacle_radius"])
        m_s0 = StripMarginS0(s["strip_y"], s["strip_tol"], s["strip_speed_tol"])
        slice_velocity = (2.0, 0.0)
        window = (-5.0, 5.0, -4.0, 4.0)
    elif cfg.world == "corridor":
        s = cfg.safety
        runner = CorridorRunner(
            **{k: v for k, v in cfg.obstacles[0].items() if k != "kind"},
            half_height=s["half_width"],
        )
        m_c = CorridorMarginC(
            length=s["corridor_length"],
            half_width=s["half_width"],
            robot_radius=s["robot_radius"],
            pocket_x=tuple(s["pocket_x"]),
            pocket_top=s["pocket_top"],
            obstacle=runner,
        )
        inset = s["pocket_inset"]
        m_s0 = PocketGoalMarginS0(
            pocket_box=(
                s["pocket_x"][0] + inset,
                s["pocket_x"][1] - inset,
                s["half_width"] + inset,
                s["pocket_top"] - inset,
            ),
            goal_center=tuple(s["goal_center"]),
            goal_radius=s["s0_goal_radius"],
            speed_tol=s["s0_speed_tol"],
        )
        slice_velocity = None
        window = None
    else:
        s = cfg.safety
        runner = LaneRunner(**{k: v for k, v in cfg.obstacles[0].items() if k != "kind"})
        m_c = HighwayMarginC(
            road_width=s["lane_count"] * s["lane_width"],
            edge_clearance=s["edge_clearance"],
            combined_radius=s["combined_radius"],
            obstacle=runner,
        )
        backup_center = (s["backup_lane"] + 0.5) * s["lane_width"]
        m_s0 = LaneBandMarginS0(
            y_center=backup_center,
            y_tol=s["s0_y_tol"],
            psi_tol=s["s0_psi_tol"],
        )
        slice_velocity = None
        window = None

    spec = SafetySpec(
        margin_c=m_c,
        margin_s0=m_s0,
        rate=ClassKRate(cfg.rate_gain),
        validity_margin=cfg.validity_margin,
    )
    pi_nom = build_policy(PolicySpec(cfg.nominal["kind"], cfg.nominal["parameters"]), bounds)
    pi_b = build_policy(PolicySpec(cfg.backup["kind"], cfg.backup["parameters"]), bounds)

    shield_ctx = ShieldContext(
        model=model, pi_nom=pi_nom, pi_b=pi_b, spec=spec,
        delta_t=cfg.delta_t, t_b=cfg.t_b, t_h=cfg.t_h, dt=cfg.dt,
    )
    bcbf_ctx = BackupCbfContext(
        model=model, pi_b=pi_b, spec=spec, t_b=cfg.t_b,
        n_collocation=cfg.n_collocation, dt=cfg.dt,
    )

    goal_test = None
    if cfg.goal is not None:
        if cfg.goal["kind"] == "disk":
            goal_test = DiskGoal(tuple(cfg.goal["center"]), cfg.goal["radius"])
        elif cfg.goal["kind"] == "x_min":
            goal_test = XMinGoal(cfg.goal["x_min"])
        else:
            raise ValueError(f"unknown goal kind {cfg.goal['kind']!r}")

    return Scenario(
        config=cfg, model=model, pi_nom=pi_nom, pi_b=pi_b, spec=spec,
        shield_ctx=shield_ctx, bcbf_ctx=bcbf_ctx, goal_test=goal_test,
        slice_velocity=slice_velocity, window=window,
    )


def sample_initial_state(cfg: ScenarioConfig, trial: int) -> np.ndarray:
    """Uniform draw from the configured initial-state box; deterministic per
    (seed, trial)."""
    rng = np.random.default_rng([cfg.seed, trial])
    lo = np.asarray(cfg.init["low"], dtype=float)
    hi = np.asarray(cfg.init["high"], dtype=float)
    return lo + (hi - lo) * rng.random(lo.shape)


# --------------------------------------------------------------------------
# Episodes and metrics
# --------------------------------------------------------------------------


@dataclass
class EpisodeLog:
    scenario: str
    filter_name: str
    trial: int
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    sources: list
    t_s_star: np.ndarray
    h_bcbf: np.ndarray
    margin_c: np.ndarray
    compute_ms: np.ndarray
    status: str
    goal_time: float | None
    validity_margin: float = 0.0


@dataclass(frozen=True)
class Metrics:
    nominal_fraction: float
    avg_t_s_star: float | None
    reached_goal: bool
    avg_compute_ms: float
    min_margin_c: float
    violations: int


def run_episode(
    source,
    filter_choice: str,
    trial: int = 0,
    monitor: str = "every_step",
    workers: int | None = None,
    pool: GkWorkerPool | None = None,
    x0=None,
) -> EpisodeLog:
    """Closed-loop simulation at the monitor rate.

    The committed input of each decision is held (zero-order) over the
    monitor interval while the plant integrates at the finer ``dt_sim`` step.
    Fully deterministic given config and seed (timing fields excluded).
    """
    scenario = source if isinstance(source, Scenario) else build_scenario(source)
    cfg = scenario.config
    if filter_choice not in FILTER_NAMES:
        raise ValueError(f"unknown filter {filter_choice!r}; expected one of {FILTER_NAMES}")

    x = np.asarray(x0, dtype=float) if x0 is not None else sample_initial_state(cfg, trial)
    n_steps = int(round(cfg.duration / cfg.delta_t))
    monitor_state = MonitorState()
    own_pool = None
    if filter_choice == "gk-par" and pool is None:
        own_pool = GkWorkerPool(scenario.shield_ctx, workers or default_workers())
        pool = own_pool

    times, states, inputs, sources = [], [], [], []
    ts_star, h_vals, margins, compute = [], [], [], []
    status = "timeout"
    goal_time = None
    violated = False
    try:
        for k in range(n_steps):
            t_k = k * cfg.delta_t
            if filter_choice == "bcbf":
                decision = bcbf_filter(scenario.bcbf_ctx, scenario.pi_nom, t_k, x)
            elif filter_choice == "mps":
                decision = mps_step(scenario.shield_ctx, t_k, x)
            elif filter_choice == "gk":
                decision, monitor_state = gk_step(
                    scenario.shield_ctx, monitor_state, t_k, x, trigger=monitor
                )
            else:  # gk-par
                decision, monitor_state = gk_step(
                    scenario.shield_ctx, monitor_state, t_k, x,
                    trigger=monitor, workers=workers or default_workers(), pool=pool,
                )

            m_c = float(margin_C(scenario.spec, t_k, x))
            if m_c < -cfg.validity_margin:
                violated = True

            times.append(t_k)
            states.append(x.copy())
            inputs.append(np.asarray(decision.input, dtype=float))
            sources.append(decision.source)
            ts_star.append(np.nan if decision.t_s_star is None else float(decision.t_s_star))
            h_vals.append(float(decision.diagnostics.get("h_bcbf", np.nan)))
            margins.append(m_c)
            compute.append(decision.compute_ms)

            if goal_time is None and scenario.goal_test is not None and bool(
                scenario.goal_test(t_k, x)
            ):
                goal_time = t_k

            hold = ConstantPolicy(decision.input)
            step = integrate_flow(scenario.model, hold, x, t_k, cfg.delta_t, cfg.dt_sim)
            x = step.final_state
    except FlowDivergenceError:
        status = "divergence"
    finally:
        if own_pool is not None:
            own_pool.close()

    if status != "divergence":
        if violated:
            status = "violation"
        elif goal_time is not None:
            status = "goal_reached"
        else:
            status = "timeout"

    return EpisodeLog(
        scenario=cfg.name,
        filter_name=filter_choice,
        trial=trial,
        times=np.array(times),
        states=np.array(states),
        inputs=np.array(inputs),
        sources=sources,
        t_s_star=np.array(ts_star),
        h_bcbf=np.array(h_vals),
        margin_c=np.array(margins),
        compute_ms=np.array(compute),
        status=status,
        goal_time=goal_time,
        validity_margin=cfg.validity_margin,
    )


def compute_metrics(log: EpisodeLog) -> Metrics:
    """Aggregate per-episode metrics from a step log."""
    if len(log.times) == 0:
        raise ValueError("empty episode log")
    n = len(log.sources)
    nominal = sum(1 for s in log.sources if s == "nominal")
    defined = ~np.isnan(log.t_s_star)
    avg_ts = float(np.mean(log.t_s_star[defined])) if np.any(defined) else None
    return Metrics(
        nominal_fraction=100.0 * nominal / n,
        avg_t_s_star=avg_ts,
        reached_goal=log.status == "goal_reached" or log.goal_time is not None,
        avg_compute_ms=float(np.mean(log.compute_ms)),
        min_margin_c=float(np.min(log.margin_c)),
        violations=int(np.sum(log.margin_c < -log.validity_margin)),
    )


def slice_grid(config, resolution: int = 101) -> np.ndarray:
    """Uniform (x, y) position grid on the velocity slice of the
    double-integrator scenario. Rows ordered canonically: y-major, x fastest."""
    scenario = config if isinstance(config, Scenario) else build_scenario(config)
    if scenario.window is None or scenario.slice_velocity is None:
        raise ValueError("slice grids are defined for the di-slice scenario only")
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    x0, x1, y0, y1 = scenario.window
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    gx, gy = np.meshgrid(xs, ys)  # y-major rows
    vx, vy = scenario.slice_velocity
    pts = np.stack(
        [gx.ravel(), gy.ravel(), np.full(gx.size, vx), np.full(gx.size, vy)], axis=-1
    )
    return pts
