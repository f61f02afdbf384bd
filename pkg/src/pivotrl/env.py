"""Episodic pivoting MDP on top of the dynamics and actuation models."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import actuation, dynamics
from .actuation import ActuationConfig, ActuatorState
from .dynamics import ArmParams, ContactMode, GripperParams, PivotState, ToolParams

OBS_DIM = 5
ACT_DIM = 2
FINGER_DEAD_ZONE = 0.1

# fixed input normalization used by the networks: the arm angle is wrapped
# (it only enters the dynamics periodically), then (obs - shift) * scale
OBS_PERIODIC = (2,)
OBS_SHIFT = np.array([0.0, 0.0, 0.0, 0.0, 0.03])
OBS_SCALE = np.array([1.0, 0.2, 1.0 / np.pi, 1.0 / 3.0, 100.0])


@dataclass(frozen=True)
class TaskConfig:
    angle_low: float = -math.pi / 2
    angle_high: float = math.pi / 2
    angle_norm: float = math.pi
    success_angle: float = 0.05
    success_rate: float = 0.1
    control_period: float = 0.05
    physics_dt: float = 1e-3
    horizon: int = 200
    arm_accel_limit: float = 20.0
    grasp_distance: float = 0.025

    def __post_init__(self):
        if not self.angle_low < self.angle_high:
            raise ValueError("angle range must be non-empty")
        if not self.angle_norm > 0:
            raise ValueError("angle_norm must be positive")
        if not (self.success_angle > 0 and self.success_rate > 0):
            raise ValueError("success thresholds must be positive")
        if not self.physics_dt > 0:
            raise ValueError("physics_dt must be positive")
        n = round(self.control_period / self.physics_dt)
        if n < 1 or not math.isclose(n * self.physics_dt, self.control_period, rel_tol=1e-9):
            raise ValueError("control_period must be an integer multiple of physics_dt")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if not self.arm_accel_limit > 0:
            raise ValueError("arm_accel_limit must be positive")

    @property
    def substeps(self) -> int:
        return int(round(self.control_period / self.physics_dt))


def wrap_angle(x: float) -> float:
    """Wrap to (-pi, pi]."""
    y = math.remainder(x, 2 * math.pi)
    return math.pi if y == -math.pi else y


def angle_error(state: PivotState, target: float) -> float:
    return wrap_angle(state.phi_tl - target)


def is_success(state: PivotState, target: float, config: TaskConfig) -> bool:
    return abs(angle_error(state, target)) <= config.success_angle and abs(state.dphi_tl) <= config.success_rate


def reward(state: PivotState, target: float, config: TaskConfig) -> float:
    """Normalized negative distance to the target plus a unit bonus on success."""
    r = -abs(angle_error(state, target)) / config.angle_norm
    if is_success(state, target, config):
        r += 1.0
    return r


def observe(state: PivotState, target: float) -> np.ndarray:
    return np.array([
        angle_error(state, target), state.dphi_tl, state.phi_grp, state.dphi_grp, state.d_fing,
    ])


def finger_direction(u_fing: float) -> int:
    if abs(u_fing) < FINGER_DEAD_ZONE:
        return 0
    return 1 if u_fing > 0 else -1


@dataclass
class PivotEnv:
    """Gym-style environment: ``reset(rng)`` then ``step(action)`` until ``done``.

    ``friction_multiplier`` scales the nominal static and Coulomb coefficients
    before the per-episode friction noise is applied.
    """
    task: TaskConfig = field(default_factory=TaskConfig)
    tool: ToolParams = field(default_factory=ToolParams)
    arm: ArmParams = field(default_factory=ArmParams)
    gripper: GripperParams = field(default_factory=GripperParams)
    actuation: ActuationConfig = field(default_factory=ActuationConfig)
    friction_multiplier: float = 1.0

    def __post_init__(self):
        g = self.gripper
        if not g.finger_min <= self.task.grasp_distance < g.contact_distance:
            raise ValueError("grasp_distance must be inside the finger range with positive grip force")
        self._nominal_tool = self.tool.scale_friction(self.friction_multiplier)
        self.state: PivotState | None = None
        self.target = 0.0
        self.t = 0
        self.done = True
        self.episode_tool = self._nominal_tool
        self._actuator: ActuatorState | None = None

    def reset(self, rng: np.random.Generator | int | None = None) -> np.ndarray:
        rng = np.random.default_rng(rng)
        task = self.task
        phi_init, target = rng.uniform(task.angle_low, task.angle_high, size=2)
        frac = 0.0 if self.actuation.idealized else self.actuation.friction_noise_frac
        self.episode_tool = actuation.perturb_tool_params(self._nominal_tool, frac, rng)
        self._actuator = ActuatorState(rng=rng, config=self.actuation)
        self.state = PivotState(phi_tl=float(phi_init), d_fing=task.grasp_distance,
                                contact_mode=ContactMode.STUCK)
        self.target = float(target)
        self.t = 0
        self.done = False
        return observe(self.state, self.target)

    def step(self, action):
        if self.done:
            raise RuntimeError("episode is finished; call reset() first")
        u = np.clip(np.asarray(action, dtype=float).reshape(ACT_DIM), -1.0, 1.0)
        task = self.task
        cmd = float(u[0]) * task.arm_accel_limit
        direction = finger_direction(float(u[1]))
        accels = actuation.arm_response(cmd, self._actuator, task.physics_dt, task.control_period)
        fingers = actuation.finger_trace(direction, self._actuator, self.gripper,
                                         task.physics_dt, task.control_period)
        self.state = dynamics.advance(self.episode_tool, self.arm, self.gripper, self.state,
                                      accels, fingers, task.physics_dt)
        self.t += 1
        self.done = self.t >= task.horizon
        success = is_success(self.state, self.target, task)
        r = reward(self.state, self.target, task)
        info = {"success": success, "state": self.state, "target": self.target}
        return observe(self.state, self.target), r, self.done, info
