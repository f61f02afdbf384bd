"""Non-ideal command execution: delays, noisy velocity ramps, noisy finger steps.

All noise is uniform on ``[1 - frac, 1 + frac]`` (or ``[0, max]`` for delays), so
the configured fractions are hard bounds.  Every call draws the same amount of
randomness regardless of the command value, which keeps random streams aligned
across episodes that issue different commands.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import GripperParams, ToolParams


@dataclass(frozen=True)
class ActuationConfig:
    friction_noise_frac: float = 0.10
    delay_frac_max: float = 0.10
    ramp_noise_frac: float = 0.10
    finger_step_noise_frac: float = 0.10
    idealized: bool = False

    def __post_init__(self):
        for name in ("friction_noise_frac", "delay_frac_max", "ramp_noise_frac", "finger_step_noise_frac"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass
class ActuatorState:
    rng: np.random.Generator
    config: ActuationConfig = field(default_factory=ActuationConfig)
    pending_arm_accel: float = 0.0
    arm_delay_remaining: float = 0.0
    pending_finger_dir: int = 0
    finger_delay_remaining: float = 0.0


def _substeps(dt: float, control_period: float) -> int:
    n = int(round(control_period / dt))
    if n < 1 or not math.isclose(n * dt, control_period, rel_tol=1e-9):
        raise ValueError("control_period must be a positive integer multiple of dt")
    return n


def perturb_tool_params(tool: ToolParams, frac: float, rng: np.random.Generator) -> ToolParams:
    """Scale each friction coefficient by an independent factor in [1-frac, 1+frac]."""
    if not 0.0 <= frac <= 1.0:
        raise ValueError("frac must lie in [0, 1]")
    if frac == 0.0:
        return tool
    s_static, s_coulomb, s_viscous = rng.uniform(1.0 - frac, 1.0 + frac, size=3)
    coulomb = tool.coulomb_coeff * s_coulomb
    return replace(
        tool,
        static_coeff=max(tool.static_coeff * s_static, coulomb),
        coulomb_coeff=coulomb,
        viscous_coeff=tool.viscous_coeff * s_viscous,
    )


def _onset_mask(delay: float, n: int, dt: float) -> np.ndarray:
    # sub-step i starts at i*dt; it is active once the delay has elapsed
    return np.arange(n) * dt >= delay


def arm_response(cmd: float, actuator: ActuatorState, dt: float, control_period: float) -> np.ndarray:
    """Effective gripper acceleration for each sub-step of one control period.

    The arm coasts (zero acceleration) until the randomly drawn delay has passed,
    then accelerates at the commanded rate scaled by per-sub-step noise.
    """
    n = _substeps(dt, control_period)
    cfg = actuator.config
    if cfg.idealized:
        return np.full(n, float(cmd))
    delay = actuator.rng.uniform(0.0, cfg.delay_frac_max * control_period)
    noise = actuator.rng.uniform(1.0 - cfg.ramp_noise_frac, 1.0 + cfg.ramp_noise_frac, size=n)
    actuator.pending_arm_accel = float(cmd)
    actuator.arm_delay_remaining = max(0.0, delay - control_period)
    return np.where(_onset_mask(delay, n, dt), cmd * noise, 0.0)


def finger_trace(direction: int, actuator: ActuatorState, gripper: GripperParams,
                 dt: float, control_period: float) -> np.ndarray:
    """Unclamped finger-distance increments for each sub-step of one control period."""
    if direction not in (-1, 0, 1):
        raise ValueError(f"finger direction must be -1, 0 or +1, got {direction}")
    n = _substeps(dt, control_period)
    cfg = actuator.config
    if cfg.idealized:
        return np.full(n, direction * gripper.finger_speed * dt)
    delay = actuator.rng.uniform(0.0, cfg.delay_frac_max * control_period)
    eta = actuator.rng.uniform(1.0 - cfg.finger_step_noise_frac, 1.0 + cfg.finger_step_noise_frac, size=n)
    actuator.pending_finger_dir = direction
    actuator.finger_delay_remaining = max(0.0, delay - control_period)
    return np.where(_onset_mask(delay, n, dt), direction * gripper.finger_speed * dt * eta, 0.0)


def finger_response(direction: int, actuator: ActuatorState, gripper: GripperParams,
                    d_fing: float, dt: float) -> float:
    """Finger-distance increment for a single sub-step, clamped to the finger range.

    Any delay left on the actuator (set when the command was issued, see
    :func:`finger_trace`) is counted down first; no motion happens until it is gone.
    """
    if direction not in (-1, 0, 1):
        raise ValueError(f"finger direction must be -1, 0 or +1, got {direction}")
    cfg = actuator.config
    eta = 1.0
    if not cfg.idealized:
        eta = actuator.rng.uniform(1.0 - cfg.finger_step_noise_frac, 1.0 + cfg.finger_step_noise_frac)
        if actuator.finger_delay_remaining > 0.0:
            actuator.finger_delay_remaining = max(0.0, actuator.finger_delay_remaining - dt)
            return 0.0
    actuator.pending_finger_dir = direction
    target = d_fing + direction * gripper.finger_speed * dt * eta
    return min(gripper.finger_max, max(gripper.finger_min, target)) - d_fing
