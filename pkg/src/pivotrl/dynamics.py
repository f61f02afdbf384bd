"""Under-actuated gripper/tool dynamics with stick-slip friction at the pivot.

The system is a planar two-link arm: the first link is the gripper (driven by a
commanded angular acceleration), the second link is the tool, which is only
coupled to the gripper through friction at the finger contact.  ``phi_tl`` is
measured relative to the gripper link, so ``dphi_tl`` is the sliding rate that
enters the friction law.

The numerical kernels are compiled with numba and operate on plain floats; the
public functions below wrap them with the parameter dataclasses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum

import numba
import numpy as np

STUCK_SNAP_RATE = 1e-3  # rad/s, slipping -> stuck velocity threshold


class ContactMode(IntEnum):
    STUCK = 0
    SLIPPING = 1


@dataclass(frozen=True)
class ToolParams:
    mass: float = 0.2
    inertia: float = 0.0015
    com_distance: float = 0.1
    static_coeff: float = 0.03
    coulomb_coeff: float = 0.02
    viscous_coeff: float = 0.01

    def __post_init__(self):
        if not self.mass > 0 or not self.inertia > 0:
            raise ValueError("tool mass and inertia must be positive")
        if self.com_distance < 0:
            raise ValueError("com_distance must be non-negative")
        if min(self.static_coeff, self.coulomb_coeff, self.viscous_coeff) < 0:
            raise ValueError("friction coefficients must be non-negative")
        if self.static_coeff < self.coulomb_coeff:
            raise ValueError(
                f"static_coeff ({self.static_coeff}) must be >= coulomb_coeff ({self.coulomb_coeff})"
            )

    @property
    def pivot_inertia(self) -> float:
        """Tool inertia about the pivot, I + m r^2."""
        return self.inertia + self.mass * self.com_distance**2

    def scale_friction(self, multiplier: float) -> "ToolParams":
        """Scale the static and Coulomb coefficients together."""
        if not multiplier > 0:
            raise ValueError("friction multiplier must be positive")
        return replace(
            self,
            static_coeff=self.static_coeff * multiplier,
            coulomb_coeff=self.coulomb_coeff * multiplier,
        )


@dataclass(frozen=True)
class ArmParams:
    link_length: float = 0.3
    gravity: float = 9.81
    plane: str = "horizontal"
    max_speed: float = 3.0  # joint speed limit (rad/s); commanded accelerations saturate at it

    def __post_init__(self):
        if not self.link_length > 0:
            raise ValueError("link_length must be positive")
        if not self.max_speed > 0:
            raise ValueError("max_speed must be positive (math.inf disables the limit)")
        if self.gravity < 0:
            raise ValueError("gravity must be non-negative")
        if self.plane not in ("horizontal", "vertical"):
            raise ValueError(f"plane must be 'horizontal' or 'vertical', got {self.plane!r}")

    @property
    def effective_gravity(self) -> float:
        return self.gravity if self.plane == "vertical" else 0.0


@dataclass(frozen=True)
class GripperParams:
    stiffness: float = 1000.0
    contact_distance: float = 0.03
    finger_min: float = 0.02
    finger_max: float = 0.04
    finger_speed: float = 0.05

    def __post_init__(self):
        if not self.stiffness > 0:
            raise ValueError("stiffness must be positive")
        if not (0 <= self.finger_min < self.contact_distance <= self.finger_max):
            raise ValueError("need 0 <= finger_min < contact_distance <= finger_max")
        if not self.finger_speed > 0:
            raise ValueError("finger_speed must be positive")

    @property
    def max_normal_force(self) -> float:
        return self.stiffness * (self.contact_distance - self.finger_min)


@dataclass(frozen=True)
class PivotState:
    phi_grp: float = 0.0
    dphi_grp: float = 0.0
    phi_tl: float = 0.0
    dphi_tl: float = 0.0
    d_fing: float = 0.025
    contact_mode: ContactMode = ContactMode.STUCK

    def __post_init__(self):
        if self.contact_mode == ContactMode.STUCK and self.dphi_tl != 0.0:
            raise ValueError("a stuck tool must have dphi_tl == 0")


# -- compiled kernels -------------------------------------------------------------


@numba.njit(cache=True)
def _normal_force(k, d0, d_fing):
    return max(0.0, k * (d0 - d_fing))


@numba.njit(cache=True)
def _stick_torque(J, mlr, mgr, phi_g, dphi_g, phi_t, accel):
    return (
        (J + mlr * math.cos(phi_t)) * accel
        + mlr * math.sin(phi_t) * dphi_g * dphi_g
        + mgr * math.cos(phi_g + phi_t)
    )


@numba.njit(cache=True)
def _saturate(accel, dphi_g, vmax, dt):
    # the joint cannot be driven past its speed limit within the step
    hi = (vmax - dphi_g) / dt
    lo = (-vmax - dphi_g) / dt
    return min(hi, max(lo, accel))


@numba.njit(cache=True)
def _substep(J, mlr, mgr, gamma, mu_c, mu_v, k, d0, eps_v, vmax,
             phi_g, dphi_g, phi_t, dphi_t, d_fing, stuck, accel, dt):
    accel = _saturate(accel, dphi_g, vmax, dt)
    f_n = _normal_force(k, d0, d_fing)
    tau_req = _stick_torque(J, mlr, mgr, phi_g, dphi_g, phi_t, accel)
    holds = abs(tau_req) <= gamma * f_n

    ddphi_t = 0.0
    if stuck and holds:
        pass
    elif dphi_t != 0.0:
        stuck = False
        tau_f = -mu_v * dphi_t - mu_c * f_n * (1.0 if dphi_t > 0.0 else -1.0)
        ddphi_t = (tau_f - tau_req) / J
    elif holds:
        stuck = True
    else:
        # breakaway from rest: slide in the direction the unresisted tool would go
        stuck = False
        direction = -1.0 if tau_req > 0.0 else 1.0
        ddphi_t = (-mu_c * f_n * direction - tau_req) / J

    # semi-implicit Euler: velocities first, positions from the new velocities
    dphi_g_new = dphi_g + accel * dt
    dphi_t_new = dphi_t + ddphi_t * dt
    if not stuck and dphi_t != 0.0 and holds:
        crossed = dphi_t_new * dphi_t <= 0.0
        if crossed or abs(dphi_t_new) < eps_v:
            stuck = True
            dphi_t_new = 0.0
    if stuck:
        dphi_t_new = 0.0
    phi_g_new = phi_g + dphi_g_new * dt
    phi_t_new = phi_t + dphi_t_new * dt
    return phi_g_new, dphi_g_new, phi_t_new, dphi_t_new, stuck


@numba.njit(cache=True)
def _advance(J, mlr, mgr, gamma, mu_c, mu_v, k, d0, eps_v, vmax, d_min, d_max,
             phi_g, dphi_g, phi_t, dphi_t, d_fing, stuck, accels, finger_incs, dt):
    for i in range(accels.shape[0]):
        d_fing = min(d_max, max(d_min, d_fing + finger_incs[i]))
        phi_g, dphi_g, phi_t, dphi_t, stuck = _substep(
            J, mlr, mgr, gamma, mu_c, mu_v, k, d0, eps_v, vmax,
            phi_g, dphi_g, phi_t, dphi_t, d_fing, stuck, accels[i], dt,
        )
    return phi_g, dphi_g, phi_t, dphi_t, d_fing, stuck


# -- public API ---------------------------------------------------------------------


def normal_force(gripper: GripperParams, d_fing: float) -> float:
    """Grip force from the linear finger-deformation model, clamped at zero."""
    return _normal_force(gripper.stiffness, gripper.contact_distance, float(d_fing))


def kinetic_friction_torque(tool: ToolParams, f_n: float, dphi_tl: float) -> float:
    """Viscous plus Coulomb friction torque opposing a nonzero sliding rate."""
    if dphi_tl == 0:
        raise ValueError("kinetic friction is undefined at zero sliding rate; use the static bound")
    if f_n < 0:
        raise ValueError("normal force must be non-negative")
    return -tool.viscous_coeff * dphi_tl - tool.coulomb_coeff * f_n * math.copysign(1.0, dphi_tl)


def static_friction_bound(tool: ToolParams, f_n: float) -> float:
    if f_n < 0:
        raise ValueError("normal force must be non-negative")
    return tool.static_coeff * f_n


def _coeffs(tool: ToolParams, arm: ArmParams):
    mlr = tool.mass * arm.link_length * tool.com_distance
    mgr = tool.mass * arm.effective_gravity * tool.com_distance
    return tool.pivot_inertia, mlr, mgr


def stick_torque_required(tool: ToolParams, arm: ArmParams, state: PivotState, accel_grp: float) -> float:
    """Contact torque needed for the tool to move rigidly with the gripper."""
    J, mlr, mgr = _coeffs(tool, arm)
    return _stick_torque(J, mlr, mgr, state.phi_grp, state.dphi_grp, state.phi_tl, float(accel_grp))


def tool_acceleration(tool: ToolParams, arm: ArmParams, state: PivotState,
                      accel_grp: float, tau_f: float) -> float:
    """Solve the tool equation of motion for the relative tool acceleration."""
    J = tool.pivot_inertia
    return (tau_f - stick_torque_required(tool, arm, state, accel_grp)) / J


def equation_residual(tool: ToolParams, arm: ArmParams, state: PivotState,
                      accel_grp: float, accel_tl: float, tau_f: float) -> float:
    """Left-hand side minus right-hand side of the tool equation of motion.

    Written out term by term, independently of :func:`tool_acceleration`.
    """
    m, I, r = tool.mass, tool.inertia, tool.com_distance
    l, g = arm.link_length, arm.effective_gravity
    lhs = (
        (I + m * r**2 + m * l * r * math.cos(state.phi_tl)) * accel_grp
        + (I + m * r**2) * accel_tl
        + m * l * r * math.sin(state.phi_tl) * state.dphi_grp**2
        + m * g * r * math.cos(state.phi_grp + state.phi_tl)
    )
    return lhs - tau_f


def _check_finite(*values):
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite input to step: {v}")


def step(tool: ToolParams, arm: ArmParams, gripper: GripperParams, state: PivotState,
         accel_grp: float, dt: float, snap_rate: float = STUCK_SNAP_RATE) -> PivotState:
    """Advance the system by one fixed timestep.

    The gripper acceleration is first saturated so the arm joint stays within
    ``arm.max_speed``; the saturated value drives both gripper and tool.

    While stuck, the tool follows the gripper as long as the required contact
    torque stays within the static bound.  A slipping tool re-sticks when its
    sliding rate drops below ``snap_rate`` (or changes sign within the step)
    and the static bound can hold it.
    """
    _check_finite(state.phi_grp, state.dphi_grp, state.phi_tl, state.dphi_tl,
                  state.d_fing, accel_grp, dt)
    if not dt > 0:
        raise ValueError("dt must be positive")
    J, mlr, mgr = _coeffs(tool, arm)
    phi_g, dphi_g, phi_t, dphi_t, stuck = _substep(
        J, mlr, mgr, tool.static_coeff, tool.coulomb_coeff, tool.viscous_coeff,
        gripper.stiffness, gripper.contact_distance, snap_rate, float(arm.max_speed),
        state.phi_grp, state.dphi_grp, state.phi_tl, state.dphi_tl, state.d_fing,
        state.contact_mode == ContactMode.STUCK, float(accel_grp), float(dt),
    )
    return PivotState(phi_g, dphi_g, phi_t, dphi_t, state.d_fing,
                      ContactMode.STUCK if stuck else ContactMode.SLIPPING)


def advance(tool: ToolParams, arm: ArmParams, gripper: GripperParams, state: PivotState,
            accels: np.ndarray, finger_increments: np.ndarray, dt: float,
            snap_rate: float = STUCK_SNAP_RATE) -> PivotState:
    """Run ``len(accels)`` sub-steps, applying a finger increment before each one."""
    accels = np.ascontiguousarray(accels, dtype=np.float64)
    finger_increments = np.ascontiguousarray(finger_increments, dtype=np.float64)
    if accels.shape != finger_increments.shape:
        raise ValueError("accel and finger traces must have equal length")
    if not np.all(np.isfinite(accels)) or not np.all(np.isfinite(finger_increments)):
        raise ValueError("non-finite actuation trace")
    J, mlr, mgr = _coeffs(tool, arm)
    phi_g, dphi_g, phi_t, dphi_t, d_fing, stuck = _advance(
        J, mlr, mgr, tool.static_coeff, tool.coulomb_coeff, tool.viscous_coeff,
        gripper.stiffness, gripper.contact_distance, snap_rate, float(arm.max_speed),
        gripper.finger_min, gripper.finger_max,
        state.phi_grp, state.dphi_grp, state.phi_tl, state.dphi_tl, state.d_fing,
        state.contact_mode == ContactMode.STUCK, accels, finger_increments, float(dt),
    )
    return PivotState(phi_g, dphi_g, phi_t, dphi_t, d_fing,
                      ContactMode.STUCK if stuck else ContactMode.SLIPPING)


def pendulum_energy(tool: ToolParams, arm: ArmParams, state: PivotState) -> float:
    """Mechanical energy of the tool swinging about a fixed gripper."""
    J = tool.pivot_inertia
    potential = tool.mass * arm.effective_gravity * tool.com_distance * math.sin(state.phi_grp + state.phi_tl)
    return 0.5 * J * state.dphi_tl**2 + potential
