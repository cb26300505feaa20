"""Ground-truth transient simulation of an induction machine on an infinite bus.

The state is ``[lq_s, ld_s, l0_s, lq_r, ld_r, l0_r, omega_r, theta_r]``;
currents and torque are recovered algebraically from the flux linkages.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import machine
from .machine import MachineParams

STATE_SIZE = 8


class SimulationError(RuntimeError):
    """The integration produced a non-finite state."""

    def __init__(self, step: int, t: float):
        super().__init__(f"non-finite state at step {step} (t={t:.6g} s); reduce dt")
        self.step = step
        self.t = t


class ScenarioKind(str, enum.Enum):
    FREE_ACCELERATION = "free-acceleration"
    TORQUE_CHANGE = "torque-change"
    FAULT = "fault"


@dataclass(frozen=True)
class Scenario:
    """Event schedule and source definition for one simulation run.

    ``dt`` is the integration step; every ``save_every``-th state is emitted,
    so the trajectory grid has spacing ``dt * save_every``. Samples before
    ``t_record`` are integrated but not emitted (the start-up transient ahead
    of the scripted events).
    """

    kind: ScenarioKind
    params: MachineParams
    v_mag: float
    t_end: float
    dt: float = 1e-4
    f_e: float = 60.0
    torque_schedule: tuple = ((0.0, 0.0),)
    sag_schedule: tuple = ()
    save_every: int = 1
    t_record: float = 0.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        object.__setattr__(self, "torque_schedule", tuple((float(t), float(v)) for t, v in self.torque_schedule))
        object.__setattr__(self, "sag_schedule", tuple((float(t), float(v)) for t, v in self.sag_schedule))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if int(self.save_every) != self.save_every or self.save_every < 1:
            raise ValueError("save_every must be a positive integer")
        n = self.t_end / self.dt
        if abs(n - round(n)) > 1e-6 * max(1.0, n) or round(n) < 1:
            raise ValueError(f"t_end/dt = {n!r} is not a positive integer")
        if round(n) % self.save_every:
            raise ValueError("the number of steps must be a multiple of save_every")
        k0 = self.t_record / self.sample_dt
        if abs(k0 - round(k0)) > 1e-6 * max(1.0, k0) or not 0 <= round(k0) < n / self.save_every - 1:
            raise ValueError("t_record must be a grid point leaving at least two samples")
        for label, schedule in (("torque", self.torque_schedule), ("sag", self.sag_schedule)):
            starts = [t for t, _ in schedule]
            if any(b <= a for a, b in zip(starts, starts[1:])):
                raise ValueError(f"{label} schedule must be strictly ascending in time")
            if any(not 0.0 <= t < self.t_end for t in starts):
                raise ValueError(f"{label} schedule times must lie in [0, t_end)")
        if any(s < 0 for _, s in self.sag_schedule):
            raise ValueError("sag multipliers must be non-negative")
        if not self.torque_schedule:
            raise ValueError("torque schedule must not be empty")
        if self.kind is ScenarioKind.FREE_ACCELERATION and self.torque_schedule != ((0.0, 0.0),):
            raise ValueError("free acceleration runs with zero load torque")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def sample_dt(self) -> float:
        return self.dt * self.save_every

    @property
    def first_sample(self) -> int:
        return int(round(self.t_record / self.sample_dt))

    @property
    def omega_e(self) -> float:
        return 2.0 * math.pi * self.f_e


def _lookup(schedule, t, default):
    value = default
    for start, v in schedule:
        if start <= t:
            value = v
        else:
            break
    return value


def sag_multiplier(sc: Scenario, t: float) -> float:
    return _lookup(sc.sag_schedule, t, 1.0)


def source_voltage(sc: Scenario, t: float) -> np.ndarray:
    """Balanced abc phase voltages of the (possibly sagged) infinite bus."""
    amp = sag_multiplier(sc, t) * sc.v_mag
    wt = sc.omega_e * t
    return amp * np.array([math.cos(wt), math.cos(wt - machine.TWO_PI_3), math.cos(wt + machine.TWO_PI_3)])


def mechanical_torque(sc: Scenario, t: float) -> float:
    """Load torque: value of the last schedule step that has started."""
    return _lookup(sc.torque_schedule, t, sc.torque_schedule[0][1])


def frame_angle(p: MachineParams, t: float, theta_r: float) -> float:
    return theta_r if p.omega_frame is None else p.omega_frame * t


def state_derivative(sc: Scenario, t: float, state: np.ndarray) -> np.ndarray:
    p = sc.params
    lam_s, lam_r = state[0:3], state[3:6]
    omega_r, theta_r = state[6], state[7]
    v_s = machine.abc_to_qd0(frame_angle(p, t, theta_r), source_voltage(sc, t))
    i_s, i_r = machine.currents_from_flux(p, lam_s, lam_r)
    dlam_s, dlam_r = machine.flux_derivatives(p, v_s, i_s, i_r, lam_s, lam_r, omega_r)
    T_e = machine.electromagnetic_torque(p, lam_s, i_s)
    domega_r = machine.rotor_acceleration(p, T_e, mechanical_torque(sc, t))
    return np.concatenate([dlam_s, dlam_r, [domega_r, omega_r]])


@dataclass
class Trajectory:
    """Uniformly sampled machine signals; triples are arrays of shape ``(K, 3)``."""

    t: np.ndarray
    v_abcs: np.ndarray
    i_abcs: np.ndarray
    i_qd0s: np.ndarray
    i_qd0r: np.ndarray
    lam_qd0s: np.ndarray
    lam_qd0r: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    omega_r: np.ndarray
    T_e: np.ndarray
    T_m: np.ndarray
    params: MachineParams
    name: str = ""
    kind: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def v_qd0s(self) -> np.ndarray:
        return machine.abc_to_qd0(self.theta, self.v_abcs)

    @property
    def currents(self) -> np.ndarray:
        """Stacked ``(K, 6)`` currents in the order q_s, d_s, 0_s, q_r, d_r, 0_r."""
        return np.hstack([self.i_qd0s, self.i_qd0r])



def _assemble(sc: Scenario, t: np.ndarray, states: np.ndarray) -> Trajectory:
    p = sc.params
    lam_s, lam_r = states[:, 0:3], states[:, 3:6]
    omega_r, theta_r = states[:, 6], states[:, 7]
    i_s, i_r = machine.currents_from_flux(p, lam_s, lam_r)
    # recompute flux from currents so the emitted arrays satisfy the linkage equations exactly
    lam_s, lam_r = machine.flux_linkages(p, i_s, i_r)
    if p.omega_frame is None:
        theta, omega = theta_r.copy(), omega_r.copy()
    else:
        theta, omega = p.omega_frame * t, np.full_like(t, p.omega_frame)
    v_abcs = np.array([source_voltage(sc, tk) for tk in t])
    T_m = np.array([mechanical_torque(sc, tk) for tk in t])
    return Trajectory(
        t=t,
        v_abcs=v_abcs,
        i_abcs=machine.qd0_to_abc(theta, i_s),
        i_qd0s=i_s,
        i_qd0r=i_r,
        lam_qd0s=lam_s,
        lam_qd0r=lam_r,
        theta=theta,
        omega=omega,
        omega_r=omega_r,
        T_e=machine.electromagnetic_torque(p, lam_s, i_s),
        T_m=T_m,
        params=p,
        name=sc.name,
        kind=sc.kind.value,
    )


def _scalar_rhs(sc: Scenario):
    """Float-only equivalent of :func:`state_derivative` for the RK4 loop."""
    p = sc.params
    det = p.inductance_det
    if not abs(det) >= 1e-15:
        raise machine.SingularInductanceError(f"inductance determinant {det!r} is singular")
    L_ss, L_rr, L_M = p.L_ls + p.L_M, p.L_lr + p.L_M, p.L_M
    r_s, r_r, L_ls, L_lr = p.r_s, p.r_r, p.L_ls, p.L_lr
    torque_k = 0.75 * p.poles
    accel_k = p.poles / (2.0 * p.J)
    w_frame = p.omega_frame
    w_e, v_mag = sc.omega_e, sc.v_mag
    sags, loads = sc.sag_schedule, sc.torque_schedule
    load0 = loads[0][1]
    cos, sin = math.cos, math.sin

    def rhs(t, y):
        lqs, lds, l0s, lqr, ldr, l0r, wr, th_r = y
        amp = _lookup(sags, t, 1.0) * v_mag
        wt = w_e * t
        th = th_r if w_frame is None else w_frame * t
        w = wr if w_frame is None else w_frame
        # balanced source: q/d components follow from the angle difference, zero sequence vanishes
        vqs = amp * cos(wt - th)
        vds = -amp * sin(wt - th)
        iqs = (L_rr * lqs - L_M * lqr) / det
        ids = (L_rr * lds - L_M * ldr) / det
        iqr = (L_ss * lqr - L_M * lqs) / det
        idr = (L_ss * ldr - L_M * lds) / det
        slip_w = w - wr
        T_e = torque_k * (lds * iqs - lqs * ids)
        return (
            vqs - r_s * iqs - w * lds,
            vds - r_s * ids + w * lqs,
            -r_s * l0s / L_ls,
            -r_r * iqr - slip_w * ldr,
            -r_r * idr + slip_w * lqr,
            -r_r * l0r / L_lr,
            accel_k * (T_e - _lookup(loads, t, load0)),
            wr,
        )

    return rhs


def simulate(sc: Scenario, initial_state=None) -> Trajectory:
    """Fixed-step RK4 integration from rest (or from ``initial_state``)."""
    n, dt = sc.n_steps, sc.dt
    y = np.zeros(STATE_SIZE) if initial_state is None else np.array(initial_state, dtype=float)
    if y.shape != (STATE_SIZE,):
        raise ValueError(f"initial state must have {STATE_SIZE} components")
    stride = sc.save_every
    first = sc.first_sample
    out = np.empty((n // stride + 1 - first, STATE_SIZE))
    if first == 0:
        out[0] = y
    f = _scalar_rhs(sc)
    y = tuple(float(v) for v in y)
    h2, h6 = 0.5 * dt, dt / 6.0
    for k in range(n):
        t = k * dt
        k1 = f(t, y)
        k2 = f(t + h2, tuple(a + h2 * b for a, b in zip(y, k1)))
        k3 = f(t + h2, tuple(a + h2 * b for a, b in zip(y, k2)))
        k4 = f(t + dt, tuple(a + dt * b for a, b in zip(y, k3)))
        y = tuple(a + h6 * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))
        if not all(map(math.isfinite, y)):
            raise SimulationError(k + 1, (k + 1) * dt)
        if (k + 1) % stride == 0 and (k + 1) // stride >= first:
            out[(k + 1) // stride - first] = y
    t = (first + np.arange(out.shape[0])) * sc.sample_dt
    return _assemble(sc, t, out)
