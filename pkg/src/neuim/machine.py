"""Induction machine equations in the arbitrary qd0 reference frame.

Voltage, flux-linkage and torque relations for a squirrel-cage machine plus the
Park transformation (q-leading, 2/3-scaled). Every function accepts plain
3-vectors or stacked arrays of shape ``(..., 3)`` so that the simulator and the
physics losses share one implementation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict, replace
from typing import NamedTuple

import numpy as np

TWO_PI_3 = 2.0 * math.pi / 3.0


class SingularInductanceError(ValueError):
    """Raised when the per-axis inductance matrix cannot be inverted."""


class Qd0Triple(NamedTuple):
    q: float
    d: float
    z: float


class AbcTriple(NamedTuple):
    a: float
    b: float
    c: float


@dataclass(frozen=True)
class MachineParams:
    """Electrical and mechanical constants, SI units, referred to the stator.

    ``omega_frame`` is the reference-frame speed: ``0`` (stationary),
    ``omega_e`` (synchronous, the default) or ``None`` for the rotor frame,
    where the frame follows the rotor speed.
    """

    r_s: float
    r_r: float
    L_ls: float
    L_lr: float
    L_M: float
    J: float
    poles: int = 4
    omega_e: float = 2.0 * math.pi * 60.0
    omega_frame: float | None = 2.0 * math.pi * 60.0

    def __post_init__(self):
        for name in ("L_ls", "L_lr", "L_M", "J"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        for name in ("r_s", "r_r"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be non-negative and finite, got {value!r}")
        if int(self.poles) != self.poles or self.poles < 2 or self.poles % 2:
            raise ValueError(f"poles must be an even integer >= 2, got {self.poles!r}")
        if self.omega_frame is not None and not math.isfinite(self.omega_frame):
            raise ValueError("omega_frame must be finite")

    @classmethod
    def from_reactances(cls, r_s, X_ls, X_M, X_lr, r_r, J, poles=4, f_e=60.0, frame="synchronous"):
        """Build parameters from reactances at the rated frequency ``f_e``."""
        omega_e = 2.0 * math.pi * f_e
        frames = {"synchronous": omega_e, "stationary": 0.0, "rotor": None}
        if frame not in frames:
            raise ValueError(f"unknown reference frame {frame!r}")
        return cls(
            r_s=r_s,
            r_r=r_r,
            L_ls=X_ls / omega_e,
            L_lr=X_lr / omega_e,
            L_M=X_M / omega_e,
            J=J,
            poles=poles,
            omega_e=omega_e,
            omega_frame=frames[frame],
        )

    def with_changes(self, **changes) -> "MachineParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    def frame_speed(self, omega_r):
        """Reference-frame speed given the rotor electrical speed."""
        return omega_r if self.omega_frame is None else self.omega_frame

    @property
    def inductance_det(self) -> float:
        L_ss = self.L_ls + self.L_M
        L_rr = self.L_lr + self.L_M
        return L_ss * L_rr - self.L_M * self.L_M


# 3-hp, 220 V, 4-pole machine
SMALL_MACHINE = MachineParams.from_reactances(
    r_s=0.435, X_ls=0.754, X_M=26.13, X_lr=0.754, r_r=0.816, J=0.089
)
# 2250-hp, 2300 V, 4-pole machine
LARGE_MACHINE = MachineParams.from_reactances(
    r_s=0.029, X_ls=0.226, X_M=13.04, X_lr=0.224, r_r=0.022, J=63.87
)

MACHINES = {"small": SMALL_MACHINE, "large": LARGE_MACHINE}


def park_matrix(theta: float) -> np.ndarray:
    """K_s(theta): abc -> qd0."""
    return (2.0 / 3.0) * np.array(
        [
            [math.cos(theta), math.cos(theta - TWO_PI_3), math.cos(theta + TWO_PI_3)],
            [math.sin(theta), math.sin(theta - TWO_PI_3), math.sin(theta + TWO_PI_3)],
            [0.5, 0.5, 0.5],
        ]
    )


def inverse_park_matrix(theta: float) -> np.ndarray:
    """K_s^{-1}(theta): qd0 -> abc."""
    return np.array(
        [
            [math.cos(theta), math.sin(theta), 1.0],
            [math.cos(theta - TWO_PI_3), math.sin(theta - TWO_PI_3), 1.0],
            [math.cos(theta + TWO_PI_3), math.sin(theta + TWO_PI_3), 1.0],
        ]
    )


def abc_to_qd0(theta, x):
    """Park transform. ``theta`` is scalar or shape ``(N,)``; ``x`` is ``(..., 3)``."""
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    a, b, c = x[..., 0], x[..., 1], x[..., 2]
    q = (2.0 / 3.0) * (a * np.cos(theta) + b * np.cos(theta - TWO_PI_3) + c * np.cos(theta + TWO_PI_3))
    d = (2.0 / 3.0) * (a * np.sin(theta) + b * np.sin(theta - TWO_PI_3) + c * np.sin(theta + TWO_PI_3))
    z = (a + b + c) / 3.0
    return np.stack(np.broadcast_arrays(q, d, z), axis=-1)


def qd0_to_abc(theta, x):
    """Inverse Park transform; shapes as in :func:`abc_to_qd0`."""
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    q, d, z = x[..., 0], x[..., 1], x[..., 2]
    a = q * np.cos(theta) + d * np.sin(theta) + z
    b = q * np.cos(theta - TWO_PI_3) + d * np.sin(theta - TWO_PI_3) + z
    c = q * np.cos(theta + TWO_PI_3) + d * np.sin(theta + TWO_PI_3) + z
    return np.stack(np.broadcast_arrays(a, b, c), axis=-1)


def flux_linkages(p: MachineParams, i_s, i_r):
    """Stator and rotor flux linkages from qd0 currents.

    The magnetizing inductance couples only the q and d axes; the zero
    sequence sees leakage inductance alone.
    """
    i_s = np.asarray(i_s, dtype=float)
    i_r = np.asarray(i_r, dtype=float)
    mag = np.zeros(np.broadcast_shapes(i_s.shape, i_r.shape))
    mag[..., :2] = p.L_M * (i_s[..., :2] + i_r[..., :2])
    return p.L_ls * i_s + mag, p.L_lr * i_r + mag


def currents_from_flux(p: MachineParams, lam_s, lam_r):
    """Invert :func:`flux_linkages` in closed form."""
    det = p.inductance_det
    if not abs(det) >= 1e-15:
        raise SingularInductanceError(f"inductance determinant {det!r} is singular")
    lam_s = np.asarray(lam_s, dtype=float)
    lam_r = np.asarray(lam_r, dtype=float)
    L_ss = p.L_ls + p.L_M
    L_rr = p.L_lr + p.L_M
    i_s = np.empty(np.broadcast_shapes(lam_s.shape, lam_r.shape))
    i_r = np.empty_like(i_s)
    i_s[..., :2] = (L_rr * lam_s[..., :2] - p.L_M * lam_r[..., :2]) / det
    i_r[..., :2] = (L_ss * lam_r[..., :2] - p.L_M * lam_s[..., :2]) / det
    i_s[..., 2] = lam_s[..., 2] / p.L_ls
    i_r[..., 2] = lam_r[..., 2] / p.L_lr
    return i_s, i_r


def speed_emf(omega, lam):
    """omega * lambda_dq laid out on the (q, d, 0) rows: (+w*ld, -w*lq, 0)."""
    lam = np.asarray(lam, dtype=float)
    omega = np.asarray(omega, dtype=float)
    out = np.zeros(np.broadcast_shapes(lam.shape, omega.shape + (3,)))
    out[..., 0] = omega * lam[..., 1]
    out[..., 1] = -omega * lam[..., 0]
    return out


def flux_derivatives(p: MachineParams, v_s, i_s, i_r, lam_s, lam_r, omega_r, omega=None):
    """Time derivatives of stator and rotor flux linkages.

    ``omega`` defaults to the frame speed implied by ``p`` (the rotor speed for
    the rotor frame). The rotor is short-circuited.
    """
    if omega is None:
        omega = p.frame_speed(omega_r)
    omega = np.asarray(omega, dtype=float)
    omega_r = np.asarray(omega_r, dtype=float)
    dlam_s = np.asarray(v_s, dtype=float) - p.r_s * np.asarray(i_s, dtype=float) - speed_emf(omega, lam_s)
    dlam_r = -p.r_r * np.asarray(i_r, dtype=float) - speed_emf(omega - omega_r, lam_r)
    return dlam_s, dlam_r


def electromagnetic_torque(p: MachineParams, lam_s, i_s):
    lam_s = np.asarray(lam_s, dtype=float)
    i_s = np.asarray(i_s, dtype=float)
    return 0.75 * p.poles * (lam_s[..., 1] * i_s[..., 0] - lam_s[..., 0] * i_s[..., 1])


def rotor_acceleration(p: MachineParams, T_e, T_m):
    """d(omega_r)/dt, omega_r being the electrical rotor speed."""
    return p.poles / (2.0 * p.J) * (np.asarray(T_e, dtype=float) - T_m)
