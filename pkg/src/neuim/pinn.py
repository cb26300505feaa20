"""Physics-informed neural induction machine model.

Two networks are chained: ``G`` maps exogenous inputs (boundary current,
phase voltages, frame and rotor speeds, frame angle, time) to qd0 stator and
rotor currents, and ``P`` maps the resulting phase currents plus the same
exogenous inputs to phase-current derivatives. ``G`` is trained against a
trapezoidal (Heun) consistency residual of the flux-linkage equations,
optionally mixed with supervised current data; ``P`` is trained against a
trapezoidal residual of ``G``'s phase currents.

All losses are mean squared residuals in scaled units: flux residuals are
divided by ``dt * V_ref`` (peak phase voltage of the trajectory), current
errors by the model's current scale and derivative residuals by
``dt * omega_e * current scale``. Gradients are exact reverse-mode.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import machine, nnet
from .machine import MachineParams
from .simulator import Trajectory

log = logging.getLogger(__name__)

G_INPUTS = 11
G_OUTPUTS = 6
P_INPUTS = 10
P_OUTPUTS = 3
CURRENT_CHANNELS = ("iq_s", "id_s", "i0_s", "iq_r", "id_r", "i0_r")


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, what: str = "loss"):
        super().__init__(f"non-finite {what} at epoch {epoch}; lower the learning rate or check normalization")
        self.epoch = epoch


class MissingTargetsError(ValueError):
    pass


# ---------------------------------------------------------------- models


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, min_scale=None, floor: float = 1e-12) -> "Standardizer":
        """Column mean and standard deviation; ``min_scale`` bounds the scale from below."""
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        if min_scale is not None:
            std = np.maximum(std, min_scale)
        return cls(mean, np.where(std > floor, std, 1.0))

    @classmethod
    def identity(cls, n: int) -> "Standardizer":
        return cls(np.zeros(n), np.ones(n))

    def __call__(self, X):
        return (X - self.mean) / self.scale


@dataclass
class GModel:
    """G network with its input standardizer and affine output map ``offset + scale * y``.

    ``columns`` selects which of the 11 G features feed the network (all by
    default); small diagnostic networks use a subset.
    """

    net: nnet.MlpNetwork
    x_norm: Standardizer
    y_offset: np.ndarray
    y_scale: np.ndarray
    meta: dict = field(default_factory=dict)
    columns: tuple = tuple(range(G_INPUTS))

    def __post_init__(self):
        self.columns = tuple(int(c) for c in self.columns)
        if any(not 0 <= c < G_INPUTS for c in self.columns) or len(set(self.columns)) != len(self.columns):
            raise ValueError(f"invalid G feature columns {self.columns}")
        if self.net.d_in != len(self.columns) or self.net.d_out != G_OUTPUTS:
            raise ValueError(
                f"G network must map {len(self.columns)} -> {G_OUTPUTS}, got {self.net.layer_sizes}")

    def inputs(self, traj: Trajectory, k: int | None = None) -> np.ndarray:
        """Standardized network inputs for ``traj``."""
        x = g_features(traj, k)
        if len(self.columns) != G_INPUTS:
            x = x[..., list(self.columns)]
        return self.x_norm(x)


@dataclass
class PModel:
    net: nnet.MlpNetwork
    x_norm: Standardizer
    y_offset: np.ndarray
    y_scale: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.net.d_in != P_INPUTS or self.net.d_out != P_OUTPUTS:
            raise ValueError(f"P network must map {P_INPUTS} -> {P_OUTPUTS}, got {self.net.layer_sizes}")


def voltage_ref(traj: Trajectory) -> float:
    v = float(np.abs(traj.v_abcs).max())
    return v if v > 0 else 1.0


def current_scale(params: MachineParams, v_ref: float) -> float:
    """Current magnitude between no-load and locked-rotor levels for this machine."""
    z = params.omega_e * math.sqrt((params.L_ls + params.L_lr) * (params.L_ls + params.L_M))
    return v_ref / z


# ---------------------------------------------------------------- features


def _check_index(traj, k):
    if k is not None and not -len(traj) <= k < len(traj):
        raise IndexError(f"time index {k} out of range for trajectory of length {len(traj)}")


def g_features(traj: Trajectory, k: int | None = None) -> np.ndarray:
    """G inputs at sample ``k`` (shape ``(11,)``) or at every sample (``(K, 11)``)."""
    _check_index(traj, k)
    sl = slice(None) if k is None else k
    n = len(traj) if k is None else 1
    i0 = np.broadcast_to(traj.i_abcs[0], (n, 3))
    X = np.column_stack(
        [
            i0,
            np.atleast_2d(traj.v_abcs[sl]),
            np.atleast_1d(traj.omega[sl]),
            np.atleast_1d(traj.omega_r[sl]),
            np.cos(np.atleast_1d(traj.theta[sl])),
            np.sin(np.atleast_1d(traj.theta[sl])),
            np.atleast_1d(traj.t[sl]) / traj.t[-1],
        ]
    )
    return X[0] if k is not None else X


def p_features(traj: Trajectory, i_abcs_hat, k: int | None = None) -> np.ndarray:
    """P inputs: predicted phase currents plus exogenous signals, ``(10,)`` or ``(K, 10)``."""
    _check_index(traj, k)
    sl = slice(None) if k is None else k
    i_hat = np.atleast_2d(np.asarray(i_abcs_hat, dtype=float))
    X = np.column_stack(
        [
            i_hat,
            np.atleast_2d(traj.v_abcs[sl]),
            np.atleast_1d(traj.omega[sl]),
            np.atleast_1d(traj.omega_r[sl]),
            np.cos(np.atleast_1d(traj.theta[sl])),
            np.sin(np.atleast_1d(traj.theta[sl])),
        ]
    )
    return X[0] if k is not None else X


def _denorm(model, y):
    """``offset + scale * y`` for a vector scale, ``offset + y @ scale.T`` for a matrix."""
    if model.y_scale.ndim == 2:
        return model.y_offset + y @ model.y_scale.T
    return model.y_offset + model.y_scale * y


def _denorm_vjp(model, g):
    return g @ model.y_scale if model.y_scale.ndim == 2 else g * model.y_scale


def g_currents(g: GModel, traj: Trajectory) -> np.ndarray:
    """Predicted qd0 currents at every sample, shape ``(K, 6)``."""
    y, _ = nnet.forward(g.net, g.inputs(traj))
    return _denorm(g, y)


def g_predict(g: GModel, traj: Trajectory, k: int | None = None):
    """Returns ``(i_qd0s, i_qd0r, i_abcs)`` predicted by G, at ``k`` or over the grid."""
    y, _ = nnet.forward(g.net, g.inputs(traj, k))
    c = _denorm(g, y)
    theta = traj.theta if k is None else traj.theta[k]
    i_s, i_r = c[..., :3], c[..., 3:]
    return i_s, i_r, machine.qd0_to_abc(theta, i_s)


def p_predict(pm: PModel, traj: Trajectory, i_abcs_hat) -> np.ndarray:
    """Phase-current derivatives predicted by P over the grid, ``(K, 3)``."""
    y, _ = nnet.forward(pm.net, pm.x_norm(p_features(traj, i_abcs_hat)))
    return pm.y_offset + pm.y_scale * y


# ---------------------------------------------------------------- flux chain


def _inductance_op(p: MachineParams, c):
    lam_s, lam_r = machine.flux_linkages(p, c[..., :3], c[..., 3:])
    return np.concatenate([lam_s, lam_r], axis=-1)


def _resistance_op(p: MachineParams, c):
    out = np.empty_like(c)
    out[..., :3] = p.r_s * c[..., :3]
    out[..., 3:] = p.r_r * c[..., 3:]
    return out


def _emf_op(omega, omega_r, lam):
    out = np.empty_like(lam)
    out[..., :3] = machine.speed_emf(omega, lam[..., :3])
    out[..., 3:] = machine.speed_emf(omega - omega_r, lam[..., 3:])
    return out


def smooth_steps(traj: Trajectory, rtol: float = 1e-6) -> np.ndarray:
    """Mask over the K-1 steps; False where the source magnitude jumps inside the step.

    A trapezoidal residual spanning a switching event is O(1) in the step size
    whatever the currents are, so such steps are left out of the physics terms.
    """
    mag = np.hypot(*traj.v_qd0s[:, :2].T)
    ref = max(float(mag.max()), 1e-300)
    return np.abs(np.diff(mag)) <= rtol * ref


def _exogenous(traj: Trajectory):
    u = np.zeros((len(traj), 6))
    u[:, :3] = traj.v_qd0s
    return u


@dataclass
class FluxChain:
    """Per-step quantities of the Heun chain, each of shape ``(K-1, 6)``."""

    lam: np.ndarray
    dlam: np.ndarray
    lam_pred: np.ndarray
    dlam_pred: np.ndarray
    lam_next: np.ndarray


def flux_chain(p: MachineParams, currents, u, omega, omega_r, dt: float) -> FluxChain:
    """Flux linkages, slopes, Euler predictor and corrector slope from a current sequence.

    ``currents`` is ``(K, 6)`` (q_s, d_s, 0_s, q_r, d_r, 0_r); ``u`` holds the
    exogenous qd0 stator voltage in its first three columns (rotor columns zero).
    """
    c = np.asarray(currents, dtype=float)
    lam_all = _inductance_op(p, c)
    lam0, lam1 = lam_all[:-1], lam_all[1:]
    w0, w1 = omega[:-1], omega[1:]
    wr0, wr1 = omega_r[:-1], omega_r[1:]
    dlam0 = u[:-1] - _resistance_op(p, c[:-1]) - _emf_op(w0, wr0, lam0)
    lam_pred = lam0 + dt * dlam0
    dlam_pred = u[1:] - _resistance_op(p, c[1:]) - _emf_op(w1, wr1, lam_pred)
    return FluxChain(lam0, dlam0, lam_pred, dlam_pred, lam1)


def flux_residual(chain: FluxChain, dt: float) -> np.ndarray:
    """delta - delta': flux increment minus its trapezoidal estimate."""
    return (chain.lam_next - chain.lam) - 0.5 * dt * (chain.dlam_pred + chain.dlam)


def flux_residual_vjp(p: MachineParams, g_res, omega, omega_r, dt: float) -> np.ndarray:
    """Pull ``dL/d residual`` ``(K-1, 6)`` back to ``dL/d currents`` ``(K, 6)``.

    The chain is affine in the currents; this applies the transpose of its
    linear part. The inductance and resistance maps are symmetric and the
    speed-emf map is skew, so its transpose is its negative.
    """
    w0, w1 = omega[:-1], omega[1:]
    wr0, wr1 = omega_r[:-1], omega_r[1:]
    g_lam1 = g_res
    g_lam0 = -g_res
    g_dlam_pred = -0.5 * dt * g_res
    g_dlam0 = -0.5 * dt * g_res
    g_c1 = -_resistance_op(p, g_dlam_pred)
    g_lam_pred = _emf_op(w1, wr1, g_dlam_pred)
    g_lam0 = g_lam0 + g_lam_pred
    g_dlam0 = g_dlam0 + dt * g_lam_pred
    g_c0 = -_resistance_op(p, g_dlam0)
    g_lam0 = g_lam0 + _emf_op(w0, wr0, g_dlam0)
    g_c0 = g_c0 + _inductance_op(p, g_lam0)
    g_c1 = g_c1 + _inductance_op(p, g_lam1)
    out = np.zeros((g_res.shape[0] + 1, 6))
    out[:-1] += g_c0
    out[1:] += g_c1
    return out


# ---------------------------------------------------------------- losses


@dataclass
class _GBatch:
    """Fixed per-trajectory data for G losses."""

    traj: Trajectory
    x: np.ndarray
    u: np.ndarray
    dt: float
    v_ref: float
    targets: np.ndarray | None
    mask: np.ndarray


def _g_batches(g: GModel, trajs, supervised=None):
    out = []
    for j, tr in enumerate(trajs):
        want = supervised is not None and supervised[j]
        out.append(
            _GBatch(
                traj=tr,
                x=g.inputs(tr),
                u=_exogenous(tr),
                dt=tr.dt,
                v_ref=voltage_ref(tr),
                targets=tr.currents if want else None,
                mask=smooth_steps(tr)[:, None].astype(float),
            )
        )
    return out


def _g_forward(g: GModel, batches):
    X = np.vstack([b.x for b in batches])
    y, cache = nnet.forward(g.net, X)
    c = _denorm(g, y)
    bounds = np.cumsum([0] + [len(b.x) for b in batches])
    return [c[a:z] for a, z in zip(bounds[:-1], bounds[1:])], cache


def _physics_terms(batches, currents):
    """Mean squared scaled flux residual and its gradient wrt each trajectory's currents."""
    n = len(batches)
    total = 0.0
    grads = []
    for b, c in zip(batches, currents):
        tr = b.traj
        chain = flux_chain(tr.params, c, b.u, tr.omega, tr.omega_r, b.dt)
        s = 1.0 / (b.dt * b.v_ref)
        r = flux_residual(chain, b.dt) * s * b.mask
        total += np.mean(r * r) / n
        g_r = (2.0 / (r.size * n)) * r * s
        grads.append(flux_residual_vjp(tr.params, g_r, tr.omega, tr.omega_r, b.dt))
    return total, grads


def _data_terms(batches, currents, c_scale):
    sup = [j for j, b in enumerate(batches) if b.targets is not None]
    grads = [np.zeros_like(c) for c in currents]
    if not sup:
        return 0.0, grads
    total = 0.0
    for j in sup:
        e = (currents[j] - batches[j].targets) / c_scale
        total += np.mean(e * e) / len(sup)
        grads[j] = (2.0 / (e.size * len(sup))) * e / c_scale
    return total, grads


def _g_backprop(g: GModel, cache, grads_c):
    G = _denorm_vjp(g, np.vstack(grads_c))
    grads, _ = nnet.backward(g.net, cache, G)
    return grads


def _c_scale(g: GModel):
    if "current_scale" in g.meta:
        return float(g.meta["current_scale"])
    return g.y_scale if g.y_scale.ndim == 1 else np.abs(g.y_scale).max(axis=1)


def loss_g_physics(g: GModel, trajs):
    """Physics loss of G over ``trajs`` and its gradient wrt G's parameters."""
    batches = _g_batches(g, trajs)
    currents, cache = _g_forward(g, batches)
    loss, gc = _physics_terms(batches, currents)
    return loss, _g_backprop(g, cache, gc)


def loss_data(g: GModel, trajs):
    """Mean squared scaled error between G's currents and the recorded ones."""
    if not trajs:
        raise MissingTargetsError("no supervised trajectories")
    for tr in trajs:
        if tr.i_qd0s is None or tr.i_qd0r is None:
            raise MissingTargetsError(f"trajectory {tr.name!r} carries no current targets")
    batches = _g_batches(g, trajs, supervised=[True] * len(trajs))
    currents, cache = _g_forward(g, batches)
    loss, gc = _data_terms(batches, currents, _c_scale(g))
    return loss, _g_backprop(g, cache, gc)


def supervised_count(data_fraction: float, n: int) -> int:
    """Number of supervised trajectories: ``data_fraction * n`` rounded half up."""
    if not 0.0 <= data_fraction <= 1.0:
        raise ValueError(f"data_fraction must lie in [0, 1], got {data_fraction!r}")
    return min(n, int(math.floor(data_fraction * n + 0.5 + 1e-12)))


def supervised_flags(data_fraction: float, n: int) -> list:
    k = supervised_count(data_fraction, n)
    return [j < k for j in range(n)]


def _hybrid_terms(g: GModel, batches, physics_weight, data_weight):
    currents, cache = _g_forward(g, batches)
    lp, gp = _physics_terms(batches, currents)
    if any(b.targets is not None for b in batches):
        ld, gd = _data_terms(batches, currents, _c_scale(g))
        total = physics_weight * lp + data_weight * ld
        gc = [physics_weight * a + data_weight * b for a, b in zip(gp, gd)]
    else:
        ld, total = 0.0, physics_weight * lp
        gc = gp if physics_weight == 1.0 else [physics_weight * a for a in gp]
    return (lp, ld, total), _g_backprop(g, cache, gc)


def loss_g_hybrid(g: GModel, trajs, cfg: "TrainingConfig"):
    """Weighted physics loss over all trajectories plus data loss over the supervised first ``n``."""
    flags = supervised_flags(cfg.data_fraction, len(trajs))
    batches = _g_batches(g, trajs, supervised=flags)
    (_, _, total), grads = _hybrid_terms(g, batches, cfg.physics_weight, cfg.data_weight)
    return total, grads


@dataclass
class _PBatch:
    traj: Trajectory
    x: np.ndarray
    i_hat: np.ndarray
    dt: float
    targets: np.ndarray | None = None
    mask: np.ndarray | None = None


def _p_batches(pm: PModel, g: GModel, trajs):
    out = []
    for tr in trajs:
        _, _, i_hat = g_predict(g, tr)
        out.append(_PBatch(tr, pm.x_norm(p_features(tr, i_hat)), i_hat, tr.dt,
                           mask=smooth_steps(tr)[:, None].astype(float)))
    return out


def derivative_residual(i_abcs, didt, dt: float) -> np.ndarray:
    """Phase-current increment minus its trapezoidal estimate from the derivatives, ``(K-1, 3)``."""
    i_abcs = np.asarray(i_abcs, dtype=float)
    didt = np.asarray(didt, dtype=float)
    return np.diff(i_abcs, axis=0) - 0.5 * dt * (didt[1:] + didt[:-1])


def _p_terms(pm: PModel, batches):
    X = np.vstack([b.x for b in batches])
    y, cache = nnet.forward(pm.net, X)
    d = pm.y_offset + pm.y_scale * y
    bounds = np.cumsum([0] + [len(b.x) for b in batches])
    n = len(batches)
    total = 0.0
    G = np.zeros_like(d)
    for b, a, z in zip(batches, bounds[:-1], bounds[1:]):
        di = d[a:z]
        s = 1.0 / (b.dt * pm.meta["deriv_scale"])
        r = derivative_residual(b.i_hat, di, b.dt) * s * b.mask
        total += np.mean(r * r) / n
        g_r = (2.0 / (r.size * n)) * r * s
        G[a : z - 1] += -0.5 * b.dt * g_r
        G[a + 1 : z] += -0.5 * b.dt * g_r
    grads, _ = nnet.backward(pm.net, cache, G * pm.y_scale)
    return total, grads


def loss_p(pm: PModel, g: GModel, trajs):
    """Trapezoidal consistency of P's derivatives with G's phase-current sequence.

    Only P's parameters receive gradients; G is treated as frozen data.
    """
    return _p_terms(pm, _p_batches(pm, g, trajs))


def derivative_targets(traj: Trajectory) -> np.ndarray:
    """Centered finite differences of the recorded phase currents, one-sided at the ends."""
    return np.gradient(traj.i_abcs, traj.t, axis=0, edge_order=1)


def _p_supervised_terms(pm: PModel, batches):
    X = np.vstack([b.x for b in batches])
    y, cache = nnet.forward(pm.net, X)
    d = pm.y_offset + pm.y_scale * y
    bounds = np.cumsum([0] + [len(b.x) for b in batches])
    n = len(batches)
    total = 0.0
    G = np.zeros_like(d)
    for b, a, z in zip(batches, bounds[:-1], bounds[1:]):
        e = (d[a:z] - b.targets) / pm.meta["deriv_scale"]
        total += np.mean(e * e) / n
        G[a:z] = (2.0 / (e.size * n)) * e / pm.meta["deriv_scale"]
    grads, _ = nnet.backward(pm.net, cache, G * pm.y_scale)
    return total, grads


def loss_p_data(pm: PModel, trajs):
    """Supervised P loss on recorded currents and finite-difference derivative targets."""
    batches = [
        _PBatch(tr, pm.x_norm(p_features(tr, tr.i_abcs)), tr.i_abcs, tr.dt, derivative_targets(tr))
        for tr in trajs
    ]
    return _p_supervised_terms(pm, batches)


# ---------------------------------------------------------------- training

MODES = ("physics", "hybrid", "data")


@dataclass
class TrainingConfig:
    """Run configuration for both training stages.

    ``mode`` selects the G objective: ``physics`` (no data), ``hybrid``
    (physics on every trajectory, data on the first ``data_fraction`` of them)
    or ``data`` (supervised only, the data-driven baseline, which also trains
    P on finite-difference targets).
    """

    mode: str = "hybrid"
    data_fraction: float = 0.0
    physics_weight: float = 1.0
    data_weight: float = 1.0
    epochs: int = 2000
    p_epochs: int = 1000
    lr: float = 1e-3
    seed: int = 7
    hidden: tuple = (38, 24)
    patience: int = 100
    min_rel_change: float = 1e-9
    output_basis: str = "balanced"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.data_fraction <= 1.0:
            raise ValueError("data_fraction must lie in [0, 1]")
        if self.epochs < 0 or self.p_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.output_basis not in OUTPUT_BASES:
            raise ValueError(f"output_basis must be one of {sorted(OUTPUT_BASES)}")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class LossReport:
    physics: list = field(default_factory=list)
    data: list = field(default_factory=list)
    total: list = field(default_factory=list)
    stopped_early: bool = False

    def __len__(self):
        return len(self.total)

    def append(self, physics, data, total):
        self.physics.append(float(physics))
        self.data.append(float(data))
        self.total.append(float(total))


def _stalled(history, patience, tol):
    if len(history) <= patience:
        return False
    old, new = history[-1 - patience], history[-1]
    return abs(new - old) <= tol * max(abs(old), 1e-300)


OUTPUT_BASES = {"current": 0.0, "balanced": 0.5, "flux": 1.0}


def output_map(p: MachineParams, i_scale: float, basis: str = "current") -> np.ndarray:
    """6x6 map from G's raw outputs to qd0 currents.

    Per q and d axis the map is ``i_scale * A**power`` with
    ``A = (L_ls + L_M) * L^-1``, ``L`` the 2x2 stator/rotor inductance block.
    ``power`` 0 gives plain scaled currents; 1 makes G predict flux linkages
    in units of ``(L_ls + L_M) * i_scale``, which equalizes the physics
    residual's sensitivity to every output (plain currents leave the
    stator/rotor leakage split about two orders of magnitude stiffer than
    the magnetizing direction). ``balanced`` (power 1/2) sits in between, so
    that the residual and the current data term are equally well conditioned.
    Zero-sequence outputs always use the plain current scale.
    """
    power = OUTPUT_BASES[basis]
    L = np.array([[p.L_ls + p.L_M, p.L_M], [p.L_M, p.L_lr + p.L_M]])
    w, V = np.linalg.eigh(np.linalg.inv(L) * (p.L_ls + p.L_M))
    block = (V * w**power) @ V.T
    M = np.zeros((6, 6))
    for axis in (0, 1):
        idx = [axis, 3 + axis]
        M[np.ix_(idx, idx)] = i_scale * block
    M[2, 2] = M[5, 5] = i_scale
    return M


def init_g_model(trajs, cfg: TrainingConfig) -> GModel:
    """Fresh G with input statistics from ``trajs`` and a physics-based output scale."""
    if not trajs:
        raise ValueError("at least one trajectory is required")
    X = np.vstack([g_features(tr) for tr in trajs])
    scale = float(np.mean([current_scale(tr.params, voltage_ref(tr)) for tr in trajs]))
    # the boundary currents are constant per trajectory; their spread across a
    # handful of runs says nothing about how far apart two operating points are
    min_scale = np.zeros(G_INPUTS)
    min_scale[:3] = scale
    net = nnet.init_network([G_INPUTS, *cfg.hidden, G_OUTPUTS], cfg.seed)
    if cfg.output_basis == "current":
        out_map = np.full(G_OUTPUTS, scale)
    else:
        out_map = output_map(trajs[0].params, scale, cfg.output_basis)
    return GModel(net, Standardizer.fit(X, min_scale), np.zeros(G_OUTPUTS), out_map,
                  meta={"current_scale": scale, "dt": trajs[0].dt})


def train_g(trajs, cfg: TrainingConfig, collocation=(), g0: GModel | None = None, callback=None):
    """Full-batch Adam on the G objective selected by ``cfg.mode``.

    ``collocation`` holds extra trajectories that only enter the physics term
    (their recorded currents are never read). Returns ``(GModel, LossReport)``.
    """
    trajs = list(trajs)
    collocation = [] if cfg.mode == "data" else list(collocation)
    everything = trajs + collocation
    g = init_g_model(everything, cfg) if g0 is None else g0
    g.meta.update(config=cfg.to_dict(), stage="G")
    report = LossReport()
    if cfg.epochs == 0:
        return g, report
    if cfg.mode == "data":
        flags = [True] * len(trajs)
        w_phys, w_data = 0.0, 1.0
    else:
        n = len(trajs)
        flags = supervised_flags(cfg.data_fraction if cfg.mode == "hybrid" else 0.0, n) + [False] * len(collocation)
        w_phys, w_data = cfg.physics_weight, cfg.data_weight
    batches = _g_batches(g, everything if cfg.mode != "data" else trajs, supervised=flags)
    opt = nnet.OptimizerState(lr=cfg.lr)
    for epoch in range(1, cfg.epochs + 1):
        if w_phys == 0.0:
            currents, cache = _g_forward(g, batches)
            ld, gc = _data_terms(batches, currents, _c_scale(g))
            lp, total = 0.0, ld
            grads = _g_backprop(g, cache, gc)
        else:
            (lp, ld, total), grads = _hybrid_terms(g, batches, w_phys, w_data)
        if not math.isfinite(total):
            raise TrainingError(epoch)
        report.append(lp, ld, total)
        if callback is not None:
            callback(epoch, report)
        nnet.adam_update(g.net, grads, opt)
        if not all(np.all(np.isfinite(p)) for p in g.net.params()):
            raise TrainingError(epoch, "parameters")
        if _stalled(report.total, cfg.patience, cfg.min_rel_change):
            report.stopped_early = True
            break
    log.info("G %s: %d epochs, final loss %.4e", cfg.mode, len(report), report.total[-1])
    return g, report


def init_p_model(g: GModel, trajs, cfg: TrainingConfig, supervised: bool = False) -> PModel:
    if supervised:
        X = np.vstack([p_features(tr, tr.i_abcs) for tr in trajs])
    else:
        X = np.vstack([p_features(tr, g_predict(g, tr)[2]) for tr in trajs])
    i_scale = float(g.meta.get("current_scale", 1.0))
    omega_e = float(np.mean([tr.params.omega_e for tr in trajs]))
    d_scale = omega_e * i_scale
    net = nnet.init_network([P_INPUTS, *cfg.hidden, P_OUTPUTS], cfg.seed + 1)
    return PModel(net, Standardizer.fit(X), np.zeros(P_OUTPUTS), np.full(P_OUTPUTS, d_scale),
                  meta={"deriv_scale": d_scale, "dt": trajs[0].dt})


def train_p(g: GModel, trajs, cfg: TrainingConfig, collocation=(), callback=None):
    """Second stage: fit P with G frozen. The data-driven mode fits finite-difference targets."""
    trajs = list(trajs)
    supervised = cfg.mode == "data"
    everything = trajs if supervised else trajs + list(collocation)
    pm = init_p_model(g, everything, cfg, supervised=supervised)
    pm.meta.update(config=cfg.to_dict(), stage="P")
    report = LossReport()
    if cfg.p_epochs == 0:
        return pm, report
    if supervised:
        batches = [
            _PBatch(tr, pm.x_norm(p_features(tr, tr.i_abcs)), tr.i_abcs, tr.dt, derivative_targets(tr))
            for tr in everything
        ]
        step = _p_supervised_terms
    else:
        batches = _p_batches(pm, g, everything)
        step = _p_terms
    opt = nnet.OptimizerState(lr=cfg.lr)
    for epoch in range(1, cfg.p_epochs + 1):
        loss, grads = step(pm, batches)
        if not math.isfinite(loss):
            raise TrainingError(epoch)
        if supervised:
            report.append(0.0, loss, loss)
        else:
            report.append(loss, 0.0, loss)
        if callback is not None:
            callback(epoch, report)
        nnet.adam_update(pm.net, grads, opt)
        if _stalled(report.total, cfg.patience, cfg.min_rel_change):
            report.stopped_early = True
            break
    log.info("P %s: %d epochs, final loss %.4e", cfg.mode, len(report), report.total[-1])
    return pm, report
