import math

import numpy as np
import pytest

from neuim import machine, simulator
from neuim.simulator import Scenario, ScenarioKind, simulate
from neuim import dataio


@pytest.fixture(scope="module")
def free_accel():
    return simulate(dataio.free_acceleration_scenario(save_every=1, t_end=1.0))


def tc(**kw):
    base = dict(kind="torque-change", params=machine.SMALL_MACHINE, v_mag=180.0, t_end=3.0,
                torque_schedule=((0, 0), (2.05, 5), (2.5, -5)))
    base.update(kw)
    return Scenario(**base)


# -- scenario validation


@pytest.mark.parametrize("kw", [
    dict(dt=0.0),
    dict(dt=3e-4, t_end=1.0),
    dict(torque_schedule=((0, 0), (2.5, 1), (2.05, 2))),
    dict(torque_schedule=((0, 0), (3.5, 1))),
    dict(sag_schedule=((1.0, -1.0),)),
    dict(save_every=7),
    dict(t_record=2.9999),
])
def test_invalid_scenarios(kw):
    with pytest.raises(ValueError):
        tc(**kw)


def test_free_acceleration_must_be_unloaded():
    with pytest.raises(ValueError):
        Scenario(ScenarioKind.FREE_ACCELERATION, machine.SMALL_MACHINE, 180.0, 1.0, torque_schedule=((0, 1),))


# -- sources and schedules


def test_torque_schedule_lookup():
    sc = tc()
    assert simulator.mechanical_torque(sc, 0.0) == 0
    assert simulator.mechanical_torque(sc, 2.2) == 5
    assert simulator.mechanical_torque(sc, 3.0) == -5


def test_fault_source_is_zero_during_sag():
    sc = dataio.fault_scenario(2.3)
    assert np.array_equal(simulator.source_voltage(sc, 6.05), [0, 0, 0])
    assert sc.v_mag == pytest.approx(2300 * math.sqrt(2 / 3))
    assert simulator.source_voltage(sc, 6.2)[0] != 0.0


def test_source_is_balanced():
    sc = tc()
    assert simulator.source_voltage(sc, 0.0)[0] == pytest.approx(sc.v_mag)
    for t in np.linspace(0, 3, 97):
        assert abs(simulator.source_voltage(sc, t).sum()) < 1e-9 * sc.v_mag


# -- state derivative


def test_state_derivative_zero_at_origin_without_source():
    sc = tc(v_mag=0.0)
    assert not simulator.state_derivative(sc, 0.3, np.zeros(8)).any()


def test_fast_path_matches_reference_derivative():
    sc = dataio.fault_scenario(2.3)
    rhs = simulator._scalar_rhs(sc)
    rng = np.random.default_rng(1)
    for _ in range(20):
        y = rng.normal(size=8) * [3, 3, 0.1, 3, 3, 0.1, 300, 10]
        t = rng.uniform(0, 7)
        ref = simulator.state_derivative(sc, t, y)
        assert np.allclose(rhs(t, tuple(y)), ref, rtol=1e-10, atol=1e-8)


# -- simulation


def test_zero_source_gives_zero_trajectory():
    tr = simulate(tc(v_mag=0.0, t_end=0.01, torque_schedule=((0, 0),)))
    assert not tr.i_abcs.any() and not tr.omega_r.any()


def test_free_acceleration_reaches_near_synchronous_speed(free_accel):
    slip = 1 - free_accel.omega_r[-1] / machine.SMALL_MACHINE.omega_e
    assert 0 <= slip < 0.02


def test_speed_changes_follow_torque_sign(free_accel):
    # the start-up torque pulsates and is briefly negative, so the rotor may
    # slow down only where T_e < 0, and rises monotonically once that is over
    tr = free_accel
    w = tr.omega_r
    falling = np.where(np.diff(w) < 0)[0]
    assert np.all(np.minimum(tr.T_e[falling], tr.T_e[falling + 1]) < 0)
    settled = tr.t > 0.1
    assert np.all(np.diff(w[settled]) >= -1e-9)


def test_trajectory_invariants(free_accel):
    tr = free_accel
    ls, lr = machine.flux_linkages(tr.params, tr.i_qd0s, tr.i_qd0r)
    assert np.array_equal(ls, tr.lam_qd0s) and np.array_equal(lr, tr.lam_qd0r)
    assert np.allclose(np.diff(tr.t), tr.dt, rtol=1e-9)
    assert np.allclose(np.diff(tr.theta), tr.omega[:-1] * tr.dt, rtol=1e-9)
    assert np.allclose(machine.abc_to_qd0(tr.theta, tr.i_abcs), tr.i_qd0s, atol=1e-10)
    assert len(tr) == 10001


def test_steady_state_flux_nearly_constant(free_accel):
    tr = free_accel
    lam_s, lam_r = tr.lam_qd0s[-1], tr.lam_qd0r[-1]
    sc = dataio.free_acceleration_scenario(save_every=1)
    d = simulator.state_derivative(sc, tr.t[-1], np.r_[lam_s, lam_r, tr.omega_r[-1], 0.0])
    assert np.linalg.norm(d[:6]) / np.linalg.norm(np.r_[lam_s, lam_r]) < 1e-3


def test_flux_derivatives_match_finite_differences(free_accel):
    """Centered differences of the emitted flux agree with the voltage equations to O(dt^2)."""
    tr = free_accel
    errs = []
    for stride in (4, 2):
        t, ls, lr = tr.t[::stride], tr.lam_qd0s[::stride], tr.lam_qd0r[::stride]
        s, r = tr.i_qd0s[::stride], tr.i_qd0r[::stride]
        h = t[1] - t[0]
        v = machine.abc_to_qd0(tr.theta[::stride], tr.v_abcs[::stride])
        ds, dr = machine.flux_derivatives(tr.params, v, s, r, ls, lr, tr.omega_r[::stride])
        fd = (ls[2:] - ls[:-2]) / (2 * h)
        errs.append(np.abs(fd - ds[1:-1])[2000 // stride:].max())
    assert errs[1] < errs[0] / 3.0


def test_rk4_fourth_order_convergence():
    def final(dt):
        sc = dataio.free_acceleration_scenario(dt=dt, save_every=1, t_end=0.2)
        tr = simulate(sc)
        return np.r_[tr.lam_qd0s[-1], tr.lam_qd0r[-1], tr.omega_r[-1]]

    ref = final(1e-4 / 8)
    e1 = np.abs(final(1e-4) - ref).max()
    e2 = np.abs(final(5e-5) - ref).max()
    assert math.log2(e1 / e2) >= 3.5


def test_simulation_is_deterministic():
    sc = tc(t_end=0.05, torque_schedule=((0, 0),))
    a, b = simulate(sc), simulate(sc)
    assert np.array_equal(a.i_abcs, b.i_abcs) and np.array_equal(a.omega_r, b.omega_r)


def test_recording_window_and_stride():
    sc = tc(dt=1e-4, save_every=10, t_record=1.9)
    tr = simulate(sc)
    assert tr.t[0] == pytest.approx(1.9) and tr.t[-1] == pytest.approx(3.0)
    assert len(tr) == 1101 and tr.dt == pytest.approx(1e-3)


def test_non_finite_state_aborts_with_step():
    sc = tc(dt=0.05, t_end=3.0)
    with pytest.raises(simulator.SimulationError) as info:
        simulate(sc)
    assert info.value.step >= 1


def test_explicit_initial_state_is_used():
    sc = tc(v_mag=0.0, t_end=0.001, torque_schedule=((0, 0),))
    tr = simulate(sc, initial_state=[0, 0, 0, 0, 0, 0, 100.0, 0])
    assert tr.omega_r[0] == 100.0
    with pytest.raises(ValueError):
        simulate(sc, initial_state=[0, 0])
