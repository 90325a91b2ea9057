import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sea_dob.tms_usecase import (
    DEFAULT_GEARING,
    JOINTS,
    TASK_CONTACT,
    TASK_SWEEP,
    PlanarArm,
    TmsTask,
    UnreachableError,
    _external_forces,
    coil_pose,
    forward_points,
    inverse_kinematics,
    joint_power_envelope,
    joint_rates,
    joint_torques_static,
    payload_inertia_about_wrist,
    potential_minus_work,
    reachable,
    sea_feasibility,
    torque_envelope,
    usecase_report,
)

ARM = PlanarArm()
Q = st.floats(math.radians(-40.0), math.radians(80.0))


@given(Q)
def test_inverse_kinematics_places_coil_on_head_circle(q):
    joints = inverse_kinematics(ARM, TASK_SWEEP.R, q)
    pts = forward_points(ARM, joints)
    p, w, phi = coil_pose(ARM, TASK_SWEEP.R, q)
    np.testing.assert_allclose(pts[3], p, atol=1e-12)
    np.testing.assert_allclose(pts[2], w, atol=1e-12)
    assert math.isclose(math.remainder(sum(joints) - phi, 2 * math.pi), 0.0, abs_tol=1e-12)
    assert math.isclose(np.linalg.norm(pts[3] - np.asarray(ARM.head)), TASK_SWEEP.R, rel_tol=1e-12)


def test_unreachable_base_detected():
    far = replace(ARM, base=(0.0, 0.0))
    with pytest.raises(UnreachableError):
        inverse_kinematics(far, 0.1, 0.0)
    assert not reachable(far, TASK_SWEEP)
    assert reachable(ARM, TASK_SWEEP) and reachable(ARM, TASK_CONTACT)


def test_wrist_torque_is_payload_weight_times_last_link():
    # 1 kg at 0.05 m: the largest wrist moment occurs with the last link level
    env = torque_envelope(ARM, TASK_SWEEP, n=241)
    assert math.isclose(env["wrist"], 1.0 * 9.81 * 0.05, rel_tol=1e-4)
    assert math.isclose(env["wrist"], 0.49, rel_tol=0.01)


def test_zero_gravity_gives_zero_torque():
    arm = replace(ARM, g=0.0)
    tau = joint_torques_static(arm, TASK_SWEEP, 0.3).as_array()
    np.testing.assert_allclose(tau, 0.0, atol=1e-15)


def test_zero_task_speed_gives_zero_power():
    env = joint_power_envelope(ARM, replace(TASK_SWEEP, qdot=0.0), n=11)
    assert all(v == 0.0 for v in env.max_power.values())


@settings(max_examples=30)
@given(Q, st.sampled_from([TASK_SWEEP, TASK_CONTACT]), st.floats(0.0, 0.5))
def test_static_torques_satisfy_virtual_work(q, task, mlink):
    # holding torques equal the gradient of (gravity potential - contact work)
    arm = replace(ARM, link_masses=(mlink, mlink, 0.0))
    joints = inverse_kinematics(arm, task.R, q)
    loads = _external_forces(arm, task.R, q, task.force, joints)
    contact = loads[-1:] if task.force else []
    tau = joint_torques_static(arm, task, q, joints).as_array()
    h = 1e-6
    grad = np.zeros(3)
    for j in range(3):
        dq = np.zeros(3)
        dq[j] = h
        grad[j] = (potential_minus_work(arm, joints + dq, contact) - potential_minus_work(arm, joints - dq, contact)) / (2 * h)
    np.testing.assert_allclose(tau, grad, atol=1e-6)


@settings(max_examples=30)
@given(Q, st.sampled_from([1.0, -1.0]))
def test_joint_rates_reproduce_task_velocity(q, sign):
    qd = sign * TASK_SWEEP.qdot
    rates = joint_rates(ARM, TASK_SWEEP.R, q, qd)
    h = 1e-6
    j0 = inverse_kinematics(ARM, TASK_SWEEP.R, q - h)
    j1 = inverse_kinematics(ARM, TASK_SWEEP.R, q + h)
    np.testing.assert_allclose(rates, (j1 - j0) / (2 * h) * qd, atol=1e-6)


def test_payload_inertia_exceeds_pendulum():
    assert math.isclose(payload_inertia_about_wrist(ARM), 2.5e-3)
    assert payload_inertia_about_wrist(ARM) > 2.0e-3


def test_feasibility_of_reference_torques():
    feas = sea_feasibility({"wrist": 0.49, "elbow": 4.35, "shoulder": 9.30})
    assert math.isclose(feas["wrist"].actuator_torque, 0.49)
    assert math.isclose(feas["elbow"].actuator_torque, 2.175)
    assert math.isclose(feas["shoulder"].actuator_torque, 2.325)
    assert all(f.feasible and f.limit == 2.5 for f in feas.values())
    assert not sea_feasibility({"wrist": 3.0})["wrist"].feasible
    with pytest.raises(ValueError):
        sea_feasibility({"wrist": 1.0}, {"wrist": 0.0})


def test_report_is_json_serializable_and_complete():
    rep = usecase_report()
    again = json.loads(json.dumps(rep))
    assert again["schema_version"] == 1
    assert set(again["max_joint_torque_Nm"]) == set(JOINTS)
    assert again["reachable"] == {"sweep": True, "contact": True}
    assert set(again["feasibility"]) == set(DEFAULT_GEARING)


def test_envelopes_within_an_order_of_magnitude_of_reference():
    rep = usecase_report()
    for j, ref in rep["reference_joint_torque_Nm"].items():
        assert ref / 10 <= rep["max_joint_torque_Nm"][j] <= ref * 10
    pw = max(rep["max_joint_power_W"].values())
    assert rep["reference_max_power_W"] / 10 <= pw <= rep["reference_max_power_W"] * 10


def test_invalid_arm_rejected():
    with pytest.raises(ValueError):
        PlanarArm(L1=0.0)
    with pytest.raises(ValueError):
        PlanarArm(payload=-1.0)
    assert TmsTask().force == 0.0
