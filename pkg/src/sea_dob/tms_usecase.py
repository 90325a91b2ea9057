"""Statics and joint-power envelope of a 3-DOF planar arm carrying a TMS coil.

The arm works in a vertical plane: ``x`` horizontal toward the head, ``y``
up, gravity along ``-y``.  Joint order is shoulder, elbow, wrist.  The last
link (length ``L0``) runs from the wrist to the coil center and is kept on
the head radius, so the coil always faces the head center.

The task angle ``q`` places the coil at ``h + R*(-cos q, sin q)``: ``q = 0``
is level with the head on the robot side, positive ``q`` moves over the top.
A plain origin-mounted shoulder cannot reach the head (``L0+L1+L2 < |h|``),
so the shoulder sits at ``base``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .drivetrain import ActuatorLimits
from .plant import NOMINAL_M_E

#: reference envelope values for the coil-handling robot (N*m, W)
REFERENCE_TORQUES = {"wrist": 0.49, "elbow": 4.35, "shoulder": 9.30}
REFERENCE_POWER = 3.59
JOINTS = ("shoulder", "elbow", "wrist")
DEFAULT_GEARING = {"wrist": 1.0, "elbow": 2.0, "shoulder": 4.0}


class UnreachableError(ValueError):
    pass


@dataclass(frozen=True)
class PlanarArm:
    """Link lengths (m), shoulder position, payload and optional link masses.

    ``link_masses`` are (shoulder link, elbow link, wrist link) point masses
    at the link midpoints.
    """

    L0: float = 0.05
    L1: float = 0.20
    L2: float = 0.10
    base: tuple = (0.32, 0.0)
    head: tuple = (0.60, 0.0)
    payload: float = 1.0
    link_masses: tuple = (0.0, 0.0, 0.0)
    g: float = 9.81

    def __post_init__(self):
        if min(self.L0, self.L1, self.L2) <= 0:
            raise ValueError("link lengths must be positive")
        if self.payload < 0 or min(self.link_masses) < 0:
            raise ValueError("masses must be non-negative")

    @property
    def lengths(self) -> tuple:
        return (self.L1, self.L2, self.L0)


@dataclass(frozen=True)
class TmsTask:
    R: float = 0.10
    q_range: tuple = (math.radians(-40.0), math.radians(80.0))
    qdot: float = math.radians(16.0)
    force: float = 0.0


TASK_SWEEP = TmsTask()
TASK_CONTACT = TmsTask(R=0.09, force=5.0)


def coil_pose(arm: PlanarArm, R: float, q: float) -> tuple:
    """Coil center ``p``, wrist position ``w`` and last-link absolute angle."""
    h = np.asarray(arm.head, dtype=float)
    u = np.array([-math.cos(q), math.sin(q)])
    p = h + R * u
    w = h + (R + arm.L0) * u
    return p, w, -q  # last link points from w toward h, direction (cos q, -sin q)


def inverse_kinematics(arm: PlanarArm, R: float, q: float) -> np.ndarray:
    """Joint angles (shoulder, elbow, wrist) on the elbow-up branch."""
    p, w, phi = coil_pose(arm, R, q)
    d = w - np.asarray(arm.base, dtype=float)
    r2 = float(d @ d)
    c2 = (r2 - arm.L1**2 - arm.L2**2) / (2.0 * arm.L1 * arm.L2)
    if not -1.0 <= c2 <= 1.0:
        raise UnreachableError(f"wrist at {w.round(4).tolist()} is out of reach (|d| = {math.sqrt(r2):.4f} m)")
    q2 = -math.acos(c2)  # elbow up: elbow above the shoulder-wrist line
    q1 = math.atan2(d[1], d[0]) - math.atan2(arm.L2 * math.sin(q2), arm.L1 + arm.L2 * math.cos(q2))
    q3 = phi - q1 - q2
    return np.array([q1, q2, q3])


def reachable(arm: PlanarArm, task: TmsTask, n: int = 121) -> bool:
    try:
        for q in np.linspace(*task.q_range, n):
            inverse_kinematics(arm, task.R, q)
    except UnreachableError:
        return False
    return True


def forward_points(arm: PlanarArm, joints) -> list:
    """Joint and tip positions: shoulder, elbow, wrist, coil."""
    pts = [np.asarray(arm.base, dtype=float)]
    phi = 0.0
    for L, qj in zip(arm.lengths, joints):
        phi += qj
        pts.append(pts[-1] + L * np.array([math.cos(phi), math.sin(phi)]))
    return pts


def point_jacobian(arm: PlanarArm, joints, link: int, frac: float = 1.0) -> np.ndarray:
    """2x3 Jacobian of the point ``frac`` along link ``link`` (0-based)."""
    pts = forward_points(arm, joints)
    target = pts[link] + frac * (pts[link + 1] - pts[link])
    J = np.zeros((2, 3))
    for j in range(link + 1):
        r = target - pts[j]
        J[:, j] = (-r[1], r[0])
    return J


def pose_jacobian(arm: PlanarArm, joints) -> np.ndarray:
    """3x3 Jacobian of (coil x, coil y, last-link angle)."""
    J = np.zeros((3, 3))
    J[:2] = point_jacobian(arm, joints, 2)
    J[2] = 1.0
    return J


@dataclass(frozen=True)
class JointTorques:
    shoulder: float
    elbow: float
    wrist: float

    def as_dict(self) -> dict:
        return {"shoulder": self.shoulder, "elbow": self.elbow, "wrist": self.wrist}

    def as_array(self) -> np.ndarray:
        return np.array([self.shoulder, self.elbow, self.wrist])


def _external_forces(arm: PlanarArm, R: float, q: float, force: float, joints) -> list:
    """(link, frac, force vector) loads acting on the arm."""
    down = np.array([0.0, -arm.g])
    loads = [(2, 1.0, arm.payload * down)]
    for i, m in enumerate(arm.link_masses):
        if m:
            loads.append((i, 0.5, m * down))
    if force:
        p, _, _ = coil_pose(arm, R, q)
        h = np.asarray(arm.head, dtype=float)
        u = (p - h) / np.linalg.norm(p - h)
        loads.append((2, 1.0, force * u))  # head pushes the coil outward
    return loads


def joint_torques_static(arm: PlanarArm, task: TmsTask, q: float, joints=None) -> JointTorques:
    """Actuator torques holding the arm at task angle ``q``.

    ``tau = -sum J_i^T f_i`` over gravity and contact loads.
    """
    joints = inverse_kinematics(arm, task.R, q) if joints is None else np.asarray(joints, dtype=float)
    tau = np.zeros(3)
    for link, frac, f in _external_forces(arm, task.R, q, task.force, joints):
        tau -= point_jacobian(arm, joints, link, frac).T @ f
    return JointTorques(*tau)


def potential_minus_work(arm: PlanarArm, joints, forces) -> float:
    """Gravity potential minus the work of fixed external forces, for virtual-work checks."""
    pts = forward_points(arm, joints)
    V = arm.payload * arm.g * pts[3][1]
    for i, m in enumerate(arm.link_masses):
        V += m * arm.g * 0.5 * (pts[i][1] + pts[i + 1][1])
    for link, frac, f in forces:
        pt = pts[link] + frac * (pts[link + 1] - pts[link])
        V -= float(f @ pt)
    return V


def joint_rates(arm: PlanarArm, R: float, q: float, qdot: float) -> np.ndarray:
    """Joint velocities producing ``qdot`` along the head circle."""
    joints = inverse_kinematics(arm, R, q)
    pose_rate = np.array([R * math.sin(q) * qdot, R * math.cos(q) * qdot, -qdot])
    return np.linalg.solve(pose_jacobian(arm, joints), pose_rate)


@dataclass(frozen=True)
class PowerEnvelope:
    max_power: dict
    argmax_q: dict
    argmax_sign: dict
    max_torque: dict


def joint_power_envelope(arm: PlanarArm, task: TmsTask = TASK_SWEEP, n: int = 121) -> PowerEnvelope:
    """Max ``|tau_j * qdot_j|`` per joint over the task sweep and both directions."""
    best = {j: (0.0, None, None) for j in JOINTS}
    tmax = {j: 0.0 for j in JOINTS}
    for q in np.linspace(*task.q_range, n):
        tau = joint_torques_static(arm, task, q).as_array()
        for i, j in enumerate(JOINTS):
            tmax[j] = max(tmax[j], abs(float(tau[i])))
        for sign in (1.0, -1.0):
            rates = joint_rates(arm, task.R, q, sign * task.qdot)
            for i, j in enumerate(JOINTS):
                pw = abs(float(tau[i] * rates[i]))
                if pw > best[j][0]:
                    best[j] = (pw, float(q), sign)
    return PowerEnvelope(
        {j: best[j][0] for j in JOINTS},
        {j: best[j][1] for j in JOINTS},
        {j: best[j][2] for j in JOINTS},
        tmax,
    )


def torque_envelope(arm: PlanarArm, task: TmsTask, n: int = 121) -> dict:
    out = {j: 0.0 for j in JOINTS}
    for q in np.linspace(*task.q_range, n):
        for j, v in joint_torques_static(arm, task, q).as_dict().items():
            out[j] = max(out[j], abs(v))
    return out


def payload_inertia_about_wrist(arm: PlanarArm) -> float:
    return arm.payload * arm.L0**2


@dataclass(frozen=True)
class Feasibility:
    joint: str
    torque: float
    reduction: float
    actuator_torque: float
    limit: float
    feasible: bool


def sea_feasibility(torques: dict, gearing: dict = None, limit: float | None = None) -> dict:
    """Joint torque divided by its reduction, against the SEA's direct torque."""
    gearing = DEFAULT_GEARING if gearing is None else gearing
    limit = ActuatorLimits().rated_torque if limit is None else limit
    out = {}
    for j, t in torques.items():
        r = gearing[j]
        if r <= 0:
            raise ValueError(f"reduction for {j} must be positive")
        a = abs(t) / r
        out[j] = Feasibility(j, float(abs(t)), float(r), float(a), float(limit), bool(a <= limit))
    return out


def usecase_report(arm: PlanarArm = PlanarArm(), gearing: dict = None) -> dict:
    """Computed envelopes next to the reference values, as plain data."""
    gearing = DEFAULT_GEARING if gearing is None else gearing
    t_sweep = torque_envelope(arm, TASK_SWEEP)
    t_contact = torque_envelope(arm, TASK_CONTACT)
    torques = {j: max(t_sweep[j], t_contact[j]) for j in JOINTS}
    power = joint_power_envelope(arm, TASK_SWEEP)
    feas = sea_feasibility(torques, gearing)
    return {
        "schema_version": 1,
        "reachable": {"sweep": reachable(arm, TASK_SWEEP), "contact": reachable(arm, TASK_CONTACT)},
        "base_m": list(arm.base),
        "max_joint_torque_Nm": torques,
        "reference_joint_torque_Nm": REFERENCE_TORQUES,
        "max_joint_power_W": power.max_power,
        "argmax_q_deg": {j: math.degrees(v) if v is not None else None for j, v in power.argmax_q.items()},
        "argmax_qdot_sign": power.argmax_sign,
        "reference_max_power_W": REFERENCE_POWER,
        "payload_inertia_about_wrist_kgm2": payload_inertia_about_wrist(arm),
        "pendulum_inertia_kgm2": NOMINAL_M_E,
        "feasibility": {
            j: {"reduction": f.reduction, "actuator_torque_Nm": f.actuator_torque, "limit_Nm": f.limit, "feasible": f.feasible}
            for j, f in feas.items()
        },
    }
