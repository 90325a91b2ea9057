"""Continuous-time SEA + external load model.

All quantities are in the actuator output frame.  The spring impedance is
``Z_s = k_s/s (+ b_s)``, the load impedance ``Z_e = m_e s + b_e``, and the
velocity-controlled motor is a unity-DC low-pass ``G_a``.  Positive external
torque ``tau_e`` opposes the spring torque on the load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .drivetrain import KS_GEOMETRY, ActuatorLimits
from .lti import TF, RationalTransferFunction, StateSpaceModel

#: pendulum test load: 125 g brass at 12.7 cm
PENDULUM_MASS = 0.125
PENDULUM_LENGTH = 0.127
NOMINAL_M_E = 2.0e-3


class PlantError(ValueError):
    pass


def point_mass_inertia(mass: float, radius: float) -> float:
    return mass * radius**2


@dataclass(frozen=True)
class PlantParams:
    """SEA and load parameters.

    Attributes
    ----------
    k_s : float
        Output-frame spring stiffness, N*m/rad.
    m_e : float
        External inertia, kg*m^2.
    b_e : float
        External damping, N*m*s/rad.
    b_s : float
        Spring damping, N*m*s/rad (viscoelastic spring; 0 outside the scanner).
    motor_bandwidth : float
        -3 dB bandwidth of the velocity loop, Hz.
    motor_order : int
        1 (first-order lag) or 2 (critically damped pair, same -3 dB point).
    """

    k_s: float = KS_GEOMETRY
    m_e: float = NOMINAL_M_E
    b_e: float = 0.0
    b_s: float = 0.0
    motor_bandwidth: float = 50.0
    motor_order: int = 1
    limits: ActuatorLimits = field(default_factory=ActuatorLimits)

    def __post_init__(self):
        if not (self.k_s > 0 and self.m_e > 0 and self.motor_bandwidth > 0):
            raise PlantError("k_s, m_e and motor_bandwidth must be positive")
        if self.b_e < 0 or self.b_s < 0:
            raise PlantError("damping must be non-negative")
        if self.motor_order not in (1, 2):
            raise PlantError("motor_order must be 1 or 2")

    @property
    def omega_c(self) -> float:
        return 2.0 * math.pi * self.motor_bandwidth

    @property
    def resonance(self) -> float:
        """Undamped load resonance sqrt(k_s/m_e), rad/s."""
        return math.sqrt(self.k_s / self.m_e)


@dataclass
class PlantState:
    theta_a: float = 0.0
    omega_a: float = 0.0
    theta_e: float = 0.0
    omega_e: float = 0.0

    @property
    def theta_s(self) -> float:
        return self.theta_a - self.theta_e


def build_Zs(p: PlantParams) -> RationalTransferFunction:
    return TF([p.k_s, p.b_s], [0.0, 1.0])


def build_Ze(p: PlantParams) -> RationalTransferFunction:
    return TF([p.b_e, p.m_e], [1.0])


def build_Gsa(p: PlantParams) -> RationalTransferFunction:
    """Motor velocity to spring torque with the load free, Z_s Z_e / (Z_s + Z_e)."""
    if p.b_s == 0.0:
        return TF([p.k_s * p.b_e, p.k_s * p.m_e], [p.k_s, p.b_e, p.m_e])
    zs, ze = build_Zs(p), build_Ze(p)
    return zs * ze / (zs + ze)


def build_Gse(p: PlantParams) -> RationalTransferFunction:
    """External torque to spring torque, Z_s / (Z_s + Z_e)."""
    if p.b_s == 0.0:
        return TF([p.k_s], [p.k_s, p.b_e, p.m_e])
    zs, ze = build_Zs(p), build_Ze(p)
    return zs / (zs + ze)


def critically_damped_corner(omega_c: float) -> float:
    """Pole of ``(w/(s+w))**2`` whose -3 dB point is ``omega_c``."""
    return omega_c / math.sqrt(math.sqrt(2.0) - 1.0)


def build_Ga(p: PlantParams) -> RationalTransferFunction:
    wc = p.omega_c
    if p.motor_order == 1:
        return TF([wc], [wc, 1.0])
    wn = critically_damped_corner(wc)
    return TF([wn * wn], [wn * wn, 2.0 * wn, 1.0])


def build_Gsa_d(p: PlantParams) -> RationalTransferFunction:
    return build_Gsa(p) * build_Ga(p)


@dataclass(frozen=True)
class SimModel:
    """State-space plant with named signals.

    Inputs are ``(omega_a_d, tau_e)``; outputs ``(tau_s, theta_e, omega_e, theta_s)``.
    """

    ss: StateSpaceModel
    params: PlantParams
    states: tuple
    inputs: tuple = ("omega_a_d", "tau_e")
    outputs: tuple = ("tau_s", "theta_e", "omega_e", "theta_s")

    def index(self, name: str) -> int:
        return self.states.index(name)

    def energy(self, x: np.ndarray) -> float:
        """Spring plus load kinetic energy."""
        p = self.params
        th_s = x[self.index("theta_a")] - x[self.index("theta_e")]
        return 0.5 * p.k_s * th_s**2 + 0.5 * p.m_e * x[self.index("omega_e")] ** 2


def assemble_sim_model(p: PlantParams) -> SimModel:
    """Linear plant used by the time-domain simulator.

    The external torque is an opaque input; gravity and contact are computed
    by the caller from the state.
    """
    k, m, be, bs = p.k_s, p.m_e, p.b_e, p.b_s
    wc = p.omega_c
    if p.motor_order == 1:
        states = ("omega_a", "theta_a", "theta_e", "omega_e")
        n = 4
        A = np.zeros((n, n))
        B = np.zeros((n, 2))
        A[0, 0] = -wc
        B[0, 0] = wc
    else:
        states = ("omega_a", "alpha_a", "theta_a", "theta_e", "omega_e")
        n = 5
        A = np.zeros((n, n))
        B = np.zeros((n, 2))
        wn = critically_damped_corner(wc)
        A[0, 1] = 1.0
        A[1, 0] = -wn * wn
        A[1, 1] = -2.0 * wn
        B[1, 0] = wn * wn
    ia, ita, ite, ie = states.index("omega_a"), states.index("theta_a"), states.index("theta_e"), states.index("omega_e")
    A[ita, ia] = 1.0
    A[ite, ie] = 1.0
    # tau_s = k (th_a - th_e) + b_s (w_a - w_e)
    tau = np.zeros(n)
    tau[ita], tau[ite], tau[ia], tau[ie] = k, -k, bs, -bs
    A[ie] = tau / m
    A[ie, ie] -= be / m
    B[ie, 1] = -1.0 / m
    C = np.zeros((4, n))
    C[0] = tau
    C[1, ite] = 1.0
    C[2, ie] = 1.0
    C[3, ita], C[3, ite] = 1.0, -1.0
    return SimModel(StateSpaceModel(A, B, C, np.zeros((4, 2))), p, states)
