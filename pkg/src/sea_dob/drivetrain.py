"""Spring element geometry, planetary gear ratios and actuator limits.

Angles are radians and stiffnesses N*m/rad unless a name says otherwise.
The spring element is four linear compression springs acting in opposed pairs
across two sliders on the gearbox housing.  Reflection to the output frame
uses the output:housing torque ratio of a sun-input, carrier-output,
ring-housing planetary set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: published centerline band of a spring at +/-12 deg rotation, mm
CENTERLINE_BAND_MM = (24.14, 25.48)

#: output-frame stiffness presets, N*m/rad
KS_GEOMETRY = 21.5  # housing rate ~10.55 reflected through the 10/7 torque ratio
KS_IMPLIED = 14.5  # back-solved from k_v = 0.5 k_s, b_v = 0.015 k_s, zeta = 0.9, m_e = 2e-3

KS_PRESETS = {"ks-geometry": KS_GEOMETRY, "ks-implied": KS_IMPLIED}


class DrivetrainError(ValueError):
    pass


def fit_centerline_offsets(r0_mm: float, max_rotation: float, band_mm=CENTERLINE_BAND_MM):
    """Sine/cosine offsets so that ``r(-max)``, ``r(+max)`` hit ``band_mm``.

    ``r(phi) = r0 + c_sin*sin(phi) - c_cos*(1 - cos(phi))``.
    """
    lo, hi = band_mm
    c_sin = (hi - lo) / (2.0 * math.sin(max_rotation))
    c_cos = (2.0 * r0_mm - (hi + lo)) / (2.0 * (1.0 - math.cos(max_rotation)))
    return c_sin, c_cos


@dataclass(frozen=True)
class SpringElementGeometry:
    """Opposed-pair compression spring element.

    Attributes
    ----------
    n_springs : int
        Total spring count, even.
    k_lin : float
        Linear rate of one spring, N/mm.
    r0 : float
        No-load centerline radius, mm.
    max_rotation : float
        Rotational range, rad (symmetric).
    c_sin, c_cos : float
        Centerline shift coefficients, mm.  ``None`` fits them to the
        published 24.14-25.48 mm band.
    """

    n_springs: int = 4
    k_lin: float = 4.3
    r0: float = 25.0
    max_rotation: float = math.radians(12.0)
    c_sin: float | None = None
    c_cos: float | None = None

    def __post_init__(self):
        if self.n_springs <= 0 or self.n_springs % 2:
            raise DrivetrainError("n_springs must be a positive even count")
        if self.k_lin <= 0 or self.r0 <= 0 or self.max_rotation <= 0:
            raise DrivetrainError("spring rate, radius and range must be positive")
        if self.c_sin is None or self.c_cos is None:
            cs, cc = fit_centerline_offsets(self.r0, self.max_rotation)
            object.__setattr__(self, "c_sin", cs if self.c_sin is None else self.c_sin)
            object.__setattr__(self, "c_cos", cc if self.c_cos is None else self.c_cos)

    def centerline_radius(self, angle: float) -> float:
        """Centerline radius (mm) of the spring that the slider shifts outward at ``angle``."""
        return self.r0 + self.c_sin * math.sin(angle) - self.c_cos * (1.0 - math.cos(angle))


def torsion_rate(geom: SpringElementGeometry, angle: float) -> float:
    """Parallel-spring torsion rate ``sum(k_i * r_i**2)`` in N*m/rad at the housing."""
    if abs(angle) > geom.max_rotation * (1 + 1e-12):
        raise DrivetrainError(f"angle {angle:.4f} rad outside +/-{geom.max_rotation:.4f} rad")
    k = geom.k_lin * 1e3
    r_plus = geom.centerline_radius(angle) * 1e-3
    r_minus = geom.centerline_radius(-angle) * 1e-3
    return 0.5 * geom.n_springs * k * (r_plus**2 + r_minus**2)


def mean_torsion_rate(geom: SpringElementGeometry, n: int = 241) -> float:
    phis = np.linspace(-geom.max_rotation, geom.max_rotation, n)
    return float(np.mean([torsion_rate(geom, p) for p in phis]))


@dataclass(frozen=True)
class GearboxSpec:
    """Planetary set: sun input, carrier output, ring as housing.

    ``rho`` is the ring/sun tooth ratio.
    """

    n_io: float = 3.0 / 10.0

    def __post_init__(self):
        if not (1 / 5 - 1e-12 <= self.n_io <= 1 / 3 + 1e-12):
            raise DrivetrainError(f"n_io={self.n_io} outside the manufacturable 1/5..1/3 range")

    @property
    def rho(self) -> float:
        return 1.0 / self.n_io - 1.0

    @property
    def n_ih(self) -> float:
        """Input-to-housing ratio with the output held."""
        return -1.0 / self.rho

    @property
    def n_oh(self) -> float:
        """Output-to-housing ratio with the input held."""
        return self.rho / (1.0 + self.rho)

    @property
    def housing_to_output_torque(self) -> float:
        return self.rho / (1.0 + self.rho)

    @property
    def output_to_housing_torque(self) -> float:
        return (1.0 + self.rho) / self.rho


def reflected_stiffness(k_housing: float, torque_ratio: float) -> float:
    """Output-frame stiffness from housing stiffness and the output:housing torque ratio."""
    if k_housing <= 0 or torque_ratio <= 0:
        raise DrivetrainError("stiffness and ratio must be positive")
    return k_housing * torque_ratio**2


def reflected_stiffness_from(geom: SpringElementGeometry, gbx: GearboxSpec) -> float:
    return reflected_stiffness(mean_torsion_rate(geom), gbx.output_to_housing_torque)


@dataclass(frozen=True)
class ActuatorLimits:
    vel_limit_output: float = 5.2
    rated_velocity: float = 4.8
    torque_limit_output: float = 3.2
    torque_limit_housing: float = 2.2
    peak_power: float = 12.0
    rated_torque: float = 2.5

    def power_identity_holds(self) -> bool:
        return math.isclose(self.rated_velocity * self.rated_torque, self.peak_power, rel_tol=1e-12)

    def torque_ratio_error(self, gbx: GearboxSpec) -> float:
        """|housing/output limit ratio - planetary prediction|."""
        return abs(self.torque_limit_housing / self.torque_limit_output - gbx.housing_to_output_torque)


@dataclass(frozen=True)
class LimitCheck:
    velocity: float
    spring_torque: float
    velocity_saturated: bool = False
    hard_stop: bool = False
    flags: tuple = field(default=())


def check_limits(cmd_velocity: float, spring_torque: float, lim: ActuatorLimits = ActuatorLimits()) -> LimitCheck:
    """Clamp a velocity command and a spring torque to the actuator envelope.

    Saturation is a reported state, not an error.
    """
    v, t = cmd_velocity, spring_torque
    vs = abs(v) > lim.vel_limit_output
    hs = abs(t) > lim.torque_limit_output
    if vs:
        v = math.copysign(lim.vel_limit_output, v)
    if hs:
        t = math.copysign(lim.torque_limit_output, t)
    flags = tuple(name for name, on in (("velocity_saturated", vs), ("hard_stop", hs)) if on)
    return LimitCheck(v, t, vs, hs, flags)
