"""Discrete torque controllers, the outer impedance loop and encoder quantization.

Every controller runs at a fixed sample period.  A tick is two calls:
``observe(tau_meas)`` advances the output-velocity observer and returns the
estimate, then ``command(tau_d, tau_meas)`` returns the clamped motor
velocity command.  ``step`` does both.

The observer estimates the load velocity from the commanded motor velocity
and the measured spring torque, ``Q(s) * (omega_a_d - s*tau_s/k_s)``.  The
inverse spring model is realised jointly with Q as one proper filter.  The
command fed to Q is the previous tick's clamped command, which breaks the
algebraic loop.  The DOB controller adds the estimate to its proportional
command; the other variants only expose it to the impedance loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .drivetrain import ActuatorLimits
from .lti import TF, DiscreteFilter, RationalTransferFunction, discretize_tustin

VARIANTS = ("DirectP", "DirectPI", "CascadedPI2", "DOB")
BUTTERWORTH_ZETA = math.sqrt(2.0) / 2.0
DOB_ALPHA = 120.0
LOOP_RATE_HZ = 1000.0
#: bilinear prewarp frequency; near-minimax magnitude error over 0-50 Hz
PREWARP_HZ = 40.0

PRESET_NAMES = ("dob-paper", "p-paper", "pi1", "pi2")


class ControllerError(RuntimeError):
    pass


class ControllerStateError(ControllerError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    """Torque controller settings.

    Attributes
    ----------
    variant : str
        One of ``VARIANTS``.
    k : float
        Proportional gain, rad/(s*N*m).
    alpha : float
        Q-filter cutoff (DOB) or PI zero (DirectPI), rad/s.
    zeta : float
        Q-filter damping for ``q_order == 2``.
    q_order : int
        1 or 2.
    k_s : float
        Spring stiffness assumed by the controller, N*m/rad.
    model_m_e, model_b_e : float
        Load assumed by CascadedPI2 when placing its zeros.
    """

    variant: str = "DOB"
    k: float = 60.0 / 21.5
    alpha: float = DOB_ALPHA
    zeta: float = BUTTERWORTH_ZETA
    q_order: int = 2
    k_s: float = 21.5
    model_m_e: float = 2.0e-3
    model_b_e: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown controller variant {self.variant!r}")
        if not (self.k > 0 and self.alpha > 0 and self.zeta > 0 and self.k_s > 0):
            raise ValueError("k, alpha, zeta and k_s must be positive")
        if self.q_order not in (1, 2):
            raise ValueError("q_order must be 1 or 2")
        if self.model_m_e <= 0 or self.model_b_e < 0:
            raise ValueError("invalid model load")


def preset(name: str, k_s: float, m_e: float = 2.0e-3, b_e: float = 0.0) -> ControllerConfig:
    """Named controller presets; gains scale with ``k_s``.

    ``pi1``/``pi2`` are not published tunings: the PI zero sits at 1 rad/s
    where the first-order DOB and direct PI loops coincide.
    """
    k = 60.0 / k_s
    if name == "dob-paper":
        return ControllerConfig("DOB", k, DOB_ALPHA, BUTTERWORTH_ZETA, 2, k_s)
    if name == "p-paper":
        return ControllerConfig("DirectP", k, DOB_ALPHA, BUTTERWORTH_ZETA, 2, k_s)
    if name == "pi1":
        return ControllerConfig("DirectPI", k, 1.0, BUTTERWORTH_ZETA, 1, k_s)
    if name == "pi2":
        return ControllerConfig("CascadedPI2", k, 1.0, BUTTERWORTH_ZETA, 2, k_s, m_e, b_e)
    raise KeyError(f"unknown controller preset {name!r}; choose from {PRESET_NAMES}")


@dataclass(frozen=True)
class ImpedanceConfig:
    """Virtual spring-damper ``tau_d = k_v (theta_d - theta_e) - b_v omega_hat``.

    The ``observer_*`` fields configure the velocity observer used when the
    torque controller is not a DOB.
    """

    k_v: float = 0.5 * 21.5
    b_v: float = 1.5e-2 * 21.5
    torque_limit: float = 3.2
    observer_alpha: float = DOB_ALPHA
    observer_zeta: float = BUTTERWORTH_ZETA
    observer_order: int = 2

    def __post_init__(self):
        if self.k_v < 0 or self.b_v < 0 or self.torque_limit <= 0:
            raise ValueError("impedance gains must be non-negative and the torque limit positive")

    @classmethod
    def for_stiffness(cls, k_s: float, **kw) -> "ImpedanceConfig":
        return cls(k_v=0.5 * k_s, b_v=1.5e-2 * k_s, **kw)

    @property
    def zero(self) -> float:
        return self.k_v / self.b_v


def step_impedance_controller(
    icfg: ImpedanceConfig,
    theta_e: float,
    omega_hat: float,
    theta_d: float = 0.0,
    omega_d: float = 0.0,
    torque_offset: float = 0.0,
) -> float:
    tau = icfg.k_v * (theta_d - theta_e) + icfg.b_v * (omega_d - omega_hat) + torque_offset
    return max(-icfg.torque_limit, min(icfg.torque_limit, tau))


def lead_approximation(icfg: ImpedanceConfig, p: float) -> RationalTransferFunction:
    """``k_v (p/z) (s+z)/(s+p)`` with ``z = k_v/b_v``; DC gain ``k_v``."""
    z = icfg.zero
    if not p > z > 0:
        raise ValueError(f"lead pole p={p} must exceed zero z={z}")
    return TF([icfg.k_v * p, icfg.k_v * p / z], [p, 1.0])


# ---------------------------------------------------------------------------
# filters


def q_filter(alpha: float, zeta: float = BUTTERWORTH_ZETA, order: int = 2) -> RationalTransferFunction:
    if order == 1:
        return TF([alpha], [alpha, 1.0])
    return TF([alpha * alpha], [alpha * alpha, 2.0 * zeta * alpha, 1.0])


def q_inverse_spring(alpha: float, k_s: float, zeta: float = BUTTERWORTH_ZETA, order: int = 2) -> RationalTransferFunction:
    """``Q(s) * s / k_s`` as one proper filter."""
    q = q_filter(alpha, zeta, order)
    return TF(q.num * TF([0.0, 1.0 / k_s], [1.0]).num, q.den, cancel=False)


def pi_compensator(k: float, alpha: float) -> RationalTransferFunction:
    return TF([k * alpha, k], [0.0, 1.0])


def cascaded_pi2_compensator(k: float, k_s: float, m_e: float, b_e: float) -> RationalTransferFunction:
    """Two PI stages whose zeros sit on the resonant poles of G_sa."""
    return TF([k * k_s / m_e, k * b_e / m_e, k], [0.0, 0.0, 1.0], cancel=False)


def discretize(g: RationalTransferFunction, sample_period: float) -> DiscreteFilter:
    """Prewarped bilinear discretization used by every controller filter."""
    return discretize_tustin(g, sample_period, prewarp=2.0 * math.pi * PREWARP_HZ)


class VelocityObserver:
    """Discrete ``Q(z) * omega_cmd_prev - F(z) * tau_meas`` with ``F = Q s / k_s``."""

    def __init__(self, alpha: float, k_s: float, sample_period: float, zeta: float = BUTTERWORTH_ZETA, order: int = 2):
        self.q = discretize(q_filter(alpha, zeta, order), sample_period)
        self.f = discretize(q_inverse_spring(alpha, k_s, zeta, order), sample_period)
        self.estimate = 0.0

    def reset(self):
        self.q.reset()
        self.f.reset()
        self.estimate = 0.0

    def update(self, omega_cmd_prev: float, tau_meas: float) -> float:
        self.estimate = self.q.step(omega_cmd_prev) - self.f.step(tau_meas)
        return self.estimate


@dataclass(frozen=True)
class Command:
    omega_a_d: float
    raw: float
    saturated: bool


class TorqueController:
    """Common tick protocol and velocity clamping."""

    def __init__(
        self,
        cfg: ControllerConfig,
        sample_period: float = 1.0 / LOOP_RATE_HZ,
        limits: ActuatorLimits = ActuatorLimits(),
        icfg: ImpedanceConfig | None = None,
    ):
        self.cfg = cfg
        self.sample_period = sample_period
        self.limits = limits
        icfg = icfg or ImpedanceConfig.for_stiffness(cfg.k_s)
        self.observer = self._make_observer(icfg)
        self.last_command = 0.0
        self._observed = False

    def _make_observer(self, icfg: ImpedanceConfig) -> VelocityObserver:
        return VelocityObserver(icfg.observer_alpha, self.cfg.k_s, self.sample_period, icfg.observer_zeta, icfg.observer_order)

    def reset(self):
        self.observer.reset()
        self.last_command = 0.0
        self._observed = False

    @property
    def omega_hat(self) -> float:
        return self.observer.estimate

    def observe(self, tau_meas: float) -> float:
        _finite(tau_meas=tau_meas)
        self._observed = True
        return self.observer.update(self.last_command, tau_meas)

    def command(self, tau_d: float, tau_meas: float) -> Command:
        if not self._observed:
            raise ControllerStateError("command() called before observe() for this tick")
        _finite(tau_d=tau_d, tau_meas=tau_meas)
        self._observed = False
        raw = self._raw_command(tau_d - tau_meas)
        if not math.isfinite(raw):
            raise ControllerError(f"non-finite velocity command from {self.cfg.variant} (error {tau_d - tau_meas})")
        lim = self.limits.vel_limit_output
        sat = abs(raw) > lim
        cmd = math.copysign(lim, raw) if sat else raw
        self._commit(sat)
        self.last_command = cmd
        return Command(cmd, raw, sat)

    def step(self, tau_d: float, tau_meas: float) -> Command:
        self.observe(tau_meas)
        return self.command(tau_d, tau_meas)

    def _raw_command(self, e: float) -> float:
        raise NotImplementedError

    def _commit(self, saturated: bool):
        pass


class DirectP(TorqueController):
    def _raw_command(self, e):
        return self.cfg.k * e


class _FilteredCompensator(TorqueController):
    """Compensator state freezes while the command is saturated."""

    def __init__(self, cfg, sample_period=1.0 / LOOP_RATE_HZ, limits=ActuatorLimits(), icfg=None):
        super().__init__(cfg, sample_period, limits, icfg)
        self.comp = discretize(self.compensator(), sample_period)
        self._pending = 0.0

    def compensator(self) -> RationalTransferFunction:
        raise NotImplementedError

    def reset(self):
        super().reset()
        self.comp.reset()

    def _raw_command(self, e):
        self._pending = e
        return self.comp.peek(e)

    def _commit(self, saturated):
        if not saturated:
            self.comp.step(self._pending)


class DirectPI(_FilteredCompensator):
    def compensator(self):
        return pi_compensator(self.cfg.k, self.cfg.alpha)


class CascadedPI2(_FilteredCompensator):
    def compensator(self):
        c = self.cfg
        return cascaded_pi2_compensator(c.k, c.k_s, c.model_m_e, c.model_b_e)


class DOBController(TorqueController):
    """``omega_a_d = k*e + omega_hat`` with the Q-filtered velocity estimate."""

    def _make_observer(self, icfg):
        c = self.cfg
        return VelocityObserver(c.alpha, c.k_s, self.sample_period, c.zeta, c.q_order)

    def _raw_command(self, e):
        return self.cfg.k * e + self.observer.estimate


_CLASSES = {"DirectP": DirectP, "DirectPI": DirectPI, "CascadedPI2": CascadedPI2, "DOB": DOBController}


def make_controller(
    cfg: ControllerConfig,
    sample_period: float = 1.0 / LOOP_RATE_HZ,
    limits: ActuatorLimits = ActuatorLimits(),
    icfg: ImpedanceConfig | None = None,
) -> TorqueController:
    return _CLASSES[cfg.variant](cfg, sample_period, limits, icfg)


def step_torque_controller(ctrl: TorqueController, tau_d: float, tau_meas: float) -> float:
    return ctrl.step(tau_d, tau_meas).omega_a_d


def _finite(**values):
    for name, v in values.items():
        if not math.isfinite(v):
            raise ControllerError(f"non-finite input {name}={v}")


# ---------------------------------------------------------------------------
# encoders


@dataclass(frozen=True)
class EncoderModel:
    """Incremental encoder.

    ``frame_ratio`` is encoder-shaft angle per output-frame angle.
    """

    counts_per_rev: int = 10_000
    quadrature: int = 4
    frame_ratio: float = 1.0

    @property
    def step(self) -> float:
        """Quantization step in the encoder's own frame, rad."""
        return 2.0 * math.pi / (self.counts_per_rev * self.quadrature)

    @property
    def output_step(self) -> float:
        return self.step / self.frame_ratio


def quantize(enc: EncoderModel, angle: float) -> float:
    """Floor ``angle`` (output frame) to the encoder lattice and reflect back."""
    a = angle * enc.frame_ratio
    return math.floor(a / enc.step + 1e-9) * enc.step / enc.frame_ratio


def spring_encoder(torque_ratio: float = 10.0 / 7.0) -> EncoderModel:
    """10,000 CPR spring encoder on the gearbox housing."""
    return EncoderModel(10_000, 4, torque_ratio)


def motor_encoder(n_io: float = 3.0 / 10.0, counts_per_rev: int = 4096) -> EncoderModel:
    return EncoderModel(counts_per_rev, 4, 1.0 / n_io)
