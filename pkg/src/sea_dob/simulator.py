"""Fixed-step simulation of the pendulum swing / contact / press experiment.

The continuous plant is integrated with classical RK4 (``substeps`` per
control tick) while the controllers run once per tick on quantized encoder
readings; the motor velocity command is held between ticks.

Torque error everywhere in this module is ``e = tau_s - tau_s^d``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.signal import find_peaks

from .controllers import (
    ControllerConfig,
    EncoderModel,
    ImpedanceConfig,
    make_controller,
    motor_encoder,
    quantize,
    spring_encoder,
    step_impedance_controller,
)
from .plant import PENDULUM_LENGTH, PENDULUM_MASS, PlantParams, assemble_sim_model

SCHEMA_VERSION = 1
TRACE_COLUMNS = (
    "time_s",
    "theta_e_rad",
    "theta_s_rad",
    "tau_s_Nm",
    "tau_sd_Nm",
    "omega_ad_rads",
    "omega_e_hat_rads",
    "contact",
    "sat_vel",
    "sat_stop",
)
PROFILES = ("min-jerk", "cosine")
PRESS_MODES = ("reference-offset", "torque-offset")
#: "abort" stops at the first hard-stop sample; "flag" records it and continues
HARD_STOP_POLICIES = ("abort", "flag")
#: smallest peak prominence counted as an oscillation, N*m (the tracking band)
OSC_PROMINENCE = 0.08
OSC_RATIO = 0.95
MRI_B_S = 0.2


class ScenarioError(ValueError):
    pass


class SimulationAbort(RuntimeError):
    """Hard-stop breach or non-finite state; ``trace`` holds the samples so far."""

    def __init__(self, reason: str, trace: "SimTrace"):
        super().__init__(reason)
        self.reason = reason
        self.trace = trace


# ---------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class Phase:
    """One timeline segment.

    ``theta_from``/``theta_to`` are the impedance reference endpoints (rad);
    ``offset_Nm`` is the extra press torque held through the phase.
    """

    name: str
    start: float
    end: float
    theta_from: float
    theta_to: float
    offset_Nm: float = 0.0
    low_impedance: bool = True

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Contact:
    engage: float = math.pi / 2
    stiffness: float = 500.0
    damping: float = 1.0
    deadband: float = 0.005
    enabled: bool = True


@dataclass(frozen=True)
class Gravity:
    mass: float = PENDULUM_MASS
    length: float = PENDULUM_LENGTH
    g: float = 9.81
    offset: float = 0.0
    enabled: bool = True

    def torque(self, theta_e: float) -> float:
        if not self.enabled:
            return 0.0
        return self.mass * self.g * self.length * math.sin(theta_e + self.offset)


def default_phases(swing_to: float = math.pi / 2, press_Nm: float = 3.0) -> tuple:
    return (
        Phase("swing", 0.0, 0.5, 0.0, swing_to),
        Phase("hold", 0.5, 1.0, swing_to, swing_to),
        Phase("press", 1.0, 1.5, swing_to, swing_to, press_Nm, low_impedance=False),
        Phase("release", 1.5, 2.0, swing_to, swing_to),
        Phase("swing_back", 2.0, 2.5, swing_to, 0.0),
    )


@dataclass(frozen=True)
class Scenario:
    phases: tuple = field(default_factory=default_phases)
    contact: Contact = field(default_factory=Contact)
    gravity: Gravity = field(default_factory=Gravity)
    environment: str = "lab"
    mri_b_s: float = MRI_B_S
    duration: float = 2.5
    sample_period: float = 1e-3
    substeps: int = 10
    profile: str = "cosine"
    press_mode: str = "reference-offset"
    hard_stop: str = "abort"

    def __post_init__(self):
        if self.hard_stop not in HARD_STOP_POLICIES:
            raise ScenarioError(f"hard_stop must be one of {HARD_STOP_POLICIES}")
        if self.environment not in ("lab", "mri"):
            raise ScenarioError("environment must be 'lab' or 'mri'")
        if self.profile not in PROFILES:
            raise ScenarioError(f"profile must be one of {PROFILES}")
        if self.press_mode not in PRESS_MODES:
            raise ScenarioError(f"press_mode must be one of {PRESS_MODES}")
        if self.sample_period <= 0 or self.substeps < 1:
            raise ScenarioError("sample_period must be positive and substeps >= 1")
        if not self.phases:
            raise ScenarioError("timeline is empty")
        T = self.sample_period
        prev_end = self.phases[0].start
        if abs(prev_end) > 1e-12:
            raise ScenarioError("timeline must start at t = 0")
        for ph in self.phases:
            if abs(ph.start - prev_end) > 1e-12:
                raise ScenarioError(f"phase {ph.name!r} is not contiguous with its predecessor")
            if ph.end <= ph.start:
                raise ScenarioError(f"phase {ph.name!r} has non-positive length")
            for edge in (ph.start, ph.end):
                if abs(edge / T - round(edge / T)) > 1e-6:
                    raise ScenarioError(f"phase boundary {edge} is not a multiple of the sample period")
            prev_end = ph.end
        if self.duration < prev_end - 1e-12:
            raise ScenarioError("duration does not cover the timeline")
        if self.mri_b_s < 0:
            raise ScenarioError("mri_b_s must be non-negative")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.sample_period)) + 1

    def phase_at(self, t: float) -> Phase:
        for ph in self.phases:
            if ph.start <= t < ph.end:
                return ph
        return self.phases[-1]

    def reference(self, t: float, k_v: float) -> tuple:
        """(theta_d, torque_offset) at time ``t`` for impedance stiffness ``k_v``."""
        ph = self.phase_at(t)
        s = min(max((t - ph.start) / ph.duration, 0.0), 1.0)
        theta = ph.theta_from + (ph.theta_to - ph.theta_from) * _shape(s, self.profile)
        off = 0.0
        if ph.offset_Nm:
            if self.press_mode == "torque-offset" or k_v == 0:
                off = ph.offset_Nm
            else:
                theta += ph.offset_Nm / k_v
        return theta, off


def _shape(s: float, profile: str) -> float:
    if profile == "min-jerk":
        return s**3 * (10.0 - 15.0 * s + 6.0 * s * s)
    return 0.5 - 0.5 * math.cos(math.pi * s)


def zero_scenario(duration: float = 0.5) -> Scenario:
    """Reference held at zero, gravity and contact off."""
    return Scenario(
        phases=(Phase("rest", 0.0, duration, 0.0, 0.0),),
        contact=Contact(enabled=False),
        gravity=Gravity(enabled=False),
        duration=duration,
    )


def contact_torque(c: Contact, theta_e: float, omega_e: float) -> float:
    """Unilateral foam contact: spring-damper beyond the deadband, never adhesive."""
    if not c.enabled:
        return 0.0
    pen = theta_e - c.engage - c.deadband
    if pen <= 0.0:
        return 0.0
    return max(0.0, c.stiffness * pen + c.damping * omega_e)


def in_contact(c: Contact, theta_e: float) -> bool:
    return c.enabled and theta_e - c.engage - c.deadband > 0.0


# ---------------------------------------------------------------------------
# trace


@dataclass
class SimTrace:
    time: np.ndarray
    theta_e: np.ndarray
    theta_s: np.ndarray
    tau_s: np.ndarray
    tau_sd: np.ndarray
    omega_ad: np.ndarray
    omega_e_hat: np.ndarray
    contact: np.ndarray
    sat_vel: np.ndarray
    sat_stop: np.ndarray
    omega_s: np.ndarray = field(repr=False, default=None)
    k_s: float = 0.0
    b_s: float = 0.0
    complete: bool = True

    @property
    def error(self) -> np.ndarray:
        return self.tau_s - self.tau_sd

    @property
    def n(self) -> int:
        return self.time.size

    def saturated_fraction(self) -> float:
        return float(np.mean(self.sat_vel)) if self.n else 0.0

    def columns(self) -> tuple:
        return (
            self.time,
            self.theta_e,
            self.theta_s,
            self.tau_s,
            self.tau_sd,
            self.omega_ad,
            self.omega_e_hat,
            self.contact.astype(int),
            self.sat_vel.astype(int),
            self.sat_stop.astype(int),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema_version={SCHEMA_VERSION}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(TRACE_COLUMNS)
        cols = self.columns()
        for i in range(self.n):
            wr.writerow([repr(float(c[i])) if j < 7 else str(int(c[i])) for j, c in enumerate(cols)])
        return buf.getvalue()


def _trace_from(rows: list, k_s: float, b_s: float, complete: bool) -> SimTrace:
    a = np.array(rows, dtype=float).reshape(-1, 11)
    return SimTrace(
        time=a[:, 0],
        theta_e=a[:, 1],
        theta_s=a[:, 2],
        tau_s=a[:, 3],
        tau_sd=a[:, 4],
        omega_ad=a[:, 5],
        omega_e_hat=a[:, 6],
        contact=a[:, 7].astype(bool),
        sat_vel=a[:, 8].astype(bool),
        sat_stop=a[:, 9].astype(bool),
        omega_s=a[:, 10],
        k_s=k_s,
        b_s=b_s,
        complete=complete,
    )


# ---------------------------------------------------------------------------
# run


def effective_plant(scn: Scenario, p: PlantParams) -> PlantParams:
    if scn.environment == "mri" and p.b_s == 0.0:
        return replace(p, b_s=scn.mri_b_s)
    return p


def run(
    scn: Scenario,
    p: PlantParams,
    cfg: ControllerConfig,
    icfg: ImpedanceConfig,
    spring_enc: EncoderModel | None = None,
    motor_enc: EncoderModel | None = None,
) -> SimTrace:
    """Simulate ``scn`` and return the uniformly sampled trace.

    Raises
    ------
    SimulationAbort
        When ``|tau_s|`` exceeds the spring hard stop or the state turns
        non-finite; the partial trace is attached.
    """
    p = effective_plant(scn, p)
    model = assemble_sim_model(p)
    A, B = model.ss.A, model.ss.B
    ia, ita, ite, ie = (model.index(s) for s in ("omega_a", "theta_a", "theta_e", "omega_e"))
    A_l, Bu, Bt = A.tolist(), B[:, 0].tolist(), B[:, 1].tolist()
    n = len(A_l)
    rows_idx = range(n)

    senc = spring_enc or spring_encoder()
    menc = motor_enc or motor_encoder()
    ctrl = make_controller(cfg, scn.sample_period, p.limits, icfg)
    gravity, contact = scn.gravity, scn.contact
    k_s, b_s = p.k_s, p.b_s
    stop = p.limits.torque_limit_output

    def deriv(x, u):
        th, w = x[ite], x[ie]
        te = gravity.torque(th) + contact_torque(contact, th, w)
        return [sum(A_l[i][j] * x[j] for j in rows_idx) + Bu[i] * u + Bt[i] * te for i in rows_idx]

    x = [0.0] * n
    h = scn.sample_period / scn.substeps
    rows = []
    for k in range(scn.n_samples):
        t = k * scn.sample_period
        th_a, th_e = x[ita], x[ite]
        th_s = th_a - th_e
        om_s = x[ia] - x[ie]
        tau_s = k_s * th_s + b_s * om_s
        hard = abs(tau_s) > stop
        finite = all(math.isfinite(v) for v in x)
        if not finite or (hard and scn.hard_stop == "abort"):
            rows.append([t, th_e, th_s, tau_s, math.nan, math.nan, math.nan, in_contact(contact, th_e), False, hard, om_s])
            reason = "non-finite plant state" if not finite else f"spring hard stop: |tau_s| = {abs(tau_s):.3f} > {stop} N*m at t = {t:.3f} s"
            raise SimulationAbort(reason, _trace_from(rows, k_s, b_s, False))
        # sensing
        th_s_q = quantize(senc, th_s)
        th_e_q = quantize(menc, th_a) - th_s_q
        tau_meas = cfg.k_s * th_s_q
        # control tick
        omega_hat = ctrl.observe(tau_meas)
        theta_d, off = scn.reference(t, icfg.k_v)
        tau_d = step_impedance_controller(icfg, th_e_q, omega_hat, theta_d, 0.0, off)
        cmd = ctrl.command(tau_d, tau_meas)
        rows.append([t, th_e, th_s, tau_s, tau_d, cmd.omega_a_d, omega_hat, in_contact(contact, th_e), cmd.saturated, hard, om_s])
        if k == scn.n_samples - 1:
            break
        u = cmd.omega_a_d
        for _ in range(scn.substeps):
            k1 = deriv(x, u)
            k2 = deriv([x[i] + 0.5 * h * k1[i] for i in rows_idx], u)
            k3 = deriv([x[i] + 0.5 * h * k2[i] for i in rows_idx], u)
            k4 = deriv([x[i] + h * k3[i] for i in rows_idx], u)
            x = [x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in rows_idx]
    return _trace_from(rows, k_s, b_s, True)


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class PhaseMetrics:
    name: str
    error_bound: float
    error_bias: float
    oscillating: bool
    peak_ratio: float | None
    n_peaks: int
    low_impedance: bool


@dataclass(frozen=True)
class StepMetrics:
    time: float
    amplitude: float
    settling_time_5pct: float
    time_constant: float
    peak_overshoot: float


@dataclass(frozen=True)
class Metrics:
    phases: tuple
    steps: tuple
    saturated_fraction: float
    complete: bool = True

    def phase(self, name: str) -> PhaseMetrics:
        for ph in self.phases:
            if ph.name == name:
                return ph
        raise KeyError(name)

    def step_at(self, t: float) -> StepMetrics:
        for s in self.steps:
            if abs(s.time - t) < 1e-9:
                return s
        raise KeyError(t)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "complete": self.complete,
            "saturated_fraction": self.saturated_fraction,
            "phases": [asdict(p) for p in self.phases],
            "steps": [asdict(s) for s in self.steps],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def tail_window(n: int, frac: float = 0.4) -> slice:
    """Final ``frac`` of ``n`` samples."""
    m = max(1, int(math.ceil(frac * n)))
    return slice(n - m, n)


def settling_time(e: np.ndarray, dt: float, amplitude: float, final: float | None = None, band: float = 0.05) -> float:
    """Time after the first sample of the last exit from ``final +/- band*|amplitude|``."""
    final = float(np.mean(e[tail_window(e.size)])) if final is None else final
    out = np.flatnonzero(np.abs(e - final) > band * abs(amplitude))
    if out.size == 0:
        return 0.0
    return float((out[-1] + 1) * dt)


def first_crossing_time(e: np.ndarray, dt: float, amplitude: float, final: float | None = None) -> float:
    """First time the deviation from the final value drops to ``|amplitude|/e``."""
    final = float(np.mean(e[tail_window(e.size)])) if final is None else final
    d = np.abs(e - final)
    thr = abs(amplitude) / math.e
    inside = np.flatnonzero(d <= thr)
    if inside.size == 0:
        return math.inf
    i = int(inside[0])
    if i == 0:
        return 0.0
    # interpolate between samples i-1 and i
    return float(dt * (i - 1 + (d[i - 1] - thr) / (d[i - 1] - d[i])))


def oscillation(e: np.ndarray, prominence: float = OSC_PROMINENCE, ratio: float = OSC_RATIO) -> tuple:
    """(verdict, mean successive |e| peak ratio, peak count).

    Non-decaying when at least three prominent peaks exist and the geometric
    mean ratio of successive peak heights is at least ``ratio``.
    """
    a = np.abs(e)
    peaks, _ = find_peaks(a, prominence=prominence)
    if peaks.size < 3:
        return False, None, int(peaks.size)
    h = a[peaks]
    r = float(np.exp(np.mean(np.log(h[1:] / h[:-1]))))
    return bool(r >= ratio), r, int(peaks.size)


def compute_metrics(trace: SimTrace, scn: Scenario) -> Metrics:
    dt = scn.sample_period
    e = trace.error
    phases, steps = [], []
    for ph in scn.phases:
        i0, i1 = int(round(ph.start / dt)), int(round(ph.end / dt))
        if i1 - i0 < 5:
            raise ScenarioError(f"phase {ph.name!r} is shorter than 5 samples")
        if i1 > trace.n:
            continue
        seg = e[i0:i1]
        tail = seg[tail_window(seg.size)]
        osc, r, npk = oscillation(seg)
        phases.append(
            PhaseMetrics(ph.name, float(np.max(np.abs(tail))), float(np.mean(tail)), osc, r, npk, ph.low_impedance)
        )
    # step edges: the press offset switching on or off
    prev = 0.0
    for ph in scn.phases:
        if ph.offset_Nm != prev:
            i0, i1 = int(round(ph.start / dt)), int(round(ph.end / dt))
            if i1 <= trace.n:
                steps.append(step_metrics(trace, i0, i1, dt))
        prev = ph.offset_Nm
    return Metrics(tuple(phases), tuple(steps), trace.saturated_fraction(), trace.complete)


def step_metrics(trace: SimTrace, i0: int, i1: int, dt: float) -> StepMetrics:
    """Response of the error to a torque-command step at sample ``i0``."""
    e = trace.error[i0:i1]
    amp = float(trace.tau_sd[i0] - trace.tau_sd[i0 - 1]) if i0 > 0 else float(trace.tau_sd[0])
    final = float(np.mean(e[tail_window(e.size)]))
    ts = settling_time(e, dt, amp, final)
    tc = first_crossing_time(e, dt, amp, final)
    # tau_s moving past tau_sd in the direction of the step
    y = trace.tau_s[i0:i1]
    y_final = float(np.mean(y[tail_window(y.size)]))
    over = float(max(0.0, np.max(np.sign(amp) * (y - y_final)))) if amp else 0.0
    return StepMetrics(i0 * dt, amp, ts, tc, over)
