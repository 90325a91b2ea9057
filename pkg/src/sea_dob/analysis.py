"""Closed-loop transfer functions, limit checks, Bode export and stability search.

The DOB inner loop imposes the spring model on the actuator.  With the
Q filter in place the loop plant becomes

    G_ss^d = Z_s Z_e G_a / (Q Z_e G_a + (1 - Q)(Z_s + Z_e))

and the residual external-torque path

    G_hat_se = (1 - Q) Z_s / (Q Z_e G_a + (1 - Q)(Z_s + Z_e)).

Coupled stability of the inner torque loop and the outer impedance loop is
decided from the eigenvalues of a state-space interconnection rather than
from a single closed-loop polynomial, so that pole/zero pairs of Z_e that
cancel in transfer-function form cannot hide an unstable mode.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .controllers import (
    ControllerConfig,
    ImpedanceConfig,
    cascaded_pi2_compensator,
    lead_approximation,
    pi_compensator,
    q_filter,
    q_inverse_spring,
)
from .lti import (
    TF,
    Block,
    Polynomial,
    RationalTransferFunction,
    StateSpaceModel,
    as_tf,
    connect,
    pade_delay,
    realize,
    step_response,
    tf_feedback,
)
from .plant import PlantParams, assemble_sim_model, build_Ga, build_Gsa, build_Gse, build_Ze, build_Zs

#: pole real parts within this band of zero are reported as marginal
MARGIN = 1e-6
DEFAULT_LEAD_RATIO = 20.0
DEFAULT_SAMPLE_PERIOD = 1e-3
SMALL_ALPHA_TOL = 0.01
SCHEMA_VERSION = 1


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# DOB loop shapes


def _q_of(cfg: ControllerConfig, q=None) -> RationalTransferFunction:
    return as_tf(q) if q is not None else q_filter(cfg.alpha, cfg.zeta, cfg.q_order)


def _dob_denominator(p: PlantParams, q: RationalTransferFunction) -> RationalTransferFunction:
    zs, ze, ga = build_Zs(p), build_Ze(p), build_Ga(p)
    t1, t2 = q * ze * ga, (1 - q) * (zs + ze)
    d = t1 + t2
    scale = max((t1.num * t2.den).norm(), (t2.num * t1.den).norm())
    if d.num.is_zero() or (d.num * t1.den * t2.den).norm() <= 1e-12 * scale * d.den.norm():
        raise AnalysisError("degenerate DOB denominator Q Z_e G_a + (1-Q)(Z_s+Z_e) == 0")
    return d


def build_Gss_d(p: PlantParams, cfg: ControllerConfig, q=None) -> RationalTransferFunction:
    """Spring-velocity command to spring torque with the DOB active.

    ``q`` overrides the Q filter built from ``cfg`` (e.g. ``1`` or ``0`` for
    the formal limits).
    """
    q = _q_of(cfg, q)
    return build_Zs(p) * build_Ze(p) * build_Ga(p) / _dob_denominator(p, q)


def build_Ghat_se(p: PlantParams, cfg: ControllerConfig, q=None) -> RationalTransferFunction:
    """External torque to spring torque with the DOB active."""
    q = _q_of(cfg, q)
    num = (1 - q) * build_Zs(p)
    if num.num.is_zero():
        return TF([0.0], [1.0])
    return num / _dob_denominator(p, q)


def _expanded_parts(p: PlantParams, alpha: float):
    """Polynomials shared by the first-order-Q expanded forms."""
    ga = build_Ga(p)
    an, ad = ga.num, ga.den
    ze = Polynomial([p.b_e, p.m_e])
    zs_num = Polynomial([p.k_s, p.b_s])  # Z_s = zs_num / s
    char = Polynomial([p.k_s, p.b_e + p.b_s, p.m_e])  # s (Z_s + Z_e)
    den = alpha * an * ze + char * ad
    return an, ad, ze, zs_num, den


def gss_d_first_order(p: PlantParams, alpha: float) -> RationalTransferFunction:
    """Hand-expanded G_ss^d for ``Q = alpha/(s+alpha)``.

    ``Z_s Z_e G_a (s+alpha) / (alpha Z_e G_a + s (Z_s + Z_e))`` with every
    impedance written out as polynomials.
    """
    an, ad, ze, zs_num, den = _expanded_parts(p, alpha)
    num = zs_num * ze * an * Polynomial([alpha, 1.0])
    return TF(num, Polynomial([0.0, 1.0]) * den)


def ghat_se_first_order(p: PlantParams, alpha: float) -> RationalTransferFunction:
    """Hand-expanded G_hat_se for ``Q = alpha/(s+alpha)``."""
    an, ad, ze, zs_num, den = _expanded_parts(p, alpha)
    return TF(zs_num * ad, den)


def ghat_se_dc(p: PlantParams, cfg: ControllerConfig) -> float:
    """Closed-form G_hat_se(0).

    Near s = 0 the factor (1 - Q) ~ c s with c = 1/alpha (first order) or
    2 zeta/alpha (second order) meets the integrator of Z_s, leaving
    ``k_s / (k_s + b_e / c)``.
    """
    c = 1.0 / cfg.alpha if cfg.q_order == 1 else 2.0 * cfg.zeta / cfg.alpha
    return p.k_s / (p.k_s + p.b_e / c)


def gss_d_small_alpha(p: PlantParams, alpha: float) -> RationalTransferFunction:
    """Small-alpha approximation ``G_sa G_a (s+alpha)/s``."""
    return build_Gsa(p) * build_Ga(p) * TF([alpha, 1.0], [0.0, 1.0])


def ghat_se_small_alpha(p: PlantParams) -> RationalTransferFunction:
    """Small-alpha approximation ``G_se``."""
    return build_Gse(p)


@dataclass(frozen=True)
class SmallAlphaRow:
    alpha: float
    err_gss: float
    err_ghat: float
    below_resonance: bool
    valid: bool


@dataclass(frozen=True)
class SmallAlphaReport:
    rows: tuple
    resonance: float
    tol: float = SMALL_ALPHA_TOL

    @property
    def monotone(self) -> bool:
        """Errors never grow as alpha decreases through the sub-resonance rows."""
        sub = [r for r in self.rows if r.below_resonance]
        ok = True
        for hi, lo in zip(sub[1:], sub[:-1]):  # rows sorted ascending in alpha
            ok &= lo.err_gss <= hi.err_gss * (1 + 1e-9) and lo.err_ghat <= hi.err_ghat * (1 + 1e-9)
        return bool(ok)

    def summary(self) -> str:
        lines = [f"resonance sqrt(k_s/m_e) = {self.resonance:.2f} rad/s"]
        for r in self.rows:
            verdict = "approximation valid" if r.valid else "approximation NOT valid"
            lines.append(f"alpha={r.alpha:g}: max rel err G_ss^d {r.err_gss:.3e}, G_hat_se {r.err_ghat:.3e} -> {verdict}")
        return "\n".join(lines)


def _max_rel_err(exact, approx, w) -> float:
    he, ha = exact.freq_response(w), approx.freq_response(w)
    return float(np.nanmax(np.abs(np.abs(he) - np.abs(ha)) / np.abs(he)))


def verify_small_alpha_approximation(p: PlantParams, alpha_grid, n: int = 200, tol: float = SMALL_ALPHA_TOL) -> SmallAlphaReport:
    """Max relative magnitude error of the small-alpha forms over ``[alpha, 100 alpha]``."""
    alphas = np.asarray(alpha_grid, dtype=float)
    if np.any(alphas <= 0) or np.any(np.diff(alphas) <= 0):
        raise AnalysisError("alpha_grid must be positive and ascending")
    res = math.sqrt(p.k_s / p.m_e)
    rows = []
    for a in alphas:
        w = np.logspace(math.log10(a), math.log10(100.0 * a), n)
        eg = _max_rel_err(gss_d_first_order(p, a), gss_d_small_alpha(p, a), w)
        eh = _max_rel_err(ghat_se_first_order(p, a), ghat_se_small_alpha(p), w)
        rows.append(SmallAlphaRow(float(a), eg, eh, bool(a < res), bool(max(eg, eh) <= tol)))
    return SmallAlphaReport(tuple(rows), res, tol)


def limit_distance(p: PlantParams, cfg: ControllerConfig, alpha: float, w=None) -> float:
    """``sup |G_ss^d - Z_s| / |Z_s|`` over ``w`` (default 1..50 rad/s)."""
    w = np.logspace(0.0, math.log10(50.0), 200) if w is None else np.asarray(w)
    g = build_Gss_d(p, replace(cfg, alpha=alpha)).freq_response(w)
    z = build_Zs(p).freq_response(w)
    return float(np.max(np.abs(g - z) / np.abs(z)))


# ---------------------------------------------------------------------------
# closed loops


def build_Gcl_P(p: PlantParams, k: float, unity_motor: bool = False) -> RationalTransferFunction:
    """Direct-P torque loop ``k G / (1 + k G)``, ``G = G_sa`` or ``G_sa G_a``."""
    g = build_Gsa(p) if unity_motor else build_Gsa(p) * build_Ga(p)
    return tf_feedback(k * g)


def build_Gcl_dob(p: PlantParams, cfg: ControllerConfig) -> RationalTransferFunction:
    return tf_feedback(cfg.k * build_Gss_d(p, cfg))


def time_constant(g: RationalTransferFunction, t_end: float = 0.5, dt: float = 1e-5) -> float:
    """Time for the unit-step response to reach ``1 - 1/e`` of its final value."""
    t = np.arange(0.0, t_end, dt)
    y = step_response(g, t)
    target = (1.0 - math.exp(-1.0)) * y[-1]
    idx = np.flatnonzero(y >= target) if y[-1] > 0 else np.flatnonzero(y <= target)
    if idx.size == 0:
        raise AnalysisError("step response never reaches 63.2% of its final value")
    i = int(idx[0])
    if i == 0:
        return 0.0
    # linear interpolation between samples
    return float(t[i - 1] + dt * (target - y[i - 1]) / (y[i] - y[i - 1]))


@dataclass(frozen=True)
class ClosedLoopSet:
    G_ss_d: RationalTransferFunction
    G_hat_se: RationalTransferFunction
    G_cl_p: RationalTransferFunction
    G_cl_dob: RationalTransferFunction
    Z_s: RationalTransferFunction
    params: PlantParams
    cfg: ControllerConfig

    def functions(self) -> dict:
        return {
            "G_ss_d": self.G_ss_d,
            "G_hat_se": self.G_hat_se,
            "G_cl_p": self.G_cl_p,
            "G_cl_dob": self.G_cl_dob,
            "Z_s": self.Z_s,
        }


def build_closed_loop_set(p: PlantParams, cfg: ControllerConfig) -> ClosedLoopSet:
    return ClosedLoopSet(
        build_Gss_d(p, cfg),
        build_Ghat_se(p, cfg),
        build_Gcl_P(p, cfg.k),
        build_Gcl_dob(p, cfg),
        build_Zs(p),
        p,
        cfg,
    )


def pole_table(cls: ClosedLoopSet) -> dict:
    out = {}
    for name, g in cls.functions().items():
        ps = g.poles() if g.order else np.zeros(0)
        out[name] = [[float(z.real), float(z.imag)] for z in sorted(ps, key=lambda z: (z.real, z.imag))]
    return out


# ---------------------------------------------------------------------------
# Bode export


def bode(g, w) -> tuple:
    """Magnitude in dB and unwrapped phase in degrees."""
    h = as_tf(g).freq_response(w)
    mag = 20.0 * np.log10(np.abs(h))
    ph = np.degrees(np.unwrap(np.angle(h)))
    return mag, ph


def bode_export(functions: dict | ClosedLoopSet, grid) -> list:
    """Rows ``(omega, name1_db, name1_deg, ...)`` in the order of ``functions``."""
    if isinstance(functions, ClosedLoopSet):
        functions = functions.functions()
    w = np.asarray(grid, dtype=float)
    cols = [w]
    for g in functions.values():
        cols.extend(bode(g, w))
    return [tuple(float(c[i]) for c in cols) for i in range(w.size)]


def bode_header(names) -> list:
    h = ["omega_rad_s"]
    for n in names:
        h += [f"{n}_mag_dB", f"{n}_phase_deg"]
    return h


def bode_csv(functions: dict | ClosedLoopSet, grid) -> str:
    if isinstance(functions, ClosedLoopSet):
        functions = functions.functions()
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(bode_header(functions.keys()))
    for row in bode_export(functions, grid):
        wr.writerow([f"{v:.10g}" for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# identities


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    passed: bool
    detail: str


def verify_identities(p: PlantParams, cfg: ControllerConfig, rtol: float = 1e-10) -> list:
    """Polynomial identity suite for the DOB loop shapes."""
    checks = []
    c1 = replace(cfg, q_order=1)
    g9, g11 = build_Gss_d(p, c1), gss_d_first_order(p, c1.alpha)
    checks.append(IdentityCheck("G_ss_d composed == expanded (first-order Q)", g9.equivalent(g11, rtol), repr(g11)))
    g10, g12 = build_Ghat_se(p, c1), ghat_se_first_order(p, c1.alpha)
    checks.append(IdentityCheck("G_hat_se composed == expanded (first-order Q)", g10.equivalent(g12, rtol), repr(g12)))
    checks.append(IdentityCheck("G_sa == Z_e * G_se", build_Gsa(p).equivalent(build_Ze(p) * build_Gse(p), 1e-12), ""))
    checks.append(IdentityCheck("Q == 1 gives G_ss_d == Z_s", build_Gss_d(p, cfg, q=1).equivalent(build_Zs(p), rtol), ""))
    checks.append(IdentityCheck("Q == 1 gives G_hat_se == 0", build_Ghat_se(p, cfg, q=1).num.is_zero(), ""))
    checks.append(
        IdentityCheck("Q == 0 gives G_ss_d == G_sa G_a", build_Gss_d(p, cfg, q=0).equivalent(build_Gsa(p) * build_Ga(p), rtol), "")
    )
    checks.append(IdentityCheck("Q == 0 gives G_hat_se == G_se", build_Ghat_se(p, cfg, q=0).equivalent(build_Gse(p), rtol), ""))
    for c in (c1, replace(cfg, q_order=2)):
        got, want = build_Ghat_se(p, c).dc_gain(), ghat_se_dc(p, c)
        checks.append(
            IdentityCheck(
                f"G_hat_se(0) closed form (q_order={c.q_order})",
                math.isclose(got, want, rel_tol=1e-9, abs_tol=1e-12),
                f"G_hat_se(0) = {got:.12g}, closed form {want:.12g}",
            )
        )
    return checks


# ---------------------------------------------------------------------------
# coupled stability


def compensator(cfg: ControllerConfig) -> RationalTransferFunction:
    """Linear torque-error compensator of each variant (DOB: its P path)."""
    if cfg.variant in ("DirectP", "DOB"):
        return TF([cfg.k], [1.0])
    if cfg.variant == "DirectPI":
        return pi_compensator(cfg.k, cfg.alpha)
    return cascaded_pi2_compensator(cfg.k, cfg.k_s, cfg.model_m_e, cfg.model_b_e)


def linearized_loop(
    p: PlantParams,
    cfg: ControllerConfig,
    icfg: ImpedanceConfig,
    lead_ratio: float = DEFAULT_LEAD_RATIO,
    loop_delay: float | None = None,
    sample_period: float = DEFAULT_SAMPLE_PERIOD,
    unity_motor: bool = False,
    outer: str = "lead",
) -> StateSpaceModel:
    """Inner torque loop + outer lead loop + plant, from ``theta_d``/``tau_e`` to ``tau_s``/``theta_e``.

    ``loop_delay`` (default half a sample, the mean zero-order-hold delay) is
    a first-order Pade block on the motor command.  The DOB observer sees the
    command one full sample late, as in the discrete implementation.
    """
    if loop_delay is None:
        loop_delay = 0.5 * sample_period
    if outer not in ("lead", "observer"):
        raise AnalysisError(f"unknown outer-loop model {outer!r}")
    sim = assemble_sim_model(replace(p, motor_bandwidth=1e9, motor_order=1) if unity_motor else p)
    blocks = [
        Block(sim.ss, ("omega_a_in", "tau_e"), ("tau_s", "theta_e", "omega_e", "theta_s")),
        Block(realize(pade_delay(loop_delay)), ("cmd_in",), ("cmd_out",)),
        Block(realize(compensator(cfg)), ("err",), ("u_fb",)),
    ]
    wiring = {
        "omega_a_in": {"cmd_out": 1.0},
        "err": {"tau_d": 1.0, "tau_s": -1.0},
    }
    if cfg.variant == "DOB":
        alpha, zeta, order = cfg.alpha, cfg.zeta, cfg.q_order
    else:
        alpha, zeta, order = icfg.observer_alpha, icfg.observer_zeta, icfg.observer_order
    # velocity observer Q*cmd_prev - (Q s/k_s)*tau_s
    blocks += [
        Block(realize(pade_delay(sample_period)), ("cmd_hist_in",), ("cmd_prev",)),
        Block(realize(q_filter(alpha, zeta, order)), ("q_in",), ("q_out",)),
        Block(realize(q_inverse_spring(alpha, cfg.k_s, zeta, order)), ("f_in",), ("f_out",)),
    ]
    cmd = {"u_fb": 1.0, "q_out": 1.0, "f_out": -1.0} if cfg.variant == "DOB" else {"u_fb": 1.0}
    wiring.update({"cmd_hist_in": cmd, "q_in": {"cmd_prev": 1.0}, "f_in": {"tau_s": 1.0}})
    if outer == "lead":
        blocks.append(Block(realize(lead_approximation(icfg, lead_ratio * icfg.zero)), ("pos_err",), ("tau_d",)))
        wiring["pos_err"] = {"theta_d": 1.0, "theta_e": -1.0}
    else:
        blocks.append(Block(StateSpaceModel(np.zeros((0, 0)), np.zeros((0, 3)), np.zeros((1, 0)), [[icfg.k_v, -icfg.k_v, -icfg.b_v]]), ("ref", "pos", "vel"), ("tau_d",)))
        wiring.update({"ref": {"theta_d": 1.0}, "pos": {"theta_e": 1.0}, "vel": {"q_out": 1.0, "f_out": -1.0}})
    wiring["cmd_in"] = cmd
    return connect(blocks, wiring, ("theta_d", "tau_e"), ("tau_s", "theta_e"))


def classify(max_real: float, margin: float = MARGIN) -> str:
    if max_real < -margin:
        return "stable"
    if max_real <= margin:
        return "marginal"
    return "unstable"


@dataclass(frozen=True)
class StabilityPoint:
    m_e: float
    max_real: float
    verdict: str


def stability_at(m_e: float, base: PlantParams, cfg, icfg, **kw) -> StabilityPoint:
    ss = linearized_loop(replace(base, m_e=m_e), cfg, icfg, **kw)
    mr = float(np.max(ss.eigenvalues().real))
    return StabilityPoint(float(m_e), mr, classify(mr))


@dataclass(frozen=True)
class StabilityBoundary:
    """Result of the minimum-inertia search.

    ``status`` is ``"boundary"`` (``m_star`` set: unstable or marginal just
    below, stable above), ``"stable-everywhere"``, or ``"no-sign-change"``
    (both endpoint verdicts reported, no boundary found).
    """

    status: str
    m_star: float | None
    bracket: tuple | None
    low: StabilityPoint
    high: StabilityPoint
    lead_pole: float
    loop_delay: float
    variant: str
    scan: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "variant": self.variant,
            "status": self.status,
            "m_star_kgm2": self.m_star,
            "bracket_kgm2": list(self.bracket) if self.bracket else None,
            "low": {"m_e": self.low.m_e, "max_real": self.low.max_real, "verdict": self.low.verdict},
            "high": {"m_e": self.high.m_e, "max_real": self.high.max_real, "verdict": self.high.verdict},
            "lead_pole_rad_s": self.lead_pole,
            "loop_delay_s": self.loop_delay,
        }


def min_stable_inertia(
    cfg: ControllerConfig,
    icfg: ImpedanceConfig,
    m_range=(1e-5, 10.0),
    base: PlantParams | None = None,
    lead_ratio: float = DEFAULT_LEAD_RATIO,
    loop_delay: float | None = None,
    sample_period: float = DEFAULT_SAMPLE_PERIOD,
    n_grid: int = 61,
    rel_width: float = 0.02,
    outer: str = "lead",
) -> StabilityBoundary:
    """Smallest external inertia above which the coupled loop is stable.

    A log-spaced scan locates the highest non-stable grid point; bisection in
    log(m_e) then narrows the bracket to ``rel_width``.
    """
    lo, hi = m_range
    if not (0 < lo < hi) or math.log10(hi / lo) < 4 - 1e-9:
        raise AnalysisError("m_range must be positive and span at least four decades")
    base = base or PlantParams(k_s=cfg.k_s)
    if loop_delay is None:
        loop_delay = 0.5 * sample_period
    kw = dict(lead_ratio=lead_ratio, loop_delay=loop_delay, sample_period=sample_period, outer=outer)
    grid = np.logspace(math.log10(lo), math.log10(hi), n_grid)
    scan = tuple(stability_at(m, base, cfg, icfg, **kw) for m in grid)
    common = dict(
        low=scan[0], high=scan[-1], lead_pole=lead_ratio * icfg.zero, loop_delay=loop_delay, variant=cfg.variant, scan=scan
    )
    bad = [i for i, s in enumerate(scan) if s.verdict != "stable"]
    if not bad:
        return StabilityBoundary("stable-everywhere", None, None, **common)
    i = bad[-1]
    if i == len(scan) - 1:
        return StabilityBoundary("no-sign-change", None, None, **common)
    a, b = scan[i].m_e, scan[i + 1].m_e
    while b / a - 1.0 > rel_width:
        mid = math.sqrt(a * b)
        if stability_at(mid, base, cfg, icfg, **kw).verdict == "stable":
            b = mid
        else:
            a = mid
    return StabilityBoundary("boundary", b, (a, b), **common)
