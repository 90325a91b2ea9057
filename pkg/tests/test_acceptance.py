"""Acceptance criteria 1-9.

Each test records a one-line PASS/FAIL verdict (printed in the terminal
summary by ``conftest.py``) and then asserts it.  Run this file directly to
print the verdicts without pytest.
"""

import math
import time
from dataclasses import replace

import numpy as np

from sea_dob.analysis import (
    build_Ghat_se,
    build_Gss_d,
    ghat_se_first_order,
    gss_d_first_order,
    limit_distance,
    min_stable_inertia,
    verify_small_alpha_approximation,
)
from sea_dob.controllers import (
    BUTTERWORTH_ZETA,
    ImpedanceConfig,
    cascaded_pi2_compensator,
    discretize,
    pi_compensator,
    preset,
    q_filter,
    q_inverse_spring,
)
from sea_dob.drivetrain import ActuatorLimits, GearboxSpec, SpringElementGeometry, torsion_rate
from sea_dob.plant import NOMINAL_M_E, PENDULUM_LENGTH, PENDULUM_MASS, PlantParams, build_Gsa, build_Gse, build_Ze
from sea_dob.simulator import Scenario, SimulationAbort, compute_metrics, run
from sea_dob.tms_usecase import REFERENCE_POWER, REFERENCE_TORQUES, usecase_report

P = PlantParams(m_e=2.0e-3)
DOB = preset("dob-paper", P.k_s)
PCTL = preset("p-paper", P.k_s)
ICFG = ImpedanceConfig.for_stiffness(P.k_s)
REFERENCE_BIAS_P = 0.80

#: criterion number -> "CRITERION n: PASS|FAIL  detail"
VERDICTS = {}


def _record(n: int, checks: dict, info: str = "") -> bool:
    ok = all(v for v, _ in checks.values())
    parts = [f"{name} {'ok' if v else 'FAILED'} ({detail})" for name, (v, detail) in checks.items()]
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  " + "; ".join(parts)
    if info:
        line += f"  | {info}"
    VERDICTS[n] = line
    print(line)
    return ok


def _coeffwise_rel(a, b) -> float:
    """Max coefficient difference of cross products, relative to their size."""
    l, r = a.num * b.den, b.num * a.den
    n = max(l.degree, r.degree) + 1
    lc, rc = np.zeros(n), np.zeros(n)
    lc[: l.coeffs.size], rc[: r.coeffs.size] = l.coeffs, r.coeffs
    return float(np.max(np.abs(lc - rc)) / max(np.max(np.abs(lc)), np.max(np.abs(rc))))


_sim_cache = {}


def _simulate(key, scn, p, cfg):
    if key not in _sim_cache:
        try:
            tr = run(scn, p, cfg, ICFG)
        except SimulationAbort as exc:
            tr = exc.trace
        _sim_cache[key] = (tr, compute_metrics(tr, scn))
    return _sim_cache[key]


# ---------------------------------------------------------------------------


def criterion_1() -> bool:
    t0 = time.perf_counter()
    c1 = replace(DOB, q_order=1)
    e9 = _coeffwise_rel(build_Gss_d(P, c1), gss_d_first_order(P, c1.alpha))
    e10 = _coeffwise_rel(build_Ghat_se(P, c1), ghat_se_first_order(P, c1.alpha))
    g0 = build_Ghat_se(P, DOB).dc_gain()
    g0_first = build_Ghat_se(P, c1).dc_gain()
    gsa = build_Gsa(P)
    prod = build_Ze(P) * build_Gse(P)
    poly_ok = (gsa.num * prod.den - prod.num * gsa.den).norm() <= 1e-12 * (gsa.num * prod.den).norm()
    runtime = time.perf_counter() - t0
    return _record(
        1,
        {
            "G_ss_d composed==expanded": (e9 <= 1e-10, f"rel {e9:.1e}"),
            "G_hat_se composed==expanded": (e10 <= 1e-10, f"rel {e10:.1e}"),
            "G_hat_se(0)==0": (g0 == 0.0 and g0_first == 0.0, f"got {g0:.6g} (Q2), {g0_first:.6g} (Q1)"),
            "G_sa==Z_e*G_se": (poly_ok, "polynomial identity"),
            "runtime<1s": (runtime < 1.0, f"{runtime:.3f} s"),
        },
    )


def criterion_2() -> bool:
    t0 = time.perf_counter()
    _sim_cache.pop("dob-lab", None)
    _, m = _simulate("dob-lab", Scenario(), P, DOB)
    runtime = time.perf_counter() - t0
    step = m.step_at(1.0)
    ts, tc = step.settling_time_5pct, step.time_constant
    return _record(
        2,
        {
            "settling in [0.035,0.075] s": (0.035 <= ts <= 0.075, f"{ts:.4f} s"),
            "time constant within 20% of 1/60": (abs(tc - 1 / 60) <= 0.2 / 60, f"{tc:.4f} s"),
            "runtime<5s": (runtime < 5.0, f"{runtime:.2f} s"),
        },
    )


def criterion_3() -> bool:
    _, lab = _simulate("dob-lab", Scenario(), P, DOB)
    _, mri = _simulate("dob-mri", Scenario(environment="mri"), P, DOB)
    hold, rel = lab.phase("hold").error_bound, lab.phase("release").error_bound
    press_lab, press_mri = lab.phase("press").error_bound, mri.phase("press").error_bound
    return _record(
        3,
        {
            "hold <= 0.08": (hold <= 0.08, f"{hold:.4f} N*m"),
            "release <= 0.08": (rel <= 0.08, f"{rel:.4f} N*m"),
            "MRI press <= 0.08": (press_mri <= 0.08, f"{press_mri:.4f} N*m"),
        },
        f"lab press {press_lab:.4f} N*m (exception {'not needed' if press_lab <= 0.08 else 'applies'})",
    )


def criterion_4() -> bool:
    scn = replace(Scenario(), hard_stop="flag")
    _, dob = _simulate("dob-lab", Scenario(), P, DOB)
    _, pm = _simulate("p-flag", scn, P, PCTL)
    swing = pm.phase("swing")
    checks = {
        "DirectP swing non-decaying": (
            swing.oscillating,
            f"peak ratio {swing.peak_ratio:.3f} over {swing.n_peaks} peaks" if swing.peak_ratio else f"{swing.n_peaks} peaks",
        )
    }
    for ph in dob.phases:
        if not ph.low_impedance:
            continue
        pb = abs(pm.phase(ph.name).error_bias)
        ratio = pb / abs(ph.error_bias) if ph.error_bias else math.inf
        checks[f"{ph.name} bias >= 5x"] = (ratio >= 5.0, f"{pb:.4f} vs {abs(ph.error_bias):.4f}, {ratio:.1f}x")
    info = (
        f"reference DirectP bias {REFERENCE_BIAS_P:.2f} N*m (depends on the contact model); "
        f"simulated hold {pm.phase('hold').error_bias:+.4f}, release {pm.phase('release').error_bias:+.4f} N*m"
    )
    return _record(4, checks, info)


def criterion_5() -> bool:
    d = [limit_distance(P, DOB, a) for a in (120.0, 240.0, 480.0, 960.0)]
    dec = all(b < a for a, b in zip(d, d[1:]))
    rep = verify_small_alpha_approximation(P, [0.01, 0.1, 1.0, 10.0])
    row = {r.alpha: r for r in rep.rows}
    err01 = max(row[0.1].err_gss, row[0.1].err_ghat)
    return _record(
        5,
        {
            "sup distance decreasing": (dec, ", ".join(f"{x:.5f}" for x in d)),
            "small-alpha error <= 1% at 0.1": (err01 <= 0.01, f"{err01:.1e}"),
            "monotone in alpha": (rep.monotone, ", ".join(f"{max(r.err_gss, r.err_ghat):.1e}" for r in rep.rows)),
        },
    )


def criterion_6() -> bool:
    p_res = min_stable_inertia(PCTL, ICFG, (1e-5, 10.0), base=P)
    d_res = min_stable_inertia(DOB, ICFG, (1e-5, 10.0), base=P)
    p_ok = p_res.status == "boundary" and p_res.m_star > 2.0e-3
    if d_res.status == "stable-everywhere":
        d_ok, d_txt = True, "absent"
    elif d_res.status == "boundary" and p_res.m_star:
        d_ok, d_txt = d_res.m_star * 10 <= p_res.m_star, f"{d_res.m_star:.3g}, {p_res.m_star / d_res.m_star:.2f}x lower"
    else:
        d_ok, d_txt = False, d_res.status
    po = min_stable_inertia(PCTL, ICFG, base=P, outer="observer")
    do = min_stable_inertia(DOB, ICFG, base=P, outer="observer")
    info = f"with the observer-velocity outer loop: DirectP {po.m_star:.3g}, DOB {do.m_star if do.m_star is None else f'{do.m_star:.3g}'}"
    return _record(
        6,
        {
            "DirectP boundary > 2.0e-3": (p_ok, f"{p_res.m_star:.4g} kg*m^2" if p_res.m_star else p_res.status),
            "DOB boundary >= 10x lower or absent": (d_ok, d_txt),
        },
        info,
    )


def criterion_7() -> bool:
    geom = SpringElementGeometry()
    phis = np.linspace(-math.radians(12.0), math.radians(12.0), 241)
    k = np.array([torsion_rate(geom, x) for x in phis])
    lim = ActuatorLimits()
    ratio = lim.torque_limit_housing / lim.torque_limit_output
    pred = GearboxSpec().housing_to_output_torque
    inertia = PENDULUM_MASS * PENDULUM_LENGTH**2
    return _record(
        7,
        {
            "torsion rate in [10.3,10.8]": (10.3 <= k.min() and k.max() <= 10.8, f"{k.min():.3f}..{k.max():.3f} N*m/rad"),
            "torque ratio within 5% of 0.7": (abs(ratio - pred) <= 0.05 * pred, f"{ratio:.4f} vs {pred:.4f}"),
            "power 4.8*2.5 == 12.0": (lim.rated_velocity * lim.rated_torque == 12.0 == lim.peak_power, "exact"),
            "pendulum inertia within 1%": (abs(inertia - NOMINAL_M_E) <= 0.01 * NOMINAL_M_E, f"{inertia:.4e}"),
        },
    )


def criterion_8() -> bool:
    rep = usecase_report()
    tq, pw = rep["max_joint_torque_Nm"], max(rep["max_joint_power_W"].values())
    wrist = tq["wrist"]
    j_pay = rep["payload_inertia_about_wrist_kgm2"]

    def oom(x, ref):
        return ref / 10 <= x <= ref * 10

    return _record(
        8,
        {
            "wrist within 1% of 0.49": (abs(wrist - REFERENCE_TORQUES["wrist"]) <= 0.01 * 0.49, f"{wrist:.4f} N*m"),
            "payload inertia > pendulum": (j_pay > 2.0e-3, f"{j_pay:.2e} kg*m^2"),
            "elbow order of magnitude": (oom(tq["elbow"], REFERENCE_TORQUES["elbow"]), f"{tq['elbow']:.3f} vs 4.35"),
            "shoulder order of magnitude": (oom(tq["shoulder"], REFERENCE_TORQUES["shoulder"]), f"{tq['shoulder']:.3f} vs 9.30"),
            "power order of magnitude": (oom(pw, REFERENCE_POWER), f"{pw:.3f} W vs 3.59"),
        },
    )


def criterion_9() -> bool:
    w = np.linspace(0.5, 2 * math.pi * 50, 400)
    filters = {
        "Q1": q_filter(DOB.alpha, BUTTERWORTH_ZETA, 1),
        "Q2": q_filter(DOB.alpha, BUTTERWORTH_ZETA, 2),
        "F1": q_inverse_spring(DOB.alpha, P.k_s, BUTTERWORTH_ZETA, 1),
        "F2": q_inverse_spring(DOB.alpha, P.k_s, BUTTERWORTH_ZETA, 2),
        "PI": pi_compensator(DOB.k, 1.0),
    }
    worst = 0.0
    for g in filters.values():
        hc, hd = g.freq_response(w), discretize(g, 1e-3).freq_response(w)
        worst = max(worst, float(np.max(np.abs(np.abs(hd) - np.abs(hc)) / np.abs(hc))))
    pi2 = cascaded_pi2_compensator(DOB.k, P.k_s, P.m_e, P.b_e)
    h2c, h2d = pi2.freq_response(w), discretize(pi2, 1e-3).freq_response(w)
    pi2_err = float(np.max(np.abs(h2d - h2c)) / np.max(np.abs(h2c)))

    short = replace(Scenario(), duration=1.5, phases=Scenario().phases[:3])
    a = run(short, P, DOB, ICFG)
    b = run(replace(short, substeps=40), P, DOB, ICFG)
    grid = float(np.max(np.abs(a.tau_s - b.tau_s)) / np.max(np.abs(a.tau_s)))
    again = run(short, P, DOB, ICFG)
    identical = a.to_csv() == again.to_csv()
    return _record(
        9,
        {
            "Tustin <= 1% to 50 Hz": (worst <= 0.01, f"max {100 * worst:.2f}% over {', '.join(filters)}"),
            "grid refinement <= 0.1% of peak": (grid <= 1e-3, f"{100 * grid:.3f}% (10 vs 40 substeps)"),
            "bit-identical rerun": (identical, "trace CSV"),
        },
        f"PI^2 (undamped notch zeros) error {100 * pi2_err:.2f}% of its peak magnitude",
    )


# ---------------------------------------------------------------------------


def test_criterion_1_identity_suite():
    assert criterion_1(), VERDICTS[1]


def test_criterion_2_dob_step_response():
    assert criterion_2(), VERDICTS[2]


def test_criterion_3_dob_steady_state_error():
    assert criterion_3(), VERDICTS[3]


def test_criterion_4_direct_p_baseline():
    assert criterion_4(), VERDICTS[4]


def test_criterion_5_limit_properties():
    assert criterion_5(), VERDICTS[5]


def test_criterion_6_coupled_stability_boundary():
    assert criterion_6(), VERDICTS[6]


def test_criterion_7_drivetrain_numbers():
    assert criterion_7(), VERDICTS[7]


def test_criterion_8_use_case():
    assert criterion_8(), VERDICTS[8]


def test_criterion_9_numerical_hygiene():
    assert criterion_9(), VERDICTS[9]


if __name__ == "__main__":
    for n in range(1, 10):
        globals()[f"criterion_{n}"]()
