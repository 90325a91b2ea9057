"""Strict JSON run configuration and the embedded named presets.

Every physical quantity carries its unit in the key name.  Unknown keys are
rejected at every level; the validation message names the offending key.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources

import jsonschema

from .controllers import PRESET_NAMES, ControllerConfig, ImpedanceConfig, preset
from .drivetrain import KS_PRESETS
from .plant import PlantParams
from .simulator import Contact, Gravity, Phase, Scenario, ScenarioError

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 2."""


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_BOOL = {"type": "boolean"}

PHASE_SCHEMA = _obj(
    {
        "name": {"type": "string"},
        "start_s": _NONNEG,
        "end_s": _POS,
        "theta_from_rad": _NUM,
        "theta_to_rad": _NUM,
        "offset_Nm": _NUM,
        "low_impedance": _BOOL,
    },
    required=("name", "start_s", "end_s", "theta_from_rad", "theta_to_rad"),
)

SCENARIO_SCHEMA = _obj(
    {
        "duration_s": _POS,
        "sample_period_s": _POS,
        "substeps": {"type": "integer", "minimum": 1},
        "profile": {"enum": ["cosine", "min-jerk"]},
        "press_mode": {"enum": ["reference-offset", "torque-offset"]},
        "environment": {"enum": ["lab", "mri"]},
        "mri_b_s_Nms_per_rad": _NONNEG,
        "hard_stop": {"enum": ["abort", "flag"]},
        "phases": {"type": "array", "items": PHASE_SCHEMA, "minItems": 1},
        "contact": _obj(
            {
                "engage_rad": _NUM,
                "stiffness_Nm_per_rad": _NONNEG,
                "damping_Nms_per_rad": _NONNEG,
                "deadband_rad": _NONNEG,
                "enabled": _BOOL,
            }
        ),
        "gravity": _obj(
            {"mass_kg": _NONNEG, "length_m": _NONNEG, "g_m_per_s2": _NONNEG, "offset_rad": _NUM, "enabled": _BOOL}
        ),
    }
)

PLANT_SCHEMA = _obj(
    {
        "preset": {"enum": sorted(KS_PRESETS)},
        "k_s_Nm_per_rad": _POS,
        "m_e_kgm2": _POS,
        "b_e_Nms_per_rad": _NONNEG,
        "b_s_Nms_per_rad": _NONNEG,
        "motor_bandwidth_Hz": _POS,
        "motor_order": {"enum": [1, 2]},
    }
)

CONTROLLER_SCHEMA = _obj(
    {
        "preset": {"enum": list(PRESET_NAMES)},
        "variant": {"enum": ["DirectP", "DirectPI", "CascadedPI2", "DOB"]},
        "k_rad_per_sNm": _POS,
        "alpha_rad_per_s": _POS,
        "zeta": _POS,
        "q_order": {"enum": [1, 2]},
        "model_m_e_kgm2": _POS,
        "model_b_e_Nms_per_rad": _NONNEG,
    }
)

IMPEDANCE_SCHEMA = _obj(
    {
        "k_v_Nm_per_rad": _NONNEG,
        "b_v_Nms_per_rad": _NONNEG,
        "torque_limit_Nm": _POS,
        "observer_alpha_rad_per_s": _POS,
        "observer_zeta": _POS,
        "observer_order": {"enum": [1, 2]},
    }
)

RUN_SCHEMA = _obj(
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "scenario": SCENARIO_SCHEMA,
        "plant": PLANT_SCHEMA,
        "controller": CONTROLLER_SCHEMA,
        "impedance": IMPEDANCE_SCHEMA,
        "emit": _obj({"trace": _BOOL, "metrics": _BOOL}),
    },
    required=("schema_version",),
)


def _describe(err: jsonschema.ValidationError) -> str:
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return f"unknown key {', '.join(repr(k) for k in extra)} in {where}"
    return f"{where}: {err.message}"


def validate(doc: dict, schema: dict = RUN_SCHEMA) -> None:
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("; ".join(_describe(e) for e in errors))


# ---------------------------------------------------------------------------
# presets


def _preset_files():
    return resources.files(__package__) / "presets"


def preset_names() -> list:
    return sorted(p.name[:-5] for p in _preset_files().iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    name = name[:-5] if name.endswith(".json") else name
    path = _preset_files() / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return json.loads(path.read_text())


def load_document(ref: str) -> dict:
    """Read a JSON config from a path, falling back to an embedded preset name."""
    if os.path.isfile(ref):
        try:
            with open(ref) as fh:
                return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{ref}: invalid JSON ({exc})") from exc
    base = os.path.basename(ref)
    try:
        return load_preset(base)
    except ConfigError:
        raise ConfigError(f"config {ref!r} is neither a file nor an embedded preset") from None


# ---------------------------------------------------------------------------
# conversion


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    plant: PlantParams
    controller: ControllerConfig
    impedance: ImpedanceConfig
    emit_trace: bool = True
    emit_metrics: bool = True
    seed: int = 0
    name: str = ""


def plant_from(d: dict | None) -> PlantParams:
    d = dict(d or {})
    k_s = KS_PRESETS[d.pop("preset")] if "preset" in d else KS_PRESETS["ks-geometry"]
    return PlantParams(
        k_s=d.get("k_s_Nm_per_rad", k_s),
        m_e=d.get("m_e_kgm2", PlantParams.m_e),
        b_e=d.get("b_e_Nms_per_rad", 0.0),
        b_s=d.get("b_s_Nms_per_rad", 0.0),
        motor_bandwidth=d.get("motor_bandwidth_Hz", 50.0),
        motor_order=d.get("motor_order", 1),
    )


def controller_from(d: dict | None, p: PlantParams) -> ControllerConfig:
    d = dict(d or {})
    base = preset(d.pop("preset", "dob-paper"), p.k_s, p.m_e, p.b_e)
    fields = {
        "variant": "variant",
        "k_rad_per_sNm": "k",
        "alpha_rad_per_s": "alpha",
        "zeta": "zeta",
        "q_order": "q_order",
        "model_m_e_kgm2": "model_m_e",
        "model_b_e_Nms_per_rad": "model_b_e",
    }
    kw = {fields[k]: v for k, v in d.items()}
    return ControllerConfig(**{**base.__dict__, **kw})


def impedance_from(d: dict | None, p: PlantParams) -> ImpedanceConfig:
    base = ImpedanceConfig.for_stiffness(p.k_s)
    d = d or {}
    return ImpedanceConfig(
        k_v=d.get("k_v_Nm_per_rad", base.k_v),
        b_v=d.get("b_v_Nms_per_rad", base.b_v),
        torque_limit=d.get("torque_limit_Nm", base.torque_limit),
        observer_alpha=d.get("observer_alpha_rad_per_s", base.observer_alpha),
        observer_zeta=d.get("observer_zeta", base.observer_zeta),
        observer_order=d.get("observer_order", base.observer_order),
    )


def scenario_from(d: dict | None) -> Scenario:
    d = d or {}
    kw = {}
    simple = {
        "duration_s": "duration",
        "sample_period_s": "sample_period",
        "substeps": "substeps",
        "profile": "profile",
        "press_mode": "press_mode",
        "environment": "environment",
        "mri_b_s_Nms_per_rad": "mri_b_s",
        "hard_stop": "hard_stop",
    }
    for k, attr in simple.items():
        if k in d:
            kw[attr] = d[k]
    if "phases" in d:
        kw["phases"] = tuple(
            Phase(
                ph["name"],
                ph["start_s"],
                ph["end_s"],
                ph["theta_from_rad"],
                ph["theta_to_rad"],
                ph.get("offset_Nm", 0.0),
                ph.get("low_impedance", True),
            )
            for ph in d["phases"]
        )
        if "duration_s" not in d:
            kw["duration"] = kw["phases"][-1].end
    if "contact" in d:
        c, dc = d["contact"], Contact()
        kw["contact"] = Contact(
            c.get("engage_rad", dc.engage),
            c.get("stiffness_Nm_per_rad", dc.stiffness),
            c.get("damping_Nms_per_rad", dc.damping),
            c.get("deadband_rad", dc.deadband),
            c.get("enabled", dc.enabled),
        )
    if "gravity" in d:
        g, dg = d["gravity"], Gravity()
        kw["gravity"] = Gravity(
            g.get("mass_kg", dg.mass),
            g.get("length_m", dg.length),
            g.get("g_m_per_s2", dg.g),
            g.get("offset_rad", dg.offset),
            g.get("enabled", dg.enabled),
        )
    return Scenario(**kw)


def run_config_from(doc: dict, controller: str | None = None, plant: str | None = None) -> RunConfig:
    """Validate ``doc`` and build the domain objects.

    ``controller``/``plant`` preset names override the document's sections.
    """
    validate(doc)
    try:
        pd = {"preset": plant} if plant else doc.get("plant")
        p = plant_from(pd)
        cd = {"preset": controller} if controller else doc.get("controller")
        cfg = controller_from(cd, p)
        icfg = impedance_from(doc.get("impedance"), p)
        scn = scenario_from(doc.get("scenario"))
    except (ScenarioError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    emit = doc.get("emit", {})
    return RunConfig(
        scn, p, cfg, icfg, emit.get("trace", True), emit.get("metrics", True), doc.get("seed", 0), doc.get("name", "")
    )


def scenario_to_doc(scn: Scenario) -> dict:
    """Inverse of :func:`scenario_from` (used to write presets)."""
    c, g = scn.contact, scn.gravity
    return {
        "duration_s": scn.duration,
        "sample_period_s": scn.sample_period,
        "substeps": scn.substeps,
        "profile": scn.profile,
        "press_mode": scn.press_mode,
        "environment": scn.environment,
        "mri_b_s_Nms_per_rad": scn.mri_b_s,
        "hard_stop": scn.hard_stop,
        "phases": [
            {
                "name": ph.name,
                "start_s": ph.start,
                "end_s": ph.end,
                "theta_from_rad": ph.theta_from,
                "theta_to_rad": ph.theta_to,
                "offset_Nm": ph.offset_Nm,
                "low_impedance": ph.low_impedance,
            }
            for ph in scn.phases
        ],
        "contact": {
            "engage_rad": c.engage,
            "stiffness_Nm_per_rad": c.stiffness,
            "damping_Nms_per_rad": c.damping,
            "deadband_rad": c.deadband,
            "enabled": c.enabled,
        },
        "gravity": {
            "mass_kg": g.mass,
            "length_m": g.length,
            "g_m_per_s2": g.g,
            "offset_rad": g.offset,
            "enabled": g.enabled,
        },
    }

