"""Structured configuration: scenario and design definitions from YAML.

The packaged default config mirrors the built-in registries; user configs
can reference built-in scenarios by name or define new surfaces inline.
"""

from __future__ import annotations

from importlib import resources

import yaml

from .scenarios import (
    OptimumRecord,
    ScenarioSpec,
    SurfaceSpec,
    builtin_scenario,
    scenario_names,
)
from .simulate import DEFAULT_GRID_SPACING, DesignSpec, design_registry


class ConfigError(ValueError):
    """A config file failed validation; messages carry the offending field."""


def _surface_from_dict(name: str, key: str, data) -> SurfaceSpec:
    try:
        kind = data["kind"]
        if kind == "polynomial":
            return SurfaceSpec("polynomial", tuple(tuple(c) for c in data["coefficients"]))
        if kind == "gaussian_bump":
            params = tuple(
                (b["sign"], tuple(b["mean"]), tuple(tuple(r) for r in b["cov"]))
                for b in data["bumps"]
            )
            return SurfaceSpec("gaussian_bump", params)
        raise ConfigError("scenario %r: %s.kind must be polynomial or gaussian_bump" % (name, key))
    except (KeyError, TypeError) as exc:
        raise ConfigError("scenario %r: invalid %s definition (%s)" % (name, key, exc)) from None


def scenario_from_dict(name: str, data) -> ScenarioSpec:
    if "builtin" in data:
        return builtin_scenario(data["builtin"])
    try:
        optima = tuple(
            OptimumRecord(
                stratum=int(o["stratum"]), dose=tuple(o["dose"]),
                f_opt=float(o["f_opt"]), g_opt=float(o["g_opt"]),
                ses_f=float(o["ses_f"]), ses_g=float(o["ses_g"]),
            )
            for o in data.get("optima", ())
        )
        return ScenarioSpec(
            name=name,
            covariates=tuple(tuple(z) for z in data["covariates"]),
            efficacy=_surface_from_dict(name, "efficacy", data["efficacy"]),
            toxicity=_surface_from_dict(name, "toxicity", data["toxicity"]),
            noise_sd_f=float(data["noise_sd_f"]),
            noise_sd_g=float(data["noise_sd_g"]),
            optima=optima,
        )
    except KeyError as exc:
        raise ConfigError("scenario %r: missing field %s" % (name, exc)) from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("scenario %r: %s" % (name, exc)) from None


def design_from_dict(name: str, data) -> DesignSpec:
    try:
        return DesignSpec(
            name=name,
            personalized=bool(data["personalized"]),
            replication=int(data["replication"]),
            toxicity_threshold=data["toxicity_threshold"],
            efficacy_stop_threshold=float(data.get("efficacy_stop_threshold", 0.0)),
            max_patients=int(data.get("max_patients", 80)),
            rate=float(data.get("rate", 0.25)),
            exclusion_side=float(data.get("exclusion_side", 0.0)),
            escalate=bool(data.get("escalate", True)),
            grid_spacing=float(data.get("grid_spacing", DEFAULT_GRID_SPACING)),
        )
    except KeyError as exc:
        raise ConfigError("design %r: missing field %s" % (name, exc)) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError("design %r: %s" % (name, exc)) from None


def parse_config(data) -> dict:
    """Validate a parsed YAML tree into scenario and design registries."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    scenarios = {}
    for name, sdata in (data.get("scenarios") or {}).items():
        scenarios[name] = scenario_from_dict(name, sdata or {})
    designs = {}
    for name, ddata in (data.get("designs") or {}).items():
        designs[name] = design_from_dict(name, ddata or {})
    return {"scenarios": scenarios, "designs": designs}


def load_config(path=None) -> dict:
    """Load a YAML config file, or the packaged defaults when path is None."""
    if path is None:
        text = resources.files("dosebo").joinpath("configs/default.yaml").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config parse error: %s" % exc) from None
    return parse_config(data)


def default_registries() -> dict:
    """The built-in scenarios and designs without touching the filesystem."""
    return {
        "scenarios": {name: builtin_scenario(name) for name in scenario_names()},
        "designs": design_registry(),
    }
