import textwrap

import numpy as np
import pytest

from dosebo.config import (
    ConfigError,
    default_registries,
    load_config,
    parse_config,
    scenario_from_dict,
)
from dosebo.scenarios import eval_surface


def _surf_eq(a, b):
    if a.kind != b.kind:
        return False
    if a.kind == "polynomial":
        return a.params == b.params
    return all(
        sa == sb and np.array_equal(ma, mb) and np.array_equal(ca, cb)
        for (sa, ma, ca), (sb, mb, cb) in zip(a.params, b.params)
    )


def _scen_eq(a, b):
    return (
        a.name == b.name
        and a.covariates == b.covariates
        and _surf_eq(a.efficacy, b.efficacy)
        and _surf_eq(a.toxicity, b.toxicity)
        and a.noise_sd_f == b.noise_sd_f
        and a.noise_sd_g == b.noise_sd_g
        and a.optima == b.optima
    )


# Story: the packaged config is a faithful mirror of the built-in
# registries, field for field.
def test_packaged_defaults_match_builtin_registries():
    packaged = load_config()
    builtin = default_registries()
    assert set(packaged["scenarios"]) == set(builtin["scenarios"])
    for name, scen in builtin["scenarios"].items():
        assert _scen_eq(packaged["scenarios"][name], scen), name
    assert packaged["designs"] == builtin["designs"]


def test_design_registry_covers_all_arms():
    designs = default_registries()["designs"]
    assert len(designs) == 16
    assert designs["pers-g0.2"].personalized and designs["pers-g0.2"].replication == 2
    assert designs["std-g0.5"].replication == 4
    assert designs["std-g0.5"].toxicity_threshold == (0.5,)
    assert designs["P2-n60"].efficacy_stop_threshold == 0.125
    assert designs["P2-n60"].toxicity_threshold == (1.5, 2.0)
    assert designs["S4-n40"].toxicity_threshold == (1.5,)
    assert all(d.rate == 0.5 for n, d in designs.items() if "-n" in n)


def test_inline_bump_scenario_roundtrip(tmp_path):
    cfg = tmp_path / "custom.yaml"
    cfg.write_text(textwrap.dedent("""
        scenarios:
          tiny:
            covariates: [[0.0]]
            efficacy:
              kind: gaussian_bump
              bumps:
                - {sign: -1, mean: [0.5, 0.5], cov: [[0.1, 0.0], [0.0, 0.1]]}
            toxicity:
              kind: polynomial
              coefficients:
                - [0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
            noise_sd_f: 1.0
            noise_sd_g: 0.2
        designs:
          quick:
            personalized: false
            replication: 2
            toxicity_threshold: 0.3
            max_patients: 8
    """))
    reg = load_config(cfg)
    scen = reg["scenarios"]["tiny"]
    assert scen.n_strata == 1
    assert eval_surface(scen.efficacy, (0.5, 0.5), 0) == pytest.approx(-1.5915494, abs=1e-6)
    assert eval_surface(scen.toxicity, (0.9, 0.9), 0) == pytest.approx(0.1)
    design = reg["designs"]["quick"]
    assert design.max_patients == 8 and not design.personalized
    assert design.toxicity_threshold == (0.3,)


def test_builtin_reference_and_optima_parsing():
    scen = scenario_from_dict("x", {"builtin": "scenario2"})
    assert scen.name == "scenario2"
    inline = scenario_from_dict("y", {
        "covariates": [[0.0]],
        "efficacy": {"kind": "polynomial", "coefficients": [[1, 0, 0, 0, 0, 0, 0]]},
        "toxicity": {"kind": "polynomial", "coefficients": [[0, 0, 0, 0, 0, 0, 0]]},
        "noise_sd_f": 1.0,
        "noise_sd_g": 1.0,
        "optima": [{"stratum": 0, "dose": [0.5, 0.5], "f_opt": 1.0, "g_opt": 0.0,
                    "ses_f": 1.0, "ses_g": 0.0}],
    })
    assert inline.optima[0].dose == (0.5, 0.5)


# Story: a config mistake names the scenario or design and the field.
def test_error_diagnostics():
    with pytest.raises(ConfigError, match="scenario 'bad': missing field 'covariates'"):
        scenario_from_dict("bad", {"efficacy": {}, "toxicity": {}})
    with pytest.raises(ConfigError, match="design 'tiny': missing field 'replication'"):
        parse_config({"designs": {"tiny": {"personalized": True, "toxicity_threshold": 0.2}}})
    with pytest.raises(ConfigError, match="scenario 'b': invalid efficacy"):
        parse_config({"scenarios": {"b": {
            "covariates": [[0.0]],
            "efficacy": {"kind": "gaussian_bump"},
            "toxicity": {"kind": "polynomial", "coefficients": [[0] * 7]},
            "noise_sd_f": 1.0, "noise_sd_g": 1.0,
        }}})
    with pytest.raises(ConfigError, match="kind must be polynomial or gaussian_bump"):
        parse_config({"scenarios": {"c": {
            "covariates": [[0.0]],
            "efficacy": {"kind": "spline"},
            "toxicity": {"kind": "polynomial", "coefficients": [[0] * 7]},
            "noise_sd_f": 1.0, "noise_sd_g": 1.0,
        }}})
    with pytest.raises(ConfigError, match="config root must be a mapping"):
        parse_config([1, 2])
    with pytest.raises(KeyError, match="unknown scenario"):
        scenario_from_dict("x", {"builtin": "nope"})


def test_yaml_parse_error_carries_position(tmp_path):
    bad = tmp_path / "broken.yaml"
    bad.write_text("designs:\n  quick: {personalized: true\n")
    with pytest.raises(ConfigError, match="config parse error"):
        load_config(bad)


def test_empty_config_gives_empty_registries():
    assert parse_config({}) == {"scenarios": {}, "designs": {}}
    assert parse_config({"scenarios": None}) == {"scenarios": {}, "designs": {}}
