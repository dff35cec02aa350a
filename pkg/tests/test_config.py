from __future__ import annotations

import pytest

from adaptmit.config import ConfigError, ExperimentConfig, load_config
from adaptmit.plant import Level


def test_defaults_are_valid_and_consistent():
    cfg = ExperimentConfig()
    assert cfg.drift_params().schedule == "peak"
    assert [w.name for w in cfg.workloads()] == ["ghz", "ccx_heavy", "qft"]
    assert cfg.policy_params().lam == 0.05
    assert cfg.som_params().tau1 == 0.6 and cfg.som_params().tau2 == 0.2
    assert len(cfg.eval_seeds()) == 10


def test_ini_round_trip(tmp_path):
    cfg = ExperimentConfig().with_overrides("policy", lam=0.2, deterministic=True)
    path = tmp_path / "exp.ini"
    path.write_text(cfg.to_ini())
    back = load_config(path)
    assert back == cfg
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_partial_file_keeps_defaults(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[run]\nT_run = 50\n\n[plant]\nworkloads = qft, bv\n")
    cfg = load_config(path)
    assert cfg.run.T_run == 50 and cfg.drift_params().T_run == 50
    assert [w.name for w in cfg.workloads()] == ["qft", "bv"]
    assert cfg.policy == ExperimentConfig().policy


@pytest.mark.parametrize(
    "text, match",
    [
        ("[plant]\nbogus = 1\n", "unknown key"),
        ("[nonsense]\nx = 1\n", "unknown config section"),
        ("[plant]\ncode_distance = 4\n", "code distance"),
        ("[plant]\np_phys0 = nan\n", "NaN"),
        ("[policy]\nlam = -1\n", "lambda"),
        ("[policy]\nscale_severe = 0.9\n", "strictly smaller scale"),
        ("[policy]\ndeterministic = maybe\n", "boolean"),
        ("[plant]\nworkloads = ghz, nope\n", "unknown workload"),
        ("[svgp]\nencoding = binary\n", "encoding"),
        ("[run]\nexplore = 2\n", "explore"),
    ],
)
def test_invalid_configs_rejected(tmp_path, text, match):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_config(path)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(ConfigError, match="nope.ini"):
        load_config(tmp_path / "nope.ini")


def test_custom_workload_section(tmp_path):
    path = tmp_path / "w.ini"
    path.write_text(
        "[plant]\nworkloads = mine\n\n[workload.mine]\nn_qubits = 3\ndepth = 4\ngate_count = 30\nfamily = Structured\n"
    )
    cfg = load_config(path)
    (w,) = cfg.workloads()
    assert (w.name, w.gate_count, w.family) == ("mine", 30, "Structured")
    assert load_config_text(tmp_path, cfg.to_ini()) == cfg


def load_config_text(tmp_path, text):
    p = tmp_path / "again.ini"
    p.write_text(text)
    return load_config(p)


def test_action_library_from_config():
    cfg = ExperimentConfig().with_overrides("policy", scale_moderate=0.5, cost_moderate=0.4)
    acts = {a.label: a for a in cfg.actions()}
    assert acts[Level.MODERATE].scale == 0.5 and acts[Level.MODERATE].cost == 0.4
