import json

import numpy as np
import pytest

from critchaos import cli
from critchaos import harness as hz


def tiny_ratio(**kw):
    cfg = hz.default_config("ratio").to_dict()
    cfg.update(eps_base=2.0 ** -4, eps_count=3, replicas=2, per_octave=2)
    cfg["params"].update(vanishing_eps=[2.0 ** -4, 2.0 ** -5, 2.0 ** -6], z_replicas=400,
                         z_eps=[2.0 ** -4, 2.0 ** -6])
    cfg.update(kw)
    return hz.ExperimentConfig.from_dict(cfg)


@pytest.fixture(scope="module")
def ratio_report():
    return hz.run_ratio_experiment(tiny_ratio())


def test_config_validation():
    with pytest.raises(ValueError):
        hz.ExperimentConfig("x", replicas=1)
    with pytest.raises(ValueError):
        hz.ExperimentConfig("x", eps_ratio=1.0)
    with pytest.raises(ValueError):
        hz.ExperimentConfig("x", normalization="none")
    with pytest.raises(ValueError):
        hz.ExperimentConfig.from_dict({"name": "x", "bogus": 1})
    c = hz.ExperimentConfig("x", eps_base=0.5, eps_count=3)
    assert c.eps_schedule == [0.5, 0.25, 0.125]


def test_config_hash():
    a = hz.ExperimentConfig("x")
    assert hz.config_hash(a) == hz.config_hash(hz.ExperimentConfig("x"))
    assert hz.config_hash(a) != hz.config_hash(hz.ExperimentConfig("x", master_seed=1))
    # worker count is an execution detail
    assert hz.config_hash(a) == hz.config_hash(hz.ExperimentConfig("x", workers=4))
    assert len(hz.config_hash(a)) == 64


def test_ratio_smoke_report(ratio_report, tmp_path):
    rep = ratio_report
    cfg = tiny_ratio()
    assert len(rep.records) == cfg.replicas * len(cfg.eps_schedule)
    assert set(rep.gates) == {"ratio_trend", "critical_vanishing", "z_tilde_constancy"}
    assert rep.exit_code in (0, 1, 2)
    assert rep.config_hash == hz.config_hash(cfg)
    p = hz.emit_report(rep, "json", tmp_path / "r.json")
    d = json.loads(p.read_text())
    assert d["config_hash"] == rep.config_hash
    assert "timestamps" not in d


def test_emit_is_byte_stable(ratio_report, tmp_path):
    again = hz.run_ratio_experiment(tiny_ratio())
    for fmt in ("json", "csv"):
        a = hz.emit_report(ratio_report, fmt, tmp_path / f"a.{fmt}").read_bytes()
        b = hz.emit_report(again, fmt, tmp_path / f"b.{fmt}").read_bytes()
        assert a == b


def test_json_round_trip(ratio_report, tmp_path):
    p = hz.emit_report(ratio_report, "json", tmp_path / "r.json")
    back = hz.ExperimentReport.from_dict(json.loads(p.read_text()))
    assert back.to_dict() == ratio_report.to_dict()
    assert back.status == ratio_report.status


def test_csv_header(ratio_report, tmp_path):
    p = hz.emit_report(ratio_report, "csv", tmp_path / "r.csv")
    header = p.read_text().splitlines()[0].split(",")
    assert header == ["replica", "eps", "critical_mass", "derivative_mass",
                      "cutoff_mass_b5", "cutoff_derivative_b5", "ratio_b5",
                      "cutoff_mass_b10", "cutoff_derivative_b10", "ratio_b10"]


def test_unwritable_path(ratio_report, tmp_path):
    with pytest.raises(OSError):
        hz.emit_report(ratio_report, "json", tmp_path / "missing" / "r.json")
    with pytest.raises(ValueError):
        hz.emit_report(ratio_report, "xml", tmp_path / "r.xml")


def test_parallel_equivalence(ratio_report):
    par = hz.ratio_records(tiny_ratio(workers=2))
    assert par == ratio_report.records


def test_min_particle_small():
    cfg = hz.default_config("min-particle").to_dict()
    cfg.update(eps_count=6, replicas=3, per_octave=2)
    cfg["params"]["depths"] = [2.0 ** -5, 2.0 ** -6]
    rep = hz.run_minparticle_experiment(hz.ExperimentConfig.from_dict(cfg))
    assert len(rep.records) == 3 * 6
    v = rep.gates["min_particle"].value
    p = list(v["P_C_beta_complement"].values())
    assert p == sorted(p, reverse=True)
    assert v["mean_shift"] <= 0


def test_exit_codes():
    rep = hz.ExperimentReport("x", {}, "h")
    assert rep.exit_code == 0
    rep.add_gate(hz.Gate("a", None, hz.INCONCLUSIVE))
    assert rep.exit_code == 2
    rep.add_gate(hz.Gate("b", None, hz.FAIL))
    assert rep.exit_code == 1


def test_every_criterion_has_one_subcommand():
    assert sorted(hz.CRITERIA) == list(range(1, 14))
    assert set(hz.CRITERIA.values()) <= set(cli.SUBCOMMANDS)
    assert set(hz.COMMANDS) == set(cli.SUBCOMMANDS)


def test_cli_mollifier_check(tmp_path, capsys):
    code = cli.main(["mollifier-check", "--out", str(tmp_path), "--format", "csv", "--seed", "3"])
    assert code == 0
    d = json.loads((tmp_path / "mollifier-check.json").read_text())
    assert d["config"]["master_seed"] == 3
    assert "admissible: PASS" in capsys.readouterr().out


def test_cli_config_override(tmp_path):
    cfgp = tmp_path / "c.json"
    cfgp.write_text(json.dumps({"mollifier": {"kind": "density", "profile": "spike", "grid_step": 1e-4},
                                "d": 1}))
    assert cli.main(["mollifier-check", "--config", str(cfgp), "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit):
        cli.main(["mollifier-check", "--seed", "-1", "--out", str(tmp_path)])


def test_sample_field_csv(tmp_path):
    assert cli.main(["sample-field", "--out", str(tmp_path), "--format", "csv", "--replicas", "2"]) == 0
    lines = (tmp_path / "sample-field.csv").read_text().splitlines()
    assert lines[0] == "label,value,seed"
    assert len(lines) == 1 + 2 * 2 * 3
