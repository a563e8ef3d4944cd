import json

import pytest

from beamlab import cli


@pytest.fixture
def outroot(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "out"))
    return tmp_path / "out"


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def levels(diags):
    return [d["level"] for d in diags]


def test_config_defaults_and_errors():
    cfg = cli.ExperimentConfig.from_dict({"experiment": "wave"})
    assert cfg.params["cfl"] == 0.45 and cfg.output_dir == "wave"
    assert cfg.fixtures["domain"] == "interval"
    for bad in (
        {"experiment": "nope"},
        {"experiment": "wave", "extra": 1},
        {"experiment": "wave", "params": {"bogus": 1}},
        {"experiment": "wave", "params": {"T": -1}},
        {"experiment": "wave", "seed": "x"},
        [],
    ):
        with pytest.raises(cli.ConfigError):
            cli.ExperimentConfig.from_dict(bad)


def test_validate_cfl_and_travel_time():
    assert "error" in levels(cli.validate({"experiment": "wave", "params": {"cfl": 0.9}}))
    short = cli.validate({"experiment": "wave", "params": {"T": 1.0}})
    assert levels(short) == ["warning"] and "2T_alpha" in short[0]["message"]
    assert cli.validate({"experiment": "wave"}) == []


def test_validate_fixture_and_domain_errors():
    assert levels(cli.validate({"experiment": "beam", "fixtures": {"metric": "no-such"}})) == ["error"]
    bad = cli.validate({"experiment": "wave", "fixtures": {"metric": "euclidean:2", "domain": "unit_ball:2"}})
    assert "error" in levels(bad)
    dims = cli.validate({"experiment": "wave", "fixtures": {"metric": "euclidean:2"}})
    assert "error" in levels(dims)


def test_list_fixtures(capsys):
    assert cli.main(["list-fixtures"]) == cli.EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert "weierstrass" in data["alpha"] and "sweep" in data["experiments"]


def test_main_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG
    p = write_cfg(tmp_path, {"experiment": "wave", "params": {"n_nodes": 0}})
    assert cli.main(["validate", p]) == cli.EXIT_CONFIG
    p = write_cfg(tmp_path, {"experiment": "wave", "params": {"cfl": 0.9}}, "cfl.json")
    assert cli.main(["validate", p]) == cli.EXIT_CONFIG


def test_run_wave_writes_manifest(tmp_path, outroot, capsys):
    p = write_cfg(tmp_path, {"experiment": "wave", "params": {"n_nodes": 200, "T": 1.0}})
    assert cli.main(["run", p]) == cli.EXIT_OK
    man = json.loads((outroot / "wave" / "manifest.json").read_text())
    assert man["status"] == "pass" and "manifest.json" in man["outputs"]
    for name in man["outputs"]:
        assert (outroot / "wave" / name).exists()


def test_manifest_written_on_config_failure(outroot):
    m = cli.run({"experiment": "wave", "output_dir": "bad", "params": {"cfl": 0.9}})
    assert m.status == "config-error" and m.exit_code == cli.EXIT_CONFIG
    assert json.loads((outroot / "bad" / "manifest.json").read_text())["status"] == "config-error"


def test_disk_roundtrip_check_and_no_assert(tmp_path, outroot):
    cfg = {
        "experiment": "xray",
        "output_dir": "disk",
        "fixtures": {"phantom": "disk"},
        "params": {"n_grid": 64, "n_theta": 60, "n_steps": 128},
    }
    p = write_cfg(tmp_path, cfg)
    # the sharp edge keeps the filtered backprojection above 5 percent
    assert cli.main(["run", p]) == cli.EXIT_ASSERT
    assert cli.main(["run", p, "--no-assert"]) == cli.EXIT_OK
    err = json.loads((outroot / "disk" / "roundtrip.json").read_text())["relative_l2_error"]
    assert err > 0.05
    cfg["params"]["tol"] = 0.5
    assert cli.run(cfg).status == "pass"


def test_trace_and_observability_runs(outroot):
    assert cli.run({"experiment": "trace", "params": {"n_samples": 8}}).status == "pass"
    m = cli.run({"experiment": "observability", "params": {"K": 4, "n_nodes": 200}})
    assert m.status == "pass"
    assert "observability.json" in m.outputs
