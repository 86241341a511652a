import json

import numpy as np
import pytest

from oselab.cli import main
from oselab.drivers import format_value, jsonable
from oselab.errors import ConfigError, ScenarioError
from oselab.scenario import Scenario, apply_overrides, builtin_names, load_scenario, log_uniform_distances


def test_builtins_all_load():
    names = builtin_names()
    assert {"cat_constant", "cat_coboundary", "doubling_coboundary", "lemma_lab"} <= set(names)
    for name in names:
        scen = load_scenario(name)
        assert scen.name == name


def test_overrides_and_seed():
    scen = load_scenario("cat_constant", ["spectrum.horizon=128", "extra.flag=yes"], seed=99)
    assert scen.get_int("spectrum", "horizon") == 128
    assert scen.get_bool("extra", "flag")
    assert scen.seed == 99


def test_bad_override_syntax():
    with pytest.raises(ConfigError):
        apply_overrides({}, ["noequals"])
    with pytest.raises(ConfigError):
        apply_overrides({}, ["nosection=1"])


def test_bad_values_are_scenario_errors():
    with pytest.raises(ScenarioError):
        load_scenario("cat_constant", ["generator.family=bogus"])
    with pytest.raises(ScenarioError):
        load_scenario("nope_not_here")
    scen = load_scenario("cat_constant", ["spectrum.horizon=abc"])
    with pytest.raises(ScenarioError):
        scen.get_int("spectrum", "horizon")


def test_scenario_file_and_dict_round_trip(tmp_path):
    path = tmp_path / "mine.ini"
    path.write_text("[scenario]\nseed = 3\n[base]\nkind = doubling_map\n"
                    "[generator]\nfamily = constant\nmatrix = 2 0; 0 0.5\n")
    scen = load_scenario(str(path))
    assert scen.name == "mine"
    again = Scenario.from_dict(json.loads(json.dumps(scen.to_dict())))
    assert again == scen and again.digest == scen.digest


def test_log_uniform_distances_are_stratified():
    d = log_uniform_distances(80, -12, -4, np.random.default_rng(0), bins=8)
    counts, _ = np.histogram(np.log10(d), bins=np.linspace(-12, -4, 9))
    assert list(counts) == [10] * 8


def test_value_formatting_is_exact():
    v = 0.1 + 0.2
    assert float(format_value(v)) == v
    assert jsonable({"a": float("nan"), "b": np.float64(1.5), "c": (1, 2)}) == {"a": "nan", "b": 1.5, "c": [1, 2]}


def run(tmp_path, *argv, name="run"):
    out = tmp_path / name
    return main([*argv, "--out", str(out)]), out


def test_spectrum_run_writes_a_manifest(tmp_path):
    code, out = run(tmp_path, "spectrum", "--scenario", "cat_constant",
                    "--set", "spectrum.horizon=512", "--set", "spectrum.points=2")
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert "spectrum.json" in manifest["files"]
    spec = json.loads((out / "spectrum.json").read_text())
    assert spec["spectrum"]["multiplicities"] == [1, 1]


def test_runs_are_independent_of_worker_count(tmp_path):
    args = ["splitting", "--scenario", "cat_coboundary", "--set", "splitting.points=6",
            "--set", "spectrum.horizon=1024", "--set", "spectrum.points=2", "--set", "run.chunk=2"]
    c1, o1 = run(tmp_path, *args, "--single-thread", name="one")
    c2, o2 = run(tmp_path, *args, "--threads", "2", name="two")
    assert c1 == c2 == 0
    assert (o1 / "manifest.json").read_bytes() == (o2 / "manifest.json").read_bytes()


def test_lemma_lab_small(tmp_path):
    code, out = run(tmp_path, "lemma-lab", "--scenario", "lemma_lab", "--set", "lemma_lab.instances=8")
    assert code == 0
    summary = json.loads((out / "lemma_lab.json").read_text())
    assert summary["instances"] == 8 and summary["all_passed"]


def test_config_errors_exit_two_with_error_file(tmp_path):
    code, out = run(tmp_path, "spectrum", "--scenario", "cat_constant", "--set", "broken")
    assert code == 2
    assert json.loads((out / "error.json").read_text())["exit_code"] == 2
    code, out = run(tmp_path, "verify", "--scenario", "doubling_coboundary", name="noninv")
    assert code == 2
    assert (out / "error.json").exists()


def test_default_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("OSELAB_OUTPUT_ROOT", str(tmp_path))
    code = main(["spectrum", "--scenario", "identity_constant", "--set", "spectrum.horizon=64"])
    assert code == 0
    spec = json.loads((tmp_path / "identity_constant" / "spectrum" / "spectrum.json").read_text())
    assert spec["spectrum"]["exponents"] == [0.0]
    assert spec["spectrum"]["multiplicities"] == [3]
