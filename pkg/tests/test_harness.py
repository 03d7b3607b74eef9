import json
import math
import subprocess
import sys

import numpy as np
import pytest

from samplesafe.core import ConfigError
from samplesafe.harness import metrics as M
from samplesafe.harness.cli import main
from samplesafe.harness.config import bundled_config, bundled_config_names, load_config, parse_config
from samplesafe.harness.manifest import verify_manifest
from samplesafe.harness.scenarios import WORKERS_ENV, run_experiment, worker_count

INV = bundled_config("invariance_1d").source_text


def _write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- config --------------------------------------------------------------------------------


def test_all_bundled_configs_parse():
    names = bundled_config_names()
    assert {"invariance_1d", "recovery_1d", "baselines_1d", "train_4d", "unbiasedness", "adversarial"} <= set(names)
    for n in names:
        assert bundled_config(n).seeds


def test_vehicle_constants_come_from_config():
    cfg = bundled_config("train_4d")
    assert cfg.vehicle.r_ref == pytest.approx(50 * math.pi)
    assert cfg.filter.theta == 500 and cfg.filter.eta == 500
    assert cfg.rl.hidden == (100, 100) and cfg.rl.sigma == 0.7


def test_unknown_key_reports_line(tmp_path):
    text = INV.replace("eta = 1.0", "eta = 1.0\nbogus = 3")
    line = text.splitlines().index("bogus = 3") + 1
    with pytest.raises(ConfigError, match=rf":{line}: unknown key 'bogus'"):
        load_config(_write(tmp_path, text))


def test_bad_value_reports_line():
    text = INV.replace("dt = 2.5e-4", "dt = fast")
    line = text.splitlines().index("dt = fast") + 1
    with pytest.raises(ConfigError, match=rf":{line}: bad value for 'dt'"):
        parse_config(text, "x.ini")


def test_missing_section():
    text = INV.split("[model]")[0]
    with pytest.raises(ConfigError, match=r"needs a \[model\] section"):
        parse_config(text)


def test_empty_seed_list():
    with pytest.raises(ConfigError, match="seed"):
        parse_config(INV.replace("seeds = 0", "seeds = "))


def test_invalid_filter_value_is_config_error():
    with pytest.raises(ConfigError, match=r"\[filter\]"):
        parse_config(INV.replace("eta = 1.0", "eta = -1.0"))


def test_unknown_baseline():
    text = bundled_config("baselines_1d").source_text.replace("acbf, racbf", "acbf, balsa")
    with pytest.raises(ConfigError, match="balsa"):
        parse_config(text)


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/x.ini")


def test_overrides():
    cfg = bundled_config("train_4d").with_overrides(seed=5, out="o", dt=0.01, episodes=7)
    assert cfg.seeds == (5,) and cfg.output_dir == "o" and cfg.rl.ts == 0.01 and cfg.rl.episodes == 7
    with pytest.raises(ConfigError):
        bundled_config("invariance_1d").with_overrides(episodes=3)


# -- metrics -------------------------------------------------------------------------------------


def test_metrics():
    phis = np.array([0.5, 0.1, -0.1, 0.2])
    assert M.safety_rate(phis) == 0.75
    assert M.violations(phis) == 1
    assert M.min_phi(phis) == -0.1
    assert M.recovery_time([0, 1, 2, 3], [-1, -0.5, 0.2, 0.3], 0.1) == 2
    assert M.recovery_time([0, 1], [-1, -1], 0.1) is None
    s = M.summarize([1.0, 3.0, None])
    assert (s.mean, s.std, s.n) == (2.0, 1.0, 2)


def test_aggregate_skips_flags():
    agg = M.aggregate([{"a": 1.0, "ok": True}, {"a": 3.0, "ok": False}])
    assert set(agg) == {"a"} and agg["a"]["mean"] == 2.0


def test_worker_env(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert worker_count() == 3
    monkeypatch.setenv(WORKERS_ENV, "zero")
    with pytest.raises(ConfigError):
        worker_count()


# -- runs ---------------------------------------------------------------------------------------------


def test_invariance_run_and_manifest(tmp_path):
    cfg = bundled_config("invariance_1d").with_overrides(out=str(tmp_path / "a"))
    out = run_experiment(cfg)
    m = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert m["per_seed"][0]["safety_rate"] == 1.0
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert set(man["files"]) == set(out.files)
    assert man["config_sha256"] == cfg.sha256
    assert verify_manifest(tmp_path / "a") == []
    # a second run into another directory reproduces every hash
    run_experiment(cfg.with_overrides(out=str(tmp_path / "b")))
    man_b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man_b["files"] == man["files"]
    (tmp_path / "a" / "seed_0" / "filter.csv").write_text("tampered")
    assert verify_manifest(tmp_path / "a") == ["seed_0/filter.csv"]


def test_recovery_run():
    cfg = bundled_config("recovery_1d")
    from samplesafe.harness.scenarios import run_filter_1d

    m = run_filter_1d(cfg, 0).metrics
    assert m["phi0"] == pytest.approx(-0.5625)
    assert m["recovery_time"] <= 0.5635 / cfg.filter.eta + 5 * cfg.integrator.dt


def test_adversarial_run(tmp_path):
    out = run_experiment(bundled_config("adversarial").with_overrides(out=str(tmp_path)))
    rows = out.results[0].rows
    assert {r["policy"] for r in rows} == {"zero", "random", "greedy_gradient"}
    for r in rows:
        assert r["phi_rate"] == pytest.approx(-100.0, rel=1e-13)
        assert r["left_safe_set"]


def test_parallel_seeds_match_serial(tmp_path, monkeypatch):
    text = bundled_config("train_4d").source_text.replace("episodes = 50", "episodes = 2").replace("max_steps = 1000", "max_steps = 60")
    cfg = parse_config(text)
    serial = run_experiment(cfg.with_overrides(out=str(tmp_path / "s")), workers=1)
    par = run_experiment(cfg.with_overrides(out=str(tmp_path / "p")), workers=3)
    hs = json.loads((tmp_path / "s" / "manifest.json").read_text())["files"]
    hp = json.loads((tmp_path / "p" / "manifest.json").read_text())["files"]
    assert hs == hp
    assert [r.seed for r in par.results] == [0, 1, 2]
    # the configured start lies outside the safe set; the run reports it
    expected = 200 - 4 * (50 * math.pi) ** 2 - 0.001 * 2.5**2
    assert par.results[0].metrics["phi0"] == pytest.approx(expected, rel=1e-12)


# -- CLI ------------------------------------------------------------------------------------------------


def test_cli_compare(tmp_path, capsys):
    assert main(["compare", "baselines_1d", "--out", str(tmp_path)]) == 0
    table = (tmp_path / "comparison.csv").read_text().splitlines()
    assert table[0].startswith("seed,controller,")
    rows = {line.split(",")[1]: line.split(",") for line in table[1:]}
    assert rows["filter"][3] == "0" and rows["filter"][2] == "1.0"
    assert {line.split(",")[0] for line in table[1:]} == {"0"}
    assert "filter" in capsys.readouterr().out


def test_cli_config_error(tmp_path, capsys):
    p = _write(tmp_path, "[experiment]\nscenario = nope\nseeds = 0\n")
    assert main(["run", str(p)]) == 2
    assert f"{p}:2" in capsys.readouterr().err


def test_cli_wrong_scenario_for_command():
    assert main(["train", "invariance_1d", "--out", "/tmp/never"]) == 2


def test_cli_simulation_fault(tmp_path):
    text = INV.replace("a = 1.5", "a = 1e300").replace("x0 = 0.1999", "x0 = 1e10").replace("half_width = 0.2", "half_width = 1e12")
    p = _write(tmp_path, text.replace("runs/invariance_1d", str(tmp_path / "o")))
    assert main(["run", str(p)]) == 3


def test_cli_check_failure_exit_code(tmp_path, capsys):
    text = bundled_config("recovery_1d").source_text.replace("horizon = 1.0", "horizon = 0.1")
    p = _write(tmp_path, text)
    assert main(["run", str(p), "--out", str(tmp_path / "o"), "--check"]) == 4
    assert "FAIL" in capsys.readouterr().out


def test_cli_check_pass(tmp_path):
    assert main(["run", "invariance_1d", "--out", str(tmp_path), "--check", "--dt", "2.5e-4"]) == 0


def test_cli_check_suite(capsys):
    assert main(["check", "impossibility"]) == 0
    assert capsys.readouterr().out.startswith("PASS [4]")


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "samplesafe.harness.cli", "configs"], capture_output=True, text=True)
    assert r.returncode == 0 and "train_4d" in r.stdout
