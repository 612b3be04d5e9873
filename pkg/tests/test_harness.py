import json
import math
from types import SimpleNamespace

import numpy as np
import pytest

from stochreg.errors import ConfigError
from stochreg.harness import cli
from stochreg.harness.config import config_from_dict, load_config, parse_eps
from stochreg.harness.metrics import MetricsRow, read_metrics_csv, seed_average, steady_state_rms
from stochreg.harness.run import execute, figure_config, reproduce, run
from stochreg.model import preset_scalar, save_model


def traj(t, e, jump=None):
    return SimpleNamespace(times=np.asarray(t), e=np.asarray(e), jump=jump)


def test_steady_state_rms_examples():
    t = np.linspace(0.0, 2.0, 20001)
    assert steady_state_rms(traj(t, np.zeros_like(t)), 1.0) == 0.0
    assert steady_state_rms(traj(t, np.full_like(t, 2.0)), 1.0) == pytest.approx(2.0)
    # whole periods over [1, 2]
    s = steady_state_rms(traj(t, np.sin(2 * np.pi * 5 * t)), 1.0)
    assert abs(s - 1 / math.sqrt(2)) < 1e-3


def test_steady_state_rms_drops_pre_jump_rows():
    t = np.array([0.0, 1.0, 1.0, 2.0])
    e = np.array([0.0, 100.0, 1.0, 1.0])
    assert steady_state_rms(traj(t, e, jump=np.array([0, 0, 1, 0])), 0.5) == pytest.approx(1.0)


def test_steady_state_rms_empty_window():
    with pytest.raises(ConfigError):
        steady_state_rms(traj([0.0, 0.5], [1.0, 1.0]), 1.0)


def test_parse_eps():
    assert parse_eps("inf") == math.inf
    assert parse_eps(5e-4) == 5e-4
    with pytest.raises(ConfigError):
        parse_eps(-1.0)
    with pytest.raises(ConfigError):
        parse_eps("soon")


def write(tmp_path, text, name="cfg.json"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.mark.parametrize("body, key, line", [
    ('{\n "scenario": "circuit",\n "controller": {"type": "magic"}\n}', "type", 3),
    ('{\n "scenario": "circuit",\n "controller": {"type": "approx_fi"},\n "seeds": [1, 1]\n}',
     "seeds", 4),
    ('{\n "scenario": "circuit",\n "controller": {"type": "approx_fi"},\n'
     ' "sweep": {"param": "d",\n  "values": []}\n}', "values", 5),
    ('{\n "scenario": "circuit",\n "controller": {"type": "approx_fi"},\n "epsilon": -2\n}',
     "epsilon", 4),
    ('{\n "scenario": "circuit",\n "controler": {}\n}', "controler", 3),
])
def test_config_errors_name_the_line(tmp_path, body, key, line):
    path = write(tmp_path, body)
    with pytest.raises(ConfigError, match=rf"cfg\.json:{line}: "):
        load_config(path)


def test_invalid_json_has_line(tmp_path):
    path = write(tmp_path, '{\n "scenario": "circuit",\n "controller": \n}')
    with pytest.raises(ConfigError, match=r"cfg\.json:4: invalid JSON"):
        load_config(path)


def test_config_defaults():
    cfg = config_from_dict({"scenario": "circuit", "controller": {"type": "approx_fi"}})
    assert (cfg.delta, cfg.T, cfg.base["d"], cfg.base["epsilon"]) == (5e-7, 2.0, 1.0, math.inf)
    fast = config_from_dict({"scenario": "circuit", "controller": {"type": "approx_fi"}}, fast=True)
    assert (fast.delta, fast.T) == (5e-6, 0.5)
    assert cfg.seeds == list(range(10)) and cfg.trace_seeds == [0]


def test_figure_presets():
    d = figure_config("fig5")
    assert d["sweep"]["values"] == ["inf", 5e-4, 5e-5, 5e-6] and d["d"] == 2.0
    d = figure_config("fig3")
    assert d["sweep"]["values"] == [10.0, 1.0, 0.1] and d["epsilon"] == 5e-5
    assert figure_config("fig1")["sweep"]["values"] == [-0.5, -5.0, 0.5]
    with pytest.raises(ConfigError):
        figure_config("fig2")


def small_circuit(tmp_path, **kw):
    d = {"scenario": "circuit", "controller": {"type": "approx_fi"}, "delta": 5e-6, "T": 0.02,
         "epsilon": 1e-3, "sweep": {"param": "d", "values": [10.0, 1.0]}, "seeds": [0, 1, 2],
         "out_dir": str(tmp_path / "out")}
    d.update(kw)
    return d


def test_run_is_byte_deterministic(tmp_path):
    path = write(tmp_path, json.dumps(small_circuit(tmp_path)))
    assert run(path, out_dir=str(tmp_path / "a")) == 0
    assert run(path, out_dir=str(tmp_path / "b")) == 0
    for name in ("metrics.csv", "summary.json", "traces/traj_d=10.0_seed0.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_workers_do_not_change_results(tmp_path):
    a = config_from_dict(small_circuit(tmp_path, out_dir=str(tmp_path / "a")))
    b = config_from_dict(small_circuit(tmp_path, out_dir=str(tmp_path / "b"), workers=2))
    execute(a)
    execute(b)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == \
        (tmp_path / "b" / "metrics.csv").read_bytes()


def test_summary_recomputable_from_metrics(tmp_path):
    cfg = config_from_dict(small_circuit(tmp_path))
    execute(cfg)
    rows = read_metrics_csv(tmp_path / "out" / "metrics.csv")
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert len(rows) == 6
    for pt in summary["points"]:
        vals = [float(r["rms_e"]) for r in rows if r["d"] == pt["value"]]
        assert pt["mean_rms_e"] == pytest.approx(np.mean(vals), rel=1e-15)
    assert "calibration" in summary["calibration_note"]


def test_seed_average_marks_divergence():
    rows = [MetricsRow("scalar", "ideal_fi", {"c": 1.0}, s, v, math.nan, 0.0, math.isnan(v))
            for s, v in enumerate([1.0, math.nan])]
    avg = seed_average(rows, "c")
    assert avg[0]["mean_rms_e"] is None and avg[0]["n_divergent"] == 1


def test_scalar_stability_table(tmp_path):
    cfg = config_from_dict({"scenario": "scalar", "controller": {"type": "ideal_fi"}, "T": 5.0,
                            "sweep": {"param": "c", "values": [-0.5, -5.0, 0.5]},
                            "seeds": [0], "out_dir": str(tmp_path)})
    execute(cfg)
    st = json.loads((tmp_path / "summary.json").read_text())["stability"]
    verdicts = {p["c"]: (p["almost_sure"]["verdict"], p["mean_square"]["verdict"])
                for p in st["points"]}
    assert verdicts[-0.5] == ("unstable", "unstable")
    # almost-sure only: outside the mean-square interval (0.044, 2.75)
    assert verdicts[-5.0] == ("stable", "unstable")
    assert verdicts[0.5] == ("stable", "stable")
    np.testing.assert_allclose(st["as_roots"], [-2.2346805717910216, 0.03468057179102173],
                               rtol=1e-10)
    np.testing.assert_allclose(st["ms_roots"], [0.04445582882740409, 2.7555441711725956],
                               rtol=1e-10)


def test_reproduce_writes_plot_table(tmp_path):
    summary = reproduce("fig1", str(tmp_path), fast=True, seeds=[0])
    assert [p["value"] for p in summary["points"]] == ["-0.5", "-5.0", "0.5"]
    head = (tmp_path / "fig1.csv").read_text().splitlines()[0]
    assert head == "c,t,Pi_11"
    # c = -0.5 leaves the stable region of the regulator flow
    assert summary["points"][0]["n_divergent"] == 1
    assert summary["points"][1]["n_divergent"] == 0


def test_cli_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, '{"scenario": "moon",\n "controller": {"type": "ideal_fi"}}')
    assert cli.main(["run", bad]) == 1
    assert "cfg.json:1:" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.json")]) == 1
    ok = write(tmp_path, json.dumps(small_circuit(tmp_path, sweep=None, seeds=[0])), "ok.json")
    assert cli.main(["run", ok]) == 0
    div = write(tmp_path, json.dumps({"scenario": "scalar", "controller": {"type": "ideal_fi"},
                                      "c": -0.5, "T": 100.0, "seeds": [0],
                                      "out_dir": str(tmp_path / "div")}), "div.json")
    assert cli.main(["run", div]) == 2


def test_cli_check_stability(tmp_path, capsys):
    m, e = preset_scalar(0.5)
    path = str(tmp_path / "m.json")
    save_model(path, m, e)
    assert cli.main(["check-stability", path, "--method", "mean-square"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["verdict"] == "stable"
