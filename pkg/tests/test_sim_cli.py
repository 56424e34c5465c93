import csv
import json
import os

import numpy as np
import pytest

from sddtmpc import cli, config, sim


# --------------------------------------------------------------------------- config grammar


def test_parse_config_grammar():
    text = """
    # a comment
    scenarios = s1, s2   # trailing comment
    seeds = 0..3
    down = 5..3
    use_terminal = true
    plots = no
    max_steps = 40
    ratio = 0.25
    fis_path = models/fis.json
    """
    v = config.parse_config(text)
    assert v["scenarios"] == ["s1", "s2"]
    assert v["seeds"] == [0, 1, 2, 3]
    assert v["down"] == [5, 4, 3]
    assert v["use_terminal"] is True and v["plots"] is False
    assert v["max_steps"] == 40 and isinstance(v["max_steps"], int)
    assert v["ratio"] == 0.25
    assert v["fis_path"] == "models/fis.json"


@pytest.mark.parametrize("text", ["a = 1\na = 2", "no equals sign", "Bad-Key = 1"])
def test_parse_config_errors(text):
    with pytest.raises(config.ConfigError):
        config.parse_config(text)


def test_merge_prefers_explicit_overrides():
    merged = config.merge({"seed": 1, "id": "s2"}, {"seed": 4, "id": None})
    assert merged == {"seed": 4, "id": "s2"}
    assert config.as_list(3) == [3]
    assert config.as_list([1, 2]) == [1, 2]


# --------------------------------------------------------------------------- scenario configuration


def test_scenario_config_validation():
    with pytest.raises(ValueError):
        sim.ScenarioConfig(id="s9")
    with pytest.raises(ValueError):
        sim.ScenarioConfig(id="s2", disturbance_case="attract")
    with pytest.raises(ValueError):
        sim.ScenarioConfig(id="unicycle", controller="mpc")
    assert sim.ScenarioConfig(id="s3", horizon=9).horizon == 6
    assert sim.ScenarioConfig(id="unicycle", controller="tmpc").horizon == 10
    assert sim.ScenarioConfig(id="s1").horizon == 5


def test_matrix_cells_expand_and_filter():
    cells = cli.matrix_cells({"scenarios": ["s2", "unicycle"], "controllers": ["mpc", "tmpc"], "seeds": [0, 1],
                              "cases": ["none", "push_up"], "max_steps": 30})
    ids = [(c.id, c.controller, c.disturbance_case, c.seed) for c in cells]
    # unicycle drops mpc and push_up
    assert ("unicycle", "mpc", "none", 0) not in ids
    assert ("unicycle", "tmpc", "push_up", 0) not in ids
    assert ("unicycle", "tmpc", "none", 1) in ids
    assert len([i for i in ids if i[0] == "s2"]) == 2 * 2 * 2
    assert all(c.max_steps == 30 for c in cells)


# --------------------------------------------------------------------------- reporting and plots


def test_report_on_empty_directory_writes_headers(tmp_path):
    paths = sim.report_tables([], str(tmp_path / "tables"))
    assert len(paths) == 4
    for p in paths:
        with open(p) as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 and rows[0]


def _tiny_log(scenario, n=1):
    log = sim.TrajectoryLog(meta={"scenario": scenario})
    for k in range(n):
        log.add(k=k, t=0.1 * k, x1=0.1 * k, x2=0.05, x3=0, x4=0, z1=0.1 * k, z2=0.04, z3=0, z4=0, u1=1, u2=-1,
                v1=1, v2=-1, w1=0, w2=0, beta=0.5, cost=1.0, feasible=True)
    return log


def test_plots_single_row_log(tmp_path):
    paths = sim.emit_plots(_tiny_log("s1", 1), str(tmp_path))
    assert {os.path.basename(p) for p in paths} == {"positions.svg", "tube_error.svg", "inputs.svg"}
    for p in paths:
        text = open(p).read()
        assert text.startswith("<svg") and "nan" not in text


def test_plots_draw_wall_only_for_corridor(tmp_path):
    sim.emit_plots(_tiny_log("s2", 4), str(tmp_path / "a"))
    sim.emit_plots(_tiny_log("s1", 4), str(tmp_path / "b"))
    assert 'class="wall"' in open(tmp_path / "a" / "positions.svg").read()
    assert 'class="wall"' not in open(tmp_path / "b" / "positions.svg").read()
    assert open(tmp_path / "b" / "positions.svg").read().count('class="heat"') == 4


def test_empty_log_writes_no_plots(tmp_path):
    assert sim.emit_plots(sim.TrajectoryLog(), str(tmp_path)) == []


# --------------------------------------------------------------------------- short closed-loop runs


@pytest.fixture(scope="module")
def unicycle_pair():
    cfg = sim.ScenarioConfig(id="unicycle", controller="sddtmpc", disturbance_case="uniform_random", max_steps=3,
                             pso_iterations=8, seed=2)
    return sim.run_unicycle(cfg)


def test_unicycle_pair_logs(unicycle_pair, tmp_path):
    (lt, ls), (st, ss) = unicycle_pair
    assert (st.controller, ss.controller) == ("tmpc", "sddtmpc")
    assert len(lt.rows) == len(ls.rows) == 3
    assert ss.extra["tube_violations"] == 0
    sim.write_run(ls, ss, str(tmp_path), plots=True)
    for name in ("trajectory.csv", "summary.json", "diagnostics.csv", "events.json", "leader.csv"):
        assert (tmp_path / name).exists()
    svg = open(tmp_path / "plots" / "inputs.svg").read()
    assert svg.count("<polyline") == 2
    assert svg.count("<polygon") == 2
    assert 'class="leader"' in open(tmp_path / "plots" / "positions.svg").read()
    rows = list(csv.reader(open(tmp_path / "trajectory.csv")))
    assert rows[0] == sim.TRAJ_COLUMNS and len(rows) == 4


def test_unicycle_rows_in_metrics_table(unicycle_pair, tmp_path):
    _, summaries = unicycle_pair
    sim.report_tables(summaries, str(tmp_path))
    rows = list(csv.reader(open(tmp_path / "unicycle_metrics.csv")))
    assert [r[0] for r in rows[1:]] == ["sddtmpc", "tmpc"]


def test_linear_short_run_logs_solver_diagnostics(tmp_path):
    cfg = sim.ScenarioConfig(id="s1", controller="tmpc", disturbance_case="attract", max_steps=6, seed=1)
    log, summ = sim.run_scenario(cfg)
    assert len(log.rows) == 6
    assert len(log.diagnostics) == 6
    assert not summ.crashed
    x = np.array([[r["x1"], r["x2"]] for r in log.rows])
    assert np.all(np.isfinite(x))
    sim.write_run(log, summ, str(tmp_path), plots=False)
    loaded = sim.load_summaries(str(tmp_path))
    assert len(loaded) == 1 and loaded[0].controller == "tmpc"


# --------------------------------------------------------------------------- command line


def _run_cli(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr().out.strip().splitlines()
    return code, (json.loads(out[-1]) if out else None)


def test_cli_run_is_deterministic(tmp_path, capsys):
    args = ["run", "--scenario", "s2", "--controller", "sddtmpc", "--case", "push_up", "--seed", "3",
            "--max-steps", "5", "--no-plots"]
    c1, _ = _run_cli(args + ["--out", str(tmp_path / "a")], capsys)
    c2, _ = _run_cli(args + ["--out", str(tmp_path / "b")], capsys)
    assert c1 == c2 == 0
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    b = (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert a == b and len(a) > 100
    assert (tmp_path / "a" / "tables" / "mission_times.csv").exists()


def test_cli_reports_tube_start_infeasibility_near_wall(tmp_path, capsys):
    code, info = _run_cli(["run", "--scenario", "s2", "--controller", "tmpc", "--case", "none", "--max-steps", "3",
                           "--out", str(tmp_path), "--no-plots"], capsys)
    assert code == 2 and info["infeasible_at_start"]
    rows = list(csv.reader(open(tmp_path / "trajectory.csv")))
    assert len(rows) == 4


def test_cli_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("scenario = s2\ncontroller = mpc\ncase = none\nmax_steps = 3\nseed = 9\n")
    code, info = _run_cli(["run", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "o"), "--no-plots"],
                          capsys)
    assert code == 0
    summ = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summ["seed"] == 4 and summ["controller"] == "mpc"


def test_cli_exit_codes(tmp_path, capsys):
    code, _ = _run_cli(["run", "--scenario", "s2", "--controller", "mpc", "--case", "bogus", "--out",
                        str(tmp_path / "x")], capsys)
    assert code == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("seed = 1\nseed = 2\n")
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "y")]) == 1
    assert cli.main(["run", "--scenario", "s1", "--fis", str(tmp_path / "missing.json"),
                     "--out", str(tmp_path / "z"), "--max-steps", "1"]) == 1
    code, info = _run_cli(["run", "--scenario", "s3", "--controller", "tmpc", "--case", "push_up", "--out",
                           str(tmp_path / "s3"), "--no-plots"], capsys)
    assert code == 2 and info["infeasible_at_start"]
    summ = json.loads((tmp_path / "s3" / "summary.json").read_text())
    assert summ["extra"]["frontier"]["px"] == pytest.approx(4.6568, abs=1e-3)


def test_cli_crash_exit_code(tmp_path, capsys):
    code, info = _run_cli(["run", "--scenario", "s2", "--controller", "mpc", "--case", "push_down", "--out",
                           str(tmp_path / "c"), "--no-plots"], capsys)
    assert code == 3 and info["crashed"]


def test_cli_batch_and_report(tmp_path, capsys):
    m = tmp_path / "m.cfg"
    m.write_text(f"scenarios = s2\ncontrollers = mpc, tmpc\ncases = none\nseeds = 0..1\nmax_steps = 3\n"
                 f"workers = 2\nout = {tmp_path / 'batch'}\n")
    code, info = _run_cli(["batch", "--matrix", str(m)], capsys)
    assert code == 0 and info["cells"] == 4
    assert sorted(os.listdir(tmp_path / "batch")) == ["s2_mpc_none_seed0", "s2_mpc_none_seed1", "s2_tmpc_none_seed0",
                                                     "s2_tmpc_none_seed1", "tables"]
    code, info = _run_cli(["report", "--in", str(tmp_path / "batch")], capsys)
    assert code == 0 and info["runs"] == 4
    rows = list(csv.reader(open(tmp_path / "batch" / "tables" / "mission_times.csv")))
    assert len(rows) == 5
