import hashlib
import json

import numpy as np
import pytest

from evsched.cli import EXIT_AUDIT, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, main
from evsched.core import EvRequest, load_scenario, save_scenario
from conftest import tiny_scenario


def digest(path):
    return hashlib.md5(path.read_bytes()).hexdigest()


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "sc.txt"
    assert main(["gen", "--evs", "40", "--seed", "7", "--out", str(path)]) == EXIT_OK
    return path


def test_gen_writes_loadable_scenario(scenario_file):
    sc = load_scenario(scenario_file)
    assert sc.n_evs == 40 and sc.seed == 7


def test_run_is_deterministic(tmp_path, scenario_file):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["run", "--method", "csa", "--scenario", str(scenario_file), "--out-dir", str(d)]) == EXIT_OK
        outs.append(d)
    for name in ("csa-schedule.csv", "csa-metrics.json", "csa-ledger.json"):
        assert digest(outs[0] / name) == digest(outs[1] / name)


def test_run_dcsa_then_audit(tmp_path, scenario_file, capsys):
    d = tmp_path / "dcsa"
    assert main(["run", "--method", "dcsa", "--scenario", str(scenario_file), "--out-dir", str(d)]) == EXIT_OK
    assert (d / "dcsa-trace.txt").exists()
    assert main(["audit", "--run-dir", str(d)]) == EXIT_OK
    assert "audit ok" in capsys.readouterr().out


def test_audit_detects_tampering(tmp_path, scenario_file):
    d = tmp_path / "dcsa"
    main(["run", "--method", "dcsa", "--scenario", str(scenario_file), "--out-dir", str(d)])
    doc = json.loads((d / "dcsa-ledger.json").read_text())
    doc["totals"]["sa_sa"] += 8
    (d / "dcsa-ledger.json").write_text(json.dumps(doc))
    assert main(["audit", "--run-dir", str(d)]) == EXIT_AUDIT


def test_audit_csa_ledger(tmp_path, scenario_file):
    d = tmp_path / "csa"
    main(["run", "--method", "csa", "--scenario", str(scenario_file), "--out-dir", str(d)])
    assert main(["audit", "--run-dir", str(d), "--method", "csa"]) == EXIT_OK


def test_strict_infeasible_cap_exits_3(tmp_path):
    evs = [EvRequest(i, 0, 0, 2, 0.9) for i in range(4)]  # 12 kWh in two slots under a 1 kW margin
    sc = tiny_scenario(evs, np.array([5.0, 5.0, 5.0, 5.0]), cap=6.0)
    path = tmp_path / "tight.txt"
    save_scenario(sc, path)
    args = ["run", "--method", "csa", "--scenario", str(path), "--out-dir", str(tmp_path / "o")]
    assert main(args + ["--strict"]) == EXIT_INFEASIBLE
    assert main(args) == EXIT_OK


@pytest.mark.parametrize("argv", [
    ["run", "--method", "nope", "--evs", "5"],
    ["run", "--scenario", "/nonexistent/scenario.txt"],
    ["sweep", "--evs", "a,b", "--reps", "1"],
    ["audit", "--run-dir", "/nonexistent"],
])
def test_bad_input_exits_2(tmp_path, argv):
    assert main(argv + ["--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_bad_config_exits_2(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("# evsched-config v1\n[generator]\nwarp_drive = 9\n")
    assert main(["gen", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_config_file_sets_generator_and_run(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# evsched-config v1\n[generator]\nstation_shares = 0.5,0.5\n[run]\nmethod = dcsa\nevs = 12\n")
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "dcsa-ledger.json").exists()


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("EVSCHED_OUT_DIR", str(tmp_path / "env"))
    assert main(["run", "--method", "cost-min", "--evs", "10", "--seed", "1"]) == EXIT_OK
    assert (tmp_path / "env" / "cost-min-metrics.json").exists()


def test_sweep_one_row_per_rep(tmp_path):
    assert main(["sweep", "--evs", "10,20", "--method", "dcsa", "--reps", "2", "--out-dir", str(tmp_path)]) == EXIT_OK
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert rows[0].startswith("method,n_evs,rep,seed")
    assert len(rows) == 1 + 4
