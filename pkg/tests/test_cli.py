import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from lazysched.cli import ConfigError, load_config, main


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_defaults_load():
    cfg = load_config()
    assert cfg.system.horizon_slots == 100
    assert cfg.realizations == 10
    assert cfg.horizons == (25, 50, 75, 100, 150, 200)


def test_lazy_writes_one_row_per_policy_and_realization(tmp_path):
    out = tmp_path / "lazy.csv"
    assert main(["lazy", "--seed", "1", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 40
    assert {r["policy"] for r in rows} == {"dp", "etls", "hasty", "constant"}
    assert all(r["status"] == "ok" for r in rows)
    for r in rows:
        assert float(r["total_cost_J"]) == pytest.approx(float(r["total_energy_J"]) + float(r["terminal_cost_J"]))


def test_same_seed_same_bytes(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["general", "--seed", "42", "--realizations", "3", "--out", str(a)])
    main(["general", "--seed", "42", "--realizations", "3", "--out", str(b)])
    assert digest(a) == digest(b)
    c = tmp_path / "c.csv"
    main(["general", "--seed", "43", "--realizations", "3", "--out", str(c)])
    assert digest(a) != digest(c)


def test_waterlevel_traces(tmp_path):
    out = tmp_path / "gen.csv"
    assert main(["general", "--seed", "3", "--realizations", "2", "--out", str(out), "--emit-waterlevels"]) == 0
    trace = read_csv(tmp_path / "gen.waterlevels.csv")
    assert len(trace) == 2 * 2 * 100
    for k in range(2):
        w = [float(r["w"]) for r in trace if r["policy"] == "offline_waterfill" and int(r["realization_index"]) == k]
        assert len(w) == 100
        assert np.all(np.diff(w) >= -1e-6)


def test_waterlevels_need_out():
    assert main(["general", "--emit-waterlevels"]) == 2


def test_json_output(tmp_path):
    out = tmp_path / "lazy.json"
    assert main(["lazy", "--seed", "1", "--realizations", "2", "--json", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert len(data) == 8 and data[0]["policy"] == "dp"
    assert isinstance(data[0]["delivered_bits"], int)


def test_missing_config_names_path(tmp_path, caplog):
    missing = tmp_path / "nope.yaml"
    assert main(["lazy", "--config", str(missing)]) == 2
    assert str(missing) in caplog.text


def test_unknown_key_rejected(tmp_path, caplog):
    p = tmp_path / "bad.yaml"
    p.write_text("system:\n  horizon: 50\n")
    assert main(["lazy", "--config", str(p)]) == 2
    assert "system.horizon" in caplog.text
    with pytest.raises(ConfigError):
        load_config(p)


def test_bad_values_rejected(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("fading:\n  probabilities: [0.5, 0.6]\n")
    assert main(["general", "--config", str(p)]) == 2
    p.write_text("system: [1, 2]\n")
    assert main(["general", "--config", str(p)]) == 2
    p.write_text("system: {horizon_slots: 0}\n")
    assert main(["general", "--config", str(p)]) == 2


def test_usage_errors_exit_2():
    assert main(["lazy", "--seed", "-1"]) == 2
    assert main(["lazy", "--realizations", "0"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["sweep", "--horizons", "0"]) == 2


def test_bad_thread_env(monkeypatch):
    monkeypatch.setenv("LAZYSCHED_THREADS", "x")
    assert main(["lazy", "--realizations", "1"]) == 2


def test_memory_harvest_config(tmp_path):
    p = tmp_path / "mem.yaml"
    p.write_text("harvest:\n  kind: two_state_markov\n  p_stay: 0.95\n")
    cfg = load_config(p)
    assert cfg.harvest.kind == "two_state_markov" and cfg.harvest.p_stay == 0.95
    assert cfg.harvest.amount == 0.05
    out = tmp_path / "g.csv"
    assert main(["general", "--config", str(p), "--realizations", "2", "--out", str(out)]) == 0
    assert len(read_csv(out)) == 4


def test_sweep_single_horizon_matches_general(tmp_path):
    g, s = tmp_path / "g.csv", tmp_path / "s.csv"
    main(["general", "--seed", "8", "--realizations", "4", "--out", str(g)])
    assert main(["sweep", "--seed", "8", "--realizations", "4", "--horizons", "100", "--out", str(s)]) == 0
    gen = read_csv(g)
    for row in read_csv(s):
        mine = [float(r["throughput_mbps"]) for r in gen if r["policy"] == row["policy"]]
        assert float(row["mean_throughput_mbps"]) == pytest.approx(np.mean(mine), rel=1e-12)


def test_sweep_horizon_lists(tmp_path):
    s = tmp_path / "s.csv"
    assert main(["sweep", "--realizations", "2", "--horizons", "10,20", "30", "--out", str(s)]) == 0
    assert [int(r["horizon"]) for r in read_csv(s)] == [10, 10, 20, 20, 30, 30]


def test_oracle_check(capsys):
    assert main(["oracle-check", "--instances", "20"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3 and all(l.startswith("PASS") for l in lines)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "lazysched", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "oracle-check" in res.stdout
