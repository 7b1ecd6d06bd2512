"""Headless experiment runs: schema errors, lockstep determinism, equivalence."""

import csv
import json
import subprocess
import sys

import pytest

from helpers import http_server, make_host
from openlab.experiment import (ExperimentConfigError, run_experiment,
                                validate_config)


def local_config(**overrides):
    doc = {
        "binding": "local",
        "loop": {
            "placement": "control",
            "setpoint": 10.0,
            "delta": 0.02,
            "dt": 0.01,
            "pid": {"kp": 1.2, "ki": 0.06, "kd": 0.0, "u_min": 0.0, "u_max": 10.0},
        },
        "plant": {"h0_top": 0.0, "h0_bot": 0.0},
        "duration": 60.0,
        "mode": "lockstep",
    }
    doc.update(overrides)
    return doc


def remote_config(url, **overrides):
    doc = local_config(**overrides)
    doc["binding"] = "remote"
    doc["server"] = url
    doc["vi"] = "plants/coupled_tanks.vi"
    doc["links"] = [
        {"local": "y", "remote": "h_bot", "dir": "read", "type": "double", "sync": "sync"},
        {"local": "u", "remote": "pump_u", "dir": "write", "type": "double", "sync": "sync"},
    ]
    doc.pop("plant", None)
    return doc


def read_trace(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class TestConfigValidation:
    def test_valid_config_passes(self):
        validate_config(local_config())

    def test_zero_duration_reports_json_pointer(self):
        with pytest.raises(ExperimentConfigError) as err:
            validate_config(local_config(duration=0))
        assert any(p.startswith("/duration") for p in err.value.problems)

    def test_remote_requires_server_and_links(self):
        doc = local_config()
        doc["binding"] = "remote"
        with pytest.raises(ExperimentConfigError) as err:
            validate_config(doc)
        text = " ".join(err.value.problems)
        assert "server" in text and "links" in text

    def test_nested_pointer_paths(self):
        doc = local_config()
        doc["loop"]["delta"] = -1
        with pytest.raises(ExperimentConfigError) as err:
            validate_config(doc)
        assert any(p.startswith("/loop/delta") for p in err.value.problems)

    def test_unknown_keys_rejected(self):
        with pytest.raises(ExperimentConfigError):
            validate_config(local_config(extra_key=1))

    def test_config_error_is_exit_code_1(self, tmp_path, capsys):
        assert run_experiment(local_config(duration=0)) == 1
        assert "configuration error" in capsys.readouterr().out


class TestLocalRuns:
    def test_lockstep_60s_writes_6000_rows(self, tmp_path):
        out = tmp_path / "trace.csv"
        assert run_experiment(local_config(), out=str(out)) == 0
        header, rows = read_trace(out)
        assert header == ["t", "r", "y", "e", "u", "sampled", "event"]
        assert len(rows) == 6000
        assert rows[0][0] == "0.0"

    def test_lockstep_runs_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        cfg = local_config()
        cfg["plant"]["noise_sigma"] = 0.05
        cfg["plant"]["seed"] = 1234
        cfg["duration"] = 20.0
        assert run_experiment(cfg, out=str(a)) == 0
        assert run_experiment(cfg, out=str(b)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_realtime_mode_paces_but_completes(self, tmp_path):
        out = tmp_path / "trace.csv"
        cfg = local_config(duration=0.5, mode="realtime")
        assert run_experiment(cfg, out=str(out)) == 0
        _, rows = read_trace(out)
        assert len(rows) == 50

    def test_output_path_from_config(self, tmp_path):
        out = tmp_path / "from-config.csv"
        cfg = local_config(duration=1.0, output=str(out))
        assert run_experiment(cfg) == 0
        assert out.exists()


class TestRemoteRuns:
    def test_unreachable_server_exits_2_with_fault_199(self, capsys):
        cfg = remote_config("http://127.0.0.1:9/jil", duration=1.0)
        assert run_experiment(cfg) == 2
        assert "199" in capsys.readouterr().out

    def test_loopback_lockstep_matches_local_run(self, tmp_path):
        host = make_host(period=0.01, watchdog=1e9)
        server, url = http_server(host)
        try:
            local_out = tmp_path / "local.csv"
            remote_out = tmp_path / "remote.csv"
            assert run_experiment(local_config(duration=10.0),
                                  out=str(local_out)) == 0
            assert run_experiment(remote_config(url, duration=10.0),
                                  out=str(remote_out)) == 0
            _, local_rows = read_trace(local_out)
            _, remote_rows = read_trace(remote_out)
            assert len(local_rows) == len(remote_rows) == 1000
            for lrow, rrow in zip(local_rows, remote_rows):
                for lval, rval in zip(lrow, rrow):
                    assert abs(float(lval) - float(rval)) <= 1e-12
        finally:
            server.shutdown()
            host.close()

    def test_watchdog_demotion_halts_run_with_exit_2(self, tmp_path, capsys):
        # heartbeats go out once per simulated second; a 0.3 s watchdog
        # demotes the controller long before the first one
        host = make_host(period=0.01, watchdog=0.3)
        server, url = http_server(host)
        try:
            out = tmp_path / "trace.csv"
            code = run_experiment(remote_config(url, duration=10.0), out=str(out))
            assert code == 2
            assert "fault while running" in capsys.readouterr().out
            _, rows = read_trace(out)
            assert 0 < len(rows) < 1000  # partial trace preserved
        finally:
            server.shutdown()
            host.close()


class TestCli:
    def test_openlab_run_subprocess(self, tmp_path):
        cfg_path = tmp_path / "exp.json"
        out = tmp_path / "trace.csv"
        cfg_path.write_text(json.dumps(local_config(duration=1.0)))
        proc = subprocess.run(
            [sys.executable, "-m", "openlab", "run", str(cfg_path), "--out", str(out)],
            capture_output=True, text=True, timeout=60)
        assert proc.returncode == 0, proc.stderr
        _, rows = read_trace(out)
        assert len(rows) == 100

    def test_openlab_run_bad_config_exit_1(self, tmp_path):
        cfg_path = tmp_path / "exp.json"
        cfg_path.write_text(json.dumps(local_config(duration=-1)))
        proc = subprocess.run(
            [sys.executable, "-m", "openlab", "run", str(cfg_path)],
            capture_output=True, text=True, timeout=60)
        assert proc.returncode == 1
