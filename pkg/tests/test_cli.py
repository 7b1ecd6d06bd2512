"""Command-line entry points: argument handling and a live server smoke test."""

import json
import socket
import subprocess
import sys
import time

import pytest

from openlab.connector import LowLevelClient
from openlab.protocol import Value, WireType
from openlab.tanks import VI_PATH


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def wait_for_port(port: int, timeout: float = 20.0) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        try:
            with socket.create_connection(("127.0.0.1", port), timeout=1.0):
                return
        except OSError:
            time.sleep(0.1)
    raise TimeoutError(f"nothing listening on port {port}")


class TestServerCli:
    def test_lockstep_server_round_trip(self, tmp_path):
        port = free_port()
        config = tmp_path / "server.json"
        config.write_text(json.dumps(
            {"plants": {"coupled_tanks": {"period": 0.01, "h0_bot": 1.0}}}))
        proc = subprocess.Popen(
            [sys.executable, "-m", "openlab", "server",
             "--bind", f"127.0.0.1:{port}", "--lockstep",
             "--log-dir", str(tmp_path / "logs"), "--config", str(config)],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        try:
            wait_for_port(port)
            client = LowLevelClient(f"http://127.0.0.1:{port}/jil")
            client.connect("cli-smoke")
            client.open_vi(VI_PATH)
            metadata = client.get_metadata()
            assert metadata["period"] == 0.01
            assert client.get_value("h_bot", WireType.FLOAT64).raw == 1.0
            client.run_vi()
            client.set_value("pump_u", Value.float64(2.0))
            client.set_value("__tick", Value.int32(10))
            assert client.get_value("t", WireType.FLOAT64).raw == pytest.approx(0.1)
            client.stop_vi()
            client.close_vi()
            client.disconnect()
            client.close()
            logs = list((tmp_path / "logs").glob("coupled_tanks_*.csv"))
            assert len(logs) == 1
        finally:
            proc.terminate()
            proc.wait(timeout=10)

    def test_help_screens(self):
        for args in (["-m", "openlab", "--help"],
                     ["-m", "openlab", "run", "--help"],
                     ["-m", "openlab", "serve", "--help"]):
            proc = subprocess.run([sys.executable, *args],
                                  capture_output=True, text=True, timeout=30)
            assert proc.returncode == 0
