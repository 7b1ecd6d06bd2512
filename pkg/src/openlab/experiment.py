"""Headless experiment execution from a declarative JSON config.

An experiment binds one sampled PID loop either to the local tank simulation
or, through the connector, to a remote instrument server, runs it for a
fixed duration in lockstep or real time, and writes the loop trace as CSV.
"""

from __future__ import annotations

import csv
import json
import logging
import random
import time
from dataclasses import replace
from typing import Mapping, Optional, Union

import jsonschema

from . import tanks
from .blocks import (ControlLoop, LoopConfig, PidParams, Placement, PlantBinding,
                     TRACE_COLUMNS, record_row)
from .connector import HighLevelSession, parse_link_table
from .protocol import FaultError, Value
from .runtime import TICK_VARIABLE
from .tanks import TankParams, TankState, integrate_step

logger = logging.getLogger("openlab.experiment")

_LINK_SCHEMA = {
    "type": "object",
    "required": ["local", "remote", "dir", "type"],
    "additionalProperties": False,
    "properties": {
        "local": {"type": "string", "minLength": 1},
        "remote": {"type": "string", "minLength": 1},
        "dir": {"enum": ["read", "write"]},
        "type": {"enum": ["boolean", "bool", "int", "int32", "i4",
                          "float", "float32", "double", "float64", "string"]},
        "sync": {"enum": ["sync", "async"]},
    },
}

EXPERIMENT_SCHEMA = {
    "type": "object",
    "required": ["binding", "loop", "duration", "mode"],
    "additionalProperties": False,
    "properties": {
        "binding": {"enum": ["local", "remote"]},
        "server": {"type": "string", "minLength": 1},
        "vi": {"type": "string", "minLength": 1},
        "links": {"type": "array", "items": _LINK_SCHEMA},
        "loop": {
            "type": "object",
            "required": ["placement", "setpoint", "delta"],
            "additionalProperties": False,
            "properties": {
                "placement": {"enum": ["error", "control"]},
                "setpoint": {"type": "number"},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "refine": {"type": "boolean"},
                "pid": {
                    "type": "object",
                    "required": ["kp", "ki", "kd"],
                    "additionalProperties": False,
                    "properties": {
                        "kp": {"type": "number"},
                        "ki": {"type": "number"},
                        "kd": {"type": "number"},
                        "n": {"type": "number", "exclusiveMinimum": 0},
                        "u_min": {"type": "number"},
                        "u_max": {"type": "number"},
                    },
                },
            },
        },
        "plant": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "area": {"type": "number", "exclusiveMinimum": 0},
                "a_top": {"type": "number", "exclusiveMinimum": 0},
                "a_bot": {"type": "number", "exclusiveMinimum": 0},
                "k_pump": {"type": "number", "exclusiveMinimum": 0},
                "g": {"type": "number", "exclusiveMinimum": 0},
                "h_max": {"type": "number", "exclusiveMinimum": 0},
                "u_max": {"type": "number", "exclusiveMinimum": 0},
                "h0_top": {"type": "number", "minimum": 0},
                "h0_bot": {"type": "number", "minimum": 0},
                "route": {"enum": [0, 1]},
                "noise_sigma": {"type": "number", "minimum": 0},
                "seed": {"type": "integer"},
            },
        },
        "duration": {"type": "number", "exclusiveMinimum": 0},
        "mode": {"enum": ["lockstep", "realtime"]},
        "output": {"type": "string", "minLength": 1},
        "decimation": {"type": "integer", "minimum": 1},
    },
    "allOf": [
        {
            "if": {"properties": {"binding": {"const": "remote"}}},
            "then": {"required": ["server", "links"]},
        },
    ],
}

_validator = jsonschema.Draft202012Validator(EXPERIMENT_SCHEMA)


class ExperimentConfigError(ValueError):
    """Schema violations, each prefixed with its JSON-pointer path."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def validate_config(doc: Mapping) -> None:
    problems = []
    for err in sorted(_validator.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        problems.append(f"{pointer}: {err.message}")
    if problems:
        raise ExperimentConfigError(problems)


def load_config(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    validate_config(doc)
    return doc


def loop_config_from(doc: Mapping) -> LoopConfig:
    loop = doc["loop"]
    pid_doc = loop.get("pid")
    if pid_doc is None:
        pid = tanks.TUNED_PID
    else:
        pid = PidParams(kp=pid_doc["kp"], ki=pid_doc["ki"], kd=pid_doc["kd"],
                        n=pid_doc.get("n", 20.0),
                        u_min=pid_doc.get("u_min", 0.0),
                        u_max=pid_doc.get("u_max", TankParams().u_max))
    return LoopConfig(
        placement=Placement(loop["placement"]),
        setpoint=float(loop["setpoint"]),
        pid=pid,
        delta=float(loop["delta"]),
        dt=float(loop.get("dt", 0.01)),
        refine_events=bool(loop.get("refine", True)),
    )


# ---------------------------------------------------------------------------
# Plant bindings
# ---------------------------------------------------------------------------

class LocalTankBinding(PlantBinding):
    """In-process tank simulation as the loop's plant."""

    def __init__(self, params: TankParams = TankParams(), h0_top: float = 0.0,
                 h0_bot: float = 0.0, route: int = tanks.ROUTE_TO_TOP,
                 noise_sigma: float = 0.0, seed: Optional[int] = None):
        self.params = params
        self.state = TankState(h_top=h0_top, h_bot=h0_bot, route=route)
        self._noise = noise_sigma
        self._rng = random.Random(seed)

    @classmethod
    def from_config(cls, plant: Mapping) -> "LocalTankBinding":
        param_keys = ("area", "a_top", "a_bot", "k_pump", "g", "h_max", "u_max")
        overrides = {k: plant[k] for k in param_keys if k in plant}
        return cls(params=TankParams(**overrides),
                   h0_top=plant.get("h0_top", 0.0), h0_bot=plant.get("h0_bot", 0.0),
                   route=plant.get("route", tanks.ROUTE_TO_TOP),
                   noise_sigma=plant.get("noise_sigma", 0.0), seed=plant.get("seed"))

    def read_output(self) -> float:
        y = self.state.h_bot
        if self._noise > 0.0:
            y += self._rng.gauss(0.0, self._noise)
        return y

    def write_control(self, u: float) -> None:
        self.state = replace(self.state, u=u)

    def advance(self, dt: float) -> None:
        self.state = integrate_step(self.state, self.params, dt)


class RemoteTankBinding(PlantBinding):
    """The loop's plant reached through a high-level connector session.

    Reads pull the read links; writes push the control link, so a loop that
    writes only on sampler events transmits only on events. advance() ticks
    the server in lockstep mode and keeps the heartbeat cadence at roughly
    one instrument second.
    """

    def __init__(self, session: HighLevelSession, output_name: str = "y",
                 control_name: str = "u", lockstep: bool = True,
                 heartbeat_every: int = 100):
        self.session = session
        self._output = output_name
        self._control = control_name
        self._lockstep = lockstep
        self._hb_every = max(1, heartbeat_every)
        self._advances = 0

    def read_output(self) -> float:
        return float(self.session.get_values()[self._output])

    def write_control(self, u: float) -> None:
        self.session.set_values({self._control: u})

    def advance(self, dt: float) -> None:
        if self._lockstep:
            self.session.client.set_value(TICK_VARIABLE, Value.int32(1))
        self._advances += 1
        if self._advances % self._hb_every == 0:
            self.session.client.heartbeat()

    def close(self) -> None:
        self.session.disconnect()


def build_binding(doc: Mapping, transport=None) -> PlantBinding:
    """Construct (and for remote bindings, connect) the configured plant."""
    if doc["binding"] == "local":
        return LocalTankBinding.from_config(doc.get("plant", {}))
    lockstep = doc["mode"] == "lockstep"
    table = parse_link_table({"server": doc["server"],
                              "vi": doc.get("vi", tanks.VI_PATH),
                              "links": doc["links"]})
    session = HighLevelSession(table, transport=transport,
                               keepalive=None if lockstep else 2.0)
    session.connect()
    dt = float(doc["loop"].get("dt", 0.01))
    reads = [l.local_name for l in table.links if l.direction.value == "read"]
    writes = [l.local_name for l in table.links if l.direction.value == "write"]
    return RemoteTankBinding(session,
                             output_name=reads[0] if reads else "y",
                             control_name=writes[0] if writes else "u",
                             lockstep=lockstep,
                             heartbeat_every=max(1, round(1.0 / dt)))


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

def write_trace(path: str, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for rec in records:
            writer.writerow(record_row(rec))


def run_experiment(config: Union[str, Mapping], out: Optional[str] = None) -> int:
    """Run one configured experiment to completion; returns the exit code.

    0 on success, 1 for configuration errors (reported before any connection
    attempt), 2 for faults raised while connecting or stepping.
    """
    try:
        if isinstance(config, str):
            doc = load_config(config)
        else:
            doc = dict(config)
            validate_config(doc)
    except ExperimentConfigError as exc:
        for problem in exc.problems:
            logger.error("config: %s", problem)
        print(f"configuration error: {exc}", flush=True)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", flush=True)
        return 1

    cfg = loop_config_from(doc)
    n_steps = round(float(doc["duration"]) / cfg.dt)
    realtime = doc["mode"] == "realtime"
    out_path = out or doc.get("output", "trace.csv")

    try:
        binding = build_binding(doc)
    except FaultError as exc:
        print(f"connection failed: {exc}", flush=True)
        return 2

    loop = ControlLoop(cfg, binding)
    records = []
    try:
        start = time.monotonic()
        for k in range(n_steps):
            if realtime:
                lag = start + k * cfg.dt - time.monotonic()
                if lag > 0:
                    time.sleep(lag)
            records.append(loop.step())
    except FaultError as exc:
        logger.error("loop halted at step %d: %s", loop.steps, exc)
        write_trace(out_path, records)
        print(f"fault while running: {exc}", flush=True)
        return 2
    finally:
        binding.close()

    write_trace(out_path, records)
    logger.info("experiment complete: %d steps -> %s", len(records), out_path)
    return 0
