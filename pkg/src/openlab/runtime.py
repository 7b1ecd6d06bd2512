"""Instrument server: hosts virtual instruments behind the XML-RPC surface.

Maps RPC methods onto instrument lifecycle and variable access, enforces the
one-controller/many-observers session policy, runs the safety watchdog, and
logs one CSV record per executed instrument step.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import secrets
import threading
import time
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .protocol import (
    INTERNAL, NOT_WRITABLE, SESSION_BUSY, TYPE_MISMATCH, UNKNOWN_VARIABLE,
    UNKNOWN_VI, VALUE_OUT_OF_RANGE, WRONG_STATE,
    ConnectionState, Direction, Fault, FaultError, ProtocolEvent, SyncClass,
    Value, VariableDescriptor, WireType, decode_call,
    encode_fault, encode_response, round_to_float32, transition,
)

logger = logging.getLogger("openlab.runtime")

DEFAULT_WATCHDOG = 5.0
TICK_VARIABLE = "__tick"  # lockstep pseudo-control advancing instrument time


@dataclass(frozen=True)
class VariableSpec:
    """One published variable plus its server-side limits and safe value."""

    name: str
    direction: Direction
    wire_type: WireType
    sync_class: SyncClass
    initial: Value
    minimum: Optional[float] = None
    maximum: Optional[float] = None
    safe: Optional[Value] = None

    def descriptor(self) -> VariableDescriptor:
        return VariableDescriptor(self.name, self.direction, self.wire_type, self.sync_class)


class VirtualInstrument:
    """A hosted instrument: named variables plus a periodic step function.

    Subclasses set `path`, `period` and `variables`, and implement `reset`
    and `step`. The host owns the control registers; `step` receives the raw
    control values committed for the step and returns raw indicator values.
    """

    path: str = ""
    period: float = 0.05
    variables: Sequence[VariableSpec] = ()

    def reset(self) -> None:
        raise NotImplementedError

    def step(self, controls: Mapping[str, object], t: float, dt: float) -> dict[str, object]:
        raise NotImplementedError


class Role(Enum):
    CONTROLLER = "controller"
    OBSERVER = "observer"


@dataclass
class Session:
    token: str
    client_id: str
    role: Role
    state: ConnectionState
    last_heartbeat: float


@dataclass
class LogRecord:
    """One executed instrument step: time plus all variables in metadata order."""

    t: float
    values: list[tuple[str, Value]]


class RunLog:
    """CSV writer for one run; a fresh file is opened on every runVI."""

    def __init__(self, directory: Path, vi_path: str, names: Sequence[str]):
        stamp = datetime.now().strftime("%Y%m%dT%H%M%S.%f")
        self.path = Path(directory) / f"{Path(vi_path).stem}_{stamp}.csv"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        # line buffering keeps the file at most one row behind
        self._fh = open(self.path, "w", newline="", buffering=1, encoding="utf-8")
        self._writer = csv.writer(self._fh)
        self._disabled = False
        self._write_row(["t", *names])

    def _write_row(self, row: list) -> None:
        if self._disabled:
            return
        try:
            self._writer.writerow(row)
        except OSError as exc:
            self._disabled = True
            logger.warning("data logging disabled (%s); control continues", exc)

    def append(self, record: LogRecord) -> None:
        row: list = [record.t]
        for _, value in record.values:
            row.append(int(value.raw) if value.kind is WireType.BOOLEAN else value.raw)
        self._write_row(row)

    def close(self) -> None:
        try:
            self._fh.close()
        except OSError:
            pass


class _Active:
    """Runtime state of the open instrument."""

    def __init__(self, instrument: VirtualInstrument):
        self.instrument = instrument
        self.registers: dict[str, Value] = {}   # committed control values
        self.snapshot: dict[str, Value] = {}    # committed indicator values
        self.step_count = 0
        self.t = 0.0
        self.running = False
        self.stop_flag = threading.Event()
        self.log: Optional[RunLog] = None
        for spec in instrument.variables:
            if spec.direction is Direction.CONTROL:
                self.registers[spec.name] = spec.initial
            else:
                self.snapshot[spec.name] = spec.initial


def _coerce_control(spec: VariableSpec, value: Value) -> Value:
    """Validate and narrow a client value for a control; raises FaultError."""
    kind, want = value.kind, spec.wire_type
    if want in (WireType.FLOAT32, WireType.FLOAT64):
        if kind not in (WireType.FLOAT32, WireType.FLOAT64):
            raise FaultError(Fault.of(TYPE_MISMATCH, f"{spec.name} expects {want.value}, got {kind.value}"))
        raw = float(value.raw)
        if not math.isfinite(raw):
            raise FaultError(Fault.of(VALUE_OUT_OF_RANGE, f"{spec.name} rejects non-finite values"))
        if want is WireType.FLOAT32:
            raw = round_to_float32(raw)
        coerced = Value(want, raw)
    elif kind is not want:
        raise FaultError(Fault.of(TYPE_MISMATCH, f"{spec.name} expects {want.value}, got {kind.value}"))
    else:
        coerced = value
    if spec.minimum is not None or spec.maximum is not None:
        raw = coerced.raw
        if (spec.minimum is not None and raw < spec.minimum) or \
           (spec.maximum is not None and raw > spec.maximum):
            raise FaultError(Fault.of(
                VALUE_OUT_OF_RANGE,
                f"{spec.name}={raw!r} outside [{spec.minimum}, {spec.maximum}]"))
    return coerced


class InstrumentHost:
    """The server core: registry, sessions, dispatch, watchdog, logging.

    All instrument mutation is serialized on one lock; reads return committed
    values only. In lockstep mode instrument time advances only via the
    __tick pseudo-control and the watchdog measures heartbeat age in
    instrument time, which makes runs bit-reproducible.
    """

    def __init__(self, watchdog_timeout: float = DEFAULT_WATCHDOG,
                 lockstep: bool = False, log_dir: Optional[str] = None):
        if watchdog_timeout <= 0:
            raise ValueError("watchdog timeout must be positive")
        self.watchdog_timeout = watchdog_timeout
        self.lockstep = lockstep
        self.log_dir = Path(log_dir) if log_dir else None
        self._lock = threading.RLock()
        self._instruments: dict[str, VirtualInstrument] = {}
        self._metadata_cache: dict[str, str] = {}
        self._sessions: dict[str, Session] = {}
        self._controller: Optional[str] = None
        self._active: Optional[_Active] = None
        self._watchdog_stop: Optional[threading.Event] = None

    # -- registry -----------------------------------------------------------

    def register_instrument(self, instrument: VirtualInstrument) -> None:
        with self._lock:
            if instrument.path in self._instruments:
                raise ValueError(f"instrument path already registered: {instrument.path}")
            names = [spec.name for spec in instrument.variables]
            if len(names) != len(set(names)):
                raise ValueError(f"duplicate variable names in {instrument.path}")
            self._instruments[instrument.path] = instrument
            self._metadata_cache[instrument.path] = self._build_metadata(instrument)

    @staticmethod
    def _build_metadata(instrument: VirtualInstrument) -> str:
        variables = []
        for spec in instrument.variables:
            entry: dict = {
                "name": spec.name,
                "direction": spec.direction.value,
                "type": spec.wire_type.value,
                "sync": spec.sync_class.value,
            }
            if spec.minimum is not None:
                entry["min"] = spec.minimum
            if spec.maximum is not None:
                entry["max"] = spec.maximum
            if spec.safe is not None:
                entry["safe"] = spec.safe.raw
            variables.append(entry)
        return json.dumps({"vi": instrument.path, "period": instrument.period,
                           "variables": variables})

    # -- clock ---------------------------------------------------------------

    def _now(self) -> float:
        if self.lockstep:
            return self._active.t if self._active else 0.0
        return time.monotonic()

    # -- dispatch ------------------------------------------------------------

    def handle_request(self, payload: bytes, token: Optional[str]) -> bytes:
        """Decode one call, dispatch it, and encode the response or fault."""
        try:
            method, params = decode_call(payload)
            return encode_response(self.dispatch(token, method, params))
        except FaultError as exc:
            return encode_fault(exc.fault)
        except Exception as exc:  # defensive: a handler bug must not kill the server
            logger.exception("internal error while handling request")
            return encode_fault(Fault.of(INTERNAL, str(exc)))

    def dispatch(self, token: Optional[str], method: str, params: Sequence[Value]) -> Value:
        with self._lock:
            if method == "jil.connect":
                self._require_params(method, params, (WireType.STRING,))
                return self._connect(str(params[0].raw))
            session = self._sessions.get(token or "")
            if session is None:
                raise FaultError(Fault(INTERNAL, "invalid session"))
            if method == "jil.heartbeat":
                session.last_heartbeat = self._now()
                return Value.boolean(True)
            if method == "jil.disconnect":
                return self._disconnect(session)
            if method == "jil.openVI":
                self._require_params(method, params, (WireType.STRING,))
                return self._open_vi(session, str(params[0].raw))
            if method == "jil.runVI":
                return self._run_vi(session)
            if method == "jil.stopVI":
                return self._stop_vi(session)
            if method == "jil.closeVI":
                return self._close_vi(session)
            if method == "jil.getMetadata":
                return self._get_metadata(session)
            if method == "jil.setValue":
                if len(params) != 2 or params[0].kind is not WireType.STRING:
                    raise FaultError(Fault.of(INTERNAL, "setValue takes (name, value)"))
                return self._set_value(session, str(params[0].raw), params[1])
            if method == "jil.getValue":
                self._require_params(method, params, (WireType.STRING,))
                return self._get_value(session, str(params[0].raw))
            raise FaultError(Fault.of(INTERNAL, f"unknown method {method!r}"))

    @staticmethod
    def _require_params(method: str, params: Sequence[Value], kinds: tuple) -> None:
        if len(params) != len(kinds) or any(p.kind is not k for p, k in zip(params, kinds)):
            raise FaultError(Fault.of(INTERNAL, f"bad parameters for {method}"))

    def _apply_transition(self, session: Session, event: ProtocolEvent) -> ConnectionState:
        result = transition(session.state, event)
        if isinstance(result, Fault):
            raise FaultError(result)
        return result

    def _require_controller(self, session: Session, fault_code: int) -> None:
        if session.role is not Role.CONTROLLER:
            raise FaultError(Fault.of(fault_code, "session is not the controller"))

    # -- session lifecycle ----------------------------------------------------

    def _connect(self, client_id: str) -> Value:
        token = secrets.token_hex(16)
        role = Role.CONTROLLER if self._controller is None else Role.OBSERVER
        session = Session(token=token, client_id=client_id, role=role,
                          state=ConnectionState.CONNECTED, last_heartbeat=self._now())
        self._sessions[token] = session
        if role is Role.CONTROLLER:
            self._controller = token
        logger.info("client %r connected as %s", client_id, role.value)
        return Value.string(token)

    def _disconnect(self, session: Session) -> Value:
        if session.role is Role.CONTROLLER:
            if self._active is not None:
                self._halt_run()
                self._active = None
            self._controller = None
        self._sessions.pop(session.token, None)
        session.state = ConnectionState.DISCONNECTED
        return Value.boolean(True)

    def _open_vi(self, session: Session, path: str) -> Value:
        self._require_controller(session, SESSION_BUSY)
        next_state = self._apply_transition(session, ProtocolEvent.OPEN_VI)
        instrument = self._instruments.get(path)
        if instrument is None:
            raise FaultError(Fault.of(UNKNOWN_VI, path))
        if self._active is not None:
            # only possible after a watchdog demotion left the plant parked
            logger.warning("discarding instrument state orphaned by a demoted controller")
            self._halt_run()
        instrument.reset()
        self._active = _Active(instrument)
        session.state = next_state
        return Value.boolean(True)

    def _run_vi(self, session: Session) -> Value:
        self._require_controller(session, SESSION_BUSY)
        next_state = self._apply_transition(session, ProtocolEvent.RUN_VI)
        active = self._active
        assert active is not None
        active.running = True
        active.stop_flag = threading.Event()
        if self.log_dir is not None:
            names = [spec.name for spec in active.instrument.variables]
            active.log = RunLog(self.log_dir, active.instrument.path, names)
        if not self.lockstep:
            self._start_executor(active)
        session.state = next_state
        return Value.boolean(True)

    def _stop_vi(self, session: Session) -> Value:
        self._require_controller(session, SESSION_BUSY)
        next_state = self._apply_transition(session, ProtocolEvent.STOP_VI)
        self._halt_run()
        session.state = next_state
        return Value.boolean(True)

    def _close_vi(self, session: Session) -> Value:
        self._require_controller(session, SESSION_BUSY)
        next_state = self._apply_transition(session, ProtocolEvent.CLOSE_VI)
        self._active = None
        session.state = next_state
        return Value.boolean(True)

    def _halt_run(self) -> None:
        active = self._active
        if active is None:
            return
        active.running = False
        active.stop_flag.set()
        if active.log is not None:
            active.log.close()
            active.log = None

    # -- variable access -------------------------------------------------------

    def _require_active(self, session: Session) -> _Active:
        if session.role is Role.CONTROLLER:
            if session.state not in (ConnectionState.OPENED, ConnectionState.RUNNING):
                raise FaultError(Fault.of(WRONG_STATE, "no instrument opened"))
        if self._active is None:
            raise FaultError(Fault.of(WRONG_STATE, "no instrument opened"))
        return self._active

    def _get_metadata(self, session: Session) -> Value:
        active = self._require_active(session)
        return Value.string(self._metadata_cache[active.instrument.path])

    def _find_spec(self, active: _Active, name: str) -> VariableSpec:
        for spec in active.instrument.variables:
            if spec.name == name:
                return spec
        raise FaultError(Fault.of(UNKNOWN_VARIABLE, name))

    def _set_value(self, session: Session, name: str, value: Value) -> Value:
        self._require_controller(session, NOT_WRITABLE)
        active = self._require_active(session)
        if name == TICK_VARIABLE:
            return self._tick(active, value)
        spec = self._find_spec(active, name)
        if spec.direction is not Direction.CONTROL:
            raise FaultError(Fault.of(NOT_WRITABLE, f"{name} is an indicator"))
        active.registers[name] = _coerce_control(spec, value)
        return Value.boolean(True)

    def _get_value(self, session: Session, name: str) -> Value:
        active = self._require_active(session)
        spec = self._find_spec(active, name)
        if spec.direction is Direction.CONTROL:
            return active.registers[name]
        return active.snapshot[name]

    def _tick(self, active: _Active, value: Value) -> Value:
        if not self.lockstep:
            raise FaultError(Fault.of(UNKNOWN_VARIABLE, f"{TICK_VARIABLE} (server not in lockstep mode)"))
        if not active.running:
            raise FaultError(Fault.of(WRONG_STATE, "instrument is not running"))
        if value.kind is not WireType.INT32:
            raise FaultError(Fault.of(TYPE_MISMATCH, f"{TICK_VARIABLE} expects int32"))
        n = int(value.raw)
        if n < 1:
            raise FaultError(Fault.of(VALUE_OUT_OF_RANGE, f"{TICK_VARIABLE} must be >= 1"))
        for _ in range(n):
            self._execute_step(active)
            self.watchdog_tick(self._now())
            if not active.running:  # the watchdog may have parked the plant
                break
        return Value.boolean(True)

    # -- stepping ---------------------------------------------------------------

    def _execute_step(self, active: _Active) -> None:
        instrument = active.instrument
        controls = {name: v.raw for name, v in active.registers.items()}
        active.step_count += 1
        active.t = active.step_count * instrument.period
        indicators = instrument.step(controls, active.t, instrument.period)
        snapshot = {}
        for spec in instrument.variables:
            if spec.direction is Direction.INDICATOR:
                snapshot[spec.name] = Value(spec.wire_type, indicators[spec.name])
        active.snapshot = snapshot
        if active.log is not None:
            values = [(spec.name,
                       active.registers[spec.name] if spec.direction is Direction.CONTROL
                       else snapshot[spec.name])
                      for spec in instrument.variables]
            active.log.append(LogRecord(t=active.t, values=values))

    def _start_executor(self, active: _Active) -> None:
        stop = active.stop_flag
        period = active.instrument.period

        def loop() -> None:
            start = time.monotonic()
            k = 0
            while True:
                k += 1
                delay = start + k * period - time.monotonic()
                if stop.wait(max(0.0, delay)):
                    return
                with self._lock:
                    if stop.is_set() or self._active is not active or not active.running:
                        return
                    self._execute_step(active)

        threading.Thread(target=loop, name="openlab-executor", daemon=True).start()

    # -- watchdog ----------------------------------------------------------------

    def watchdog_tick(self, now: Optional[float] = None) -> None:
        """Force controls safe and park the plant when the controller is silent.

        Never faults. Demotes the silent controller to observer so the seat
        frees up; controls with a declared safe value are forced and the
        instrument leaves Running.
        """
        with self._lock:
            if self._controller is None:
                return
            session = self._sessions.get(self._controller)
            if session is None:
                self._controller = None
                return
            now = self._now() if now is None else now
            if now - session.last_heartbeat <= self.watchdog_timeout:
                return
            logger.warning("watchdog: controller %r silent for %.2fs; forcing safe state",
                           session.client_id, now - session.last_heartbeat)
            active = self._active
            if active is not None:
                for spec in active.instrument.variables:
                    if spec.direction is Direction.CONTROL and spec.safe is not None:
                        active.registers[spec.name] = spec.safe
                if active.running:
                    self._halt_run()
            session.role = Role.OBSERVER
            session.state = ConnectionState.CONNECTED
            self._controller = None

    def start(self) -> None:
        """Start the periodic watchdog task (real-time mode only)."""
        if self.lockstep or self._watchdog_stop is not None:
            return
        stop = threading.Event()
        self._watchdog_stop = stop

        def loop() -> None:
            while True:
                with self._lock:
                    period = self._active.instrument.period if self._active else 0.05
                delay = max(0.001, min(self.watchdog_timeout / 4.0, period))
                if stop.wait(delay):
                    return
                self.watchdog_tick()

        threading.Thread(target=loop, name="openlab-watchdog", daemon=True).start()

    def close(self) -> None:
        with self._lock:
            self._halt_run()
            self._active = None
            self._sessions.clear()
            self._controller = None
        if self._watchdog_stop is not None:
            self._watchdog_stop.set()
            self._watchdog_stop = None

    # -- introspection helpers (used by tests and the CLI) -------------------------

    def instrument_state(self) -> Optional[dict]:
        with self._lock:
            if self._active is None:
                return None
            return {"t": self._active.t, "running": self._active.running,
                    "step_count": self._active.step_count}

    def committed_value(self, name: str) -> Optional[Value]:
        with self._lock:
            if self._active is None:
                return None
            if name in self._active.registers:
                return self._active.registers[name]
            return self._active.snapshot.get(name)


# ---------------------------------------------------------------------------
# HTTP endpoint
# ---------------------------------------------------------------------------

RPC_PATH = "/jil"
SESSION_HEADER = "X-JIL-Session"


class _JilRequestHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    host: InstrumentHost  # set on the server class

    def do_POST(self):  # noqa: N802 (http.server API)
        if self.path != RPC_PATH:
            self.send_error(404)
            return
        length = int(self.headers.get("Content-Length", 0))
        payload = self.rfile.read(length)
        token = self.headers.get(SESSION_HEADER)
        body = self.server.host.handle_request(payload, token)
        self.send_response(200)
        self.send_header("Content-Type", "text/xml; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, fmt, *args):
        logger.debug("http: " + fmt, *args)


class JilHttpServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], host: InstrumentHost):
        super().__init__(address, _JilRequestHandler)
        self.host = host


def serve_http(host: InstrumentHost, bind: str = "0.0.0.0:2055",
               in_thread: bool = False) -> JilHttpServer:
    """Bind the RPC endpoint; port 0 picks a free port.

    With in_thread=True the accept loop runs on a daemon thread and the
    server object is returned immediately (tests and embedded use).
    """
    addr, _, port = bind.rpartition(":")
    server = JilHttpServer((addr or "0.0.0.0", int(port)), host)
    host.start()
    if in_thread:
        threading.Thread(target=server.serve_forever, name="openlab-http", daemon=True).start()
    return server
