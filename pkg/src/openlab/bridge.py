"""JSON-over-WebSocket bridge between a live control loop and the browser UI.

The control loop runs as one periodic thread; WebSocket clients talk to it
only through a command queue (applied at step boundaries) and a bounded
newest-wins event buffer (decimated samples plus status changes), so a slow
browser can never stall the loop. The first socket gets the controller role;
later ones are read-only observers.
"""

from __future__ import annotations

import asyncio
import logging
import math
import queue
import threading
import time
from collections import deque
from contextlib import asynccontextmanager
from dataclasses import replace
from pathlib import Path
from typing import Mapping, Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse
from fastapi.staticfiles import StaticFiles

from .blocks import ControlLoop, Placement
from .experiment import build_binding, loop_config_from, validate_config
from .protocol import FaultError

logger = logging.getLogger("openlab.bridge")

DEFAULT_DECIMATION = 5
_EVENT_BUFFER = 1024

MUTATING_OPS = {"set_gains", "set_delta", "set_setpoint", "set_placement",
                "start", "stop", "connect", "disconnect"}


def _finite_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


class BridgeService:
    """Owns the loop thread and the command/event plumbing."""

    def __init__(self, experiment: Mapping, decimation: Optional[int] = None):
        validate_config(experiment)
        self.experiment = dict(experiment)
        self.loop_cfg = loop_config_from(self.experiment)
        self.decimation = decimation or self.experiment.get("decimation", DEFAULT_DECIMATION)
        self._commands: queue.Queue = queue.Queue()
        self._events: deque = deque(maxlen=_EVENT_BUFFER)
        self._seq = 0
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._binding = None
        self._loop: Optional[ControlLoop] = None
        self._running = False
        self.state = "disconnected"
        self._controller_attached = False
        self._thread: Optional[threading.Thread] = None

    # -- event buffer -----------------------------------------------------

    def _publish(self, message: dict) -> None:
        with self._lock:
            self._seq += 1
            self._events.append((self._seq, message))

    def events_since(self, cursor: int) -> tuple[list[dict], int]:
        with self._lock:
            fresh = [msg for seq, msg in self._events if seq > cursor]
            return fresh, self._seq

    def _set_state(self, state: str, detail: str = "") -> None:
        self.state = state
        self._publish(self.status_message(detail=detail))

    def status_message(self, detail: str = "", role: Optional[str] = None) -> dict:
        msg = {
            "op": "status",
            "state": self.state,
            "detail": detail,
            "placement": self.loop_cfg.placement.value,
            "config": {
                "kp": self.loop_cfg.pid.kp, "ki": self.loop_cfg.pid.ki,
                "kd": self.loop_cfg.pid.kd, "delta": self.loop_cfg.delta,
                "setpoint": self.loop_cfg.setpoint, "dt": self.loop_cfg.dt,
                "decimation": self.decimation,
            },
        }
        if role is not None:
            msg["role"] = role
        return msg

    # -- roles -------------------------------------------------------------

    def attach_ui(self) -> str:
        with self._lock:
            if not self._controller_attached:
                self._controller_attached = True
                return "controller"
            return "observer"

    def detach_ui(self, role: str) -> None:
        with self._lock:
            if role == "controller":
                self._controller_attached = False

    # -- command intake (called from the event loop) -------------------------

    def submit(self, role: str, message: Mapping) -> tuple[bool, str]:
        """Validate one UI op and queue it for the next step boundary."""
        op = message.get("op")
        if op not in MUTATING_OPS:
            return False, f"unknown op {op!r}"
        if role != "controller":
            return False, "observer sessions are read-only"
        if op == "set_gains":
            for key in ("kp", "ki", "kd", "n", "u_min", "u_max"):
                if key in message and not _finite_number(message[key]):
                    return False, f"{key} must be a finite number"
            if not any(k in message for k in ("kp", "ki", "kd", "n", "u_min", "u_max")):
                return False, "set_gains carries no gain fields"
        elif op == "set_delta":
            if not _finite_number(message.get("delta")) or message["delta"] <= 0:
                return False, "delta must be a positive number"
        elif op == "set_setpoint":
            if not _finite_number(message.get("setpoint")):
                return False, "setpoint must be a finite number"
        elif op == "set_placement":
            if message.get("placement") not in ("error", "control"):
                return False, "placement must be 'error' or 'control'"
        self._commands.put(dict(message))
        return True, f"{op} accepted"

    # -- loop thread -------------------------------------------------------------

    def start(self) -> None:
        if self._thread is not None:
            return
        self._thread = threading.Thread(target=self._loop_main,
                                        name="openlab-bridge-loop", daemon=True)
        self._thread.start()
        if self.experiment["binding"] == "local":
            self._commands.put({"op": "connect"})

    def shutdown(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None
        self._teardown_binding()

    def _teardown_binding(self) -> None:
        if self._binding is not None:
            try:
                self._binding.close()
            except Exception:
                logger.debug("binding teardown failed", exc_info=True)
            self._binding = None
        self._loop = None
        self._running = False

    def _apply(self, cmd: Mapping) -> None:
        op = cmd["op"]
        cfg = self.loop_cfg
        if op == "set_gains":
            fields = {k: cmd[k] for k in ("kp", "ki", "kd", "n", "u_min", "u_max") if k in cmd}
            cfg.pid = replace(cfg.pid, **fields)
            self._publish(self.status_message(detail="gains updated"))
        elif op == "set_delta":
            cfg.delta = float(cmd["delta"])
            if self._loop is not None:
                self._loop.reset_sampler()
            self._publish(self.status_message(detail="delta updated"))
        elif op == "set_setpoint":
            cfg.setpoint = float(cmd["setpoint"])
            self._publish(self.status_message(detail="setpoint updated"))
        elif op == "set_placement":
            cfg.placement = Placement(cmd["placement"])
            if self._loop is not None:
                self._loop.reset_sampler()
            self._publish(self.status_message(detail="placement updated"))
        elif op == "connect":
            self._connect()
        elif op == "disconnect":
            self._teardown_binding()
            self._set_state("disconnected")
        elif op == "start":
            if self._binding is None:
                self._set_state(self.state, detail="cannot start: not connected")
            else:
                if self._loop is None:
                    self._loop = ControlLoop(self.loop_cfg, self._binding)
                self._running = True
                self._set_state("running")
        elif op == "stop":
            self._running = False
            self._set_state("stopped")

    def _connect(self) -> None:
        if self._binding is not None:
            self._set_state(self.state, detail="already connected")
            return
        try:
            self._binding = build_binding(self.experiment)
            self._set_state("connected")
        except Exception as exc:  # connector faults and config errors alike
            logger.error("bridge connect failed: %s", exc)
            self._set_state("error", detail=str(exc))

    def _loop_main(self) -> None:
        next_deadline = None
        while not self._stop.is_set():
            try:
                while True:
                    self._apply(self._commands.get_nowait())
            except queue.Empty:
                pass
            if not self._running or self._loop is None:
                next_deadline = None
                time.sleep(0.02)
                continue
            now = time.monotonic()
            if next_deadline is None:
                next_deadline = now
            if now < next_deadline:
                time.sleep(min(next_deadline - now, 0.05))
                continue
            next_deadline += self.loop_cfg.dt
            try:
                rec = self._loop.step()
            except FaultError as exc:
                logger.error("loop fault: %s", exc)
                self._running = False
                self._set_state("error", detail=str(exc))
                continue
            if (self._loop.steps - 1) % self.decimation == 0:
                self._publish({"op": "sample", "t": rec.t, "r": rec.r, "y": rec.y,
                               "u": rec.u, "sampled": rec.sampled, "event": rec.event})


# ---------------------------------------------------------------------------
# FastAPI application
# ---------------------------------------------------------------------------

_PLACEHOLDER = """<!doctype html><title>openlab</title>
<p>openlab session service is running. Build the dashboard under frontend/dist
(or pass --ui) to serve the full interface; the WebSocket endpoint is at /ws.</p>
"""


def create_app(service: BridgeService, ui_dir: Optional[str] = None) -> FastAPI:
    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        service.start()
        yield
        service.shutdown()

    app = FastAPI(lifespan=lifespan)

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        role = service.attach_ui()
        cursor = service._seq
        await ws.send_json(service.status_message(detail="hello", role=role))

        async def pump():
            nonlocal cursor
            while True:
                fresh, cursor = service.events_since(cursor)
                for msg in fresh:
                    await ws.send_json(msg)
                await asyncio.sleep(0.015)

        pump_task = asyncio.create_task(pump())
        try:
            while True:
                try:
                    message = await ws.receive_json()
                except ValueError:
                    await ws.send_json({"op": "status", "state": "error",
                                        "detail": "malformed message"})
                    continue
                ok, detail = service.submit(role, message)
                if ok:
                    await ws.send_json(service.status_message(detail=detail, role=role))
                else:
                    await ws.send_json({"op": "status", "state": "error",
                                        "detail": detail, "role": role})
        except WebSocketDisconnect:
            pass
        finally:
            pump_task.cancel()
            service.detach_ui(role)

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    else:
        @app.get("/")
        async def index() -> HTMLResponse:
            return HTMLResponse(_PLACEHOLDER)

    return app
