"""Client connector for the instrument server.

Two layers, mirroring how a session is normally driven:

* `LowLevelClient` exposes the raw session verbs (connect/open/run/... plus
  typed value access). Every call is gated by the local connection state
  machine, so an illegal call fails locally without touching the network.
* `HighLevelSession` interprets a declarative link table: connect() brings
  the remote instrument to Running and validates every link against the
  published metadata; step() pushes the synchronous write links, pulls the
  synchronous read links and piggybacks a heartbeat.
"""

from __future__ import annotations

import http.client
import json
import logging
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Sequence, Union
from urllib.parse import urlsplit

from .protocol import (
    INTERNAL, TYPE_MISMATCH, WRONG_STATE,
    ConnectionState, Direction, Fault, FaultError, ProtocolEvent, SyncClass,
    Value, WireType, decode_call, decode_response, encode_call, transition,
)

logger = logging.getLogger("openlab.connector")

SESSION_HEADER = "X-JIL-Session"
DEFAULT_KEEPALIVE = 2.0  # s of silence before the standalone heartbeat fires


class ConcurrencyError(RuntimeError):
    """A second thread entered a session that is already mid-call."""


class LinkConfigError(ValueError):
    """One or more links cannot be honored; lists every offender."""

    def __init__(self, problems: Sequence[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------

class HttpTransport:
    """Blocking XML-RPC-over-HTTP POST transport with a persistent connection."""

    def __init__(self, url: str):
        parts = urlsplit(url)
        if parts.scheme != "http" or not parts.hostname:
            raise ValueError(f"unsupported server url {url!r}")
        self._host = parts.hostname
        self._port = parts.port or 2055
        self._path = parts.path or "/jil"
        self._conn: Optional[http.client.HTTPConnection] = None

    def _post(self, payload: bytes, session: Optional[str]) -> bytes:
        if self._conn is None:
            self._conn = http.client.HTTPConnection(self._host, self._port, timeout=30)
        headers = {"Content-Type": "text/xml; charset=utf-8"}
        if session:
            headers[SESSION_HEADER] = session
        self._conn.request("POST", self._path, body=payload, headers=headers)
        response = self._conn.getresponse()
        body = response.read()
        if response.status != 200:
            raise ConnectionError(f"HTTP {response.status} from instrument server")
        return body

    def send(self, payload: bytes, session: Optional[str]) -> bytes:
        try:
            return self._post(payload, session)
        except (http.client.HTTPException, ConnectionResetError, BrokenPipeError):
            # stale keep-alive connection; retry once on a fresh socket
            self.close()
            return self._post(payload, session)

    def close(self) -> None:
        if self._conn is not None:
            try:
                self._conn.close()
            finally:
                self._conn = None


class LoopbackTransport:
    """Dispatches requests straight into an in-process InstrumentHost."""

    def __init__(self, host):
        self._host = host

    def send(self, payload: bytes, session: Optional[str]) -> bytes:
        return self._host.handle_request(payload, session)

    def close(self) -> None:
        pass


class RecordingTransport:
    """Wraps a transport and records every wire call (method, params, token)."""

    def __init__(self, inner):
        self._inner = inner
        self.calls: list[tuple[str, list[Value], Optional[str]]] = []

    def send(self, payload: bytes, session: Optional[str]) -> bytes:
        method, params = decode_call(payload)
        self.calls.append((method, params, session))
        return self._inner.send(payload, session)

    def close(self) -> None:
        self._inner.close()


# ---------------------------------------------------------------------------
# Low-level client
# ---------------------------------------------------------------------------

_VALUE_STATES = (ConnectionState.OPENED, ConnectionState.RUNNING)


class LowLevelClient:
    """Raw session API; one logical actor, calls must not interleave.

    Re-entrant use from the owning thread is fine; a concurrent call from
    another thread raises ConcurrencyError instead of interleaving RPCs.
    Network failures surface as Fault 199 and force the local state to
    Disconnected.
    """

    def __init__(self, url: Optional[str] = None, transport=None):
        self._transport = transport
        self._url = url
        if transport is None and url is not None:
            self._transport = HttpTransport(url)
        self._state = ConnectionState.DISCONNECTED
        self._token: Optional[str] = None
        self._gate = threading.RLock()
        self.last_activity = time.monotonic()

    # -- plumbing -------------------------------------------------------------

    def _enter(self):
        if not self._gate.acquire(blocking=False):
            raise ConcurrencyError("session is busy in another thread")
        return self._gate

    @property
    def state(self) -> ConnectionState:
        return self._state

    @property
    def token(self) -> Optional[str]:
        return self._token

    def set_server_address(self, url: str) -> None:
        gate = self._enter()
        try:
            if self._state is not ConnectionState.DISCONNECTED:
                raise FaultError(Fault.of(WRONG_STATE, "cannot change server while connected"))
            self._url = url
            self._transport = HttpTransport(url)
        finally:
            gate.release()

    def _rpc(self, method: str, params: Sequence[Value],
             expected: Optional[WireType] = None) -> Value:
        if self._transport is None:
            raise FaultError(Fault.of(INTERNAL, "no server address configured"))
        payload = encode_call(method, params)
        try:
            raw = self._transport.send(payload, self._token)
        except FaultError:
            raise
        except Exception as exc:
            self._state = ConnectionState.DISCONNECTED
            self._token = None
            raise FaultError(Fault.of(INTERNAL, f"transport failure: {exc}")) from exc
        result = decode_response(raw, expected)
        if isinstance(result, Fault):
            raise FaultError(result)
        self.last_activity = time.monotonic()
        return result

    def _lifecycle(self, event: ProtocolEvent, method: str, params: Sequence[Value]) -> None:
        next_state = transition(self._state, event)
        if isinstance(next_state, Fault):
            raise FaultError(next_state)
        self._rpc(method, params)
        self._state = next_state

    def _require_state(self, allowed: tuple[ConnectionState, ...], what: str) -> None:
        if self._state not in allowed:
            raise FaultError(Fault.of(WRONG_STATE, f"{what} requires state in "
                                      f"{[s.value for s in allowed]}, currently {self._state.value}"))

    # -- session verbs ----------------------------------------------------------

    def connect(self, client_id: str = "openlab-client") -> None:
        gate = self._enter()
        try:
            next_state = transition(self._state, ProtocolEvent.CONNECT)
            if isinstance(next_state, Fault):
                raise FaultError(next_state)
            result = self._rpc("jil.connect", [Value.string(client_id)], WireType.STRING)
            self._token = str(result.raw)
            self._state = next_state
        finally:
            gate.release()

    def open_vi(self, path: str) -> None:
        gate = self._enter()
        try:
            self._lifecycle(ProtocolEvent.OPEN_VI, "jil.openVI", [Value.string(path)])
        finally:
            gate.release()

    def run_vi(self) -> None:
        gate = self._enter()
        try:
            self._lifecycle(ProtocolEvent.RUN_VI, "jil.runVI", [])
        finally:
            gate.release()

    def stop_vi(self) -> None:
        gate = self._enter()
        try:
            self._lifecycle(ProtocolEvent.STOP_VI, "jil.stopVI", [])
        finally:
            gate.release()

    def close_vi(self) -> None:
        gate = self._enter()
        try:
            self._lifecycle(ProtocolEvent.CLOSE_VI, "jil.closeVI", [])
        finally:
            gate.release()

    def disconnect(self) -> None:
        gate = self._enter()
        try:
            self._lifecycle(ProtocolEvent.DISCONNECT, "jil.disconnect", [])
            self._token = None
        finally:
            gate.release()

    def get_metadata(self) -> dict:
        gate = self._enter()
        try:
            self._require_state(_VALUE_STATES, "getMetadata")
            result = self._rpc("jil.getMetadata", [], WireType.STRING)
            return json.loads(str(result.raw))
        finally:
            gate.release()

    def set_value(self, name: str, value: Value) -> None:
        gate = self._enter()
        try:
            self._require_state(_VALUE_STATES, "setValue")
            self._rpc("jil.setValue", [Value.string(name), value])
        finally:
            gate.release()

    def get_value(self, name: str, expected: Union[WireType, str]) -> Value:
        gate = self._enter()
        try:
            self._require_state(_VALUE_STATES, "getValue")
            if isinstance(expected, str):
                expected = parse_wire_type(expected)
            return self._rpc("jil.getValue", [Value.string(name)], expected)
        finally:
            gate.release()

    def heartbeat(self) -> None:
        gate = self._enter()
        try:
            self._require_state((ConnectionState.CONNECTED, *_VALUE_STATES), "heartbeat")
            self._rpc("jil.heartbeat", [])
        finally:
            gate.release()

    def close(self) -> None:
        if self._transport is not None:
            self._transport.close()


# ---------------------------------------------------------------------------
# Link table
# ---------------------------------------------------------------------------

class LinkDirection(Enum):
    READ = "read"    # remote indicator -> local variable
    WRITE = "write"  # local variable -> remote control


_WIRE_ALIASES = {
    "boolean": WireType.BOOLEAN, "bool": WireType.BOOLEAN,
    "int": WireType.INT32, "int32": WireType.INT32, "i4": WireType.INT32,
    "float": WireType.FLOAT32, "float32": WireType.FLOAT32,
    "double": WireType.FLOAT64, "float64": WireType.FLOAT64,
    "string": WireType.STRING,
}

_SYNC_ALIASES = {
    "sync": SyncClass.SYNCHRONOUS, "synchronous": SyncClass.SYNCHRONOUS,
    "async": SyncClass.ASYNCHRONOUS, "asynchronous": SyncClass.ASYNCHRONOUS,
}


def parse_wire_type(name: str) -> WireType:
    try:
        return _WIRE_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown wire type {name!r}") from None


@dataclass(frozen=True)
class Link:
    local_name: str
    remote_name: str
    direction: LinkDirection
    sync_class: SyncClass
    wire_type: WireType


@dataclass(frozen=True)
class LinkTable:
    server_url: str
    vi_path: str
    links: tuple[Link, ...]

    def validate(self) -> None:
        problems = []
        locals_seen: set[str] = set()
        remotes_seen: set[tuple[LinkDirection, str]] = set()
        for link in self.links:
            if link.local_name in locals_seen:
                problems.append(f"duplicate local name {link.local_name!r}")
            locals_seen.add(link.local_name)
            key = (link.direction, link.remote_name)
            if key in remotes_seen:
                problems.append(f"duplicate {link.direction.value} link to {link.remote_name!r}")
            remotes_seen.add(key)
        if problems:
            raise LinkConfigError(problems)


def parse_link_table(doc: Mapping) -> LinkTable:
    """Build a validated LinkTable from its JSON object form."""
    links = []
    for entry in doc.get("links", []):
        links.append(Link(
            local_name=entry["local"],
            remote_name=entry["remote"],
            direction=LinkDirection(entry["dir"]),
            sync_class=_SYNC_ALIASES[entry.get("sync", "sync").lower()],
            wire_type=parse_wire_type(entry["type"]),
        ))
    table = LinkTable(server_url=doc["server"], vi_path=doc["vi"], links=tuple(links))
    table.validate()
    return table


def load_link_table(path: str) -> LinkTable:
    with open(path, encoding="utf-8") as fh:
        return parse_link_table(json.load(fh))


# ---------------------------------------------------------------------------
# High-level session
# ---------------------------------------------------------------------------

def _to_value(link: Link, raw) -> Value:
    if isinstance(raw, Value):
        if raw.kind is not link.wire_type:
            raise FaultError(Fault.of(TYPE_MISMATCH,
                                      f"link {link.local_name!r} carries {link.wire_type.value}"))
        return raw
    if link.wire_type is WireType.BOOLEAN:
        if not isinstance(raw, bool):
            raise FaultError(Fault.of(TYPE_MISMATCH, f"link {link.local_name!r} expects a bool"))
        return Value.boolean(raw)
    if link.wire_type is WireType.INT32:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise FaultError(Fault.of(TYPE_MISMATCH, f"link {link.local_name!r} expects an int"))
        return Value.int32(raw)
    if link.wire_type is WireType.STRING:
        if not isinstance(raw, str):
            raise FaultError(Fault.of(TYPE_MISMATCH, f"link {link.local_name!r} expects a str"))
        return Value.string(raw)
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise FaultError(Fault.of(TYPE_MISMATCH, f"link {link.local_name!r} expects a number"))
    return Value.float32(raw) if link.wire_type is WireType.FLOAT32 else Value.float64(raw)


class HighLevelSession:
    """Link-table driven session; the caller never sees individual RPCs."""

    def __init__(self, table: LinkTable, transport=None,
                 keepalive: Optional[float] = DEFAULT_KEEPALIVE):
        table.validate()
        self.table = table
        self.client = LowLevelClient(url=None if transport else table.server_url,
                                     transport=transport)
        self._keepalive_interval = keepalive
        self._keepalive_stop: Optional[threading.Event] = None
        self._gate = threading.RLock()

    def _enter(self):
        if not self._gate.acquire(blocking=False):
            raise ConcurrencyError("session is busy in another thread")
        return self._gate

    @property
    def state(self) -> ConnectionState:
        return self.client.state

    # -- lifecycle ---------------------------------------------------------------

    def connect(self, client_id: str = "openlab-client") -> None:
        """Connect, open and run the remote instrument; validate every link.

        Any failure (including link mismatches against the published
        metadata) rolls the session back to Disconnected before raising.
        """
        gate = self._enter()
        try:
            if self.client.state is not ConnectionState.DISCONNECTED:
                raise FaultError(Fault.of(WRONG_STATE, "session already connected"))
            try:
                self.client.connect(client_id)
                self.client.open_vi(self.table.vi_path)
                metadata = self.client.get_metadata()
                self._validate_links(metadata)
                self.client.run_vi()
            except Exception:
                self._teardown()
                raise
            self._start_keepalive()
        finally:
            gate.release()

    def _validate_links(self, metadata: Mapping) -> None:
        remote = {entry["name"]: entry for entry in metadata.get("variables", [])}
        problems = []
        for link in self.table.links:
            entry = remote.get(link.remote_name)
            if entry is None:
                problems.append(f"link {link.local_name!r}: no remote variable {link.remote_name!r}")
                continue
            want = (Direction.INDICATOR if link.direction is LinkDirection.READ
                    else Direction.CONTROL)
            if entry["direction"] != want.value:
                problems.append(f"link {link.local_name!r}: {link.remote_name!r} is "
                                f"{entry['direction']}, not {want.value}")
            if parse_wire_type(entry["type"]) is not link.wire_type:
                problems.append(f"link {link.local_name!r}: {link.remote_name!r} carries "
                                f"{entry['type']}, link declares {link.wire_type.value}")
        if problems:
            raise LinkConfigError(problems)

    def disconnect(self) -> None:
        """Best-effort stop/close/disconnect; always ends Disconnected."""
        gate = self._enter()
        try:
            self._teardown()
        finally:
            gate.release()

    def _teardown(self) -> None:
        self._stop_keepalive()
        for call in (self.client.stop_vi, self.client.close_vi, self.client.disconnect):
            if self.client.state is ConnectionState.DISCONNECTED:
                break
            try:
                call()
            except FaultError as exc:
                logger.debug("teardown call failed: %s", exc)

    # -- data exchange --------------------------------------------------------------

    def _require_running(self) -> None:
        if self.client.state is not ConnectionState.RUNNING:
            raise FaultError(Fault.of(WRONG_STATE, "session is not running"))

    def step(self, local_values: Mapping[str, object]) -> dict[str, object]:
        """Synchronize the synchronous links once and send one heartbeat.

        Pushes write links in table order, then pulls read links; returns a
        new map with the pulled values merged in. A fault leaves the input
        untouched and names the failing link.
        """
        gate = self._enter()
        try:
            self._require_running()
            writes = [l for l in self.table.links
                      if l.direction is LinkDirection.WRITE and l.sync_class is SyncClass.SYNCHRONOUS]
            reads = [l for l in self.table.links
                     if l.direction is LinkDirection.READ and l.sync_class is SyncClass.SYNCHRONOUS]
            for link in writes:
                if link.local_name not in local_values:
                    raise ValueError(f"no local value supplied for write link {link.local_name!r}")
            pulled: dict[str, object] = {}
            for link in writes:
                self._link_call(link, lambda: self.client.set_value(
                    link.remote_name, _to_value(link, local_values[link.local_name])))
            for link in reads:
                value = self._link_call(link, lambda: self.client.get_value(
                    link.remote_name, link.wire_type))
                pulled[link.local_name] = value.raw
            self.client.heartbeat()
            return {**local_values, **pulled}
        finally:
            gate.release()

    def _link_call(self, link: Link, call):
        try:
            return call()
        except FaultError as exc:
            raise FaultError(Fault(exc.fault.code,
                                   f"link {link.local_name!r}: {exc.fault.message}")) from exc

    def get_values(self) -> dict[str, object]:
        """Pull every read link (both sync classes)."""
        gate = self._enter()
        try:
            self._require_running()
            out: dict[str, object] = {}
            for link in self.table.links:
                if link.direction is LinkDirection.READ:
                    value = self._link_call(link, lambda: self.client.get_value(
                        link.remote_name, link.wire_type))
                    out[link.local_name] = value.raw
            return out
        finally:
            gate.release()

    def set_values(self, subset: Mapping[str, object]) -> None:
        """Push exactly the named write links (asynchronous parameters)."""
        gate = self._enter()
        try:
            self._require_running()
            by_local = {l.local_name: l for l in self.table.links
                        if l.direction is LinkDirection.WRITE}
            for name in subset:
                if name not in by_local:
                    raise LinkConfigError([f"{name!r} is not a write link"])
            for name, raw in subset.items():
                link = by_local[name]
                self._link_call(link, lambda: self.client.set_value(
                    link.remote_name, _to_value(link, raw)))
        finally:
            gate.release()

    # -- keepalive ---------------------------------------------------------------

    def _start_keepalive(self) -> None:
        if self._keepalive_interval is None:
            return
        stop = threading.Event()
        self._keepalive_stop = stop
        interval = self._keepalive_interval

        def loop() -> None:
            while not stop.wait(interval / 4.0):
                if time.monotonic() - self.client.last_activity < interval:
                    continue
                if not self._gate.acquire(blocking=False):
                    continue  # a step is in flight; it heartbeats itself
                try:
                    if self.client.state is ConnectionState.DISCONNECTED:
                        return
                    self.client.heartbeat()
                except (FaultError, ConcurrencyError) as exc:
                    logger.debug("keepalive heartbeat failed: %s", exc)
                finally:
                    self._gate.release()

        threading.Thread(target=loop, name="openlab-keepalive", daemon=True).start()

    def _stop_keepalive(self) -> None:
        if self._keepalive_stop is not None:
            self._keepalive_stop.set()
            self._keepalive_stop = None
