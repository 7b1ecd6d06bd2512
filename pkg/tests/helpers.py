"""Shared fixtures: in-process hosts, loopback servers, canonical link tables."""

from __future__ import annotations

from openlab.connector import (HighLevelSession, Link, LinkDirection, LinkTable,
                               LoopbackTransport, LowLevelClient, RecordingTransport)
from openlab.protocol import SyncClass, WireType
from openlab.runtime import InstrumentHost, JilHttpServer, serve_http
from openlab.tanks import VI_PATH, TankParams, instrument_facade


def make_host(lockstep: bool = True, watchdog: float = 5.0, log_dir=None,
              period: float = 0.05, params: TankParams = TankParams(),
              **facade_kwargs) -> InstrumentHost:
    host = InstrumentHost(watchdog_timeout=watchdog, lockstep=lockstep,
                          log_dir=str(log_dir) if log_dir else None)
    host.register_instrument(instrument_facade(params=params, period=period,
                                               **facade_kwargs))
    return host


def http_server(host: InstrumentHost) -> tuple[JilHttpServer, str]:
    server = serve_http(host, "127.0.0.1:0", in_thread=True)
    url = f"http://127.0.0.1:{server.server_address[1]}/jil"
    return server, url


def loopback_client(host: InstrumentHost, recording: bool = False) -> LowLevelClient:
    transport = LoopbackTransport(host)
    if recording:
        transport = RecordingTransport(transport)
    return LowLevelClient(transport=transport)


def tank_link_table(server_url: str = "loopback:", extra=()) -> LinkTable:
    links = (
        Link("y", "h_bot", LinkDirection.READ, SyncClass.SYNCHRONOUS, WireType.FLOAT64),
        Link("u", "pump_u", LinkDirection.WRITE, SyncClass.SYNCHRONOUS, WireType.FLOAT64),
    ) + tuple(extra)
    return LinkTable(server_url=server_url, vi_path=VI_PATH, links=links)


def loopback_session(host: InstrumentHost, table: LinkTable | None = None,
                     keepalive=None, recording: bool = False) -> HighLevelSession:
    transport = LoopbackTransport(host)
    if recording:
        transport = RecordingTransport(transport)
    session = HighLevelSession(table or tank_link_table(), transport=transport,
                               keepalive=keepalive)
    return session

