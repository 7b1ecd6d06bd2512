"""Command-line entry points: the instrument server and the session service."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from . import tanks
from .runtime import DEFAULT_WATCHDOG, InstrumentHost, serve_http


def _setup_logging() -> None:
    level = os.environ.get("OPENLAB_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _build_tank_instrument(config: Optional[dict]) -> tanks.CoupledTanksInstrument:
    section = (config or {}).get("plants", {}).get("coupled_tanks", {})
    param_keys = ("area", "a_top", "a_bot", "k_pump", "g", "h_max", "u_max")
    params = tanks.TankParams(**{k: section[k] for k in param_keys if k in section})
    facade_keys = ("h0_top", "h0_bot", "seed", "period", "units")
    return tanks.instrument_facade(params=params,
                                   **{k: section[k] for k in facade_keys if k in section})


def server_main(argv=None) -> int:
    """`openlab-server`: host the virtual instruments over XML-RPC."""
    parser = argparse.ArgumentParser(prog="openlab-server",
                                     description="Virtual-instrument server")
    parser.add_argument("--bind", default="0.0.0.0:2055", help="address:port to listen on")
    parser.add_argument("--log-dir", default="openlab-logs", help="directory for run CSV logs")
    parser.add_argument("--watchdog", type=float, default=DEFAULT_WATCHDOG,
                        help="seconds of controller silence before the safety watchdog acts")
    parser.add_argument("--lockstep", action="store_true",
                        help="advance instrument time only on explicit __tick writes")
    parser.add_argument("--config", help="JSON file with plant parameter overrides")
    args = parser.parse_args(argv)
    _setup_logging()

    config = None
    if args.config:
        config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    host = InstrumentHost(watchdog_timeout=args.watchdog, lockstep=args.lockstep,
                          log_dir=args.log_dir)
    host.register_instrument(_build_tank_instrument(config))
    server = serve_http(host, args.bind)
    print(f"openlab-server listening on {args.bind} "
          f"({'lockstep' if args.lockstep else 'real-time'} mode)", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        host.close()
    return 0


def main(argv=None) -> int:
    """`openlab`: run a headless experiment or serve the UI bridge."""
    parser = argparse.ArgumentParser(prog="openlab", description="Remote-lab client tools")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment config to completion")
    run_p.add_argument("experiment", help="experiment JSON file")
    run_p.add_argument("--out", help="trace CSV path (overrides the config)")

    serve_p = sub.add_parser("serve", help="serve the browser dashboard bridge")
    serve_p.add_argument("--bind", default="127.0.0.1:8080")
    serve_p.add_argument("--experiment", required=True, help="experiment JSON file")
    serve_p.add_argument("--ui", help="directory of built UI assets (default frontend/dist)")
    serve_p.add_argument("--decimation", type=int, help="send every Nth sample to the UI")

    server_p = sub.add_parser("server", help="alias of openlab-server")
    server_p.add_argument("rest", nargs=argparse.REMAINDER)

    args, extra = parser.parse_known_args(argv)
    if args.command != "server" and extra:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    _setup_logging()

    if args.command == "run":
        from .experiment import run_experiment
        return run_experiment(args.experiment, args.out)

    if args.command == "server":
        return server_main(extra + args.rest)

    from .bridge import BridgeService, create_app
    from .experiment import load_config
    import uvicorn

    experiment = load_config(args.experiment)
    service = BridgeService(experiment, decimation=args.decimation)
    ui_dir = args.ui
    if ui_dir is None and Path("frontend/dist").is_dir():
        ui_dir = "frontend/dist"
    app = create_app(service, ui_dir=ui_dir)
    addr, _, port = args.bind.rpartition(":")
    uvicorn.run(app, host=addr or "127.0.0.1", port=int(port), log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
