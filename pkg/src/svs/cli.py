"""Process entry points: edge node, cloud node, scenario generator, audit.

Exit codes are part of the contract: 0 success (or audit pass), 1 audit
found violations, 2 any error (bad config, unavailable port, unreadable
input). Logs are one line per event and never include payload bodies at
info level.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import threading
import time

from .audit import (
    audit_payloads,
    audit_retention,
    capture_window,
    compliance_report,
    schema_walk,
)
from .cloud import (
    SCOPES,
    CloudAPIServer,
    CloudIngestServer,
    CloudNode,
    TokenRegistry,
)
from .config import load_config, load_scenario
from .errors import (
    ConfigInvalid,
    PortUnavailable,
    SourceUnavailable,
    SvsError,
)
from .gateway import CaptureGateway, GatewayClient
from .ingest import Dispatcher, IngestStats, StreamSource, open_stream, pump
from .model import event_to_line
from .pipeline import EdgePipeline
from .reid import GlobalReid
from .scoring import BaselineAnomalyScorer, RuleEngine
from .simulator import generate
from .store import RecordStore, RetentionPolicy
from .analytics import AnalyticsEngine

log = logging.getLogger("svs")

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_ERROR = 2


def _setup_logging(level):
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        force=True)


class FileCaptureGateway(CaptureGateway):
    """Uplink stand-in that appends every outbound wire frame to an
    ndjson file, composing directly with `svs audit --capture`."""

    def __init__(self, site_id, path):
        super().__init__(site_id)
        self._fh = open(path, "a", encoding="utf-8")

    def publish(self, item, indicator=None):
        msg = super().publish(item, indicator)
        self.messages.clear()   # the file is the record; don't hold RAM
        self._fh.write(json.dumps(msg.to_wire(), sort_keys=True,
                                  separators=(",", ":")) + "\n")
        return msg

    def flush(self, timeout=0.0):
        self._fh.flush()
        return True

    def close(self):
        self._fh.close()


def build_edge(ecfg):
    """Construct the full edge chain from an EdgeConfig.

    Returns (pipeline, gateway, store); the caller owns all three
    lifecycles.
    """
    store = None
    if ecfg.store_dir is not None:
        store = RecordStore(ecfg.store_dir)
    if ecfg.uplink is not None:
        u = ecfg.uplink
        gateway = GatewayClient(u.host, u.port, u.token,
                                site_id=ecfg.site_id,
                                spool_capacity=u.spool_capacity)
    else:
        gateway = FileCaptureGateway(ecfg.site_id, ecfg.capture_path)
    reid = GlobalReid(ecfg.site_id, ecfg.calibrations, ecfg.reid,
                      seed=ecfg.reid_seed)
    scorer = BaselineAnomalyScorer(half_life_ms=ecfg.scoring.half_life_ms,
                                   kappa=ecfg.scoring.kappa)
    rules = RuleEngine(ecfg.site_id, ecfg.rules, dedup_ms=ecfg.dedup_ms)
    an = ecfg.analytics
    analytics = AnalyticsEngine(ecfg.site_id, ecfg.calibrations,
                                window_ms=an.window_ms, pane_ms=an.pane_ms,
                                cell_m=an.cell_m, extent=an.extent)
    pipeline = EdgePipeline(ecfg.site_id, ecfg.calibrations, gateway,
                            store=store,
                            policy=ecfg.retention if store else None,
                            reid=reid, scorer=scorer, rules=rules,
                            assoc=ecfg.assoc, analytics=analytics,
                            settings=ecfg.settings)
    return pipeline, gateway, store


def run_edge(cfg, *, replay_path=None, speed=None, stop=None):
    """Run an edge node until its input ends or stop is set.

    Replay mode reads a capture file (paced only when a speed is given);
    live mode listens on the configured ingest socket. Shutdown drains the
    dispatcher, closes the open analytics pane, flushes the uplink spool,
    and syncs the store before returning.
    """
    ecfg = cfg.edge
    if replay_path is None and ecfg.ingest is None:
        raise ConfigInvalid("edge: needs --replay or an [edge.ingest] "
                            "listener")
    stop = stop or threading.Event()
    pipeline, gateway, store = build_edge(ecfg)

    stats = IngestStats()
    if replay_path is not None:
        source = StreamSource("file_replay", replay_path,
                              replay_speed=speed if speed else 1.0)
        events = open_stream(source, stats, pace=speed is not None)
        workers = False      # single-threaded replay stays deterministic
        queue_size, max_skew_ms = 256, 500
        log.info("edge %s replaying %s speed=%s", ecfg.site_id,
                 replay_path, speed or "max")
    else:
        ig = ecfg.ingest
        try:
            events = open_stream(
                StreamSource("socket_listener", ig.address), stats)
        except SourceUnavailable as exc:
            raise PortUnavailable(f"ingest {ig.address}: {exc}") from exc
        workers = True
        queue_size, max_skew_ms = ig.queue_size, ig.max_skew_ms
        log.info("edge %s listening on %s:%d", ecfg.site_id, ig.host,
                 events.port)

    # On stop, closing the source unblocks pump() and the drain proceeds.
    watcher = threading.Thread(target=lambda: (stop.wait(),
                                               events.close()),
                               daemon=True, name="edge-stop")
    watcher.start()
    dispatcher = Dispatcher(pipeline.handlers(), stats=stats,
                            queue_size=queue_size, max_skew_ms=max_skew_ms,
                            workers=workers)
    try:
        pump(events, dispatcher)
    finally:
        stop.set()
        events.close()
        dispatcher.close()
        pipeline.close()
        gateway.flush(10.0)
        gateway.close()
        if store is not None:
            store.close()
    log.info("edge %s done: offered=%d accepted=%d rejected=%d "
             "records=%d alerts=%d", ecfg.site_id, stats.offered,
             stats.accepted, stats.rejected, pipeline.records_minted,
             pipeline.alerts_raised)
    return stats


class CloudHandle:
    """A running cloud node: ingest listener, HTTP API, durable tables."""

    def __init__(self, node, registry, ingest, api):
        self.node = node
        self.registry = registry
        self.ingest = ingest
        self.api = api

    def stop(self):
        self.ingest.stop()
        self.api.stop()
        self.node.close()


def start_cloud(cfg):
    """Bind both cloud listeners and return the running handle."""
    ccfg = cfg.cloud
    node = CloudNode(ccfg.routing, ccfg.tables, state_dir=ccfg.state_dir)
    registry = TokenRegistry()
    if ccfg.admin_token:
        registry.adopt(ccfg.admin_token, "admin", SCOPES)
    ingest = CloudIngestServer(node, ccfg.gateway_token,
                               host=ccfg.listen_host,
                               port=ccfg.listen_port)
    try:
        ingest.start()
    except OSError as exc:
        node.close()
        raise PortUnavailable(
            f"ingest {ccfg.listen_host}:{ccfg.listen_port}: {exc}") from exc
    try:
        api = CloudAPIServer(node, registry, ccfg.gateway_token,
                             host=ccfg.api_host, port=ccfg.api_port)
    except OSError as exc:
        ingest.stop()
        node.close()
        raise PortUnavailable(
            f"api {ccfg.api_host}:{ccfg.api_port}: {exc}") from exc
    api.start()
    log.info("cloud up: ingest=%s:%d api=%s:%d tables=%s",
             ccfg.listen_host, ingest.port, ccfg.api_host, api.port,
             ",".join(ccfg.tables))
    return CloudHandle(node, registry, ingest, api)


def run_cloud(cfg, *, stop=None):
    """Run a cloud node until stop is set. Restarting with the same
    state_dir resumes ingest from the last acknowledged sequences."""
    stop = stop or threading.Event()
    handle = start_cloud(cfg)
    try:
        stop.wait()
    finally:
        handle.stop()
    log.info("cloud down")
    return EXIT_OK


def write_run(config, out_dir):
    """Generate a scenario into out_dir: events.ndjson plus the sidecar
    truth.json needed to grade system outputs later."""
    os.makedirs(out_dir, exist_ok=True)
    stream, truth = generate(config)
    events_path = os.path.join(out_dir, "events.ndjson")
    truth_path = os.path.join(out_dir, "truth.json")
    n = 0
    with open(events_path, "w", encoding="utf-8") as fh:
        for event in stream:
            fh.write(event_to_line(event) + "\n")
            n += 1
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(truth.to_json_obj(), fh, sort_keys=True)
    log.info("sim wrote %d events to %s (truth: %s)", n, events_path,
             truth_path)
    return events_path, truth_path


def run_sim(scenario_path, out_dir):
    config = load_scenario(scenario_path)
    write_run(config, out_dir)
    return EXIT_OK


def _read_capture(path):
    """Wire frames from an ndjson capture. Unparseable lines are kept as
    raw strings so the audit reports them instead of this tool crashing."""
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                frames.append(json.loads(line))
            except json.JSONDecodeError:
                frames.append(line)
    return frames


def run_audit(*, capture=None, store_dir=None, config_path=None,
              now_ms=None, as_json=False, out=print):
    """Audit a capture file and/or a record store; 0 pass, 1 violations."""
    cfg = load_config(config_path) if config_path else None
    policy = RetentionPolicy()
    if cfg is not None and cfg.edge is not None:
        policy = cfg.edge.retention

    findings = []
    t_from = t_to = None
    if capture is not None:
        frames = _read_capture(capture)
        findings.extend(audit_payloads(frames))
        t_from, t_to = capture_window(frames)

    if store_dir is not None:
        store = RecordStore(store_dir, sync=False)
        try:
            now = now_ms if now_ms is not None else t_to
            if now is None:
                now = int(time.time() * 1000)
            findings.extend(audit_retention(store, now, policy))
        finally:
            store.close()

    findings.extend(schema_walk())

    config_obj = None
    if cfg is not None:
        config_obj = {"role": cfg.role, "log_level": cfg.log_level}
    report = compliance_report(findings, config=config_obj,
                               t_from=t_from, t_to=t_to)
    if as_json:
        out(json.dumps(report.to_wire(), sort_keys=True, indent=2))
    else:
        out(report.to_text())
    return EXIT_OK if report.passed else EXIT_VIOLATION


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default=None,
                        choices=["debug", "info", "warning", "error"])
    p = argparse.ArgumentParser(
        prog="svs", parents=[common],
        description="privacy-preserving video analytics node")
    sub = p.add_subparsers(dest="cmd", required=True)

    pe = sub.add_parser("edge", help="run an edge node", parents=[common])
    pe.add_argument("--config", required=True)
    pe.add_argument("--replay", default=None,
                    help="read events from a capture file instead of a "
                         "socket")
    pe.add_argument("--speed", type=float, default=None,
                    help="pace the replay at N times real time")

    pc = sub.add_parser("cloud", help="run a cloud node", parents=[common])
    pc.add_argument("--config", required=True)

    ps = sub.add_parser("sim", help="generate a scenario run",
                        parents=[common])
    ps.add_argument("--scenario", required=True)
    ps.add_argument("--out", required=True)

    pa = sub.add_parser("audit", help="audit captures and stores",
                        parents=[common])
    pa.add_argument("--capture", default=None)
    pa.add_argument("--store", default=None)
    pa.add_argument("--config", default=None)
    pa.add_argument("--now", type=int, default=None,
                    help="audit clock in epoch ms (default: capture end)")
    pa.add_argument("--json", action="store_true")
    return p


def _install_signals(stop):
    def handler(signum, frame):
        stop.set()
    try:
        signal.signal(signal.SIGINT, handler)
        signal.signal(signal.SIGTERM, handler)
    except ValueError:
        pass   # not the main thread; caller manages the stop event


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)

    level = args.log_level or "info"
    if args.cmd == "audit" and level == "debug":
        # Debug traces can echo payload fragments; audits must not.
        level = "info"
    _setup_logging(level)

    try:
        if args.cmd == "edge":
            if args.speed is not None and args.replay is None:
                raise ConfigInvalid("--speed requires --replay")
            cfg = load_config(args.config)
            if cfg.role != "edge":
                raise ConfigInvalid("node.role: expected 'edge'")
            stop = threading.Event()
            _install_signals(stop)
            run_edge(cfg, replay_path=args.replay, speed=args.speed,
                     stop=stop)
            return EXIT_OK
        if args.cmd == "cloud":
            cfg = load_config(args.config)
            if cfg.role != "cloud":
                raise ConfigInvalid("node.role: expected 'cloud'")
            stop = threading.Event()
            _install_signals(stop)
            return run_cloud(cfg, stop=stop)
        if args.cmd == "sim":
            return run_sim(args.scenario, args.out)
        if args.capture is None and args.store is None:
            raise ConfigInvalid("audit: needs --capture and/or --store")
        return run_audit(capture=args.capture, store_dir=args.store,
                         config_path=args.config, now_ms=args.now,
                         as_json=args.json)
    except (ConfigInvalid, PortUnavailable, SourceUnavailable) as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    except SvsError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
