"""Command line entry point: run a scenario, optionally serving the API."""

from __future__ import annotations

import argparse
import json
import sys
import threading

from .orchestrator import Orchestrator, OrchestratorConfig, compute_trigger_stats
from .strategy import HttpBackend, mock_backend
from .world import compute_metrics, load_scenario


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dexter")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario to completion")
    run.add_argument("scenario", help="scenario JSON file")
    run.add_argument("--mode", choices=("auto", "interactive"), default="auto")
    run.add_argument(
        "--backend",
        default="mock",
        help="mock (rule table from the scenario) or http:<url>",
    )
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--budget-s", type=float, default=None,
                     help="time budget per replanning search")
    run.add_argument("--paper-lb", action="store_true",
                     help="use the plain workload-sum lower bound")
    run.add_argument("--serve", metavar="ADDR", default=None,
                     help="host:port to expose the HTTP/SSE API")
    run.add_argument("--runlog", metavar="PATH", default=None,
                     help="write the run log (JSON lines) here")
    run.add_argument("--timings", action="store_true",
                     help="record wall-clock planning times in the log")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    sim = load_scenario(args.scenario)
    if args.seed is not None:
        sim.seed = args.seed
    if args.backend == "mock":
        backend = mock_backend(sim.mock_rules)
    elif args.backend.startswith("http:"):
        backend = HttpBackend(args.backend[len("http:"):])
    else:
        print(f"unknown backend {args.backend!r}", file=sys.stderr)
        return 2
    config = OrchestratorConfig(
        mode=args.mode,
        time_budget_s=args.budget_s,
        paper_lb=args.paper_lb,
        record_timings=args.timings,
    )
    orch = Orchestrator(sim, backend, config)

    server = None
    if args.serve:
        from .service import OrchestratorService, serve

        service = OrchestratorService(orch)
        service.request_run()
        server = serve(service, args.serve)
        print(f"serving on {server.server_address[0]}:{server.server_address[1]}")
        worker = threading.Thread(target=service.worker, daemon=True)
        worker.start()
        try:
            service._finished.wait()
        except KeyboardInterrupt:
            pass
    else:
        orch.run()

    metrics = compute_metrics(orch.log.records, sim.gt)
    stats = compute_trigger_stats(orch.log.records)
    print(json.dumps({"metrics": metrics.to_obj(), "stats": stats.to_obj()},
                     indent=2, sort_keys=True))
    if args.runlog:
        orch.log.write(args.runlog)
    if server is not None:
        print("run finished; still serving (Ctrl-C to stop)")
        try:
            threading.Event().wait()
        except KeyboardInterrupt:
            server.shutdown()
    return 0 if metrics.success_rate == 1.0 else 1


if __name__ == "__main__":
    sys.exit(main())
