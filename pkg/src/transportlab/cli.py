"""Command-line front end: run scenarios, check chain properties, validate
protocol deployments, list shipped scenarios.

Exit codes: 0 success / no violations, 1 assertion or check failure,
2 config or validation error.
"""

import argparse
import json
import os
import sys
from dataclasses import replace as _replace
from importlib import resources
from pathlib import Path

from .checker import check_property, properties_for
from .errors import ConfigError, DeployError, TransportLabError, UnknownProperty
from .protocols import PROTOCOLS, protocol_module
from .registry import register_deploy
from .scheduler import PerFlow
from .sim.engine import Engine
from .sim.metrics import percentile, summarize
from .sim.scenario import load_scenario

OUT_ENV = "TRANSPORTLAB_OUT"

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def _scenario_dir():
    return resources.files("transportlab") / "scenarios"


def _resolve_scenario(name):
    p = Path(name)
    if p.exists():
        return p
    shipped = _scenario_dir() / f"{name}.toml"
    if shipped.is_file():
        return shipped
    raise ConfigError(str(name), "no such scenario file or shipped scenario name")


def _evaluate_assertions(scenario, result):
    rows = []
    for spec in scenario.assertions:
        if spec.kind == "full_delivery":
            mismatched = [k for k in result.sent
                          if bytes(result.sent[k]) != bytes(result.deliveries.get(k, b""))]
            passed = result.completed_all and not mismatched
            detail = "all sent bytes delivered" if passed else f"mismatch on {mismatched[:3]}"
        elif spec.kind == "min_retransmits":
            got = result.counters.get("retransmissions", 0)
            passed = got >= (spec.value or 1)
            detail = f"retransmissions={got}"
        elif spec.kind == "max_p99_slowdown":
            slows = [r["slowdown"] for r in result.messages if r.get("slowdown")]
            p99 = percentile(slows, 99) if slows else None
            passed = p99 is not None and p99 <= spec.value
            detail = f"p99_slowdown={p99}"
        else:
            passed, detail = False, f"unknown assertion {spec.kind}"
        rows.append({"kind": spec.kind, "passed": bool(passed), "detail": detail})
    return rows


def _print_summary(summary):
    print(f"messages: {summary['messages_completed']}/{summary['messages_total']} completed"
          f"  sent={summary['sent_bytes']}B delivered={summary['delivered_bytes']}B"
          f"  retransmissions={summary['retransmissions']}")
    print(f"packets: tx={summary['packets_tx']} rx={summary['packets_rx']}"
          f" dropped={summary['packets_dropped']}")
    if summary["message_classes"]:
        print(f"{'size':>10} {'count':>6} {'p50_lat_ms':>11} {'p99_lat_ms':>11}"
              f" {'p50_slow':>9} {'p99_slow':>9}")
        for row in summary["message_classes"]:
            p50 = row["p50_latency_ns"] / 1e6
            p99 = row["p99_latency_ns"] / 1e6
            s50 = "-" if row["p50_slowdown"] is None else f"{row['p50_slowdown']:.2f}"
            s99 = "-" if row["p99_slowdown"] is None else f"{row['p99_slowdown']:.2f}"
            print(f"{row['size']:>10} {row['count']:>6} {p50:>11.3f} {p99:>11.3f}"
                  f" {s50:>9} {s99:>9}")
    for row in summary["flows"]:
        mbps = row["throughput_bytes_per_sec"] * 8 / 1e6
        print(f"flow {row['flow']}: {row['delivered_bytes']}B delivered, {mbps:.1f} Mbit/s")


def cmd_run(args):
    scenario = load_scenario(_resolve_scenario(args.config))
    if args.seed is not None:
        scenario = _replace(scenario, seed=args.seed)
    if args.trace is not None:
        scenario = _replace(scenario, trace_level=args.trace)
    out_dir = Path(args.out or os.environ.get(OUT_ENV)
                   or f"out/{Path(args.config).stem}-seed{scenario.seed}")
    out_dir.mkdir(parents=True, exist_ok=True)

    result = Engine(scenario).run()

    trace_path = out_dir / "trace.jsonl"
    result.trace.dump(trace_path)
    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, "w") as fh:
        for rec in result.messages:
            if rec["latency_ns"] is not None:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    summary = summarize(result.messages, result.counters)
    assertions = _evaluate_assertions(scenario, result)
    failed = [a for a in assertions if not a["passed"]]
    report = {
        "scenario_digest": scenario.digest(),
        "seed": scenario.seed,
        "config": str(args.config),
        "trace_path": str(trace_path),
        "metrics_path": str(metrics_path),
        "trace_digest": result.trace.digest(),
        "summary": summary,
        "assertions": assertions,
    }
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)

    print(f"scenario digest: {report['scenario_digest'][:16]}…  seed {scenario.seed}")
    _print_summary(summary)
    for a in assertions:
        print(f"assert {a['kind']}: {'pass' if a['passed'] else 'FAIL'} ({a['detail']})")
    print(f"trace: {trace_path}\nmetrics: {metrics_path}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_check(args):
    report = check_property(args.protocol, args.property, buggy=args.buggy)
    print(f"explored {report.explored} assignments "
          f"({report.satisfying} satisfied the assumptions)")
    print(f"distinct instruction outcomes: {len(report.outcome_classes)}")
    for kinds, count in sorted(report.outcome_classes.items()):
        print(f"  {count:>6}  {'·'.join(kinds) or '(none)'}")
    if report.violations:
        print(f"VIOLATIONS: {len(report.violations)}")
        v = report.violations[0]
        print(f"  first counterexample ({v.predicate}):")
        for (target, name), value in sorted(v.assignment.values.items()):
            print(f"    {target}.{name} = {value}")
        print(f"    emitted: {'·'.join(v.kinds) or '(none)'}")
        return EXIT_FAIL
    print("no violations")
    return EXIT_OK


def _fmt_queue_cnt(qc):
    return "per-flow" if isinstance(qc, PerFlow) else str(qc)


def cmd_validate(args):
    module = protocol_module(args.protocol)
    handle = register_deploy(module.build_deploy_spec())
    print(f"protocol {handle.name}: valid deployment")
    print("events and processing chains:")
    for ev_type, chain in handle.dispatch.entries.items():
        print(f"  {ev_type} -> {{{', '.join(chain)}}}")
    print("contexts:")
    for spec in handle.ctx_specs.values():
        timers = ", ".join(t for t, _ in spec.timers) or "-"
        windows = ", ".join(w for w, _ in spec.windows) or "-"
        print(f"  {spec.name} ({spec.granularity}, key arity {spec.key_arity}): "
              f"{len(spec.fields)} fields, timers: {timers}, windows: {windows}")
    print("segmentation rules:")
    for rid, rule in sorted(handle.seg_rules.items()):
        fields = ", ".join(fr.field for fr in rule.field_rules)
        print(f"  rule {rid}: fields [{fields}]")
    if not handle.seg_rules:
        print("  (none)")
    print("coalescing rules:")
    for rule in handle.coalescing_rules:
        print(f"  match {list(rule.match_fields)} guard {rule.guard} action {rule.action}")
    print("packet scheduler:")
    for b in handle.pkt_sched.blocks:
        tag = " (root)" if b.block_id == handle.pkt_sched.root else ""
        print(f"  block {b.block_id}: {b.kind}, {_fmt_queue_cnt(b.queue_cnt)} queues{tag}")
    for child, parent, q in handle.pkt_sched.edges:
        print(f"  edge {child} -> {parent}[{q}]")
    if not handle.ev_sched_supported:
        print("event scheduling: parsed but unsupported (FIFO only)")
    props = properties_for(args.protocol)
    if props:
        print(f"checkable properties: {', '.join(props)}")
    return EXIT_OK


def cmd_list_scenarios(args):
    rows = []
    base = _scenario_dir()
    if base.is_dir():
        for entry in sorted(base.iterdir()):
            if entry.name.endswith(".toml"):
                rows.append(entry.name.removesuffix(".toml"))
    for name in rows:
        print(name)
    if not rows:
        print("(no shipped scenarios)")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="transportlab",
                                     description="Transport protocol programs on a simulated target")
    sub = parser.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config", help="scenario file path or shipped scenario name")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help=f"output directory (or ${OUT_ENV})")
    r.add_argument("--trace", choices=("full", "summary", "off"), default=None)
    r.set_defaults(fn=cmd_run)

    c = sub.add_parser("check", help="bounded-exhaustive chain property check")
    c.add_argument("protocol", choices=sorted(PROTOCOLS))
    c.add_argument("property")
    c.add_argument("--buggy", action="store_true",
                   help="check the seeded-bug protocol variant (for testing the checker)")
    c.set_defaults(fn=cmd_check)

    v = sub.add_parser("validate", help="validate a protocol deployment and print it")
    v.add_argument("protocol", choices=sorted(PROTOCOLS))
    v.set_defaults(fn=cmd_validate)

    ls = sub.add_parser("list-scenarios", help="list shipped scenario configs")
    ls.set_defaults(fn=cmd_list_scenarios)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DeployError, UnknownProperty) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TransportLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
