"""Command-line driver: benchmarks, front-running scenarios and rollup cost split.

Every command is deterministic for a fixed seed and configuration. Options
can come from a flat ``key = value`` config file (``--config``); explicit
flags win over the file.

Exit codes: 0 success, 1 an invariant audit failed during the run, 2 usage
error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import chain_sim, market, pq, rollup
from .gas_meter import DEFAULT_SCHEDULE, GasSchedule, read_flat_config


class AuditFailure(Exception):
    pass


@dataclass
class RunConfig:
    schedule: GasSchedule = DEFAULT_SCHEDULE
    backends: list[pq.Variant] = field(default_factory=lambda: list(pq.Variant))
    n: list[int] = field(default_factory=list)
    seed: int = 0
    format: str = "csv"
    out: Path | None = None


# ------------------------------------------------------------------- formatting


def _csv(sections: list[tuple[list[str], list[list]]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for i, (header, rows) in enumerate(sections):
        if i:
            buf.write("\n")
        w.writerow(header)
        w.writerows(rows)
    return buf.getvalue()


def _json(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n"


def _emit(cfg: RunConfig, csv_text: str, json_payload) -> None:
    text = csv_text if cfg.format == "csv" else _json(json_payload)
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        cfg.out.write_text(text)


def _yes(flag: bool) -> str:
    return "yes" if flag else "no"


# --------------------------------------------------------------------- commands


def cmd_bench_pq(cfg: RunConfig) -> None:
    n = cfg.n[0] if cfg.n else 50
    inserts, drains = [], []
    for variant in cfg.backends:
        res = pq.run_benchmark(variant, pq.CleanupPolicy.CLEAN, n, cfg.seed, cfg.schedule)
        if list(res.drained) != pq.reference_order(pq.random_entries(n, cfg.seed), pq.Direction.MAX_FIRST):
            raise AuditFailure(f"{variant.value}: dequeue order differs from the reference sort")
        for i, r in enumerate(res.insert_receipts, start=1):
            inserts.append([variant.label, i, r.gas_used_effective])
        d = res.drain_receipt
        drains.append([variant.label, d.gas_used_effective, d.refund_earned, _yes(d.hits_cap(cfg.schedule.refund_cap_fraction))])
    insert_header = ["Variant", "Insertion", "Gas"]
    drain_header = ["Variant", "Gas Used", "Refund", "Full Refund?"]
    _emit(
        cfg,
        _csv([(insert_header, inserts), (drain_header, drains)]),
        {"inserts": [dict(zip(insert_header, r)) for r in inserts], "drain": [dict(zip(drain_header, r)) for r in drains]},
    )


CLEANUP_ROWS = (
    ("Linked List without SELFDESTRUCT", pq.Variant.LINKED_LIST_CONTRACTS, pq.CleanupPolicy.LEAVE),
    ("Linked List with SELFDESTRUCT", pq.Variant.LINKED_LIST_CONTRACTS, pq.CleanupPolicy.CLEAN),
    ("Linked List with Mapping and without DELETE", pq.Variant.LINKED_LIST_KEY_VALUE, pq.CleanupPolicy.LEAVE),
    ("Linked List with Mapping and DELETE", pq.Variant.LINKED_LIST_KEY_VALUE, pq.CleanupPolicy.CLEAN),
)


def cmd_bench_cleanup(cfg: RunConfig) -> None:
    n = cfg.n[0] if cfg.n else 50
    rows, raw = [], []
    for label, variant, policy in CLEANUP_ROWS:
        r = pq.drain_cost_report(variant, policy, n, cfg.seed, cfg.schedule)
        rows.append([label, r.gas_used_effective, r.refund_earned, _yes(r.hits_cap(cfg.schedule.refund_cap_fraction))])
        raw.append([variant.value, policy.value, n, r.gas_used_pre_refund, r.refund_earned, r.refund_applied, r.gas_used_effective])
    header = ["", "Gas Used", "Potential Refund", "Full Refund?"]
    _emit(
        cfg,
        _csv([(header, rows), (list(pq.CSV_HEADER), raw)]),
        {"table": [dict(zip(header, r)) for r in rows], "receipts": [dict(zip(pq.CSV_HEADER, r)) for r in raw]},
    )


def cmd_bench_market(cfg: RunConfig) -> None:
    big = cfg.n[0] if cfg.n else 1000
    rows = []
    for variant in cfg.backends:
        count, receipt = market.max_worst_case_trades(variant, cfg.schedule)
        if not receipt.hits_cap(cfg.schedule.refund_cap_fraction):
            raise AuditFailure(f"{variant.value}: close at max trades did not reach the refund cap")
        many = market.worst_case_close(variant, big, cfg.schedule)
        submit = market.average_submission_gas(variant, 200, cfg.seed, cfg.schedule)
        rows.append([variant.label, count, receipt.gas_used_effective, many.gas_used_effective, round(submit)])
    header = ["", "Max Trades (w.c.)", "Gas Used for Max Trades", f"Gas Used for {big} Trades", "Gas Used for Submission(avg)"]
    _emit(cfg, _csv([(header, rows)]), [dict(zip(header, r)) for r in rows])


def cmd_sim(cfg: RunConfig, scenario: str | None, venue: str | None, scenario_file: Path | None) -> None:
    if scenario_file is not None:
        report = chain_sim.evaluate(chain_sim.load_scenario(scenario_file), cfg.schedule)
        _emit(cfg, _csv([(list(_REPORT_COLS), [_report_row(report)])]), report.to_dict())
        return
    if scenario in (None, "all"):
        matrix = chain_sim.verdict_matrix(cfg.seed, schedule=cfg.schedule)
        payload = [{k: (v.value if isinstance(v, chain_sim.Verdict) else v) for k, v in r.items()} for r in matrix]
        _emit(cfg, chain_sim.verdict_matrix_csv(matrix), payload)
        return
    venues = [chain_sim.Venue(venue)] if venue else list(chain_sim.VERDICT_VENUES)
    reports = [chain_sim.run_scenario(scenario, v, seed=cfg.seed, schedule=cfg.schedule) for v in venues]
    _emit(cfg, _csv([(list(_REPORT_COLS), [_report_row(r) for r in reports])]), [r.to_dict() for r in reports])


_REPORT_COLS = ("scenario", "row", "venue", "attacker_profit", "disrupted_volume", "attack_cost_gwei", "miner_revenue", "baseline_miner_revenue", "verdict")


def _report_row(r: chain_sim.ScenarioReport) -> list:
    return [r.name, r.row, r.venue, r.attacker_profit, r.disrupted_volume, r.attack_cost_gwei, r.miner_revenue, r.baseline_miner_revenue, r.verdict.value]


def cmd_rollup(cfg: RunConfig) -> None:
    pairs = cfg.n or [0, 1, 10, 38, 76, 152]
    backend = cfg.backends[0] if len(cfg.backends) == 1 else pq.Variant.HEAP_DYNAMIC_ARRAY
    rows = rollup.cost_split_rows(pairs, backend)
    flat = {r.l1_rollup for r in rows}
    if len(flat) != 1:
        raise AuditFailure("L1 inbox cost varied with the number of pairs")
    payload = [
        {"n_pairs": r.n_pairs, "l1_direct": r.l1_direct, "l1_rollup": r.l1_rollup, "arbgas": r.arbgas, "savings": float(r.savings)}
        for r in rows
    ]
    _emit(cfg, rollup.cost_split_csv(rows), payload)


# ------------------------------------------------------------------------ parser


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value file; flags override it")
    common.add_argument("--schedule", type=Path, help="gas schedule file (key = value)")
    common.add_argument("--backend", action="append", help="queue variant (repeatable); default all")
    common.add_argument("--n", type=int, action="append", help="size parameter (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--out", type=Path)

    p = argparse.ArgumentParser(prog="callmarket", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("bench-pq", parents=[common], help="per-insert and drain costs of the five queues")
    sub.add_parser("bench-cleanup", parents=[common], help="clean vs leave for the two linked lists")
    sub.add_parser("bench-market", parents=[common], help="worst-case capacity per queue variant")
    sim = sub.add_parser("sim", parents=[common], help="front-running scenarios")
    sim.add_argument("scenario", nargs="?", help=f"one of {', '.join(chain_sim.KNOWN_SCENARIOS)} or 'all'")
    sim.add_argument("--venue", choices=[v.value for v in chain_sim.Venue])
    sim.add_argument("--scenario-file", type=Path)
    sub.add_parser("rollup", parents=[common], help="L1/L2 cost split for closing a market")
    return p


def _config(args: argparse.Namespace) -> RunConfig:
    file_values = read_flat_config(args.config) if args.config else {}

    def pick(name, default):
        value = getattr(args, name, None)
        if value is not None:
            return value
        return file_values.get(name, default)

    schedule_path = pick("schedule", None)
    schedule = GasSchedule.from_file(schedule_path) if schedule_path else DEFAULT_SCHEDULE
    backends = pick("backend", None)
    if isinstance(backends, str):
        backends = [b.strip() for b in backends.split(",") if b.strip()]
    n = pick("n", None)
    if isinstance(n, str):
        n = [int(x) for x in n.split(",") if x.strip()]
    out = pick("out", None)
    fmt = pick("format", "csv")
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    return RunConfig(
        schedule=schedule,
        backends=[pq.Variant(b) for b in backends] if backends else list(pq.Variant),
        n=list(n or []),
        seed=int(pick("seed", 0)),
        format=fmt,
        out=Path(out) if out else None,
    )


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "bench-pq":
            cmd_bench_pq(cfg)
        elif args.command == "bench-cleanup":
            cmd_bench_cleanup(cfg)
        elif args.command == "bench-market":
            cmd_bench_market(cfg)
        elif args.command == "sim":
            cmd_sim(cfg, args.scenario, args.venue, args.scenario_file)
        elif args.command == "rollup":
            cmd_rollup(cfg)
    except AuditFailure as exc:
        print(f"audit failed: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, chain_sim.ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
