"""Command-line front end: ``luckchain run|persistence|verify|dump-config``.

Exit codes: 0 success, 1 invalid chain or internal invariant violation,
2 bad input (config errors, unreadable files, bad arguments).
"""
import argparse
import csv
import logging
import os
import sys

from . import ledger, primitives, scenario, simnet, tee
from .errors import ConfigurationError, DecodeError, LuckchainError
from .luckstats import persistence_table
from .superblock import superchain_checker

log = logging.getLogger("luckchain")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
PERSISTENCE_COLUMNS = ["M", "m", "h", "trials", "p_hat", "ci", "rho", "bound", "s_star"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _fail(message, code):
    print(f"luckchain: {message}", file=sys.stderr)
    return code


def parse_h_list(text):
    """``"1,5,10"`` or ``"1..30"`` or a mix of both."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


# -- run -----------------------------------------------------------------------


def check_trace(trace, sc):
    """Internal invariants every completed run must satisfy."""
    problems = []
    c = trace.counters
    if sc.consensus in ("proof_of_luck", "superblock"):
        if c.get("delivered", 0) + c.get("dropped", 0) != c.get("fanout", 0):
            problems.append("message conservation violated")
        if trace.canonical.length > sc.horizon:
            problems.append("canonical chain exceeds horizon")
    return problems


def write_outputs(trace, sc, out_dir):
    paths = {
        "trace": sc.outputs.trace or os.path.join(out_dir, "trace.jsonl"),
        "summary": sc.outputs.summary or os.path.join(out_dir, "summary.csv"),
        "chains": sc.outputs.chains or os.path.join(out_dir, "chains"),
    }
    for key in ("trace", "summary"):
        parent = os.path.dirname(paths[key])
        if parent:
            os.makedirs(parent, exist_ok=True)
    os.makedirs(paths["chains"], exist_ok=True)
    trace.write_jsonl(paths["trace"])
    trace.write_summary(paths["summary"])
    kind = ledger.KIND_SUPERBLOCKS if sc.consensus == "superblock" else ledger.KIND_BLOCKS
    for pid, chain in sorted(trace.final_chains.items()):
        with open(os.path.join(paths["chains"], f"participant-{pid:03d}.chain"), "wb") as fh:
            fh.write(ledger.encode_chain(chain, kind))
    return paths


def cmd_run(args):
    try:
        sc = scenario.load(args.config)
    except OSError as exc:
        return _fail(f"cannot read {args.config}: {exc.strerror}", EXIT_USAGE)
    except ConfigurationError as exc:
        return _fail(f"{args.config}: {exc}", EXIT_USAGE)
    if args.dump_config:
        sys.stdout.write(scenario.dump(sc))
        return EXIT_OK
    try:
        trace = simnet.run(sc, record_events=True)
    except ConfigurationError as exc:
        return _fail(f"{args.config}: {exc}", EXIT_USAGE)
    except (LuckchainError, AssertionError) as exc:
        return _fail(f"internal invariant violation: {exc}", EXIT_FAIL)
    problems = check_trace(trace, sc)
    if problems:
        return _fail("internal invariant violation: " + "; ".join(problems), EXIT_FAIL)
    paths = write_outputs(trace, sc, args.out_dir)
    print(f"rounds={len(trace.rounds)} digest={trace.digest} summary={paths['summary']}")
    return EXIT_OK


# -- persistence -------------------------------------------------------------------


def cmd_persistence(args):
    try:
        hs = parse_h_list(args.h)
        if not hs:
            raise ConfigurationError("at least one h is required")
        if args.workers < 1:
            raise ConfigurationError("workers must be at least 1")
        rows = persistence_table(args.M, args.m, hs, args.trials, args.seed, args.workers)
    except ValueError as exc:
        return _fail(f"bad --h list: {exc}", EXIT_USAGE)
    except ConfigurationError as exc:
        return _fail(str(exc), EXIT_USAGE)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, PERSISTENCE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.row().items()})
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


# -- verify ------------------------------------------------------------------------


def _registry_for(args):
    """Rebuild the vendor registry (and super-block m) the chain is checked against."""
    m = args.m
    if args.config:
        sc = scenario.load(args.config)
        seed, count = sc.seed, sc.participants
        if m is None and sc.consensus == "superblock":
            m = sc.m
    elif args.seed is not None and args.participants is not None:
        seed, count = args.seed, args.participants
    else:
        raise ConfigurationError("verify needs --config, or both --seed and --participants")
    registry = tee.VendorRegistry()
    for i in range(count):
        tee.create_cpu(seed, i, registry)
    return registry, m


def verify_snapshot(data, registry, m=None):
    """Check snapshot bytes; returns ``(exit_code, message)``."""
    if not data:
        return EXIT_OK, "valid: empty chain"
    try:
        kind, chain = ledger.decode_chain(data)
    except DecodeError as exc:
        return EXIT_USAGE, f"corrupt snapshot: {exc}"
    check = superchain_checker(m) if kind == ledger.KIND_SUPERBLOCKS else ledger.check_block
    failure = ledger.diagnose(chain, registry, primitives.POL_MEASUREMENT, check)
    if failure is not None:
        index, name = failure
        return EXIT_FAIL, f"invalid: block {index} fails check '{name}'"
    return EXIT_OK, f"valid: {chain.length} blocks, luck {chain.luck!r}"


def cmd_verify(args):
    try:
        registry, m = _registry_for(args)
    except OSError as exc:
        return _fail(f"cannot read {args.config}: {exc.strerror}", EXIT_USAGE)
    except ConfigurationError as exc:
        return _fail(str(exc), EXIT_USAGE)
    try:
        with open(args.chain, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        return _fail(f"cannot read {args.chain}: {exc.strerror}", EXIT_USAGE)
    code, message = verify_snapshot(data, registry, m)
    if code == EXIT_USAGE:
        return _fail(message, code)
    print(message)
    return code


# -- dump-config ---------------------------------------------------------------------


def cmd_dump_config(args):
    try:
        sc = scenario.load(args.config) if args.config else scenario.Scenario().validate()
    except OSError as exc:
        return _fail(f"cannot read {args.config}: {exc.strerror}", EXIT_USAGE)
    except ConfigurationError as exc:
        return _fail(f"{args.config}: {exc}", EXIT_USAGE)
    sys.stdout.write(scenario.dump(sc))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="luckchain", description="Proof-of-luck consensus simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log protocol events")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("config")
    r.add_argument("--out-dir", default=".", help="where outputs go unless the config names them")
    r.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    r.set_defaults(fn=cmd_run)

    q = sub.add_parser("persistence", help="minority-fork persistence table")
    q.add_argument("--M", type=int, required=True)
    q.add_argument("--m", type=int, required=True)
    q.add_argument("--h", default="1", help="comma list and/or ranges, e.g. 1,5,10 or 1..30")
    q.add_argument("--trials", type=int, default=100_000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--workers", type=int, default=1)
    q.add_argument("--out")
    q.set_defaults(fn=cmd_persistence)

    v = sub.add_parser("verify", help="validate a .chain snapshot")
    v.add_argument("chain")
    v.add_argument("--config")
    v.add_argument("--seed", type=int)
    v.add_argument("--participants", type=int)
    v.add_argument("--m", type=int, help="super-block size (defaults to the config's)")
    v.set_defaults(fn=cmd_verify)

    d = sub.add_parser("dump-config", help="print the effective config, defaults included")
    d.add_argument("config", nargs="?")
    d.set_defaults(fn=cmd_dump_config)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
