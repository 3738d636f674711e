"""Command-line driver.

Exit status: 0 ok, 1 usage, 2 parse/validation, 3 infeasible, 4 timeout,
5 verification rejected.  Failures are reported as one JSON object on
stderr.
"""

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .automata import AutomatonError
from .bench import run_suite, write_rows
from .besteffort import BestEffortError
from .codegen import CodegenError, load_programs
from .compiler import CompileError, compile_files
from .frontend import ParseError, PolicyError, load_policy, normalize, parse_predicate, pretty
from .localization import LocalizationError
from .negotiator import (DelegationError, Negotiation, Scope, build_tree, delegate, read_trace,
                         verify_refinement, write_log)
from .predicates import UnsupportedPredicate
from .provision import DEFAULT_TIMEOUT, OBJECTIVES
from .simulator import (ReplayError, SimulationError, format_rate_value, read_demands, simulate,
                        write_results)
from .topology import (TopologyError, from_graphml, generate_topology, load_topology,
                       save_topology)
from .units import RateError, parse_rate

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_TIMEOUT, EXIT_REJECT = range(6)

INVALID = (PolicyError, TopologyError, LocalizationError, UnsupportedPredicate, AutomatonError,
           CodegenError, DelegationError, RateError, ReplayError, SimulationError)


class UsageError(Exception):
    pass


class InputError(Exception):
    """Malformed input that no library layer classified."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _diagnose(code, kind, message, **extra):
    doc = {"error": kind, "exit": code, "message": message, **extra}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def _emit(args, doc, text):
    if args.format == "json":
        print(json.dumps(doc, indent=2, sort_keys=True, default=str))
    else:
        print(text)


# ------------------------------------------------------------------ commands

def cmd_compile(args):
    result = compile_files(args.policy, args.topology, args.objective, args.output,
                           args.timeout_s, args.solver)
    report = result.report()
    _emit(args, report, result.text_report())
    if result.plan.unroutable or result.plan.empty:
        if not args.allow_unroutable:
            first = (result.plan.unroutable or [(result.plan.empty[0], None, None)])[0]
            return _diagnose(EXIT_INFEASIBLE, "unroutable",
                             f"statement {first[0]} has no compliant route"
                             + (f" from {first[1]} to {first[2]}" if first[1] else ""),
                             unroutable=report["unroutable"], empty=report["empty_paths"])
    return EXIT_OK


def cmd_verify(args):
    original = normalize(load_policy(args.original))
    refined = normalize(load_policy(args.refined))
    topo = placement = None
    if args.topology:
        topo, placement = load_topology(args.topology)
    verdict = verify_refinement(original, refined, topo, placement)
    lines = ["accept" if verdict.accepted else "reject"]
    for r in verdict.reasons:
        line = f"  {r.kind}: {r.message}"
        if r.counterexample is not None:
            line += f" (path: {' '.join(r.counterexample) or 'empty'})"
        lines.append(line)
    _emit(args, verdict.as_dict(), "\n".join(lines))
    return EXIT_OK if verdict.accepted else EXIT_REJECT


def cmd_delegate(args):
    parent = load_policy(args.policy)
    topo = placement = None
    if args.topology:
        topo, placement = load_topology(args.topology)
    pred = parse_predicate(args.predicate) if args.predicate else None
    locs = frozenset(x for x in args.locations.split(",") if x) if args.locations is not None \
        else None
    d = delegate(parent, Scope(pred, locs), topo, placement)
    text = pretty(d.policy)
    if args.output:
        Path(args.output).write_text(text + "\n")
    doc = {"policy": text, "unsatisfiable": d.unsatisfiable, "dropped": d.dropped}
    _emit(args, doc, text + "".join(f"\n# unsatisfiable: {s}" for s in d.unsatisfiable))
    return EXIT_OK


def cmd_simulate(args):
    topo, _ = load_topology(args.topology)
    policy = normalize(load_policy(args.policy))
    programs = load_programs(args.programs)
    demands = read_demands(args.demands)
    result = simulate(programs, topo, demands, policy, args.epoch, args.epochs)
    if args.output:
        write_results(result, args.output)
    doc = {"times": result.times,
           "rates": [{f: format_rate_value(r) for f, r in e.items()} for e in result.rates],
           "violations": [list(v) for v in result.violations]}
    lines = []
    for t, rates in zip(result.times, result.rates):
        lines.append(f"t={t}: " + ", ".join(f"{f}={format_rate_value(r)}" for f, r in rates.items()))
    lines += [f"violation at t={t}: {who}: {what}" for t, who, what in result.violations]
    _emit(args, doc, "\n".join(lines))
    return EXIT_OK


def cmd_negotiate(args):
    layout = json.loads(Path(args.tree).read_text())
    try:
        beta = Fraction(args.beta)
    except ValueError:
        raise UsageError(f"--beta must be a number, got {args.beta!r}") from None
    try:
        neg = Negotiation(build_tree(layout), parse_rate(args.alpha), beta)
        trace = read_trace(args.trace)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad negotiator input: {exc!r}") from None
    log = neg.run(trace)
    if args.output:
        write_log(log, args.output)
    doc = {"log": [[t, f, format_rate_value(a)] for t, f, a in log],
           "messages": len(neg.messages)}
    _emit(args, doc, "\n".join(f"{t}\t{f}\t{format_rate_value(a)}" for t, f, a in log))
    return EXIT_OK


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def cmd_bench(args):
    params = {"k": _int_list(args.k), "depth": _int_list(args.depth),
              "fanout": _int_list(args.fanout), "dataset": args.dataset}
    rows = run_suite(args.suite, params, guaranteed=args.guaranteed, timeout=args.timeout_s)
    if args.output:
        with open(args.output, "w", newline="") as fh:
            write_rows(rows, fh)
    write_rows(rows, sys.stdout)
    return EXIT_OK


def cmd_convert(args):
    topo = from_graphml(args.graphml, parse_rate(args.capacity))
    save_topology(args.output, topo)
    print(f"{args.output}: {len(topo.switches)} switches, {len(topo.hosts)} hosts")
    return EXIT_OK


def cmd_generate(args):
    params = {}
    for item in args.param:
        key, _, value = item.partition("=")
        if not value:
            raise UsageError(f"parameter must look like name=value, got {item!r}")
        params[key.replace("-", "_")] = int(value)
    topo = generate_topology(args.kind, **params)
    save_topology(args.output, topo)
    print(f"{args.output}: {len(topo.switches)} switches, {len(topo.hosts)} hosts")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser():
    p = _Parser(prog="netprov", description="Compile, verify and simulate provisioning policies.")
    p.add_argument("--version", action="version", version=f"netprov {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--format", choices=("text", "json"), default="text")

    c = sub.add_parser("compile", help="compile a policy for a topology")
    c.add_argument("policy")
    c.add_argument("topology")
    c.add_argument("-o", "--output", help="directory for configuration files")
    c.add_argument("--objective", choices=OBJECTIVES, default="shortest")
    c.add_argument("--timeout-s", type=float, default=DEFAULT_TIMEOUT)
    c.add_argument("--solver", choices=("bnb", "milp"), default="bnb")
    c.add_argument("--allow-unroutable", action="store_true",
                   help="succeed even if some traffic has no compliant route")
    common(c)
    c.set_defaults(func=cmd_compile)

    v = sub.add_parser("verify", help="check that a refined policy implies the original")
    v.add_argument("original")
    v.add_argument("refined")
    v.add_argument("--topology", help="expand functions to their placements")
    common(v)
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("delegate", help="project a policy onto part of the network")
    d.add_argument("policy")
    d.add_argument("--predicate", help="traffic handed over, e.g. 'ip.src = 10.0.0.1'")
    d.add_argument("--locations", help="comma-separated locations paths must stay within")
    d.add_argument("--topology")
    d.add_argument("-o", "--output")
    common(d)
    d.set_defaults(func=cmd_delegate)

    s = sub.add_parser("simulate", help="replay demands through compiled configurations")
    s.add_argument("programs", help="directory written by 'compile -o'")
    s.add_argument("topology")
    s.add_argument("policy")
    s.add_argument("demands", help="CSV: flow,statement,src,dst,rate,start,stop")
    s.add_argument("-o", "--output", help="results CSV (time,flow,rate)")
    s.add_argument("--epoch", type=float, default=1.0)
    s.add_argument("--epochs", type=int)
    common(s)
    s.set_defaults(func=cmd_simulate)

    n = sub.add_parser("negotiate", help="run a negotiator tree over a demand trace")
    n.add_argument("tree", help="JSON tree: {id, scheme, capacity, flows, children}")
    n.add_argument("trace", help="CSV: time,flow,demand")
    n.add_argument("-o", "--output", help="allocation log CSV (time,flow,allocation)")
    n.add_argument("--alpha", default="1MB/s")
    n.add_argument("--beta", default="0.5")
    common(n)
    n.set_defaults(func=cmd_negotiate)

    b = sub.add_parser("bench", help="time all-pairs compiles")
    b.add_argument("suite", choices=("zoo", "fat-tree", "balanced-tree"))
    b.add_argument("--k", default="4", help="fat-tree arities, comma-separated")
    b.add_argument("--depth", default="3")
    b.add_argument("--fanout", default="3")
    b.add_argument("--dataset", help="directory of GraphML files (zoo suite)")
    b.add_argument("--guaranteed", type=float, default=0.05,
                   help="fraction of traffic classes with a guarantee")
    b.add_argument("--timeout-s", type=float, default=DEFAULT_TIMEOUT)
    b.add_argument("-o", "--output")
    b.set_defaults(func=cmd_bench)

    cv = sub.add_parser("convert", help="GraphML to topology JSON (one host per switch)")
    cv.add_argument("graphml")
    cv.add_argument("-o", "--output", required=True)
    cv.add_argument("--capacity", default="1GB/s")
    cv.set_defaults(func=cmd_convert)

    g = sub.add_parser("generate", help="write a generated topology")
    g.add_argument("kind", choices=("fat-tree", "balanced-tree", "linear"))
    g.add_argument("param", nargs="*", help="name=value, e.g. k=4")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_generate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a command is required")
        return args.func(args)
    except UsageError as exc:
        return _diagnose(EXIT_USAGE, "usage", str(exc))
    except ParseError as exc:
        return _diagnose(EXIT_INVALID, "parse", str(exc), line=exc.line, column=exc.col)
    except CompileError as exc:
        code = EXIT_TIMEOUT if exc.kind == "timeout" else EXIT_INFEASIBLE
        return _diagnose(code, exc.kind, str(exc), stage=exc.stage)
    except BestEffortError as exc:
        return _diagnose(EXIT_INFEASIBLE, "unroutable", str(exc))
    except INVALID + (InputError,) as exc:
        return _diagnose(EXIT_INVALID, "invalid", str(exc), type=type(exc).__name__)
    except json.JSONDecodeError as exc:
        return _diagnose(EXIT_INVALID, "parse", str(exc), line=exc.lineno, column=exc.colno)
    except (OSError, UnicodeDecodeError) as exc:
        return _diagnose(EXIT_USAGE, "io", str(exc))
    except Exception as exc:  # noqa: BLE001 - last resort, keep stderr machine-readable
        return _diagnose(EXIT_USAGE, "internal", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
