"""The compile pipeline: parse, normalize, localize, route, lower, emit."""

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .besteffort import build_sink_trees
from .codegen import emit, lower, render
from .frontend import normalize, parse
from .localization import localize
from .provision import DEFAULT_TIMEOUT, ProvisionError, provision_guaranteed
from .topology import load_topology
from .units import format_rate


class CompileError(Exception):
    """A pipeline failure; ``kind`` selects the exit status."""

    def __init__(self, kind, message, stage, detail=None):
        super().__init__(message)
        self.kind = kind  # "infeasible" | "timeout"
        self.stage = stage
        self.detail = detail or {}


def session_hash(*parts):
    """Digest of all compile inputs plus the tool version."""
    h = hashlib.sha256()
    for p in (__version__,) + parts:
        data = p if isinstance(p, bytes) else str(p).encode()
        h.update(len(data).to_bytes(8, "big"))
        h.update(data)
    return h.hexdigest()


@dataclass
class CompileResult:
    policy: object
    topology: object
    placement: object
    localized: object
    solution: object
    plan: object
    programs: object
    timings: dict = field(default_factory=dict)
    session: Optional[str] = None

    def files(self):
        return render(self.programs)

    def report(self):
        caps = self.localized.caps()
        guarantees = self.localized.guarantees()
        sol = self.solution
        stmts = []
        for st in self.policy.statements:
            entry = {"id": st.id, "kind": "guaranteed" if st.id in sol.paths else "best-effort"}
            if st.id in guarantees:
                entry["guarantee"] = guarantees[st.id]
            if st.id in caps:
                entry["cap"] = caps[st.id]
            if st.id in sol.paths:
                entry["path"] = list(sol.paths[st.id])
                entry["functions"] = [f for f in sol.functions[st.id]]
            stmts.append(entry)
        return {
            "session": self.session,
            "status": sol.status,
            "objective": sol.objective,
            "objective_value": None if sol.value is None else str(sol.value),
            "statements": stmts,
            "reservations": {f"{u}-{v}": r for (u, v), r in sorted(sol.reservations.items())},
            "sink_trees": len(self.plan.trees),
            "unroutable": [list(t) for t in self.plan.unroutable],
            "empty_paths": list(self.plan.empty),
            "tags": len(self.programs.tags),
            "rule_counts": self.programs.rule_counts(),
            "manifest": [list(e) for e in self.programs.manifest],
            "solver": {k: sol.stats[k] for k in ("nodes", "lps") if k in sol.stats},
            "timings_ms": {k: round(v * 1000, 3) for k, v in self.timings.items()},
        }

    def text_report(self):
        r = self.report()
        lines = [f"session {r['session']}", f"status: {r['status']}  objective: {r['objective']}"
                 f" = {r['objective_value']}"]
        for st in r["statements"]:
            bits = [st["id"], st["kind"]]
            if "guarantee" in st:
                bits.append(f"min {format_rate(st['guarantee'])}")
            if "cap" in st:
                bits.append(f"max {format_rate(st['cap'])}")
            if "path" in st:
                bits.append(" ".join(st["path"]))
            lines.append("  " + "  ".join(bits))
        for link, rate in r["reservations"].items():
            lines.append(f"  reserve {link}: {format_rate(rate)}")
        for sid, s, d in r["unroutable"]:
            lines.append(f"  unroutable: {sid} from {s} to {d}")
        lines.append("  rules: " + ", ".join(f"{d}={n}" for d, n in sorted(r["rule_counts"].items())))
        lines.append("  time (ms): " + ", ".join(f"{k}={v}" for k, v in r["timings_ms"].items()))
        return "\n".join(lines)


def compile_policy(policy, topology, placement=None, objective="shortest",
                   timeout=DEFAULT_TIMEOUT, solver="bnb", scheme="equal", weights=None,
                   session=None):
    """Run the pipeline on an already parsed policy."""
    timings = {}
    t = time.monotonic()

    def lap(name):
        nonlocal t
        now = time.monotonic()
        timings[name] = now - t
        t = now

    policy = normalize(policy)
    lap("normalize")
    localized = localize(policy.formula, scheme, weights, known_ids=set(policy.ids))
    lap("localize")
    try:
        solution = provision_guaranteed(policy, topology, placement, localized.guarantees(),
                                        objective, timeout, solver)
    except ProvisionError as exc:
        raise CompileError("infeasible", str(exc), "provision") from None
    timings["model_build"] = solution.stats.get("build_s", 0.0)
    timings["model_solve"] = solution.stats.get("solve_s", 0.0)
    t = time.monotonic()
    if solution.status == "infeasible":
        raise CompileError("infeasible", "guarantees cannot be met within link capacities",
                           "provision")
    if not solution.feasible:
        raise CompileError("timeout", f"no feasible routing found within {timeout} s",
                           "provision")
    plan = build_sink_trees(policy, topology, placement, guaranteed=set(solution.paths))
    lap("best_effort")
    programs = lower(policy, topology, placement, solution, plan, localized)
    lap("codegen")
    return CompileResult(policy, topology, placement, localized, solution, plan, programs,
                         timings, session)


def compile_files(policy_path, topology_path, objective="shortest", outdir=None,
                  timeout=DEFAULT_TIMEOUT, solver="bnb"):
    """Compile from files; emits configuration files when ``outdir`` is set."""
    policy_bytes = Path(policy_path).read_bytes()
    topo_bytes = Path(topology_path).read_bytes()
    session = session_hash(policy_bytes, topo_bytes, objective, solver)
    t = time.monotonic()
    policy = parse(policy_bytes.decode("utf-8"))
    parse_s = time.monotonic() - t
    topology, placement = load_topology(topology_path)
    result = compile_policy(policy, topology, placement, objective, timeout, solver,
                            session=session)
    result.timings = {"parse": parse_s, **result.timings}
    if outdir is not None:
        t = time.monotonic()
        emit(result.programs, outdir)
        result.timings["emit"] = time.monotonic() - t
    return result
