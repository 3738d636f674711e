"""Compile-time benchmarks for all-pairs connectivity policies."""

import csv
import random
import time
from pathlib import Path

from .compiler import compile_policy
from .syntax import Match, Min, PAnd, Policy, Statement, Term, any_path, conjoin_formulas
from .topology import TopologyError, from_graphml, generate_topology

COLUMNS = ("topology", "traffic_classes", "hosts", "switches",
           "lp_construction_ms", "lp_solution_ms", "rateless_solution_ms")


def all_pairs_policy(topology, guaranteed=0.0, rate=10**6, seed=0):
    """One statement per ordered host pair; a ``guaranteed`` fraction of them
    (chosen by ``seed``) reserve ``rate`` bytes/s."""
    stmts = []
    for s in topology.hosts:
        for d in topology.hosts:
            if s != d:
                pred = PAnd(Match("eth.src", topology.node(s).mac),
                            Match("eth.dst", topology.node(d).mac))
                stmts.append(Statement(f"p{len(stmts) + 1}", pred, any_path()))
    k = round(len(stmts) * guaranteed)
    picked = sorted(random.Random(seed).sample(range(len(stmts)), k))
    formula = conjoin_formulas(Min(Term((stmts[i].id,)), rate) for i in picked)
    return Policy(tuple(stmts), formula)


def bench_topology(name, topology, guaranteed=0.05, rate=10**6, timeout=60.0, seed=0):
    policy = all_pairs_policy(topology, guaranteed, rate, seed)
    t = time.monotonic()
    result = compile_policy(policy, topology, None, "shortest", timeout)
    total = time.monotonic() - t
    tm = result.timings
    return {
        "topology": name,
        "traffic_classes": len(policy.statements),
        "hosts": len(topology.hosts),
        "switches": len(topology.switches) + len(topology.middleboxes),
        "lp_construction_ms": round(tm["model_build"] * 1000, 3),
        "lp_solution_ms": round(tm["model_solve"] * 1000, 3),
        "rateless_solution_ms": round(tm["best_effort"] * 1000, 3),
        "_total_s": total,
        "_result": result,
    }


def suite_topologies(suite, params):
    """``(name, topology)`` pairs for a benchmark suite."""
    if suite == "fat-tree":
        return [(f"fat-tree-k{k}", generate_topology("fat-tree", k=k)) for k in params.get("k", [4])]
    if suite == "balanced-tree":
        return [(f"balanced-tree-d{d}-f{f}", generate_topology("balanced-tree", depth=d, fanout=f))
                for d in params.get("depth", [3]) for f in params.get("fanout", [3])]
    if suite == "zoo":
        dataset = params.get("dataset")
        if not dataset or not Path(dataset).is_dir():
            raise TopologyError(f"zoo dataset directory not found: {dataset}")
        files = sorted(Path(dataset).glob("*.graphml"))
        return [(p.stem, from_graphml(p)) for p in files]
    raise TopologyError(f"unknown benchmark suite {suite!r}")


def run_suite(suite, params, out=None, guaranteed=0.05, timeout=60.0):
    rows = [bench_topology(name, topo, guaranteed, timeout=timeout)
            for name, topo in suite_topologies(suite, params)]
    if out is not None:
        write_rows(rows, out)
    return rows


def write_rows(rows, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([r[c] for c in COLUMNS])
