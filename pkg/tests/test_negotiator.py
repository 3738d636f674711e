import itertools
import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from netprov import predicates as preds
from netprov.compiler import compile_files
from netprov.frontend import load_policy, parse, parse_predicate
from netprov.negotiator import (DelegationError, Negotiation, Scope, build_tree, delegate,
                                read_trace, restrict, step_aimd, step_mmfs, verify_refinement,
                                write_log)
from netprov.syntax import FIELD_ORDER, format_policy
from netprov.topology import FunctionPlacement
from oracles import aimd_round, max_min_fair

MB = 10**6


# ------------------------------------------------------------------ verification

def test_three_way_refinement_accepted(data_dir):
    v = verify_refinement(load_policy(data_dir / "pair_cap.pol"),
                          load_policy(data_dir / "pair_cap_refined.pol"))
    assert v.accepted, v.as_dict()


def test_caps_summing_past_the_original_rejected(data_dir):
    refined = (data_dir / "pair_cap_refined.pol").read_text().replace("max(x, 50MB/s)",
                                                                       "max(x, 80MB/s)")
    v = verify_refinement(load_policy(data_dir / "pair_cap.pol"), parse(refined))
    assert v.kinds == ["bandwidth"]
    assert "130000000" in v.reasons[0].message


def test_widened_path_rejected_with_log_free_counterexample():
    orig = parse("[x : tcp.dst = 80 -> .* log .*]")
    wide = parse("[x : tcp.dst = 80 -> .*]")
    v = verify_refinement(orig, wide)
    assert v.kinds == ["paths"]
    cex = v.reasons[0].counterexample
    assert cex and "log" not in cex


def test_uncovered_traffic_rejected(data_dir):
    refined = (data_dir / "pair_cap_refined.pol").read_text().replace(
        "!(tcp.dst = 22 or tcp.dst = 80)", "tcp.dst = 443")
    v = verify_refinement(load_policy(data_dir / "pair_cap.pol"), parse(refined))
    assert v.kinds == ["partition"]
    w = v.reasons[0].witness
    assert w is not None and w.get("tcp.dst") not in (22, 80, 443)


def test_overlapping_refinement_rejected():
    orig = parse("[x : tcp.dst = 80 -> .*]")
    ref = parse("[a : tcp.dst = 80 -> .*; b : tcp.dst = 80 and ip.proto = 6 -> .*]")
    assert "partition" in verify_refinement(orig, ref).kinds


def test_guarantee_must_be_kept():
    orig = parse("[x : tcp.dst = 80 -> .*], min(x, 50MB/s)")
    split = "[a : tcp.dst = 80 and ip.src = 10.0.0.1 -> .*; b : tcp.dst = 80 and !(ip.src = 10.0.0.1) -> .*]"
    assert verify_refinement(orig, parse(split + ", min(a, 30MB/s) and min(b, 20MB/s)")).accepted
    v = verify_refinement(orig, parse(split + ", min(a, 30MB/s) and min(b, 10MB/s)"))
    assert v.kinds == ["bandwidth"]


def test_paths_checked_against_placements(middlebox):
    topo, placement = middlebox
    orig = parse("[z : tcp.dst = 80 -> .* nat .*]")
    via_m1 = parse("[z : tcp.dst = 80 -> .* m1 .*]")
    # nat only runs at m1, so with placements the two languages coincide
    assert verify_refinement(orig, via_m1, topo, placement).accepted
    assert verify_refinement(orig, via_m1).kinds == ["paths"]
    assert verify_refinement(orig, parse("[z : tcp.dst = 80 -> .* s2 .*]"), topo,
                             placement).kinds == ["paths"]
    assert verify_refinement(orig, parse("[z : tcp.dst = 80 -> .* dpi .* nat .*]"), topo,
                             placement).accepted


POLICIES = [
    "[x : tcp.dst = 80 -> .*], max(x, 100MB/s)",
    "[x : tcp.dst = 80 -> .* log .*; y : tcp.dst = 22 -> .*], max(x + y, 10MB/s) and min(y, 1MB/s)",
]


@pytest.mark.parametrize("text", POLICIES)
def test_policy_refines_itself(text, data_dir):
    p = parse(text)
    assert verify_refinement(p, p).accepted
    for name in ("ftp_http.pol", "pair_cap_refined.pol", "two_guarantees.pol"):
        q = load_policy(data_dir / name)
        assert verify_refinement(q, q).accepted


# Refinement chains: each step splits statements on ip.src, may tighten a
# path and re-divides each cap between the halves (sometimes too generously).
PATHS = [".*", ".* log .*", ".* dpi .*", ".* log .* dpi .*", "s1 .*"]
TIGHTER = {".*": PATHS, ".* log .*": [".* log .*", ".* log .* dpi .*"],
           ".* dpi .*": [".* dpi .*", ".* log .* dpi .*"],
           ".* log .* dpi .*": [".* log .* dpi .*"], "s1 .*": ["s1 .*"]}


def _render(stmts):
    body = "; ".join(f"{sid} : {pred} -> {path}" for sid, pred, path, _ in stmts)
    caps = " and ".join(f"max({sid}, {cap})" for sid, _, _, cap in stmts)
    return f"[{body}], {caps}"


def _refine(rng, stmts, level):
    out = []
    for sid, pred, path, cap in stmts:
        addr = f"10.0.0.{level}"
        path_a = rng.choice(TIGHTER[path]) if rng.random() < 0.8 else rng.choice(PATHS)
        path_b = rng.choice(TIGHTER[path]) if rng.random() < 0.8 else rng.choice(PATHS)
        share = rng.randint(0, cap)
        other = cap - share + (rng.randint(1, 5) if rng.random() < 0.2 else 0)
        out.append((f"{sid}a", f"({pred}) and ip.src = {addr}", path_a, share))
        out.append((f"{sid}b", f"({pred}) and !(ip.src = {addr})", path_b, other))
    return out


@given(st.randoms(use_true_random=False))
def test_refinement_is_transitive(rng):
    p0 = [("x", "tcp.dst = 80", rng.choice(PATHS), 100), ("y", "tcp.dst = 22", ".*", 50)]
    p1 = _refine(rng, p0, 1)
    p2 = _refine(rng, p1, 2)
    a, b, c = (parse(_render(s)) for s in (p0, p1, p2))
    if verify_refinement(a, b).accepted and verify_refinement(b, c).accepted:
        assert verify_refinement(a, c).accepted


def test_accepted_chains_compose():
    chains = 0
    for seed in range(120):
        rng = random.Random(seed)
        p0 = [("x", "tcp.dst = 80", rng.choice(PATHS), 100), ("y", "tcp.dst = 22", ".*", 50)]
        p1 = _refine(rng, p0, 1)
        p2 = _refine(rng, p1, 2)
        a, b, c = (parse(_render(s)) for s in (p0, p1, p2))
        if verify_refinement(a, b).accepted and verify_refinement(b, c).accepted:
            chains += 1
            assert verify_refinement(a, c).accepted
    assert chains >= 5


def test_refinement_chains_exercise_both_outcomes():
    outcomes = set()
    for seed in range(40):
        rng = random.Random(seed)
        p0 = [("x", "tcp.dst = 80", ".*", 100)]
        p1 = _refine(rng, p0, 1)
        outcomes.add(verify_refinement(parse(_render(p0)), parse(_render(p1))).accepted)
    assert outcomes == {True, False}


# ------------------------------------------------------------------ delegation

def _packets():
    for src, dst, port in itertools.product([1, 2, 3], [1, 2], [20, 21, 80, 99]):
        pkt = {f: 0 for f in FIELD_ORDER}
        pkt.update({"eth.src": src, "eth.dst": dst, "ip.proto": 6, "tcp.dst": port,
                    "tcp.src": 0, "udp.src": None, "udp.dst": None})
        yield pkt


def test_delegating_everything_is_identity(data_dir, middlebox):
    topo, placement = middlebox
    parent = load_policy(data_dir / "ftp_http.pol")
    for scope in (Scope(), Scope(locations=frozenset(topo.node_ids))):
        d = delegate(parent, scope, topo, placement)
        assert format_policy(d.policy) == format_policy(parent)
        assert not d.unsatisfiable and not d.dropped


def test_traffic_scope_intersects_predicates(data_dir):
    parent = load_policy(data_dir / "ftp_http.pol")
    scope = parse_predicate("tcp.dst = 20 or tcp.dst = 80")
    d = delegate(parent, Scope(predicate=scope))
    assert d.dropped == ["y"]
    kids = {s.id: s.predicate for s in d.policy.statements}
    for s in parent.statements:
        for pkt in _packets():
            inside = preds.evaluate(s.predicate, pkt) and preds.evaluate(scope, pkt)
            got = s.id in kids and preds.evaluate(kids[s.id], pkt)
            assert inside == got
    assert format_policy(d.policy).count("max(x, 50MB/s)") == 1


def test_sender_scope_adds_a_source_conjunct():
    parent = parse("[x : tcp.dst = 80 -> .*]")
    d = delegate(parent, Scope(predicate=parse_predicate("eth.src = 00:00:00:00:00:01")))
    text = format_policy(d.policy)
    assert "eth.src = 00:00:00:00:00:01" in text and "tcp.dst = 80" in text
    # a scope the statement already implies adds nothing
    again = restrict(d.policy, parse_predicate("tcp.dst = 80"))
    assert format_policy(again) == text


def test_location_scope_without_the_only_dpi_box(middlebox, data_dir):
    topo, _ = middlebox
    placement = FunctionPlacement({"dpi": frozenset({"m1"}), "nat": frozenset({"m1"})})
    parent = load_policy(data_dir / "ftp_http.pol")
    scope = Scope(locations=frozenset(topo.node_ids) - {"m1"})
    d = delegate(parent, scope, topo, placement)
    assert d.unsatisfiable == ["x", "z"]


def test_delegation_refines_the_restricted_parent(middlebox, data_dir):
    topo, placement = middlebox
    parent = load_policy(data_dir / "ftp_http.pol")
    scope = Scope(parse_predicate("tcp.dst = 80 or tcp.dst = 21"),
                  frozenset({"h1", "h2", "s1", "s2", "m1"}))
    d = delegate(parent, scope, topo, placement)
    assert verify_refinement(restrict(parent, scope.predicate), d.policy, topo, placement).accepted


def test_empty_scope_rejected(middlebox):
    topo, placement = middlebox
    p = parse("[x : tcp.dst = 80 -> .*]")
    with pytest.raises(DelegationError):
        delegate(p, Scope(locations=frozenset()), topo, placement)
    with pytest.raises(DelegationError):
        delegate(p, Scope(predicate=parse_predicate("tcp.dst = 1 and tcp.dst = 2")))
    with pytest.raises(DelegationError):
        delegate(p, Scope(locations=frozenset({"nowhere"})), topo, placement)


# ------------------------------------------------------------------ MMFS / AIMD

def test_mmfs_examples():
    assert step_mmfs({"a": 10, "b": 100}, 100) == {"a": 10, "b": 90}
    assert step_mmfs({"a": 40, "b": 40, "c": 40}, 90) == {"a": 30, "b": 30, "c": 30}
    assert step_mmfs({"a": 20, "b": 20}, 100) == {"a": 20, "b": 20}
    assert step_mmfs({"a": 20, "b": 20}, 100, spread_surplus=True) == {"a": 50, "b": 50}
    with pytest.raises(ValueError):
        step_mmfs({"a": -1}, 10)


@given(st.dictionaries(st.text("abcdefgh", min_size=1, max_size=2), st.integers(0, 10**4)),
       st.integers(0, 10**4))
def test_mmfs_is_water_filling(demands, cap):
    got = step_mmfs(demands, cap)
    assert got == max_min_fair(demands, cap)
    assert sum(got.values()) <= cap


def test_aimd_examples():
    assert step_aimd({"a": 10}, {"a": 50}, 100, alpha=5) == {"a": 15}
    assert step_aimd({"a": 50, "b": 50}, {"a": 80, "b": 80}, 100, alpha=5) == {"a": 25, "b": 25}
    # a flow that wants less shrinks to its demand and is not cut
    assert step_aimd({"a": 50, "b": 50}, {"a": 80, "b": 20}, 100, alpha=5) == {"a": 55, "b": 20}
    with pytest.raises(ValueError):
        step_aimd({}, {}, 1, beta=1)


@given(st.lists(st.tuples(st.integers(0, 100), st.integers(0, 200)), min_size=1, max_size=5),
       st.integers(1, 20), st.sampled_from([Fraction(1, 2), Fraction(3, 4), Fraction(1, 3)]))
def test_aimd_matches_scalar_recurrence(pairs, alpha, beta):
    cap = 300
    alloc = {f"f{i}": Fraction(a) for i, (a, _) in enumerate(pairs)}
    if sum(alloc.values()) > cap:
        return
    demand = {f"f{i}": d for i, (_, d) in enumerate(pairs)}
    assert step_aimd(alloc, demand, cap, alpha, beta) == aimd_round(alloc, demand, cap, alpha, beta)


@given(st.integers(0, 2**32))
def test_aimd_never_exceeds_the_cap(seed):
    rng = random.Random(seed)
    cap = rng.randint(1, 500)
    alloc = {}
    for _ in range(200):
        demand = {f: rng.randint(0, 400) for f in "abcd" if rng.random() < 0.8}
        alloc = step_aimd(alloc, demand, cap, alpha=rng.randint(1, 50))
        assert sum(alloc.values()) <= cap


def test_aimd_recovers_from_an_oversubscribed_state():
    alloc = step_aimd({"a": 300, "b": 300}, {"a": 300, "b": 300}, 100, alpha=1)
    assert sum(alloc.values()) <= 100


def test_two_competing_flows_oscillate_around_fair_share():
    cap, alpha, beta = 100, 2, Fraction(1, 2)
    alloc = {"a": Fraction(0), "b": Fraction(40)}
    ref = dict(alloc)
    history = []
    for _ in range(200):
        alloc = step_aimd(alloc, {"a": 10**6, "b": 10**6}, cap, alpha, beta)
        ref = aimd_round(ref, {"a": 10**6, "b": 10**6}, cap, alpha, beta)
        assert alloc == ref
        history.append(alloc)
    tail = history[100:]
    # the gap halves on every cut, and each flow swings between a cut and the cap
    assert all(abs(h["a"] - h["b"]) < 1 for h in tail)
    for h in tail:
        for f in "ab":
            assert beta * (cap / 2 - alpha) - 1 <= h[f] <= cap / 2
    mean = sum(h["a"] for h in tail) / len(tail)
    assert beta * cap / 2 <= mean <= cap / 2


# ------------------------------------------------------------------ negotiation

def _tree(data_dir):
    import json
    return build_tree(json.loads((data_dir / "negotiators.json").read_text()))


def test_tree_run_allocations_and_messages(data_dir, tmp_path):
    neg = Negotiation(_tree(data_dir), alpha=5)
    log = neg.run(read_trace(data_dir / "negotiator_trace.csv"))
    by = {(t, f): a for t, f, a in log}
    assert [by[(0, f)] for f in "abc"] == [5, 5, 50]
    assert [by[(1, f)] for f in "abc"] == [10, 10, 10]
    assert [by[(2, f)] for f in "abc"] == [15, 15, 10]
    kinds = {m.kind for m in neg.messages}
    assert kinds == {"propose", "verify", "grant", "deny"}
    assert all(m.value is True for m in neg.messages if m.kind == "verify")
    out = tmp_path / "log.csv"
    write_log(log, out)
    assert out.read_text().splitlines()[:2] == ["time,flow,allocation", "0,a,5"]


@given(st.lists(st.tuples(st.sampled_from("abc"), st.integers(0, 200)), max_size=30),
       st.integers(1, 30))
def test_children_stay_within_their_parent(steps, alpha):
    import json
    from pathlib import Path
    layout = json.loads((Path(__file__).parent.parent / "data" / "negotiators.json").read_text())
    root = build_tree(layout)
    neg = Negotiation(root, alpha=alpha)
    for t, (f, d) in enumerate(steps):
        neg.tick(t, {f: d})
        assert sum(root.allocations.values()) <= root.capacity
        for child in root.children:
            assert sum(child.allocations.values()) <= root.allocations[child.id]


def test_submitted_refinements_are_checked(data_dir):
    root = _tree(data_dir)
    left = root.children[0]
    left.policy = load_policy(data_dir / "pair_cap.pol")
    neg = Negotiation(root)
    good = load_policy(data_dir / "pair_cap_refined.pol")
    bad = parse((data_dir / "pair_cap_refined.pol").read_text().replace("50MB/s", "80MB/s"))
    assert not neg.submit(left, bad).accepted
    assert left.policy is not bad
    assert neg.submit(left, good).accepted and left.policy is good
    assert [m.kind for m in neg.messages] == ["propose", "verify", "deny",
                                              "propose", "verify", "grant"]


def test_adaptation_leaves_the_compile_session_alone(data_dir, tmp_path):
    before = compile_files(data_dir / "ftp_http.pol", data_dir / "middlebox_net.json",
                           outdir=tmp_path / "a")
    root = _tree(data_dir)
    root.children[0].policy = before.policy
    neg = Negotiation(root, alpha=5)
    neg.run(read_trace(data_dir / "negotiator_trace.csv"))
    after = compile_files(data_dir / "ftp_http.pol", data_dir / "middlebox_net.json",
                          outdir=tmp_path / "b")
    assert before.session == after.session
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    # a path change is a different compile input
    changed = tmp_path / "changed.pol"
    changed.write_text((data_dir / "ftp_http.pol").read_text().replace("-> .*;", "-> .* dpi .*;"))
    other = compile_files(changed, data_dir / "middlebox_net.json")
    assert other.session != before.session


def test_bad_tree_specs():
    with pytest.raises(ValueError):
        build_tree({"id": "r", "scheme": "fifo", "capacity": 1})
    with pytest.raises(ValueError):
        Negotiation(build_tree({"id": "r"}))
