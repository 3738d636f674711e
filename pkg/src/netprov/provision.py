"""Path selection with bandwidth guarantees as a mixed-integer program.

Each guaranteed statement contributes its product graph; a binary variable
per product edge selects one source-to-sink path per statement.  Link
reservations, their maxima and the chosen objective are continuous.  The
default solver is a branch-and-bound over LP relaxations.
"""

import heapq
import itertools
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .logical import build_logical_graph, endpoint_hosts, project_path
from .topology import link_key
from .units import format_rate

OBJECTIVES = ("shortest", "minmax-ratio", "minmax-reserved")
DEFAULT_TIMEOUT = 60.0

_INT_TOL = 1e-6
_BOUND_TOL = 1e-9


class ProvisionError(Exception):
    pass


class UnsatisfiableStatement(ProvisionError):
    def __init__(self, sid):
        super().__init__(f"statement {sid}: no path satisfies its path expression")
        self.sid = sid


class ProvisionModel:
    """Variables and constraints of the path-selection program.

    Column layout: all edge variables (graph by graph, edge by edge), then one
    reservation fraction per physical link, then ``r_max`` and ``R_max``.
    Bandwidth coefficients are divided by the largest link capacity to keep
    the LP well scaled; exact values are recomputed from extracted paths.
    """

    def __init__(self, graphs, guarantees, topology, objective="shortest"):
        if objective not in OBJECTIVES:
            raise ProvisionError(f"unknown objective {objective!r}")
        self.graphs = list(graphs)
        self.guarantees = [int(g) for g in guarantees]
        self.topology = topology
        self.objective = objective
        self.links = [ln.key for ln in topology.links]
        self.capacity = {ln.key: ln.capacity for ln in topology.links}
        self.scale = max(self.capacity.values(), default=1)
        for g in self.graphs:
            if not g.is_satisfiable():
                raise UnsatisfiableStatement(g.sid)
        self.offsets = list(itertools.accumulate([0] + [len(g.edges) for g in self.graphs]))
        self.n_x = self.offsets[-1]
        self.link_col = {ln: self.n_x + j for j, ln in enumerate(self.links)}
        self.rmax_col = self.n_x + len(self.links)
        self.Rmax_col = self.rmax_col + 1
        self.n_vars = self.Rmax_col + 1
        self._build()

    @property
    def empty(self):
        return not self.graphs

    @property
    def n_flow_rows(self):
        return sum(g.n_vertices for g in self.graphs)

    @property
    def n_link_rows(self):
        return len(self.links)

    def _build(self):
        rows, cols, vals, rhs = [], [], [], []
        r = 0
        # flow conservation: out - in = +1 at the source, -1 at the sink
        for gi, g in enumerate(self.graphs):
            base = self.offsets[gi]
            for k, e in enumerate(g.edges):
                rows += [r + e.tail, r + e.head]
                cols += [base + k, base + k]
                vals += [1.0, -1.0]
            b = [0.0] * g.n_vertices
            b[g.source] = 1.0
            b[g.sink] = -1.0
            rhs += b
            r += g.n_vertices
        # link reservation: r_uv c_uv - sum r_i x_e = 0
        self.reservation_terms = {ln: [] for ln in self.links}
        for gi, g in enumerate(self.graphs):
            base = self.offsets[gi]
            for k, e in enumerate(g.edges):
                if e.link is not None:
                    self.reservation_terms[e.link].append((base + k, self.guarantees[gi]))
        for ln in self.links:
            rows.append(r)
            cols.append(self.link_col[ln])
            vals.append(self.capacity[ln] / self.scale)
            for col, rate in self.reservation_terms[ln]:
                rows.append(r)
                cols.append(col)
                vals.append(-rate / self.scale)
            rhs.append(0.0)
            r += 1
        self.A_eq = sparse.csr_matrix((vals, (rows, cols)), shape=(r, self.n_vars))
        self.b_eq = np.array(rhs)
        # r_uv <= r_max and r_uv c_uv <= R_max
        rows, cols, vals = [], [], []
        for j, ln in enumerate(self.links):
            rows += [2 * j, 2 * j, 2 * j + 1, 2 * j + 1]
            cols += [self.link_col[ln], self.rmax_col, self.link_col[ln], self.Rmax_col]
            vals += [1.0, -1.0, self.capacity[ln] / self.scale, -1.0]
        self.A_ub = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * len(self.links), self.n_vars))
        self.b_ub = np.zeros(2 * len(self.links))
        lb = np.zeros(self.n_vars)
        ub = np.full(self.n_vars, np.inf)
        ub[:self.n_x] = 1.0
        # an edge off every source-to-sink path can only carry a circulation
        for gi, g in enumerate(self.graphs):
            useful = _useful_edges(g)
            for k in range(len(g.edges)):
                if k not in useful:
                    ub[self.offsets[gi] + k] = 0.0
        ub[self.rmax_col] = 1.0  # r_max <= 1
        self.lb, self.ub = lb, ub
        self.costs = {obj: self._cost(obj) for obj in OBJECTIVES}

    def _cost(self, objective):
        c = np.zeros(self.n_vars)
        if objective == "shortest":
            for gi, g in enumerate(self.graphs):
                w = self.guarantees[gi] / self.scale
                for k, e in enumerate(g.edges):
                    if e.link is not None:
                        c[self.offsets[gi] + k] = w
        elif objective == "minmax-ratio":
            c[self.rmax_col] = 1.0
        else:
            c[self.Rmax_col] = 1.0
        return c

    def lp_scale(self, objective):
        """Factor turning an exact objective value into LP units."""
        return 1 if objective == "minmax-ratio" else self.scale

    # ------------------------------------------------------------ LP export

    def to_lp(self):
        """The program in CPLEX LP text format, with unscaled coefficients."""
        def xname(col):
            gi = next(i for i in range(len(self.graphs)) if col < self.offsets[i + 1])
            return f"x_{self.graphs[gi].sid}_{col - self.offsets[gi]}"

        def rname(ln):
            return f"r_{ln[0]}_{ln[1]}"

        out = ["\\ path selection program", "Minimize"]
        if self.objective == "shortest":
            terms = []
            for gi, g in enumerate(self.graphs):
                for k, e in enumerate(g.edges):
                    if e.link is not None and self.guarantees[gi]:
                        terms.append(f"{self.guarantees[gi]} {xname(self.offsets[gi] + k)}")
            out.append(" obj: " + (" + ".join(terms) if terms else "0 rmax"))
        elif self.objective == "minmax-ratio":
            out.append(" obj: rmax")
        else:
            out.append(" obj: Rmax")
        out.append("Subject To")
        for gi, g in enumerate(self.graphs):
            incident = [[] for _ in range(g.n_vertices)]
            for k, e in enumerate(g.edges):
                name = xname(self.offsets[gi] + k)
                incident[e.tail].append(f"+ {name}")
                incident[e.head].append(f"- {name}")
            for v in range(g.n_vertices):
                b = 1 if v == g.source else -1 if v == g.sink else 0
                lhs = " ".join(incident[v]) if incident[v] else "0 rmax"
                out.append(f" flow_{g.sid}_{v}: {lhs} = {b}")
        for ln in self.links:
            parts = [f"{self.capacity[ln]} {rname(ln)}"]
            for col, rate in self.reservation_terms[ln]:
                parts.append(f"- {rate} {xname(col)}")
            out.append(f" reserve_{ln[0]}_{ln[1]}: {' '.join(parts)} = 0")
            out.append(f" ratio_{ln[0]}_{ln[1]}: {rname(ln)} - rmax <= 0")
            out.append(f" amount_{ln[0]}_{ln[1]}: {self.capacity[ln]} {rname(ln)} - Rmax <= 0")
        out.append("Bounds")
        out.append(" 0 <= rmax <= 1")
        out.append(" Rmax >= 0")
        for ln in self.links:
            out.append(f" {rname(ln)} >= 0")
        out.append("Binaries")
        for col in range(self.n_x):
            out.append(f" {xname(col)}")
        out.append("End")
        return "\n".join(out) + "\n"


def _useful_edges(g):
    fwd = {g.source}
    stack = [g.source]
    while stack:
        v = stack.pop()
        for k in g.out_edges[v]:
            w = g.edges[k].head
            if w not in fwd:
                fwd.add(w)
                stack.append(w)
    rev = {}
    for k, e in enumerate(g.edges):
        rev.setdefault(e.head, []).append(k)
    bwd = {g.sink}
    stack = [g.sink]
    while stack:
        v = stack.pop()
        for k in rev.get(v, ()):
            u = g.edges[k].tail
            if u not in bwd:
                bwd.add(u)
                stack.append(u)
    return {k for k, e in enumerate(g.edges) if e.tail in fwd and e.head in bwd}


def build_model(graphs, guarantees, topology, objective="shortest"):
    return ProvisionModel(graphs, guarantees, topology, objective)


# ------------------------------------------------------------------ results

@dataclass
class ProvisionSolution:
    status: str  # optimal | infeasible | timeout
    objective: str
    value: Optional[Fraction] = None
    paths: Dict[str, List[str]] = field(default_factory=dict)
    functions: Dict[str, List[Optional[str]]] = field(default_factory=dict)
    guarantees: Dict[str, int] = field(default_factory=dict)
    reservations: Dict[tuple, int] = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    @property
    def feasible(self):
        return self.status == "optimal" or (self.status == "timeout" and bool(self.paths))

    def max_ratio(self):
        return max((Fraction(r, self.stats["capacity"][ln])
                    for ln, r in self.reservations.items()), default=Fraction(0))

    def max_reserved(self):
        return max(self.reservations.values(), default=0)

    def summary(self):
        lines = [f"status: {self.status}", f"objective ({self.objective}): {self.value}"]
        for sid, path in self.paths.items():
            lines.append(f"  {sid} [{format_rate(self.guarantees[sid])}]: {' '.join(path)}")
        return "\n".join(lines)


def evaluate_paths(paths, guarantees, topology):
    """Exact reservations and objective values for a path assignment.

    ``paths`` maps statement ids to location walks (repeats allowed).
    Returns ``(reservations, values, feasible)``.
    """
    res = {}
    hops = 0
    for sid, walk in paths.items():
        rate = guarantees[sid]
        for u, v in zip(walk, walk[1:]):
            if u == v:
                continue
            key = link_key(u, v)
            res[key] = res.get(key, 0) + rate
            hops += rate
    values = {
        "shortest": Fraction(hops),
        "minmax-ratio": max((Fraction(r, topology.capacity(*ln)) for ln, r in res.items()),
                            default=Fraction(0)),
        "minmax-reserved": Fraction(max(res.values(), default=0)),
    }
    feasible = all(r <= topology.capacity(*ln) for ln, r in res.items())
    return res, values, feasible


# ------------------------------------------------------------------ solvers

@dataclass
class _Incumbent:
    value: Fraction
    edge_paths: list


class BranchAndBound:
    """Best-first branch-and-bound on the edge variables.

    Relaxations are solved with HiGHS through ``scipy.optimize.linprog``.
    Branching picks the most fractional edge variable, ties broken by
    column index; the node queue is ordered by (bound, creation order), so
    runs are reproducible.
    """

    name = "bnb"

    def __init__(self, node_limit=None):
        self.node_limit = node_limit

    def solve(self, model, cost, lp_scale, deadline, extra_ub=None):
        ub0 = model.ub.copy()
        if extra_ub:
            for col, val in extra_ub.items():
                ub0[col] = min(ub0[col], val)
        stats = {"nodes": 0, "lps": 0}
        name = _cost_name(model, cost)
        best = None
        counter = itertools.count()
        root = self._relax(model, cost, model.lb, ub0, stats)
        if root is None:
            return "infeasible", None, stats
        heap = [(root[0], next(counter), model.lb, ub0, root[1])]
        timed_out = False
        while heap:
            bound, _, lb, ub, x = heapq.heappop(heap)
            if best is not None and bound >= float(best.value) / lp_scale - _tol(best.value, lp_scale):
                continue
            if time.monotonic() > deadline or (self.node_limit and stats["nodes"] >= self.node_limit):
                timed_out = True
                break
            stats["nodes"] += 1
            cand = _round_paths(model, x)
            if cand is not None:
                val = _exact_value(model, cand, name)
                if val is not None and (best is None or val < best.value):
                    best = _Incumbent(val, cand)
            frac = _most_fractional(x[:model.n_x])
            if frac is None:
                continue
            for fix in (1.0, 0.0):
                lb2, ub2 = lb.copy(), ub.copy()
                lb2[frac] = ub2[frac] = fix
                child = self._relax(model, cost, lb2, ub2, stats)
                if child is None:
                    continue
                if best is not None and child[0] >= float(best.value) / lp_scale - _tol(best.value, lp_scale):
                    continue
                heapq.heappush(heap, (child[0], next(counter), lb2, ub2, child[1]))
        if best is None:
            return ("timeout" if timed_out else "infeasible"), None, stats
        return ("timeout" if timed_out else "optimal"), best, stats

    @staticmethod
    def _relax(model, cost, lb, ub, stats):
        stats["lps"] += 1
        res = linprog(cost, A_ub=model.A_ub, b_ub=model.b_ub, A_eq=model.A_eq, b_eq=model.b_eq,
                      bounds=np.column_stack([lb, ub]), method="highs")
        if res.status != 0:
            return None
        return res.fun, res.x


class ScipyMILP:
    """Hand the whole program to ``scipy.optimize.milp`` (HiGHS)."""

    name = "milp"

    def solve(self, model, cost, lp_scale, deadline, extra_ub=None):
        from scipy.optimize import Bounds, LinearConstraint, milp

        ub = model.ub.copy()
        if extra_ub:
            for col, val in extra_ub.items():
                ub[col] = min(ub[col], val)
        integrality = np.zeros(model.n_vars)
        integrality[:model.n_x] = 1
        cons = [LinearConstraint(model.A_eq, model.b_eq, model.b_eq),
                LinearConstraint(model.A_ub, -np.inf, model.b_ub)]
        limit = max(deadline - time.monotonic(), 0.01)
        res = milp(cost, constraints=cons, integrality=integrality,
                   bounds=Bounds(model.lb, ub), options={"time_limit": limit})
        stats = {"nodes": None, "lps": None}
        if res.x is None:
            return ("timeout" if res.status == 1 else "infeasible"), None, stats
        cand = _round_paths(model, res.x)
        val = _exact_value(model, cand, _cost_name(model, cost))
        status = "optimal" if res.status == 0 else "timeout"
        return status, _Incumbent(val, cand), stats


SOLVERS = {"bnb": BranchAndBound, "milp": ScipyMILP}


def _tol(value, lp_scale):
    return _BOUND_TOL * max(1.0, abs(float(value) / lp_scale))


def _cost_name(model, cost):
    for name, c in model.costs.items():
        if c is cost:
            return name
    raise ValueError("unknown cost vector")


def _most_fractional(x):
    dist = np.abs(x - 0.5)
    frac = np.nonzero(dist < 0.5 - _INT_TOL)[0]
    if frac.size == 0:
        return None
    # argmin returns the first (lowest column) among equally fractional ones
    return int(frac[np.argmin(dist[frac])])


def _round_paths(model, x):
    """One path per statement inside the support of ``x``."""
    out = []
    for gi, g in enumerate(model.graphs):
        base = model.offsets[gi]
        support = {k for k in range(len(g.edges)) if x[base + k] > _INT_TOL}
        path = g.shortest_path(support)
        if path is None:
            return None
        out.append(path)
    return out


def _exact_value(model, edge_paths, objective):
    """Exact objective of an assignment, or ``None`` if it breaks a capacity."""
    if edge_paths is None:
        return None
    paths = {}
    guarantees = {}
    for gi, g in enumerate(model.graphs):
        paths[g.sid] = project_path(g, edge_paths[gi])[0]
        guarantees[g.sid] = model.guarantees[gi]
    _, values, feasible = evaluate_paths(paths, guarantees, model.topology)
    return values[objective] if feasible else None


# ------------------------------------------------------------------ driver

def solve(model, timeout=DEFAULT_TIMEOUT, solver="bnb", refine=True):
    """Optimize ``model`` and extract one path per statement.

    For the two min-max objectives a second pass minimizes weighted hop
    count among assignments that keep the optimal min-max value, which
    avoids gratuitous detours; it is skipped if it cannot match the first
    pass exactly.
    """
    engine = SOLVERS[solver]() if isinstance(solver, str) else solver
    t0 = time.monotonic()
    deadline = t0 + timeout
    if model.empty:
        return ProvisionSolution("optimal", model.objective, Fraction(0),
                                 stats={"solve_s": 0.0, "capacity": model.capacity})
    cost = model.costs[model.objective]
    scale = model.lp_scale(model.objective)
    status, best, stats = engine.solve(model, cost, scale, deadline)
    if best is None:
        return ProvisionSolution(status, model.objective,
                                 stats={**stats, "solve_s": time.monotonic() - t0,
                                        "capacity": model.capacity})
    if refine and status == "optimal" and model.objective != "shortest":
        col = model.rmax_col if model.objective == "minmax-ratio" else model.Rmax_col
        limit = float(best.value) / scale
        limit += _tol(best.value, scale)
        st2, best2, stats2 = engine.solve(model, model.costs["shortest"], model.scale,
                                          deadline, extra_ub={col: limit})
        if best2 is not None:
            v2 = _exact_value(model, best2.edge_paths, model.objective)
            if v2 is not None and v2 <= best.value:
                best = _Incumbent(v2, best2.edge_paths)
                stats = {k: (stats.get(k) or 0) + (stats2.get(k) or 0) for k in ("nodes", "lps")}
    return _extract(model, status, best, {**stats, "solve_s": time.monotonic() - t0})


def _extract(model, status, best, stats):
    paths, funcs, guarantees = {}, {}, {}
    for gi, g in enumerate(model.graphs):
        locs, fns = project_path(g, best.edge_paths[gi])
        paths[g.sid] = locs
        funcs[g.sid] = fns
        guarantees[g.sid] = model.guarantees[gi]
    res, values, feasible = evaluate_paths(paths, guarantees, model.topology)
    assert feasible
    stats["capacity"] = model.capacity
    return ProvisionSolution(status, model.objective, values[model.objective], paths, funcs,
                             guarantees, res, stats)


def provision_guaranteed(policy, topology, placement, guarantees, objective="shortest",
                         timeout=DEFAULT_TIMEOUT, solver="bnb"):
    """Route every statement that carries a guarantee.

    ``guarantees`` maps statement ids to reserved rates (from the localized
    formula); statements without one are left to best-effort forwarding.
    """
    t0 = time.monotonic()
    graphs, rates = [], []
    for st in policy.statements:
        rate = guarantees.get(st.id, 0)
        if rate <= 0:
            continue
        srcs, dsts = endpoint_hosts(st.predicate, topology)
        if len(srcs) != 1 or len(dsts) != 1:
            raise ProvisionError(f"statement {st.id}: a guarantee needs exactly one source and "
                                 f"one destination host (predicate admits {len(srcs)} and "
                                 f"{len(dsts)})")
        graphs.append(build_logical_graph(st, topology, placement, endpoints=(srcs, dsts)))
        rates.append(rate)
    model = build_model(graphs, rates, topology, objective)
    built = time.monotonic()
    sol = solve(model, timeout=max(timeout - (built - t0), 0.01), solver=solver)
    sol.stats["build_s"] = built - t0
    sol.stats["model"] = model
    return sol
