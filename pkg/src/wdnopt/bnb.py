"""Global search over pipe designs: LP/NLP branch-and-bound with lazy cuts.

The master LP is solved at every node of a best-bound tree. Integer designs are
checked by an exact hydraulic solve; feasible ones become incumbents and add
tangent cuts at their hydraulic state, infeasible ones are excluded with a
no-good cut and handed to a local repair heuristic. Fractional nodes get
separation cuts through a randomized gate.
"""

from __future__ import annotations

import csv
import heapq
import io
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formulation import (
    DHNL,
    EXACT,
    NEG,
    NOGOOD,
    OA_HEADLOSS,
    POS,
    PREVIOUS,
    QNL,
    STATIC,
    LinearCut,
    MasterProblem,
    RelaxationPoint,
    build_master,
    nogood_cut,
    oa_headloss_cut,
    strong_duality_cut,
)
from .hydraulics import (
    HydraulicError,
    HydraulicState,
    check_design_feasibility,
    head_differences,
)
from .lp import Basis, LpSolver
from .network import DesignVector, Network

log = logging.getLogger(__name__)

NEW = "new"
ALGORITHMS = (NEW, PREVIOUS)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
TIME_LIMIT = "time_limit"
NODE_LIMIT = "node_limit"

INT_TOL = 1e-6
CSV_HEADER = ("time_elapsed", "lower_bound", "upper_bound", "nodes_explored")


class InfeasibleInstanceError(RuntimeError):
    pass


class EnumerationLimitError(ValueError):
    pass


@dataclass
class SolverConfig:
    algorithm: str = NEW
    beta_oa: float = 5.0
    node_mod_j: int = 500
    k_oa: float = 1e-3
    repair_iters: int = 50
    eps_cut: float = 1e-6
    time_limit: float = 1800.0
    gap_tolerance: float = 1e-4
    gap_type: str = "relative"
    seed: int = 0
    node_limit: int | None = None
    clock: str = "wall"
    cut_point: str = "relaxation"

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        for name in ("beta_oa", "k_oa", "eps_cut", "time_limit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("node_mod_j", "repair_iters"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.gap_tolerance < 0:
            raise ValueError("gap_tolerance must be nonnegative")
        if self.gap_type not in ("relative", "absolute"):
            raise ValueError("gap_type must be 'relative' or 'absolute'")
        if self.cut_point not in ("relaxation", "deepest"):
            raise ValueError("cut_point must be 'relaxation' or 'deepest'")
        if self.clock not in ("wall", "work"):
            raise ValueError("clock must be 'wall' or 'work'")

    @property
    def variant(self) -> str:
        return EXACT if self.algorithm == NEW else PREVIOUS


@dataclass
class NodeState:
    fixings: dict[int, int]
    bound: float
    basis: Basis | None = None
    depth: int = 0

    def __post_init__(self) -> None:
        if any(v not in (0, 1) for v in self.fixings.values()):
            raise ValueError("fixings must be 0 or 1")

    def child(self, var: int, value: int, bound: float, basis: Basis | None) -> "NodeState":
        if self.fixings.get(var, value) != value:
            raise ValueError(f"variable {var} already fixed to {self.fixings[var]}")
        fix = dict(self.fixings)
        fix[var] = value
        return NodeState(fix, bound, basis, self.depth + 1)


@dataclass
class ConvergenceLog:
    rows: list[tuple[float, float, float, int]] = field(default_factory=list)

    def record(self, t: float, lower: float, upper: float, nodes: int) -> None:
        """Append a row when either bound moved; bounds are kept monotone."""
        if self.rows:
            _, lo0, up0, _ = self.rows[-1]
            lower = max(lower, lo0)
            upper = min(upper, up0)
            if lower == lo0 and upper == up0:
                return
        self.rows.append((float(t), float(lower), float(upper), int(nodes)))

    def close(self, t: float, lower: float, upper: float, nodes: int) -> None:
        """Final row, always written."""
        if self.rows:
            lower = max(lower, self.rows[-1][1])
            upper = min(upper, self.rows[-1][2])
        self.rows.append((float(t), float(lower), float(upper), int(nodes)))

    @property
    def lower_bounds(self) -> list[float]:
        return [r[1] for r in self.rows]

    @property
    def upper_bounds(self) -> list[float]:
        return [r[2] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for t, lo, up, n in self.rows:
            w.writerow([f"{t:.6f}", repr(lo), repr(up), n])
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


@dataclass
class SolveResult:
    status: str
    design: DesignVector | None
    cost: float
    lower_bound: float
    log: ConvergenceLog
    nodes: int
    wall_time: float
    cut_counts: dict[str, int]
    incumbents: list[tuple[DesignVector, float]] = field(default_factory=list)
    excluded: list[DesignVector] = field(default_factory=list)
    state: HydraulicState | None = None

    @property
    def gap(self) -> float:
        return relative_gap(self.lower_bound, self.cost)

    @property
    def absolute_gap(self) -> float:
        if not math.isfinite(self.cost):
            return math.inf
        return max(self.cost - self.lower_bound, 0.0)


def relative_gap(lower: float, upper: float) -> float:
    if not math.isfinite(upper):
        return math.inf
    if not math.isfinite(lower):
        return 0.0 if lower > 0 else math.inf
    return max(upper - lower, 0.0) / max(1.0, abs(upper))


# -- cut separation ---------------------------------------------------------------


def gate_passes(rng: np.random.Generator, eta_tilde: float, eta_hat: float, m: int, cfg: SolverConfig) -> bool:
    """Randomized depth gate combined with an objective-progress test."""
    if rng.random() > cfg.beta_oa * 2.0 ** (-m):
        return False
    if eta_tilde == 0:
        return eta_hat != 0
    return abs((eta_hat - eta_tilde) / eta_tilde) >= cfg.k_oa


def deepest_point(kind: str, res: np.ndarray, ref: int, values: np.ndarray, weight: float, alpha: float) -> float:
    """Reference point of the most violated equal-intercept cut at a relaxation point.

    ``values`` are the per-option flows (or head differences for DHNL) and
    ``weight`` is y (positive direction) or 1 - y (negative direction).
    """
    w = max(weight, 1e-12)
    r = res[ref]
    if kind == OA_HEADLOSS:
        return float(np.sum(res ** (1 / alpha) * values) / (w * r ** (1 / alpha)))
    if kind == QNL:
        e = 1 / (1 + alpha)
        return float(np.sum(res**e * values) / (w * r**e))
    if kind == DHNL:
        e = 1 / (1 + alpha)
        return float(r**e * np.sum(res ** (-e) * values) / w)
    raise ValueError(kind)


def node_cuts(
    master: MasterProblem,
    point: RelaxationPoint,
    eta_tilde: float,
    eta_hat: float,
    m: int,
    force: bool,
    cfg: SolverConfig,
    rng: np.random.Generator,
) -> int:
    """Separate cuts at a fractional relaxation point; returns the count added.

    The gate draws one random number per call (also when forced is false and
    the draw fails), so the random stream depends only on the node sequence.
    """
    if not force and not gate_passes(rng, eta_tilde, eta_hat, m, cfg):
        return 0
    net = master.net
    alpha = net.alpha
    added = 0
    for a, p in enumerate(net.pipes):
        res = np.array(p.resistances)
        d = POS if point.y[a] >= 0.5 else NEG
        weight = point.y[a] if d == POS else 1.0 - point.y[a]
        q = point.q(a, d)
        dh = point.dh(a, d)
        qbar = master.bounds.q(a, d)
        hbar = master.bounds.dh(a, d)

        r = int(np.argmax(res * q**alpha))
        dh_r = dh[r] if master.exact else dh[0]
        if p.length * res[r] * q[r] ** alpha - dh_r > cfg.eps_cut:
            added += _separate(master, cfg, a, r, d, OA_HEADLOSS, q, qbar[r], weight, point)
        if not master.exact:
            continue

        r = int(np.argmax(res * q ** (1 + alpha)))
        if res[r] * q[r] ** (1 + alpha) / (1 + alpha) - point.qnl[a] > cfg.eps_cut:
            added += _separate(master, cfg, a, r, d, QNL, q, qbar[r], weight, point)

        r = int(np.argmax(res ** (-1 / alpha) * dh ** (1 + 1 / alpha)))
        nl = alpha / (1 + alpha) * res[r] ** (-1 / alpha) * dh[r] ** (1 + 1 / alpha)
        if nl - point.dhnl[a] > cfg.eps_cut:
            added += _separate(master, cfg, a, r, d, DHNL, dh, hbar[r], weight, point)
    return added


def _separate(master, cfg, a, r, d, kind, values, upper, weight, point) -> int:
    if cfg.cut_point == "deepest":
        t = deepest_point(kind, np.array(master.net.pipes[a].resistances), r, values, weight, master.net.alpha)
    else:
        t = values[r]
    t = _clip(t, upper)
    if kind == OA_HEADLOSS:
        cut = oa_headloss_cut(master, a, r, t, d)
    else:
        cut = strong_duality_cut(master, a, r, t, kind, d)
    return master.add_cut(cut, (kind, a, r, d), t)


def _clip(v: float, hi: float) -> float:
    return float(min(max(v, 0.0), hi))


def hydraulic_cuts(master: MasterProblem, design: DesignVector, state: HydraulicState) -> int:
    """Tangent cuts at the exact hydraulic state of a design (flow direction only)."""
    net = master.net
    dh_all = head_differences(net, state.heads)
    added = 0
    for a in range(len(net.pipes)):
        q = float(state.flows[a])
        if q == 0.0:
            continue
        d = POS if q > 0 else NEG
        k = design[a]
        qv = _clip(abs(q), master.bounds.q(a, d)[k])
        added += master.add_cut(oa_headloss_cut(master, a, k, qv, d), (OA_HEADLOSS, a, k, d), qv)
        if master.exact:
            added += master.add_cut(strong_duality_cut(master, a, k, qv, QNL, d), (QNL, a, k, d), qv)
            hv = _clip(abs(dh_all[a]), master.bounds.dh(a, d)[k])
            added += master.add_cut(strong_duality_cut(master, a, k, hv, DHNL, d), (DHNL, a, k, d), hv)
    return added


def seed_cuts(master: MasterProblem) -> int:
    """Root cuts at half and full bounds of every (arc, option, direction)."""
    added = 0
    for a, p in enumerate(master.net.pipes):
        for k in range(len(p.options)):
            for d in (POS, NEG):
                qbar = float(master.bounds.q(a, d)[k])
                hbar = float(master.bounds.dh(a, d)[k])
                for frac in (0.5, 1.0):
                    if qbar > 0:
                        qv = frac * qbar
                        added += master.add_cut(oa_headloss_cut(master, a, k, qv, d), (OA_HEADLOSS, a, k, d), qv)
                        if master.exact:
                            added += master.add_cut(strong_duality_cut(master, a, k, qv, QNL, d), (QNL, a, k, d), qv)
                    if master.exact and hbar > 0:
                        hv = frac * hbar
                        added += master.add_cut(strong_duality_cut(master, a, k, hv, DHNL, d), (DHNL, a, k, d), hv)
    return added


# -- heuristics --------------------------------------------------------------------


def _feasibility(net: Network, design: DesignVector):
    try:
        return check_design_feasibility(net, design)
    except HydraulicError:
        return None


def repair_heuristic(
    net: Network, design: DesignVector, max_iters: int, incumbent_cost: float
) -> tuple[bool, DesignVector]:
    """Upgrade pipes on the steepest supply path of the worst junction until feasible.

    Returns (True, repaired design) only for a feasible design cheaper than
    ``incumbent_cost``; otherwise (False, design).
    """
    r = list(design)
    for _ in range(max_iters + 1):
        cand = DesignVector(tuple(r))
        if net.design_cost(cand) >= incumbent_cost:
            return False, design
        res = _feasibility(net, cand)
        if res is None:
            return False, design
        if res.feasible:
            return True, cand
        if any(v.kind == "head_max" for v in res.violations):
            return False, design
        moved = False
        for v in res.violations:
            if v.kind.startswith("flow"):
                a = net.pipe_index(v.element)
                if r[a] + 1 < len(net.pipes[a].options):
                    r[a] += 1
                    moved = True
        heads = [v for v in res.violations if v.kind == "head_min"]
        if heads:
            worst = max(heads, key=lambda v: v.magnitude)
            a = _upgrade_target(net, r, res.state, worst.element)
            if a is not None:
                r[a] += 1
                moved = True
        if not moved:
            return False, design
    return False, design


def _upgrade_target(net: Network, r: list[int], state: HydraulicState, junction: str) -> int | None:
    """Arc with the largest head loss on the steepest upstream path to ``junction``."""
    dh = head_differences(net, state.heads)
    path: list[int] = []
    node = junction
    visited = {node}
    while not net.node(node).is_reservoir:
        best, best_loss, nxt = None, 0.0, None
        for a in net.in_arcs(node):
            if state.flows[a] > 0 and dh[a] > best_loss:
                best, best_loss, nxt = a, dh[a], net.pipes[a].tail
        for a in net.out_arcs(node):
            if state.flows[a] < 0 and -dh[a] > best_loss:
                best, best_loss, nxt = a, -dh[a], net.pipes[a].head
        if best is None or nxt in visited:
            break
        path.append(best)
        visited.add(nxt)
        node = nxt
    upgradable = [a for a in path if r[a] + 1 < len(net.pipes[a].options)]
    if not upgradable:
        return None
    return max(upgradable, key=lambda a: (abs(dh[a]), -a))


def initial_solution(net: Network) -> DesignVector:
    """Feasible start: largest capacity everywhere, then greedy one-step downgrades."""
    r = [len(p.options) - 1 for p in net.pipes]
    res = _feasibility(net, DesignVector(tuple(r)))
    if res is None or not res.feasible:
        raise InfeasibleInstanceError("instance infeasible at maximum capacity")
    order = sorted(range(len(net.pipes)), key=lambda a: (-net.pipes[a].length * net.pipes[a].options[r[a]].cost, a))
    improved = True
    while improved:
        improved = False
        for a in order:
            if r[a] == 0:
                continue
            r[a] -= 1
            res = _feasibility(net, DesignVector(tuple(r)))
            if res is not None and res.feasible:
                improved = True
            else:
                r[a] += 1
    return DesignVector(tuple(r))


# -- brute-force oracle --------------------------------------------------------------


@dataclass
class EnumerationResult:
    design: DesignVector | None
    cost: float
    evaluated: int
    feasible: list[tuple[DesignVector, float]]

    @property
    def infeasible(self) -> bool:
        return self.design is None


def enumerate_designs(net: Network, limit: int = 100_000) -> EnumerationResult:
    """Simulate every design; min cost feasible one, ties broken lexicographically."""
    count = net.n_designs
    if count > limit:
        raise EnumerationLimitError(f"{count} designs exceed the enumeration limit {limit}")
    feasible = []
    evaluated = 0
    for choice in itertools.product(*(range(len(p.options)) for p in net.pipes)):
        d = DesignVector(choice)
        evaluated += 1
        res = _feasibility(net, d)
        if res is not None and res.feasible:
            feasible.append((d, net.design_cost(d)))
    if not feasible:
        return EnumerationResult(None, math.inf, evaluated, [])
    best = min(feasible, key=lambda t: (t[1], t[0].choice))
    return EnumerationResult(best[0], best[1], evaluated, feasible)


# -- search ----------------------------------------------------------------------------


class _Search:
    def __init__(self, net: Network, cfg: SolverConfig):
        self.net = net
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.master = build_master(net, cfg.variant)
        self.log = ConvergenceLog()
        self.best: DesignVector | None = None
        self.best_cost = math.inf
        self.best_state: HydraulicState | None = None
        self.incumbents: list[tuple[DesignVector, float]] = []
        self.excluded: list[DesignVector] = []
        self.nodes = 0
        self.work = 0
        self.t0 = time.perf_counter()
        self.synced = 0
        self.solver: LpSolver | None = None

    # clock used for the log; the time limit always uses wall time
    def now(self) -> float:
        if self.cfg.clock == "work":
            return self.work * 1e-6
        return time.perf_counter() - self.t0

    def out_of_time(self) -> bool:
        return time.perf_counter() - self.t0 > self.cfg.time_limit

    def cutoff(self) -> float:
        if not math.isfinite(self.best_cost):
            return math.inf
        if self.cfg.gap_type == "absolute":
            slack = self.cfg.gap_tolerance
        else:
            slack = self.cfg.gap_tolerance * max(1.0, abs(self.best_cost))
        return self.best_cost - max(slack, 1e-9 * max(1.0, abs(self.best_cost)))

    def incumbent(self, design: DesignVector, state: HydraulicState) -> None:
        cost = self.net.design_cost(design)
        if cost < self.best_cost:
            self.best, self.best_cost, self.best_state = design, cost, state
            self.incumbents.append((design, cost))
            log.debug("incumbent %.6g after %d nodes", cost, self.nodes)
        hydraulic_cuts(self.master, design, state)

    def sync(self) -> None:
        A, lo, hi = self.master.rows(self.synced)
        self.solver.add_rows(A, lo, hi)
        self.synced = len(self.master.cuts)

    def bounds_for(self, node: NodeState) -> tuple[np.ndarray, np.ndarray]:
        lb = self.solver.base_lb.copy()
        ub = self.solver.base_ub.copy()
        for j, v in node.fixings.items():
            lb[j] = ub[j] = float(v)
        return lb, ub

    def solve_node(self, node: NodeState):
        self.sync()
        lb, ub = self.bounds_for(node)
        sol = self.solver.solve(node.basis, lb, ub)
        self.work += sol.iterations + 1
        return sol

    def run(self) -> SolveResult:
        net, cfg, master = self.net, self.cfg, self.master
        try:
            design = initial_solution(net)
            res = check_design_feasibility(net, design)
            self.incumbent(design, res.state)
        except InfeasibleInstanceError:
            log.info("no feasible design at maximum capacity; searching without incumbent")
        self.t0 = time.perf_counter()  # heuristic time is not counted

        seed_cuts(master)
        self.solver = LpSolver(master.to_lp())
        self.synced = len(master.cuts)

        root = NodeState({}, -math.inf)
        sol = self.solve_node(root)
        if not sol.optimal:
            return self.finish(INFEASIBLE if sol.status == "infeasible" else TIME_LIMIT, -math.inf, math.inf)
        # objective lower-bound row from the root relaxation
        master.add_cut(
            LinearCut({j: v for j, v in enumerate(master.objective) if v}, ">=", sol.objective, STATIC, "objective_lb")
        )
        root.bound = sol.objective
        eta_tilde = sol.objective
        heap: list[tuple[float, int, NodeState]] = [(root.bound, 0, root)]
        seq = itertools.count(1)
        self.log.record(self.now(), min(root.bound, self.best_cost), self.best_cost, 0)

        status = OPTIMAL
        while heap:
            if self.out_of_time():
                status = TIME_LIMIT
                break
            if cfg.node_limit is not None and self.nodes >= cfg.node_limit:
                status = NODE_LIMIT
                break
            bound, _, node = heapq.heappop(heap)
            if bound >= self.cutoff():
                continue
            index = self.nodes
            self.nodes += 1
            branch = self.process(node, index, eta_tilde)
            if branch is not None:
                var, sol = branch
                eta_tilde = sol.objective
                for val in (1, 0):
                    child = node.child(var, val, sol.objective, sol.basis)
                    heapq.heappush(heap, (sol.objective, next(seq), child))
            lower = min(heap[0][0], self.best_cost) if heap else self.best_cost
            self.log.record(self.now(), lower, self.best_cost, self.nodes)
            if self._gap_closed(lower):
                break

        lower = min(heap[0][0], self.best_cost) if heap else self.best_cost
        if status == OPTIMAL and self.best is None:
            status = INFEASIBLE
        return self.finish(status, lower, self.best_cost)

    def process(self, node: NodeState, index: int, eta_tilde: float):
        """Solve one node to fathoming or branching; returns (branch var, LP solution) or None."""
        net, cfg, master = self.net, self.cfg, self.master
        while True:
            sol = self.solve_node(node)
            if not sol.optimal or sol.objective >= self.cutoff():
                return None
            eta_hat = sol.objective
            design = master.design_from(sol.x, INT_TOL)
            if design is not None:
                res = _feasibility(net, design)
                if res is not None and res.feasible:
                    self.incumbent(design, res.state)
                    return None
                master.add_cut(nogood_cut(master, design))
                self.excluded.append(design)
                ok, rep = repair_heuristic(net, design, cfg.repair_iters, self.best_cost)
                if ok:
                    self.incumbent(rep, check_design_feasibility(net, rep).state)
                node.basis = sol.basis
                continue
            point = master.unpack(sol.x, eta_hat)
            m = int(sum(np.count_nonzero(v >= 1 - INT_TOL) for v in point.x))
            force = index % cfg.node_mod_j == 0
            node_cuts(master, point, eta_tilde, eta_hat, m, force, cfg, self.rng)
            if force:
                guess = DesignVector(
                    tuple(int(np.flatnonzero(v >= 1.0 / len(v) - INT_TOL).max()) for v in point.x)
                )
                ok, rep = repair_heuristic(net, guess, cfg.repair_iters, self.best_cost)
                if ok:
                    self.incumbent(rep, check_design_feasibility(net, rep).state)
            var, _ = self._branch_var(point)
            return var, sol

    def _gap_closed(self, lower: float) -> bool:
        if not math.isfinite(self.best_cost):
            return False
        if self.cfg.gap_type == "absolute":
            return self.best_cost - lower <= self.cfg.gap_tolerance
        return relative_gap(lower, self.best_cost) <= self.cfg.gap_tolerance

    def _branch_var(self, point: RelaxationPoint) -> tuple[int, float]:
        V = self.master.space
        best, best_frac = None, -1.0
        for a, xs in enumerate(point.x):
            for k, v in enumerate(xs):
                frac = min(v, 1.0 - v)
                if frac > best_frac + 1e-12:
                    best, best_frac = V.x[a][k], frac
        if best_frac <= INT_TOL:
            for a, v in enumerate(point.y):
                frac = min(v, 1.0 - v)
                if frac > best_frac + 1e-12:
                    best, best_frac = V.y[a], frac
        return best, best_frac

    def finish(self, status: str, lower: float, upper: float) -> SolveResult:
        lower = min(lower, upper)
        self.log.close(self.now(), lower, upper, self.nodes)
        counts = {t: self.master.count(t) for t in (STATIC, OA_HEADLOSS, QNL, DHNL, NOGOOD)}
        return SolveResult(
            status=status,
            design=self.best,
            cost=self.best_cost,
            lower_bound=self.log.rows[-1][1],
            log=self.log,
            nodes=self.nodes,
            wall_time=time.perf_counter() - self.t0,
            cut_counts=counts,
            incumbents=self.incumbents,
            excluded=self.excluded,
            state=self.best_state,
        )


def solve_global(net: Network, cfg: SolverConfig | None = None) -> SolveResult:
    """Globally optimal design (or proof of infeasibility) within the limits of ``cfg``."""
    if not net.bounds_derived:
        raise ValueError("derive bounds before solving")
    return _Search(net, cfg or SolverConfig()).run()
