"""Fixed-design hydraulics and the primal/dual flow-potential pair.

For a fixed resistance choice the physical state is the unique minimizer of the
convex content function

    f_P(q) = sum_a L_a r_a |q_a|^(1+alpha) / (1+alpha) - sum_s h_s * outflow(s)

subject to junction flow conservation; the conservation multipliers are the
junction heads. The dual objective f_D(h) is written in terms of the positive
and negative parts of head differences along arcs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .network import DesignVector, Network

logger = logging.getLogger(__name__)

TOL_FEAS = 1e-8
TOL_GAP = 1e-9
MAX_NEWTON_ITERS = 100
MIN_STEP = 1e-4
Q_EPS = 1e-7
HEAD_TOL = 1e-6
FLOW_TOL = 1e-9
SLOPE_RTOL = 1e-10


class HydraulicError(RuntimeError):
    """Raised when the fixed-design solve fails."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class DisconnectedDemandError(HydraulicError):
    pass


def head_loss(q, length: float, resistance: float, alpha: float):
    """Signed head loss L*r*q*|q|^(alpha-1); works on scalars and arrays."""
    q = np.asarray(q, dtype=float)
    out = length * resistance * q * np.abs(q) ** (alpha - 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class HydraulicState:
    flows: np.ndarray  # per arc, signed, ordered like net.pipes
    heads: np.ndarray  # per node, ordered like net.nodes
    residual_norm: float
    iterations: int = 0

    def flow_map(self, net: Network) -> dict[str, float]:
        return {p.id: float(q) for p, q in zip(net.pipes, self.flows)}

    def head_map(self, net: Network) -> dict[str, float]:
        return {n.id: float(h) for n, h in zip(net.nodes, self.heads)}


@dataclass
class DualityReport:
    f_primal: float
    f_dual: float
    f1: float
    f2: float
    f3: float
    f4: float

    @property
    def gap(self) -> float:
        return self.f_primal - self.f_dual

    @property
    def power_gap(self) -> float:
        """Gap assembled from the four power terms."""
        return self.f1 - self.f2 + self.f3 + self.f4


@dataclass
class Violation:
    kind: str  # "head_min" | "head_max" | "flow_pos" | "flow_neg"
    element: str
    value: float
    bound: float

    @property
    def magnitude(self) -> float:
        return abs(self.value - self.bound)

    def __str__(self) -> str:
        what = "junction" if self.kind.startswith("head") else "pipe"
        return (
            f"{self.kind} at {what} {self.element}: value {self.value:.6g}, "
            f"bound {self.bound:.6g}, deficit {self.magnitude:.6g}"
        )


@dataclass
class FeasibilityResult:
    state: HydraulicState
    violations: list[Violation] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.feasible


class _Incidence:
    """Arrays shared by every solve on one network."""

    def __init__(self, net: Network):
        self.net = net
        self.junction_ids = [n.id for n in net.junctions]
        jpos = {nid: k for k, nid in enumerate(self.junction_ids)}
        n_arcs = len(net.pipes)
        self.conservation = np.zeros((len(self.junction_ids), n_arcs))
        self.source_head = np.zeros(n_arcs)
        self.tail_node = np.empty(n_arcs, dtype=int)
        self.head_node = np.empty(n_arcs, dtype=int)
        for a, p in enumerate(net.pipes):
            self.tail_node[a] = net.node_index(p.tail)
            self.head_node[a] = net.node_index(p.head)
            if p.head in jpos:
                self.conservation[jpos[p.head], a] += 1.0
            if p.tail in jpos:
                self.conservation[jpos[p.tail], a] -= 1.0
            else:
                self.source_head[a] = net.node(p.tail).head
        self.demand = np.array([net.node(j).demand for j in self.junction_ids])
        self.junction_pos = np.array([net.node_index(j) for j in self.junction_ids], dtype=int)
        self.lengths = np.array([p.length for p in net.pipes])
        # orthonormal basis of conservation-preserving flow changes
        self.loops = null_space(self.conservation) if n_arcs else np.zeros((0, 0))
        self.tree = _spanning_forest(net)


_incidence_cache: dict[int, _Incidence] = {}


def _incidence(net: Network) -> _Incidence:
    inc = _incidence_cache.get(id(net))
    if inc is None or inc.net is not net:
        if len(_incidence_cache) > 64:
            _incidence_cache.clear()
        inc = _Incidence(net)
        _incidence_cache[id(net)] = inc
    return inc


def _spanning_forest(net: Network) -> list[tuple[int, int, int]]:
    """BFS forest from the reservoirs as (parent node, child node, arc) in visit order."""
    adjacency: dict[str, list[tuple[str, int]]] = {n.id: [] for n in net.nodes}
    for a, p in enumerate(net.pipes):
        adjacency[p.tail].append((p.head, a))
        adjacency[p.head].append((p.tail, a))
    seen = {s.id for s in net.reservoirs}
    frontier = [s.id for s in net.reservoirs]
    order = []
    while frontier:
        nxt = []
        for u in frontier:
            for v, a in adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    order.append((net.node_index(u), net.node_index(v), a))
                    nxt.append(v)
        frontier = nxt
    return order


def _tree_flows(net: Network) -> np.ndarray:
    """Conservation-feasible start: route every demand along the BFS forest."""
    inc = _incidence(net)
    parent = {child: (par, a) for par, child, a in inc.tree}
    q = np.zeros(len(net.pipes))
    for j in net.junctions:
        node = net.node_index(j.id)
        if node not in parent:
            if j.demand > 0:
                raise DisconnectedDemandError(f"junction {j.id} cannot be reached from a source")
            continue
        while node in parent:
            up, a = parent[node]
            q[a] += j.demand if inc.head_node[a] == node else -j.demand
            node = up
    return q


def _tree_heads(net: Network, inc: "_Incidence", loss: np.ndarray) -> np.ndarray:
    """Heads by substituting arc losses outward from the sources."""
    heads = np.zeros(len(net.nodes))
    for s in net.reservoirs:
        heads[net.node_index(s.id)] = s.head
    for par, child, a in inc.tree:
        if inc.tail_node[a] == par:
            heads[child] = heads[par] - loss[a]
        else:
            heads[child] = heads[par] + loss[a]
    return heads


def solve_fixed_design(
    net: Network,
    design: DesignVector,
    *,
    tol: float = TOL_FEAS,
    max_iter: int = MAX_NEWTON_ITERS,
) -> HydraulicState:
    """Solve conservation + head loss for a fixed design.

    Newton on the content restricted to conservation-preserving directions
    (an orthonormal loop basis), started from a spanning-tree flow. Heads are
    recovered by substituting losses along the same tree; at the solution they
    coincide with the conservation multipliers. The Hessian uses
    max(|q|, Q_EPS)^(alpha-1); residuals are evaluated on the exact equations.
    """
    net.validate_design(design)
    inc = _incidence(net)
    alpha = net.alpha
    coef = inc.lengths * np.array([net.resistance(design, a) for a in range(len(net.pipes))])
    C, N = inc.conservation, inc.loops
    q = _tree_flows(net)

    def content(qv: np.ndarray) -> float:
        return float(np.sum(coef * np.abs(qv) ** (1.0 + alpha)) / (1.0 + alpha) - inc.source_head @ qv)

    residual = np.inf
    for it in range(max_iter + 1):
        phi = coef * q * np.abs(q) ** (alpha - 1.0)
        heads = _tree_heads(net, inc, phi)
        loss_resid = phi - (heads[inc.tail_node] - heads[inc.head_node])
        residual = max(
            float(np.max(np.abs(loss_resid), initial=0.0)),
            float(np.max(np.abs(inc.demand - C @ q), initial=0.0)),
        )
        if residual <= tol:
            return HydraulicState(q.copy(), heads, residual, it)
        if it == max_iter or N.shape[1] == 0:
            break

        grad = N.T @ (phi - inc.source_head)
        hess = alpha * coef * np.maximum(np.abs(q), Q_EPS) ** (alpha - 1.0)
        try:
            dz = np.linalg.solve(N.T @ (hess[:, None] * N), -grad)
        except np.linalg.LinAlgError as exc:
            raise HydraulicError("singular loop system", residual) from exc
        dq = N @ dz

        f0 = content(q)
        slope = float(grad @ dz)
        step = 1.0
        # Near the solution the content decrease drops below rounding noise;
        # the full Newton step is then taken without the descent test.
        while step >= MIN_STEP and -slope > SLOPE_RTOL * max(1.0, abs(f0)):
            if content(q + step * dq) <= f0 + 0.25 * step * slope:
                break
            step *= 0.5
        q = q + max(step, MIN_STEP) * dq

    raise HydraulicError(
        f"fixed-design solve did not converge in {max_iter} iterations "
        f"(residual {residual:.3g})",
        residual,
    )


def check_design_feasibility(
    net: Network,
    design: DesignVector,
    *,
    head_tol: float = HEAD_TOL,
    flow_tol: float = FLOW_TOL,
    state: HydraulicState | None = None,
) -> FeasibilityResult:
    """Solve the fixed design and compare against flow and head bounds."""
    if state is None:
        state = solve_fixed_design(net, design)
    violations: list[Violation] = []
    for k, n in enumerate(net.nodes):
        if n.is_reservoir:
            continue
        h = state.heads[k]
        if h < n.head_min - head_tol:
            violations.append(Violation("head_min", n.id, h, n.head_min))
        if n.head_max is not None and h > n.head_max + head_tol:
            violations.append(Violation("head_max", n.id, h, n.head_max))
    for a, p in enumerate(net.pipes):
        opt = p.options[design[a]]
        q = state.flows[a]
        if opt.qmax_pos is not None and q > opt.qmax_pos + flow_tol:
            violations.append(Violation("flow_pos", p.id, q, opt.qmax_pos))
        if opt.qmax_neg is not None and -q > opt.qmax_neg + flow_tol:
            violations.append(Violation("flow_neg", p.id, q, -opt.qmax_neg))
    return FeasibilityResult(state, violations)


# -- primal / dual objectives ---------------------------------------------


def _arc_coef(net: Network, design: DesignVector) -> np.ndarray:
    inc = _incidence(net)
    return inc.lengths * np.array([net.resistance(design, a) for a in range(len(net.pipes))])


def head_differences(net: Network, heads: np.ndarray) -> np.ndarray:
    inc = _incidence(net)
    return heads[inc.tail_node] - heads[inc.head_node]


def evaluate_objectives(
    net: Network,
    design: DesignVector,
    state: HydraulicState | None = None,
    *,
    flows: np.ndarray | None = None,
    heads: np.ndarray | None = None,
) -> DualityReport:
    """Primal and dual objective values plus the four power terms.

    Flows are split into positive/negative parts and head differences into
    their positive/negative parts, which is the natural feasible point for the
    bound-constrained forms of both problems.
    """
    if state is not None:
        flows = state.flows if flows is None else flows
        heads = state.heads if heads is None else heads
    if flows is None or heads is None:
        raise ValueError("need a state or explicit flows and heads")
    inc = _incidence(net)
    alpha = net.alpha
    coef = _arc_coef(net, design)
    qp = np.maximum(flows, 0.0)
    qn = np.maximum(-flows, 0.0)
    dh = head_differences(net, heads)
    dhp = np.maximum(dh, 0.0)
    dhn = np.maximum(-dh, 0.0)

    f1 = float(np.sum(coef / (1 + alpha) * (qp ** (1 + alpha) + qn ** (1 + alpha))))
    f2 = float(inc.source_head @ flows)
    f3 = float(
        alpha
        / (1 + alpha)
        * np.sum(coef ** (-1.0 / alpha) * (dhp ** (1 + 1 / alpha) + dhn ** (1 + 1 / alpha)))
    )
    f4 = float(heads[inc.junction_pos] @ inc.demand)
    return DualityReport(f_primal=f1 - f2, f_dual=-f3 - f4, f1=f1, f2=f2, f3=f3, f4=f4)


def primal_objective(net: Network, design: DesignVector, flows: np.ndarray) -> float:
    heads = np.zeros(len(net.nodes))
    return evaluate_objectives(net, design, flows=flows, heads=heads).f_primal


def dual_objective(net: Network, design: DesignVector, heads: np.ndarray) -> float:
    """f_D for a full node-head vector (reservoir entries must hold h_s)."""
    flows = np.zeros(len(net.pipes))
    return evaluate_objectives(net, design, flows=flows, heads=heads).f_dual


def full_heads(net: Network, junction_heads) -> np.ndarray:
    """Node-ordered head vector from junction heads (junction order)."""
    inc = _incidence(net)
    heads = np.zeros(len(net.nodes))
    for s in net.reservoirs:
        heads[net.node_index(s.id)] = s.head
    heads[inc.junction_pos] = np.asarray(junction_heads, dtype=float)
    return heads


def lagrangian_value(
    net: Network,
    design: DesignVector,
    q_pos: np.ndarray,
    q_neg: np.ndarray,
    heads: np.ndarray,
) -> float:
    """Lagrangian of the content problem with conservation multipliers ``heads``.

    ``heads`` is node-ordered; reservoir entries are ignored in favour of the
    fixed reservoir heads.
    """
    q_pos = np.asarray(q_pos, dtype=float)
    q_neg = np.asarray(q_neg, dtype=float)
    if np.any(q_pos < 0) or np.any(q_neg < 0):
        raise ValueError("directed flows must be nonnegative")
    inc = _incidence(net)
    h = np.array(heads, dtype=float)
    for s in net.reservoirs:
        h[net.node_index(s.id)] = s.head
    alpha = net.alpha
    coef = _arc_coef(net, design)
    t = h[inc.tail_node] - h[inc.head_node]
    value = -float(h[inc.junction_pos] @ inc.demand)
    value += float(np.sum(coef / (1 + alpha) * q_pos ** (1 + alpha) - t * q_pos))
    value += float(np.sum(coef / (1 + alpha) * q_neg ** (1 + alpha) + t * q_neg))
    return value


def lagrangian_component_min(b: float, t: float, alpha: float) -> tuple[float, float]:
    """Minimizer and minimum of b/(1+alpha) * q^(1+alpha) + t*q over q >= 0."""
    if t >= 0:
        return 0.0, 0.0
    q_hat = (-t / b) ** (1.0 / alpha)
    return q_hat, -alpha / (1 + alpha) * (-t) ** (1 + 1 / alpha) / b ** (1 / alpha)
