"""Linear master problems over the discrete design space and their cut families.

Two variants share one machinery:

* ``exact``: per-option head differences, flow-direction valid inequalities and
  the linearized strong-duality row with its two nonlinear aggregate variables
  (``qnl`` for the friction content, ``dhnl`` for the head-differential term).
* ``previous``: per-arc head differences and head-loss outer approximations only.

All rows are stored as ``LinearCut`` objects; the branch-and-bound pulls rows
that were appended since its last sync.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .hydraulics import HydraulicState, head_differences
from .lp import INF, LinearProgram
from .network import DesignVector, Network

EXACT = "exact"
PREVIOUS = "previous"

STATIC = "static"
OA_HEADLOSS = "oa_headloss"
QNL = "qnl"
DHNL = "dhnl"
NOGOOD = "nogood"
CUT_TAGS = (STATIC, OA_HEADLOSS, QNL, DHNL, NOGOOD)

POS = +1
NEG = -1

DEDUP_RTOL = 1e-6


class CutError(ValueError):
    pass


@dataclass
class LinearCut:
    coeffs: dict[int, float]
    sense: str  # "<=", ">=", "=="
    rhs: float
    tag: str
    label: str = ""

    def __post_init__(self) -> None:
        if self.tag not in CUT_TAGS:
            raise CutError(f"unknown provenance tag {self.tag!r}")
        if self.sense not in ("<=", ">=", "=="):
            raise CutError(f"unknown sense {self.sense!r}")
        if not all(math.isfinite(v) for v in self.coeffs.values()) or not math.isfinite(self.rhs):
            raise CutError(f"non-finite coefficient in cut {self.label}")

    def lhs(self, x: np.ndarray) -> float:
        return float(sum(v * x[j] for j, v in self.coeffs.items()))

    def violation(self, x: np.ndarray) -> float:
        """Amount by which ``x`` violates the row (0 when satisfied)."""
        lhs = self.lhs(x)
        if self.sense == "<=":
            return max(0.0, lhs - self.rhs)
        if self.sense == ">=":
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)

    def bounds(self) -> tuple[float, float]:
        if self.sense == "<=":
            return -INF, self.rhs
        if self.sense == ">=":
            return self.rhs, INF
        return self.rhs, self.rhs


@dataclass
class OptionBounds:
    """Flow and head-difference bounds per (arc, option) as used by the master.

    Flow caps are tightened by the head-difference bound: a flow q on option p
    needs a head drop L*p*q^alpha, which cannot exceed the arc's head range.
    """

    qpos: list[np.ndarray]
    qneg: list[np.ndarray]
    dhpos: list[np.ndarray]
    dhneg: list[np.ndarray]
    dhpos_arc: np.ndarray
    dhneg_arc: np.ndarray

    @classmethod
    def from_network(cls, net: Network) -> "OptionBounds":
        if not net.bounds_derived:
            raise CutError("derive bounds before building a master problem")
        alpha = net.alpha
        qpos, qneg, dhpos, dhneg = [], [], [], []
        dhp_arc, dhn_arc = [], []
        for p in net.pipes:
            res = np.array(p.resistances)
            dh_p = p.options[0].dhmax_pos
            dh_n = p.options[0].dhmax_neg
            qp = np.minimum([o.qmax_pos for o in p.options], (dh_p / (p.length * res)) ** (1 / alpha))
            qn = np.minimum([o.qmax_neg for o in p.options], (dh_n / (p.length * res)) ** (1 / alpha))
            qpos.append(qp)
            qneg.append(qn)
            dhpos.append(np.minimum(dh_p, p.length * res * qp**alpha))
            dhneg.append(np.minimum(dh_n, p.length * res * qn**alpha))
            dhp_arc.append(float(dhpos[-1].max()))
            dhn_arc.append(float(dhneg[-1].max()))
        return cls(qpos, qneg, dhpos, dhneg, np.array(dhp_arc), np.array(dhn_arc))

    def q(self, a: int, direction: int) -> np.ndarray:
        return self.qpos[a] if direction == POS else self.qneg[a]

    def dh(self, a: int, direction: int) -> np.ndarray:
        return self.dhpos[a] if direction == POS else self.dhneg[a]


@dataclass
class VariableSpace:
    names: list[str] = field(default_factory=list)
    lb: list[float] = field(default_factory=list)
    ub: list[float] = field(default_factory=list)
    binary: list[bool] = field(default_factory=list)
    x: list[list[int]] = field(default_factory=list)
    y: list[int] = field(default_factory=list)
    qp: list[list[int]] = field(default_factory=list)
    qn: list[list[int]] = field(default_factory=list)
    dhp: list[list[int]] = field(default_factory=list)  # per option (exact) or [arc] (previous)
    dhn: list[list[int]] = field(default_factory=list)
    h: dict[str, int] = field(default_factory=dict)
    qnl: list[int] = field(default_factory=list)
    dhnl: list[int] = field(default_factory=list)

    def add(self, name: str, lb: float, ub: float, binary: bool = False) -> int:
        self.names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.binary.append(binary)
        return len(self.names) - 1

    def __len__(self) -> int:
        return len(self.names)

    @property
    def binary_count(self) -> int:
        return sum(self.binary)

    def x_indices(self) -> list[int]:
        return [j for xs in self.x for j in xs]


@dataclass
class RelaxationPoint:
    """LP solution unpacked into per-arc arrays."""

    x: list[np.ndarray]
    y: np.ndarray
    qp: list[np.ndarray]
    qn: list[np.ndarray]
    dhp: list[np.ndarray]
    dhn: list[np.ndarray]
    qnl: np.ndarray | None
    dhnl: np.ndarray | None
    objective: float

    def q(self, a: int, direction: int) -> np.ndarray:
        return self.qp[a] if direction == POS else self.qn[a]

    def dh(self, a: int, direction: int) -> np.ndarray:
        return self.dhp[a] if direction == POS else self.dhn[a]


class MasterProblem:
    def __init__(self, net: Network, variant: str = EXACT):
        if variant not in (EXACT, PREVIOUS):
            raise ValueError(f"unknown master variant {variant!r}")
        self.net = net
        self.variant = variant
        self.bounds = OptionBounds.from_network(net)
        self.space = VariableSpace()
        self.cuts: list[LinearCut] = []
        self._points: dict[tuple, list[float]] = {}
        self._build_variables()
        self.objective = np.zeros(len(self.space))
        for a, p in enumerate(net.pipes):
            for k, o in enumerate(p.options):
                self.objective[self.space.x[a][k]] = p.length * o.cost
        self._build_static()

    @property
    def exact(self) -> bool:
        return self.variant == EXACT

    # -- construction -------------------------------------------------------

    def _build_variables(self) -> None:
        net, sp_, b = self.net, self.space, self.bounds
        alpha = net.alpha
        for a, p in enumerate(net.pipes):
            sp_.x.append([sp_.add(f"x[{p.id},{k}]", 0, 1, True) for k in range(len(p.options))])
        for a, p in enumerate(net.pipes):
            sp_.y.append(sp_.add(f"y[{p.id}]", 0, 1, True))
        for a, p in enumerate(net.pipes):
            n_opt = len(p.options)
            sp_.qp.append([sp_.add(f"qp[{p.id},{k}]", 0, b.qpos[a][k]) for k in range(n_opt)])
            sp_.qn.append([sp_.add(f"qn[{p.id},{k}]", 0, b.qneg[a][k]) for k in range(n_opt)])
            if self.exact:
                sp_.dhp.append([sp_.add(f"dhp[{p.id},{k}]", 0, b.dhpos[a][k]) for k in range(n_opt)])
                sp_.dhn.append([sp_.add(f"dhn[{p.id},{k}]", 0, b.dhneg[a][k]) for k in range(n_opt)])
            else:
                sp_.dhp.append([sp_.add(f"dhp[{p.id}]", 0, b.dhpos_arc[a])])
                sp_.dhn.append([sp_.add(f"dhn[{p.id}]", 0, b.dhneg_arc[a])])
        for n in net.junctions:
            sp_.h[n.id] = sp_.add(f"h[{n.id}]", n.head_min, n.head_max)
        if self.exact:
            for a, p in enumerate(net.pipes):
                res = np.array(p.resistances)
                qmax = np.maximum(b.qpos[a], b.qneg[a])
                dmax = np.maximum(b.dhpos[a], b.dhneg[a])
                qnl_ub = float(np.max(res * qmax ** (1 + alpha)) / (1 + alpha))
                dhnl_ub = float(
                    np.max(alpha / (1 + alpha) * res ** (-1 / alpha) * dmax ** (1 + 1 / alpha))
                )
                sp_.qnl.append(sp_.add(f"qnl[{p.id}]", 0, qnl_ub))
                sp_.dhnl.append(sp_.add(f"dhnl[{p.id}]", 0, dhnl_ub))

    def _static(self, coeffs: dict[int, float], sense: str, rhs: float, label: str) -> None:
        self.cuts.append(LinearCut(coeffs, sense, rhs, STATIC, label))

    def _build_static(self) -> None:
        net, V, b = self.net, self.space, self.bounds
        alpha = net.alpha

        for a, p in enumerate(net.pipes):
            self._static({j: 1.0 for j in V.x[a]}, "==", 1.0, f"select[{p.id}]")

        for n in net.junctions:
            row: dict[int, float] = {}
            for a in net.in_arcs(n.id):
                for k in range(len(net.pipes[a].options)):
                    row[V.qp[a][k]] = row.get(V.qp[a][k], 0.0) + 1.0
                    row[V.qn[a][k]] = row.get(V.qn[a][k], 0.0) - 1.0
            for a in net.out_arcs(n.id):
                for k in range(len(net.pipes[a].options)):
                    row[V.qp[a][k]] = row.get(V.qp[a][k], 0.0) - 1.0
                    row[V.qn[a][k]] = row.get(V.qn[a][k], 0.0) + 1.0
            self._static(row, "==", n.demand, f"conservation[{n.id}]")

        for a, p in enumerate(net.pipes):
            row = {j: 1.0 for j in V.dhp[a]}
            row.update({j: -1.0 for j in V.dhn[a]})
            rhs = 0.0
            tail = net.node(p.tail)
            if tail.is_reservoir:
                rhs += tail.head
            else:
                row[V.h[p.tail]] = -1.0
            row[V.h[p.head]] = 1.0
            self._static(row, "==", rhs, f"headdiff[{p.id}]")

        for a, p in enumerate(net.pipes):
            y = V.y[a]
            for k, o in enumerate(p.options):
                x = V.x[a][k]
                qp_bar, qn_bar = b.qpos[a][k], b.qneg[a][k]
                self._static({V.qp[a][k]: 1.0, x: -qp_bar}, "<=", 0.0, f"qp_x[{p.id},{k}]")
                self._static({V.qn[a][k]: 1.0, x: -qn_bar}, "<=", 0.0, f"qn_x[{p.id},{k}]")
                self._static({V.qp[a][k]: 1.0, y: -qp_bar}, "<=", 0.0, f"qp_y[{p.id},{k}]")
                self._static({V.qn[a][k]: 1.0, y: qn_bar}, "<=", qn_bar, f"qn_y[{p.id},{k}]")
                if self.exact:
                    dp_bar, dn_bar = b.dhpos[a][k], b.dhneg[a][k]
                    dp, dn = V.dhp[a][k], V.dhn[a][k]
                    self._static({dp: 1.0, x: -dp_bar}, "<=", 0.0, f"dhp_x[{p.id},{k}]")
                    self._static({dn: 1.0, x: -dn_bar}, "<=", 0.0, f"dhn_x[{p.id},{k}]")
                    self._static({dp: 1.0, y: -dp_bar}, "<=", 0.0, f"dhp_y[{p.id},{k}]")
                    self._static({dn: 1.0, y: dn_bar}, "<=", dn_bar, f"dhn_y[{p.id},{k}]")
                    # secant upper bound on each head difference
                    self._static(
                        {dp: 1.0, V.qp[a][k]: -p.length * o.resistance * _pow(qp_bar, alpha - 1)},
                        "<=", 0.0, f"dhp_ub[{p.id},{k}]",
                    )
                    self._static(
                        {dn: 1.0, V.qn[a][k]: -p.length * o.resistance * _pow(qn_bar, alpha - 1)},
                        "<=", 0.0, f"dhn_ub[{p.id},{k}]",
                    )
            if not self.exact:
                dp, dn = V.dhp[a][0], V.dhn[a][0]
                self._static({dp: 1.0, y: -b.dhpos_arc[a]}, "<=", 0.0, f"dhp_y[{p.id}]")
                self._static({dn: 1.0, y: b.dhneg_arc[a]}, "<=", b.dhneg_arc[a], f"dhn_y[{p.id}]")
                row = {dp: 1.0}
                for k, o in enumerate(p.options):
                    row[V.qp[a][k]] = -p.length * o.resistance * _pow(b.qpos[a][k], alpha - 1)
                self._static(row, "<=", 0.0, f"dhp_ub[{p.id}]")
                row = {dn: 1.0}
                for k, o in enumerate(p.options):
                    row[V.qn[a][k]] = -p.length * o.resistance * _pow(b.qneg[a][k], alpha - 1)
                self._static(row, "<=", 0.0, f"dhn_ub[{p.id}]")

        if self.exact:
            self._build_direction_inequalities()
            self._build_strong_duality_row()

    def _build_direction_inequalities(self) -> None:
        net, V = self.net, self.space
        for s in net.reservoirs:
            out = net.out_arcs(s.id)
            if out:
                self._static({V.y[a]: 1.0 for a in out}, ">=", 1.0, f"source_out[{s.id}]")
        for n in net.junctions:
            ins, outs = net.in_arcs(n.id), net.out_arcs(n.id)
            if n.demand > 0:
                row = {V.y[a]: 1.0 for a in ins}
                for a in outs:
                    row[V.y[a]] = row.get(V.y[a], 0.0) - 1.0
                self._static(row, ">=", 1.0 - len(outs), f"demand_in[{n.id}]")
            elif len(ins) == 1 and len(outs) == 1:
                self._static({V.y[ins[0]]: 1.0, V.y[outs[0]]: -1.0}, "==", 0.0, f"deg2[{n.id}]")
            elif (len(ins), len(outs)) in ((2, 0), (0, 2)):
                arcs = ins or outs
                self._static({V.y[a]: 1.0 for a in arcs}, "==", 1.0, f"deg2[{n.id}]")

    def _build_strong_duality_row(self) -> None:
        net, V = self.net, self.space
        alpha = net.alpha
        row: dict[int, float] = {}
        for a, p in enumerate(net.pipes):
            row[V.qnl[a]] = p.length
            row[V.dhnl[a]] = p.length ** (-1.0 / alpha)
        for s in net.reservoirs:
            for a in net.out_arcs(s.id):
                for k in range(len(net.pipes[a].options)):
                    row[V.qp[a][k]] = row.get(V.qp[a][k], 0.0) - s.head
                    row[V.qn[a][k]] = row.get(V.qn[a][k], 0.0) + s.head
        for n in net.junctions:
            if n.demand:
                row[V.h[n.id]] = row.get(V.h[n.id], 0.0) + n.demand
        self._static(row, "<=", 0.0, "strong_duality")

    # -- cut management -------------------------------------------------------

    def add_cut(self, cut: LinearCut, key: tuple | None = None, point: float | None = None) -> bool:
        """Append a cut unless one of the same family/arc/reference/direction
        already sits within a relative 1e-6 of ``point``."""
        if key is not None and point is not None:
            seen = self._points.setdefault(key, [])
            for other in seen:
                if abs(other - point) <= DEDUP_RTOL * max(abs(other), abs(point), 1e-12):
                    return False
            seen.append(point)
        self.cuts.append(cut)
        return True

    def count(self, tag: str) -> int:
        return sum(1 for c in self.cuts if c.tag == tag)

    def labels(self, tag: str = STATIC) -> list[str]:
        return [c.label for c in self.cuts if c.tag == tag]

    @property
    def binary_count(self) -> int:
        return self.space.binary_count

    def rows(self, start: int = 0) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
        cuts = self.cuts[start:]
        data, indices, indptr = [], [], [0]
        lower = np.empty(len(cuts))
        upper = np.empty(len(cuts))
        for k, c in enumerate(cuts):
            for j, v in c.coeffs.items():
                indices.append(j)
                data.append(v)
            indptr.append(len(indices))
            lower[k], upper[k] = c.bounds()
        A = sp.csr_matrix((data, indices, indptr), shape=(len(cuts), len(self.space)))
        return A, lower, upper

    def to_lp(self) -> LinearProgram:
        A, lo, hi = self.rows()
        return LinearProgram(self.objective, A, lo, hi, np.array(self.space.lb), np.array(self.space.ub))

    def max_violation(self, x: np.ndarray, tags: Iterable[str] = CUT_TAGS) -> float:
        tags = set(tags)
        v = max((c.violation(x) for c in self.cuts if c.tag in tags), default=0.0)
        lb, ub = np.array(self.space.lb), np.array(self.space.ub)
        return max(v, float(np.max(np.maximum(lb - x, 0.0))), float(np.max(np.maximum(x - ub, 0.0))))

    def unpack(self, x: np.ndarray, objective: float = float("nan")) -> RelaxationPoint:
        V = self.space
        take = lambda groups: [x[np.array(g)] for g in groups]
        return RelaxationPoint(
            x=take(V.x),
            y=x[np.array(V.y)],
            qp=take(V.qp),
            qn=take(V.qn),
            dhp=take(V.dhp),
            dhn=take(V.dhn),
            qnl=x[np.array(V.qnl)] if V.qnl else None,
            dhnl=x[np.array(V.dhnl)] if V.dhnl else None,
            objective=objective,
        )

    def design_from(self, x: np.ndarray, tol: float = 1e-6) -> DesignVector | None:
        """Design encoded by ``x`` if every x_ap is integral, else None."""
        choice = []
        for xs in self.space.x:
            vals = x[np.array(xs)]
            if np.any(np.minimum(vals, 1.0 - vals) > tol):
                return None
            ones = np.flatnonzero(vals > 0.5)
            if len(ones) != 1:
                return None
            choice.append(int(ones[0]))
        return DesignVector(tuple(choice))

    def export_lp_text(self) -> str:
        V = self.space
        out = ["Minimize", " obj: " + _expr({j: v for j, v in enumerate(self.objective) if v}, V.names)]
        out.append("Subject To")
        for k, c in enumerate(self.cuts):
            sense = "=" if c.sense == "==" else c.sense
            out.append(f" c{k}_{c.tag}: {_expr(c.coeffs, V.names)} {sense} {c.rhs:.12g}  \\ {c.label}")
        out.append("Bounds")
        for name, lo, hi in zip(V.names, V.lb, V.ub):
            out.append(f" {lo:.12g} <= {name} <= {hi:.12g}")
        out.append("Binaries")
        out.append(" " + " ".join(n for n, b in zip(V.names, V.binary) if b))
        out.append("End")
        return "\n".join(out) + "\n"


def _pow(base: float, exp: float) -> float:
    return 0.0 if base == 0.0 else float(base) ** exp


def _expr(coeffs: dict[int, float], names: list[str]) -> str:
    terms = [f"{'+' if v >= 0 else '-'} {abs(v):.12g} {names[j]}" for j, v in sorted(coeffs.items())]
    return " ".join(terms) if terms else "0"


def build_master(net: Network, variant: str = EXACT) -> MasterProblem:
    """MIP-E (``exact``) or MIP-R (``previous``) master with static rows only."""
    return MasterProblem(net, variant)


# -- equal-intercept outer approximations ------------------------------------


def companion_points(point: float, ref_res: float, resistances, exponent: float) -> np.ndarray:
    """Points that share one tangent intercept across all options.

    ``exponent`` is 1/alpha for head loss, 1/(1+alpha) for the friction content
    (points scale like (r/p)^exponent) and -1/(1+alpha) for head differentials.
    """
    res = np.asarray(resistances, dtype=float)
    return point * (ref_res / res) ** exponent


def _check_point(point: float, upper: float, what: str) -> None:
    if not (0.0 <= point <= upper * (1 + 1e-9) + 1e-15):
        raise CutError(f"{what} reference point {point} outside [0, {upper}]")


def _direction_terms(y: int, coeff: float, direction: int) -> tuple[dict[int, float], float]:
    """coeff * y (positive) or coeff * (1 - y) (negative) as (row part, rhs shift)."""
    if direction == POS:
        return {y: coeff}, 0.0
    return {y: -coeff}, -coeff


def oa_headloss_cut(master: MasterProblem, a: int, ref: int, point: float, direction: int) -> LinearCut:
    """Aggregated equal-intercept tangent cut on the convexified head loss."""
    net, V = master.net, master.space
    p = net.pipes[a]
    alpha = net.alpha
    res = np.array(p.resistances)
    _check_point(point, master.bounds.q(a, direction)[ref], "flow")
    r = res[ref]
    tau = (1 - alpha) * r * point**alpha
    pts = companion_points(point, r, res, 1 / alpha)
    flows = V.qp[a] if direction == POS else V.qn[a]
    heads = V.dhp[a] if direction == POS else V.dhn[a]
    row, shift = _direction_terms(V.y[a], tau, direction)
    for k, j in enumerate(flows):
        slope = alpha * res[k] * _pow(pts[k], alpha - 1)
        if slope:
            row[j] = row.get(j, 0.0) + slope
    for j in heads:
        row[j] = row.get(j, 0.0) - 1.0 / p.length
    sign = "+" if direction == POS else "-"
    return LinearCut(row, "<=", shift, OA_HEADLOSS, f"oa{sign}[{p.id},{ref}]@{point:.6g}")


def strong_duality_cut(
    master: MasterProblem, a: int, ref: int, point: float, kind: str, direction: int
) -> LinearCut:
    """Equal-intercept tangent cut lower-bounding ``qnl`` or ``dhnl`` on arc a."""
    if not master.exact:
        raise CutError("strong-duality cuts need the exact master")
    net, V = master.net, master.space
    p = net.pipes[a]
    alpha = net.alpha
    res = np.array(p.resistances)
    r = res[ref]
    sign = "+" if direction == POS else "-"
    if kind == QNL:
        _check_point(point, master.bounds.q(a, direction)[ref], "flow")
        zeta = (1 / (1 + alpha) - 1) * r * point ** (1 + alpha)
        pts = companion_points(point, r, res, 1 / (1 + alpha))
        row, shift = _direction_terms(V.y[a], zeta, direction)
        flows = V.qp[a] if direction == POS else V.qn[a]
        for k, j in enumerate(flows):
            slope = res[k] * pts[k] ** alpha
            if slope:
                row[j] = row.get(j, 0.0) + slope
        row[V.qnl[a]] = -1.0
        return LinearCut(row, "<=", shift, QNL, f"qnl{sign}[{p.id},{ref}]@{point:.6g}")
    if kind == DHNL:
        _check_point(point, master.bounds.dh(a, direction)[ref], "head difference")
        xi = point ** (1 + 1 / alpha) / ((1 + alpha) * r ** (1 / alpha))
        pts = companion_points(point, r, res, -1 / (1 + alpha))
        row, shift = _direction_terms(V.y[a], -xi, direction)
        heads = V.dhp[a] if direction == POS else V.dhn[a]
        for k, j in enumerate(heads):
            slope = (pts[k] / res[k]) ** (1 / alpha)
            if slope:
                row[j] = row.get(j, 0.0) + slope
        row[V.dhnl[a]] = -1.0
        return LinearCut(row, "<=", shift, DHNL, f"dhnl{sign}[{p.id},{ref}]@{point:.6g}")
    raise CutError(f"unknown strong-duality cut kind {kind!r}")


def nogood_cut(master: MasterProblem, design: DesignVector) -> LinearCut:
    """Combinatorial cut removing exactly ``design`` from the selection polytope."""
    net, V = master.net, master.space
    net.validate_design(design)
    row = {}
    for a, xs in enumerate(V.x):
        for k, j in enumerate(xs):
            row[j] = 1.0 if design[a] == k else -1.0
    label = "nogood[" + ",".join(map(str, design)) + "]"
    return LinearCut(row, "<=", len(net.pipes) - 1.0, NOGOOD, label)


def tangent_intercepts(point: float, ref_res: float, resistances, alpha: float, kind: str) -> np.ndarray:
    """Per-option tangent intercepts at the companion points (for checks)."""
    res = np.asarray(resistances, dtype=float)
    if kind == OA_HEADLOSS:
        pts = companion_points(point, ref_res, res, 1 / alpha)
        return (1 - alpha) * res * pts**alpha
    if kind == QNL:
        pts = companion_points(point, ref_res, res, 1 / (1 + alpha))
        g = res * pts ** (1 + alpha) / (1 + alpha)
        return g - res * pts**alpha * pts
    if kind == DHNL:
        pts = companion_points(point, ref_res, res, -1 / (1 + alpha))
        g = alpha / (1 + alpha) * res ** (-1 / alpha) * pts ** (1 + 1 / alpha)
        return g - (pts / res) ** (1 / alpha) * pts
    raise CutError(f"unknown kind {kind!r}")


# -- lifting a physical state into the master's variable space ----------------


def lift(master: MasterProblem, design: DesignVector, state: HydraulicState) -> np.ndarray:
    """Master point induced by a design and its exact hydraulic state.

    Zero-flow arcs take y = 1.
    """
    net, V = master.net, master.space
    alpha = net.alpha
    v = np.zeros(len(V))
    dh = head_differences(net, state.heads)
    for a, p in enumerate(net.pipes):
        k = design[a]
        q = float(state.flows[a])
        r = p.options[k].resistance
        v[V.x[a][k]] = 1.0
        v[V.y[a]] = 0.0 if q < 0 else 1.0
        v[V.qp[a][k]] = max(q, 0.0)
        v[V.qn[a][k]] = max(-q, 0.0)
        slot = k if master.exact else 0
        v[V.dhp[a][slot]] = max(dh[a], 0.0)
        v[V.dhn[a][slot]] = max(-dh[a], 0.0)
        if master.exact:
            v[V.qnl[a]] = r * abs(q) ** (1 + alpha) / (1 + alpha)
            v[V.dhnl[a]] = alpha / (1 + alpha) * r ** (-1 / alpha) * abs(dh[a]) ** (1 + 1 / alpha)
    for n in net.junctions:
        v[V.h[n.id]] = state.heads[net.node_index(n.id)]
    return v
