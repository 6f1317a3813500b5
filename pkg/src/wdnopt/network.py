"""Network data model: nodes, pipes with discrete resistance menus, and bounds."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import networkx as nx

logger = logging.getLogger(__name__)

RESERVOIR = "reservoir"
JUNCTION = "junction"
SUPPORTED_ALPHAS = (1.852, 2.0)

# Hazen-Williams constant in SI units.
HW_CONSTANT = 10.7
HW_DIAMETER_EXPONENT = 4.8704


class NetworkError(ValueError):
    """Base class for instance problems."""


class ParseError(NetworkError):
    """The instance file does not follow the JSON schema."""


class ValidationError(NetworkError):
    """The instance parsed but violates a structural invariant."""


def hazen_williams_resistance(diameter: float, roughness: float) -> float:
    """Per-unit-length resistance for a Hazen-Williams pipe (SI units)."""
    if diameter <= 0 or roughness <= 0:
        raise ValidationError("diameter and roughness must be positive")
    return HW_CONSTANT / (roughness**1.852 * diameter**HW_DIAMETER_EXPONENT)


def velocity_flow_bound(diameter: float, vmax: float) -> float:
    if diameter <= 0:
        raise ValidationError(f"diameter must be positive, got {diameter}")
    if vmax <= 0:
        raise ValidationError(f"vmax must be positive, got {vmax}")
    return math.pi / 4.0 * vmax * diameter**2


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    head: float | None = None
    demand: float = 0.0
    head_min: float | None = None
    head_max: float | None = None

    @property
    def is_reservoir(self) -> bool:
        return self.kind == RESERVOIR


@dataclass(frozen=True)
class ResistanceOption:
    resistance: float
    cost: float
    diameter: float | None = None
    roughness: float | None = None
    qmax_pos: float | None = None
    qmax_neg: float | None = None
    dhmax_pos: float | None = None
    dhmax_neg: float | None = None


@dataclass(frozen=True)
class Pipe:
    id: str
    tail: str
    head: str
    length: float
    options: tuple[ResistanceOption, ...]
    vmax: float | None = None

    @property
    def resistances(self) -> tuple[float, ...]:
        return tuple(o.resistance for o in self.options)

    @property
    def costs(self) -> tuple[float, ...]:
        return tuple(o.cost for o in self.options)


@dataclass(frozen=True)
class DesignVector:
    """One option index per pipe, ordered like ``Network.pipes``."""

    choice: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "choice", tuple(int(c) for c in self.choice))

    def __len__(self) -> int:
        return len(self.choice)

    def __getitem__(self, a: int) -> int:
        return self.choice[a]

    def __iter__(self):
        return iter(self.choice)

    @classmethod
    def from_mapping(cls, net: "Network", mapping: Mapping[str, int]) -> "DesignVector":
        missing = [p.id for p in net.pipes if p.id not in mapping]
        if missing:
            raise ValidationError(f"design has no option for pipes {missing}")
        extra = set(mapping) - {p.id for p in net.pipes}
        if extra:
            raise ValidationError(f"design references unknown pipes {sorted(extra)}")
        design = cls(tuple(mapping[p.id] for p in net.pipes))
        net.validate_design(design)
        return design

    def as_mapping(self, net: "Network") -> dict[str, int]:
        return {p.id: c for p, c in zip(net.pipes, self.choice)}


@dataclass(frozen=True, eq=False)
class Network:
    nodes: tuple[Node, ...]
    pipes: tuple[Pipe, ...]
    alpha: float
    name: str = "network"
    _node_index: dict[str, int] = field(init=False, repr=False, compare=False)
    _pipe_index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "pipes", tuple(self.pipes))
        object.__setattr__(self, "_node_index", {n.id: k for k, n in enumerate(self.nodes)})
        object.__setattr__(self, "_pipe_index", {p.id: k for k, p in enumerate(self.pipes)})
        validate_network(self)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return (self.nodes, self.pipes, self.alpha, self.name) == (
            other.nodes,
            other.pipes,
            other.alpha,
            other.name,
        )

    def __hash__(self) -> int:
        return hash((self.nodes, self.pipes, self.alpha, self.name))

    def node(self, node_id: str) -> Node:
        return self.nodes[self._node_index[node_id]]

    def node_index(self, node_id: str) -> int:
        return self._node_index[node_id]

    def pipe_index(self, pipe_id: str) -> int:
        return self._pipe_index[pipe_id]

    @property
    def reservoirs(self) -> list[Node]:
        return [n for n in self.nodes if n.is_reservoir]

    @property
    def junctions(self) -> list[Node]:
        return [n for n in self.nodes if not n.is_reservoir]

    def out_arcs(self, node_id: str) -> list[int]:
        return [a for a, p in enumerate(self.pipes) if p.tail == node_id]

    def in_arcs(self, node_id: str) -> list[int]:
        return [a for a, p in enumerate(self.pipes) if p.head == node_id]

    @property
    def total_demand(self) -> float:
        return sum(n.demand for n in self.junctions)

    @property
    def max_source_head(self) -> float:
        return max(n.head for n in self.reservoirs)

    @property
    def n_designs(self) -> int:
        return math.prod(len(p.options) for p in self.pipes)

    @property
    def bounds_derived(self) -> bool:
        return all(
            o.qmax_pos is not None and o.dhmax_pos is not None
            for p in self.pipes
            for o in p.options
        ) and all(n.head_max is not None for n in self.junctions)

    def resistance(self, design: DesignVector, a: int) -> float:
        return self.pipes[a].options[design[a]].resistance

    def design_cost(self, design: DesignVector) -> float:
        return sum(p.length * p.options[c].cost for p, c in zip(self.pipes, design))

    def validate_design(self, design: DesignVector) -> None:
        if len(design) != len(self.pipes):
            raise ValidationError(
                f"design has {len(design)} entries for {len(self.pipes)} pipes"
            )
        for p, c in zip(self.pipes, design):
            if not 0 <= c < len(p.options):
                raise ValidationError(f"pipe {p.id}: option index {c} out of range")

    def graph(self) -> nx.MultiGraph:
        g = nx.MultiGraph()
        g.add_nodes_from(n.id for n in self.nodes)
        for a, p in enumerate(self.pipes):
            g.add_edge(p.tail, p.head, key=a)
        return g

    def scaled(self, factor: float) -> "Network":
        """Copy with every junction demand multiplied by ``factor``."""
        if factor <= 0:
            raise ValidationError("demand scaling factor must be positive")
        nodes = [
            n if n.is_reservoir else replace(n, demand=n.demand * factor) for n in self.nodes
        ]
        return replace(self, nodes=tuple(nodes))


def validate_network(net: Network) -> None:
    if net.alpha not in SUPPORTED_ALPHAS:
        raise ValidationError(f"alpha must be one of {SUPPORTED_ALPHAS}, got {net.alpha}")
    if len(net._node_index) != len(net.nodes):
        raise ValidationError("duplicate node ids")
    if len(net._pipe_index) != len(net.pipes):
        raise ValidationError("duplicate pipe ids")
    if not net.reservoirs:
        raise ValidationError("network needs at least one reservoir")

    for n in net.nodes:
        if n.kind not in (RESERVOIR, JUNCTION):
            raise ValidationError(f"node {n.id}: unknown kind {n.kind!r}")
        if n.is_reservoir:
            if n.head is None or not math.isfinite(n.head):
                raise ValidationError(f"reservoir {n.id} needs a finite head")
            continue
        if n.demand < 0:
            raise ValidationError(f"node {n.id}: demand must be nonnegative")
        if n.head_min is None:
            raise ValidationError(f"junction {n.id} needs head_min")
        if n.head_max is not None and n.head_min > n.head_max:
            raise ValidationError(f"junction {n.id}: head_min exceeds head_max")

    for p in net.pipes:
        for end in (p.tail, p.head):
            if end not in net._node_index:
                raise ValidationError(f"pipe {p.id}: unknown node {end!r}")
        if p.tail == p.head:
            raise ValidationError(f"pipe {p.id} is a self-loop")
        if net.node(p.head).is_reservoir:
            raise ValidationError(
                f"pipe {p.id}: arcs incident to a reservoir must leave it"
            )
        if not p.length > 0:
            raise ValidationError(f"pipe {p.id}: length must be positive")
        if not p.options:
            raise ValidationError(f"pipe {p.id} has no resistance options")
        for o in p.options:
            if not o.resistance > 0:
                raise ValidationError(f"pipe {p.id}: resistance must be positive")
            if o.cost < 0:
                raise ValidationError(f"pipe {p.id}: cost must be nonnegative")
            for name in ("qmax_pos", "qmax_neg", "dhmax_pos", "dhmax_neg"):
                v = getattr(o, name)
                if v is not None and v < 0:
                    raise ValidationError(f"pipe {p.id}: {name} must be nonnegative")
        for lo, hi in zip(p.options, p.options[1:]):
            if not hi.resistance < lo.resistance:
                raise ValidationError(
                    f"pipe {p.id}: options must be sorted by strictly decreasing resistance"
                )
            if hi.cost < lo.cost:
                raise ValidationError(
                    f"pipe {p.id}: dominated option (higher resistance costs more)"
                )

    if not nx.is_connected(net.graph()):
        raise ValidationError("network graph is not connected")


def derive_bounds(net: Network, vmax: float | Mapping[str, float] | None = None) -> Network:
    """Fill in flow bounds, junction head ceilings and head-difference bounds.

    ``vmax`` overrides the per-pipe velocity limit (a scalar for every pipe or a
    mapping by pipe id). Explicit per-option flow bounds in the instance win;
    without them the velocity limit applies to options with a diameter, and
    failing that the total demand (no potential flow can carry more).
    """
    top = net.max_source_head
    nodes = []
    for n in net.nodes:
        if not n.is_reservoir and n.head_max is None:
            # a minimum above every source head stays representable; the master
            # problem then proves infeasibility
            n = replace(n, head_max=max(top, n.head_min))
        nodes.append(n)
    by_id = {n.id: n for n in nodes}

    def lo_hi(node_id: str) -> tuple[float, float]:
        n = by_id[node_id]
        if n.is_reservoir:
            return n.head, n.head
        return n.head_min, n.head_max

    pipes = []
    for p in net.pipes:
        if isinstance(vmax, Mapping):
            v = vmax.get(p.id, p.vmax)
        elif vmax is not None:
            v = vmax
        else:
            v = p.vmax
        lo_i, hi_i = lo_hi(p.tail)
        lo_j, hi_j = lo_hi(p.head)
        dh_pos = max(0.0, hi_i - lo_j)
        dh_neg = max(0.0, hi_j - lo_i)
        options = []
        for o in p.options:
            qpos, qneg = o.qmax_pos, o.qmax_neg
            if qpos is None or qneg is None:
                if o.diameter is None:
                    raise ValidationError(
                        f"pipe {p.id}: option needs a diameter or explicit flow bounds"
                    )
                if v is not None:
                    qbar = velocity_flow_bound(o.diameter, v)
                else:
                    # potential flows are acyclic and sources only send water out
                    qbar = net.total_demand
                qpos = qbar if qpos is None else qpos
                qneg = qbar if qneg is None else qneg
            options.append(
                replace(o, qmax_pos=qpos, qmax_neg=qneg, dhmax_pos=dh_pos, dhmax_neg=dh_neg)
            )
        pipes.append(replace(p, options=tuple(options), vmax=v))

    out = replace(net, nodes=tuple(nodes), pipes=tuple(pipes))
    _warn_capacity(out)
    return out


def _warn_capacity(net: Network) -> None:
    supply = sum(
        net.pipes[a].options[-1].qmax_pos
        for s in net.reservoirs
        for a in net.out_arcs(s.id)
    )
    if supply < net.total_demand:
        logger.warning(
            "total demand %.6g exceeds source delivery capacity %.6g", net.total_demand, supply
        )


# -- JSON I/O ---------------------------------------------------------------


def _require(obj: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in obj:
        raise ParseError(f"{where}: missing field {key!r}")
    return obj[key]


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _opt_number(obj: Mapping[str, Any], key: str, where: str) -> float | None:
    if obj.get(key) is None:
        return None
    return _number(obj[key], f"{where}.{key}")


def network_from_dict(data: Mapping[str, Any], name: str = "network") -> Network:
    if not isinstance(data, Mapping):
        raise ParseError("instance root must be an object")
    alpha = _number(_require(data, "alpha", "instance"), "alpha")
    raw_nodes = _require(data, "nodes", "instance")
    raw_pipes = _require(data, "pipes", "instance")
    if not isinstance(raw_nodes, list) or not isinstance(raw_pipes, list):
        raise ParseError("'nodes' and 'pipes' must be arrays")

    nodes = []
    for k, rn in enumerate(raw_nodes):
        where = f"nodes[{k}]"
        node_id = str(_require(rn, "id", where))
        kind = _require(rn, "kind", where)
        if kind == RESERVOIR:
            nodes.append(
                Node(node_id, kind, head=_number(_require(rn, "head", where), f"{where}.head"))
            )
        elif kind == JUNCTION:
            nodes.append(
                Node(
                    node_id,
                    kind,
                    demand=_number(_require(rn, "demand", where), f"{where}.demand"),
                    head_min=_number(_require(rn, "head_min", where), f"{where}.head_min"),
                    head_max=_opt_number(rn, "head_max", where),
                )
            )
        else:
            raise ParseError(f"{where}.kind: expected 'reservoir' or 'junction', got {kind!r}")

    pipes = []
    for k, rp in enumerate(raw_pipes):
        where = f"pipes[{k}]"
        raw_opts = _require(rp, "options", where)
        if not isinstance(raw_opts, list):
            raise ParseError(f"{where}.options must be an array")
        options = []
        for m, ro in enumerate(raw_opts):
            ow = f"{where}.options[{m}]"
            diameter = roughness = None
            if "diameter_roughness" in ro:
                pair = ro["diameter_roughness"]
                if not isinstance(pair, list) or len(pair) != 2:
                    raise ParseError(f"{ow}.diameter_roughness must be [D, kappa]")
                diameter = _number(pair[0], f"{ow}.diameter_roughness[0]")
                roughness = _number(pair[1], f"{ow}.diameter_roughness[1]")
            if "resistance" in ro:
                resistance = _number(ro["resistance"], f"{ow}.resistance")
            elif diameter is not None:
                if alpha != 1.852:
                    raise ParseError(f"{ow}: diameter_roughness needs alpha=1.852")
                resistance = hazen_williams_resistance(diameter, roughness)
            else:
                raise ParseError(f"{ow}: missing field 'resistance' or 'diameter_roughness'")
            options.append(
                ResistanceOption(
                    resistance=resistance,
                    cost=_number(_require(ro, "cost", ow), f"{ow}.cost"),
                    diameter=diameter,
                    roughness=roughness,
                    qmax_pos=_opt_number(ro, "qmax_pos", ow),
                    qmax_neg=_opt_number(ro, "qmax_neg", ow),
                )
            )
        pipes.append(
            Pipe(
                id=str(_require(rp, "id", where)),
                tail=str(_require(rp, "tail", where)),
                head=str(_require(rp, "head", where)),
                length=_number(_require(rp, "length", where), f"{where}.length"),
                options=tuple(options),
                vmax=_opt_number(rp, "vmax", where),
            )
        )
    return Network(tuple(nodes), tuple(pipes), alpha, name=str(data.get("name", name)))


def parse_network(path: str | Path) -> Network:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    return network_from_dict(data, name=path.stem)


def network_to_dict(net: Network) -> dict[str, Any]:
    nodes = []
    for n in net.nodes:
        if n.is_reservoir:
            nodes.append({"id": n.id, "kind": n.kind, "head": n.head})
        else:
            d = {"id": n.id, "kind": n.kind, "demand": n.demand, "head_min": n.head_min}
            if n.head_max is not None:
                d["head_max"] = n.head_max
            nodes.append(d)
    pipes = []
    for p in net.pipes:
        options = []
        for o in p.options:
            d: dict[str, Any] = {"resistance": o.resistance, "cost": o.cost}
            if o.diameter is not None:
                d["diameter_roughness"] = [o.diameter, o.roughness]
            if o.qmax_pos is not None:
                d["qmax_pos"] = o.qmax_pos
            if o.qmax_neg is not None:
                d["qmax_neg"] = o.qmax_neg
            options.append(d)
        entry = {"id": p.id, "tail": p.tail, "head": p.head, "length": p.length}
        if p.vmax is not None:
            entry["vmax"] = p.vmax
        entry["options"] = options
        pipes.append(entry)
    return {"name": net.name, "alpha": net.alpha, "nodes": nodes, "pipes": pipes}


def save_network(net: Network, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=2) + "\n")


def load_design(net: Network, path: str | Path) -> DesignVector:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(data, Mapping) and "design" in data:
        data = data["design"]
    if isinstance(data, list):
        design = DesignVector(tuple(data))
        net.validate_design(design)
        return design
    if not isinstance(data, Mapping):
        raise ParseError(f"{path}: design must be an object or array")
    return DesignVector.from_mapping(net, data)

