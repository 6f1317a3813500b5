"""Small synthetic instances for tests, examples and oracle comparisons."""

from __future__ import annotations

import numpy as np

from .hydraulics import HydraulicError, solve_fixed_design
from .network import DesignVector, Network, Node, Pipe, ResistanceOption, hazen_williams_resistance

ROUGHNESS = 130.0


def _options(diameters, costs, roughness: float = ROUGHNESS) -> tuple[ResistanceOption, ...]:
    return tuple(
        ResistanceOption(
            resistance=hazen_williams_resistance(d, roughness), cost=float(c), diameter=float(d), roughness=roughness
        )
        for d, c in zip(diameters, costs)
    )


def single_pipe(
    source_head: float = 100.0,
    demand: float = 0.02,
    length: float = 500.0,
    resistances=(300.0,),
    costs=(1.0,),
    head_min: float = 0.0,
    alpha: float = 1.852,
) -> Network:
    """Reservoir "s" feeding junction "j" through pipe "p"."""
    opts = tuple(
        ResistanceOption(resistance=float(r), cost=float(c), qmax_pos=demand, qmax_neg=demand)
        for r, c in zip(resistances, costs)
    )
    nodes = (
        Node("s", "reservoir", head=source_head),
        Node("j", "junction", demand=demand, head_min=head_min),
    )
    return Network(nodes, (Pipe("p", "s", "j", length, opts),), alpha, "single_pipe")


def parallel_pipes(
    r1: float = 100.0, r2: float = 200.0, demand: float = 0.03, length: float = 1000.0, source_head: float = 100.0
) -> Network:
    opts = lambda r: (ResistanceOption(resistance=r, cost=1.0, qmax_pos=demand, qmax_neg=demand),)
    nodes = (
        Node("s", "reservoir", head=source_head),
        Node("j", "junction", demand=demand, head_min=0.0),
    )
    pipes = (Pipe("p1", "s", "j", length, opts(r1)), Pipe("p2", "s", "j", length, opts(r2)))
    return Network(nodes, pipes, 1.852, "parallel")


# arcs as (tail, head); "s" is the reservoir
TOPOLOGIES = {
    1: [[("s", "1")]],
    2: [[("s", "1"), ("1", "2")], [("s", "1"), ("s", "2")], [("s", "1"), ("s", "1")]],
    3: [
        [("s", "1"), ("1", "2"), ("2", "3")],
        [("s", "1"), ("s", "2"), ("1", "2")],
        [("s", "1"), ("1", "2"), ("1", "3")],
        [("s", "1"), ("s", "1"), ("1", "2")],
        [("s", "1"), ("1", "2"), ("2", "1")],
    ],
}


def random_instance(
    rng: np.random.Generator,
    n_arcs: int | None = None,
    n_options: int | None = None,
    infeasible_prob: float = 0.1,
    alpha: float = 1.852,
) -> Network:
    """Random network with at most 3 arcs and 3 options per arc.

    Junction head minima are drawn between the heads produced by the smallest
    and the largest pipes, so some designs are feasible and some are not; with
    probability ``infeasible_prob`` one minimum is pushed above what the
    largest pipes can deliver.
    """
    n_arcs = n_arcs or int(rng.integers(2, 4))
    arcs = TOPOLOGIES[n_arcs][int(rng.integers(len(TOPOLOGIES[n_arcs])))]
    junctions = sorted({v for arc in arcs for v in arc if v != "s"})
    source_head = 100.0
    demands = {j: float(rng.uniform(0.005, 0.05)) for j in junctions}

    pipes = []
    for k, (t, h) in enumerate(arcs):
        n_opt = n_options or int(rng.integers(2, 4))
        diameters = np.sort(rng.uniform(0.1, 0.5, n_opt))
        costs = np.cumsum(rng.uniform(5.0, 50.0, n_opt))
        pipes.append(Pipe(f"a{k + 1}", t, h, float(rng.uniform(100.0, 1000.0)), _options(diameters, costs)))

    def make(head_min: dict[str, float]) -> Network:
        nodes = [Node("s", "reservoir", head=source_head)]
        nodes += [Node(j, "junction", demand=demands[j], head_min=head_min[j]) for j in junctions]
        return Network(tuple(nodes), tuple(pipes), alpha, "random")

    probe = make({j: -1e9 for j in junctions})
    low = DesignVector(tuple(0 for _ in pipes))
    top = DesignVector(tuple(len(p.options) - 1 for p in pipes))
    try:
        h_low = solve_fixed_design(probe, low).head_map(probe)
        h_top = solve_fixed_design(probe, top).head_map(probe)
    except HydraulicError:
        h_low = h_top = {j: source_head for j in junctions}
    head_min = {}
    for j in junctions:
        span = max(h_top[j] - h_low[j], 1e-3)
        head_min[j] = float(h_top[j] - rng.uniform(0.05, 0.9) * span)
    if rng.random() < infeasible_prob:
        j = junctions[int(rng.integers(len(junctions)))]
        head_min[j] = float(h_top[j] + rng.uniform(0.1, 5.0))
    return make(head_min)
