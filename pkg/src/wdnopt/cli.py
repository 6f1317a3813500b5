"""Command-line interface: ``wdnopt solve | check | enumerate | sweep``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from .bnb import (
    EnumerationLimitError,
    SolveResult,
    SolverConfig,
    enumerate_designs,
    solve_global,
)
from .hydraulics import HydraulicError, check_design_feasibility, evaluate_objectives
from .network import Network, NetworkError, derive_bounds, load_design, parse_network

log = logging.getLogger("wdnopt")

# flag name -> SolverConfig field
CONFIG_KEYS = {
    "algorithm": "algorithm",
    "time_limit": "time_limit",
    "gap_tol": "gap_tolerance",
    "gap_type": "gap_type",
    "seed": "seed",
    "beta_oa": "beta_oa",
    "node_mod_j": "node_mod_j",
    "k_oa": "k_oa",
    "repair_iters": "repair_iters",
    "eps_cut": "eps_cut",
    "node_limit": "node_limit",
    "clock": "clock",
    "cut_point": "cut_point",
}


@dataclass
class RunReport:
    instance: str
    config: dict[str, Any]
    status: str
    cost: float | None
    design: dict[str, int] | None
    diameters: dict[str, float | None] | None
    gap: float | None
    lower_bound: float | None
    nodes: int
    wall_time: float
    heads: dict[str, float] = field(default_factory=dict)
    flows: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_result(cls, net: Network, cfg: SolverConfig, res: SolveResult) -> "RunReport":
        heads: dict[str, float] = {}
        flows: dict[str, float] = {}
        design = diam = None
        if res.design is not None:
            design = res.design.as_mapping(net)
            diam = {p.id: p.options[res.design[a]].diameter for a, p in enumerate(net.pipes)}
            state = res.state or check_design_feasibility(net, res.design).state
            heads = {k: v for k, v in state.head_map(net).items() if not net.node(k).is_reservoir}
            flows = state.flow_map(net)
        return cls(
            instance=net.name,
            config=asdict(cfg),
            status=res.status,
            cost=_finite(res.cost),
            design=design,
            diameters=diam,
            gap=_finite(res.gap),
            lower_bound=_finite(res.lower_bound),
            nodes=res.nodes,
            wall_time=res.wall_time,
            heads=heads,
            flows=flows,
        )

    def to_json(self, deterministic: bool = False) -> str:
        d = asdict(self)
        if deterministic:
            d.pop("wall_time")
        return json.dumps(d, indent=2, sort_keys=True)


def _finite(v: float) -> float | None:
    return float(v) if v is not None and math.isfinite(v) else None


def resolve_instance(path: str) -> Path:
    """A file path, or the name of a bundled instance ("shamir", "hanoi.json")."""
    p = Path(path)
    if p.exists():
        return p
    name = p.name if p.suffix == ".json" else p.name + ".json"
    bundled = resources.files("wdnopt") / "data" / name
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"instance {path!r} not found (and no bundled instance of that name)")


def load_instance(path: str, vmax: float | None = None, scale: float | None = None) -> Network:
    net = parse_network(resolve_instance(path))
    if scale is not None:
        net = net.scaled(scale)
    return derive_bounds(net, vmax)


def build_config(args: argparse.Namespace) -> SolverConfig:
    values: dict[str, Any] = {}
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text())
        for key, v in raw.items():
            k = key.replace("-", "_")
            if k not in CONFIG_KEYS:
                raise ValueError(f"unknown config key {key!r}")
            values[CONFIG_KEYS[k]] = v
    for flag, name in CONFIG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    return SolverConfig(**values)


# -- commands -------------------------------------------------------------------


def cmd_solve(args: argparse.Namespace) -> int:
    net = load_instance(args.instance, args.vmax)
    cfg = build_config(args)
    res = solve_global(net, cfg)
    report = RunReport.from_result(net, cfg, res)
    if args.log:
        res.log.write(args.log)
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n")
    if args.json:
        print(report.to_json())
    else:
        print(f"instance   {net.name}")
        print(f"status     {res.status}")
        print(f"cost       {res.cost:.6f}" if math.isfinite(res.cost) else "cost       none")
        print(f"lower      {res.lower_bound:.6f}")
        print(f"gap        {res.gap:.3e}")
        print(f"nodes      {res.nodes}")
        print(f"time       {res.wall_time:.2f} s")
        if report.design:
            print("design     " + " ".join(f"{k}:{v}" for k, v in report.design.items()))
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    net = load_instance(args.instance, args.vmax)
    design = load_design(net, args.design)
    res = check_design_feasibility(net, design)
    rep = evaluate_objectives(net, design, res.state)
    out = {
        "feasible": res.feasible,
        "cost": net.design_cost(design),
        "violations": [
            {"kind": v.kind, "element": v.element, "value": v.value, "bound": v.bound, "deficit": v.magnitude}
            for v in res.violations
        ],
        "f_primal": rep.f_primal,
        "f_dual": rep.f_dual,
        "gap": rep.gap,
        "f1": rep.f1,
        "f2": rep.f2,
        "f3": rep.f3,
        "f4": rep.f4,
        "heads": res.state.head_map(net),
        "flows": res.state.flow_map(net),
    }
    if args.json:
        print(json.dumps(out, indent=2, sort_keys=True))
        return 0
    print("feasible" if res.feasible else "violated")
    for v in res.violations:
        print(f"  {v}")
    print(f"cost     {out['cost']:.6f}")
    print(f"f_P      {rep.f_primal:.12g}")
    print(f"f_D      {rep.f_dual:.12g}")
    print(f"gap      {rep.gap:.3e}")
    print(f"f1 friction {rep.f1:.12g}")
    print(f"f2 generation {rep.f2:.12g}")
    print(f"f3 realized loss {rep.f3:.12g}")
    print(f"f4 demand {rep.f4:.12g}")
    return 0


def cmd_enumerate(args: argparse.Namespace) -> int:
    net = load_instance(args.instance, args.vmax)
    res = enumerate_designs(net, args.limit)
    out = {
        "instance": net.name,
        "evaluated": res.evaluated,
        "feasible_designs": len(res.feasible),
        "status": "infeasible" if res.infeasible else "optimal",
        "cost": _finite(res.cost),
        "design": res.design.as_mapping(net) if res.design else None,
    }
    if args.json:
        print(json.dumps(out, indent=2, sort_keys=True))
    else:
        for k, v in out.items():
            print(f"{k:17s}{v}")
    return 0


def _sweep_one(job: tuple[str, float | None, float, dict[str, Any]]) -> tuple[float, SolveResult]:
    path, vmax, factor, cfg = job
    net = load_instance(path, vmax, factor)
    return factor, solve_global(net, SolverConfig(**cfg))


def parse_factors(text: str) -> list[float]:
    """"0.5,1.0" or a range "0.5:1.5:0.05" (inclusive)."""
    if ":" in text:
        lo, hi, step = (float(t) for t in text.split(":"))
        n = int(round((hi - lo) / step))
        vals = [round(lo + k * step, 10) for k in range(n + 1)]
    else:
        vals = [float(t) for t in text.split(",") if t.strip()]
    if not vals or any(v <= 0 for v in vals):
        raise ValueError("scaling factors must be positive")
    return vals


def sweep_csv(rows: Sequence[tuple[float, SolveResult]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["factor", "time", "cost", "status"])
    for factor, res in rows:
        cost = repr(res.cost) if math.isfinite(res.cost) else ""
        w.writerow([repr(factor), f"{res.wall_time:.6f}", cost, res.status])
    return buf.getvalue()


def cmd_sweep(args: argparse.Namespace) -> int:
    factors = parse_factors(args.factors)
    cfg = asdict(build_config(args))
    jobs = [(args.instance, args.vmax, f, cfg) for f in factors]
    if args.parallel and args.parallel > 1:
        with ProcessPoolExecutor(args.parallel) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    text = sweep_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    if args.json:
        print(json.dumps(
            [{"factor": f, "status": r.status, "cost": _finite(r.cost), "time": r.wall_time} for f, r in rows],
            indent=2,
        ))
    else:
        sys.stdout.write(text)
    return 0


# -- parser -----------------------------------------------------------------------


def _solver_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("solver")
    g.add_argument("--algorithm", choices=["new", "previous"])
    g.add_argument("--time-limit", type=float, help="seconds")
    g.add_argument("--gap-tol", type=float)
    g.add_argument("--gap-type", choices=["relative", "absolute"])
    g.add_argument("--seed", type=int)
    g.add_argument("--beta-oa", type=float)
    g.add_argument("--node-mod-j", type=int)
    g.add_argument("--k-oa", type=float)
    g.add_argument("--repair-iters", type=int)
    g.add_argument("--eps-cut", type=float)
    g.add_argument("--node-limit", type=int)
    g.add_argument("--clock", choices=["wall", "work"], help="time column of the log: wall seconds or a deterministic work counter")
    g.add_argument("--cut-point", choices=["relaxation", "deepest"])
    g.add_argument("--config", help="JSON file with the same keys; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wdnopt", description="Global optimal design of gravity-fed water networks.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("instance", help="instance JSON file or bundled name (shamir, hanoi)")
        p.add_argument("--vmax", type=float, help="velocity limit (m/s) for diameter-based flow bounds")
        p.add_argument("--json", action="store_true", help="machine-readable output on stdout")

    p = sub.add_parser("solve", help="solve to global optimality")
    common(p)
    _solver_flags(p)
    p.add_argument("--log", help="write the convergence log CSV here")
    p.add_argument("--report", help="write the JSON run report here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check", help="simulate a design and report feasibility and duality")
    common(p)
    p.add_argument("design", help="JSON design: list of option indices or {pipe id: index}")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("enumerate", help="brute-force every design (small instances)")
    common(p)
    p.add_argument("--limit", type=int, default=100_000)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("sweep", help="solve under scaled demands")
    common(p)
    _solver_flags(p)
    p.add_argument("--factors", default="0.5:1.5:0.05", help='"0.5,1.0" or "lo:hi:step"')
    p.add_argument("--out", help="write the comparison CSV here")
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (NetworkError, HydraulicError, EnumerationLimitError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
