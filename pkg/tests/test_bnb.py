import math

import numpy as np
import pytest

from conftest import SHAMIR_COST
from wdnopt.bnb import (
    CSV_HEADER,
    INFEASIBLE,
    NODE_LIMIT,
    OPTIMAL,
    TIME_LIMIT,
    ConvergenceLog,
    EnumerationLimitError,
    InfeasibleInstanceError,
    NodeState,
    SolverConfig,
    deepest_point,
    enumerate_designs,
    gate_passes,
    initial_solution,
    node_cuts,
    relative_gap,
    repair_heuristic,
    solve_global,
)
from wdnopt.formulation import DHNL, EXACT, NEG, OA_HEADLOSS, POS, PREVIOUS, QNL, RelaxationPoint, build_master, oa_headloss_cut, strong_duality_cut
from wdnopt.hydraulics import check_design_feasibility
from wdnopt.instances import random_instance, single_pipe
from wdnopt.network import DesignVector, Network, Node, Pipe, ResistanceOption, derive_bounds


def one_arc_master(variant=PREVIOUS):
    net = derive_bounds(single_pipe(100.0, 0.02, 500.0, (300.0, 100.0, 30.0), (1.0, 2.0, 3.0)))
    return build_master(net, variant)


def point_for(master, q, dh, y=1.0, x=None):
    """Relaxation point on a one-arc master with per-option positive flows ``q``."""
    n = len(q)
    alpha = master.net.alpha
    res = np.array(master.net.pipes[0].resistances)
    zeros = np.zeros(n)
    return RelaxationPoint(
        x=[np.full(n, 1.0 / n) if x is None else np.asarray(x, float)],
        y=np.array([y]),
        qp=[np.asarray(q, float)],
        qn=[zeros],
        dhp=[np.asarray(dh, float)],
        dhn=[zeros if master.exact else np.zeros(1)],
        qnl=np.array([np.sum(res * np.asarray(q) ** (1 + alpha)) / (1 + alpha)]) if master.exact else None,
        dhnl=(
            np.array([np.sum(alpha / (1 + alpha) * res ** (-1 / alpha) * np.asarray(dh) ** (1 + 1 / alpha))])
            if master.exact
            else None
        ),
        objective=1.0,
    )


def tiny_infeasible():
    nodes = (Node("s", "reservoir", head=50.0), Node("j", "junction", demand=0.01, head_min=60.0))
    pipes = (Pipe("p", "s", "j", 100.0, (ResistanceOption(10.0, 1.0, qmax_pos=1, qmax_neg=1), ResistanceOption(1.0, 2.0, qmax_pos=1, qmax_neg=1))),)
    return derive_bounds(Network(nodes, pipes, 1.852, "infeasible"))


class TestConfig:
    def test_defaults(self):
        cfg = SolverConfig()
        assert (cfg.beta_oa, cfg.node_mod_j, cfg.k_oa, cfg.repair_iters, cfg.eps_cut) == (5.0, 500, 1e-3, 50, 1e-6)
        assert cfg.variant == EXACT
        assert SolverConfig(algorithm="previous").variant == PREVIOUS

    @pytest.mark.parametrize(
        "kw",
        [
            {"algorithm": "fast"},
            {"beta_oa": 0},
            {"k_oa": -1},
            {"eps_cut": 0},
            {"time_limit": 0},
            {"node_mod_j": 0},
            {"repair_iters": 0},
            {"gap_tolerance": -1},
            {"gap_type": "percent"},
            {"cut_point": "random"},
            {"clock": "cpu"},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(**kw)


class TestNodeState:
    def test_child_consistency(self):
        root = NodeState({}, 0.0)
        child = root.child(3, 1, 1.0, None)
        assert child.fixings == {3: 1} and child.depth == 1 and root.fixings == {}
        with pytest.raises(ValueError):
            child.child(3, 0, 1.0, None)
        assert child.child(3, 1, 1.0, None).fixings == {3: 1}
        with pytest.raises(ValueError):
            NodeState({0: 2}, 0.0)


class TestGate:
    def test_shallow_always_passes(self):
        rng = np.random.default_rng(0)
        cfg = SolverConfig()
        assert all(gate_passes(rng, 1.0, 2.0, 0, cfg) for _ in range(10_000))

    def test_pass_rate_at_depth_ten(self):
        rng = np.random.default_rng(1)
        cfg = SolverConfig()
        n = 100_000
        hits = sum(gate_passes(rng, 1.0, 2.0, 10, cfg) for _ in range(n))
        p = 5 / 1024
        assert abs(hits / n - p) <= 0.01
        assert abs(hits / n - p) <= 4 * math.sqrt(p * (1 - p) / n)

    def test_progress_test(self):
        rng = np.random.default_rng(2)
        cfg = SolverConfig()
        assert not gate_passes(rng, 100.0, 100.05, 0, cfg)
        assert gate_passes(rng, 100.0, 100.2, 0, cfg)
        assert gate_passes(rng, 100.0, 99.8, 0, cfg)


class TestNodeCuts:
    def test_single_deviating_arc(self):
        master = one_arc_master(PREVIOUS)
        cfg = SolverConfig(algorithm="previous")
        p = master.net.pipes[0]
        alpha = master.net.alpha
        res = np.array(p.resistances)
        q = np.array([0.001, 0.01, 0.002])
        assert int(np.argmax(res * q**alpha)) == 1
        dh = np.array([p.length * res[1] * q[1] ** alpha - 2 * cfg.eps_cut])
        before = len(master.cuts)
        added = node_cuts(master, point_for(master, q, dh, y=0.7), 1.0, 1.0, 40, True, cfg, np.random.default_rng(0))
        assert added == 1
        cut = master.cuts[before]
        assert cut.tag == OA_HEADLOSS
        assert cut.label.startswith("oa+[p,1]")

    def test_no_deviation_no_cuts(self):
        master = one_arc_master(EXACT)
        p = master.net.pipes[0]
        alpha = master.net.alpha
        res = np.array(p.resistances)
        q = np.array([0.0, 0.01, 0.0])
        dh = p.length * res * q**alpha
        added = node_cuts(master, point_for(master, q, dh), 1.0, 1.0, 0, True, SolverConfig(), np.random.default_rng(0))
        assert added == 0

    def test_exact_variant_adds_all_families(self):
        master = one_arc_master(EXACT)
        q = np.array([0.0, 0.01, 0.0])
        point = point_for(master, q, np.array([0.0, 0.0, 0.0]))
        point.qnl[:] = 0.0
        point.dhp[0][:] = [0.0, 1.0, 0.0]
        point.dhnl[:] = 0.0
        before = {t: master.count(t) for t in (OA_HEADLOSS, QNL, DHNL)}
        node_cuts(master, point, 1.0, 1.0, 0, True, SolverConfig(), np.random.default_rng(0))
        assert all(master.count(t) == before[t] + 1 for t in before)

    def test_gated_out(self):
        master = one_arc_master(PREVIOUS)
        q = np.array([0.0, 0.01, 0.0])
        point = point_for(master, q, np.zeros(1))
        cfg = SolverConfig(algorithm="previous")
        # deep node: the random gate essentially never passes
        added = sum(node_cuts(master, point, 1.0, 2.0, 60, False, cfg, np.random.default_rng(s)) for s in range(50))
        assert added == 0

    def test_deepest_point_maximizes_violation(self):
        """The closed-form point beats a fine grid of reference points."""
        master = one_arc_master(EXACT)
        V = master.space
        res = np.array(master.net.pipes[0].resistances)
        alpha = master.net.alpha
        rng = np.random.default_rng(4)
        for kind in (OA_HEADLOSS, QNL, DHNL):
            for _ in range(5):
                y = rng.uniform(0.3, 1.0)
                vals = rng.uniform(0, 0.004, 3)
                x = np.zeros(len(V))
                x[V.y[0]] = y
                if kind == DHNL:
                    x[np.array(V.dhp[0])] = vals * 1e3
                    upper = master.bounds.dh(0, POS)[1]
                    make = lambda t: strong_duality_cut(master, 0, 1, t, DHNL, POS)
                    values = vals * 1e3
                else:
                    x[np.array(V.qp[0])] = vals
                    upper = master.bounds.q(0, POS)[1]
                    make = (lambda t: oa_headloss_cut(master, 0, 1, t, POS)) if kind == OA_HEADLOSS else (
                        lambda t: strong_duality_cut(master, 0, 1, t, QNL, POS)
                    )
                    values = vals
                t_star = min(deepest_point(kind, res, 1, values, y, alpha), upper)
                best = max(make(t).lhs(x) - make(t).rhs for t in np.linspace(0, upper, 2001))
                assert make(t_star).lhs(x) - make(t_star).rhs >= best - 1e-9 * max(1.0, abs(best))


class TestHeuristics:
    def test_repair_single_upgrade(self):
        net = derive_bounds(single_pipe(100.0, 0.02, 500.0, (300.0, 30.0), (1.0, 2.0), head_min=20.0))
        ok, rep = repair_heuristic(net, DesignVector((0,)), 50, math.inf)
        assert ok and rep == DesignVector((1,))
        assert check_design_feasibility(net, rep).feasible

    def test_repair_nothing_to_upgrade(self):
        net = tiny_infeasible()
        d = DesignVector((1,))
        assert repair_heuristic(net, d, 50, math.inf) == (False, d)

    def test_repair_respects_incumbent(self):
        net = derive_bounds(single_pipe(100.0, 0.02, 500.0, (300.0, 30.0), (1.0, 2.0), head_min=20.0))
        d = DesignVector((0,))
        assert repair_heuristic(net, d, 50, 500.0 * 2.0) == (False, d)

    def test_repaired_designs_are_feasible(self):
        rng = np.random.default_rng(9)
        repaired = 0
        for _ in range(40):
            net = derive_bounds(random_instance(rng, n_arcs=3, n_options=3, infeasible_prob=0.0))
            for choice in np.ndindex(3, 3, 3):
                d = DesignVector(choice)
                if check_design_feasibility(net, d).feasible:
                    continue
                ok, rep = repair_heuristic(net, d, 50, math.inf)
                if ok:
                    repaired += 1
                    assert check_design_feasibility(net, rep).feasible
                    assert all(r >= c for r, c in zip(rep, d))
                else:
                    assert rep == d
        assert repaired > 0

    def test_initial_cheaper_option(self):
        net = derive_bounds(single_pipe(100.0, 0.02, 500.0, (30.0, 10.0), (1.0, 2.0)))
        assert initial_solution(net) == DesignVector((0,))

    def test_initial_only_max_feasible(self):
        net = derive_bounds(single_pipe(100.0, 0.02, 500.0, (300.0, 30.0), (1.0, 2.0), head_min=20.0))
        assert initial_solution(net) == DesignVector((1,))

    def test_initial_infeasible(self):
        with pytest.raises(InfeasibleInstanceError, match="instance infeasible at maximum capacity"):
            initial_solution(tiny_infeasible())

    def test_initial_shamir(self, shamir):
        d = initial_solution(shamir)
        assert check_design_feasibility(shamir, d).feasible
        assert shamir.design_cost(d) >= SHAMIR_COST


class TestEnumeration:
    def test_count(self):
        rng = np.random.default_rng(0)
        net = derive_bounds(random_instance(rng, n_arcs=2, n_options=2))
        assert enumerate_designs(net).evaluated == 4

    def test_limit(self, shamir):
        with pytest.raises(EnumerationLimitError):
            enumerate_designs(shamir, 10**9)

    def test_infeasible(self):
        res = enumerate_designs(tiny_infeasible())
        assert res.infeasible and res.cost == math.inf


class TestLog:
    def test_monotone_recording(self):
        log = ConvergenceLog()
        log.record(0.0, 1.0, 10.0, 0)
        log.record(0.1, 1.0, 10.0, 1)  # unchanged, skipped
        log.record(0.2, 0.5, 9.0, 2)  # lower may not drop
        log.close(0.3, 2.0, 12.0, 3)
        assert log.lower_bounds == [1.0, 1.0, 2.0]
        assert log.upper_bounds == [10.0, 9.0, 9.0]

    def test_csv(self, tmp_path):
        log = ConvergenceLog()
        log.record(0.5, 1.0, math.inf, 0)
        text = log.to_csv()
        assert text.splitlines()[0] == ",".join(CSV_HEADER)
        assert text.splitlines()[1] == "0.500000,1.0,inf,0"
        log.write(tmp_path / "log.csv")
        assert (tmp_path / "log.csv").read_text() == text

    def test_relative_gap(self):
        assert relative_gap(99.0, 100.0) == pytest.approx(0.01)
        assert relative_gap(0.0, 0.5) == pytest.approx(0.5)
        assert relative_gap(1.0, math.inf) == math.inf


class TestSolveGlobal:
    def test_matches_oracle(self, oracle_runs):
        for run in oracle_runs:
            for alg in ("new", "previous"):
                res = run[alg]
                if run["enum"].infeasible:
                    assert res.status == INFEASIBLE and res.design is None
                else:
                    assert res.status == OPTIMAL
                    assert res.design == run["enum"].design
                    assert res.cost == run["enum"].cost

    def test_enumeration_matches_independent_oracle(self, oracle_runs):
        for run in oracle_runs:
            assert run["enum"].design == run["oracle"][0]

    def test_incumbents_and_nogoods(self, oracle_runs):
        for run in oracle_runs:
            net = run["net"]
            for alg in ("new", "previous"):
                res = run[alg]
                for d, cost in res.incumbents:
                    assert check_design_feasibility(net, d).feasible
                    assert cost == net.design_cost(d)
                costs = [c for _, c in res.incumbents]
                assert costs == sorted(costs, reverse=True)
                for d in res.excluded:
                    assert not check_design_feasibility(net, d).feasible
                    assert d != res.design

    def test_logs_bracket_optimum(self, oracle_runs):
        for run in oracle_runs:
            opt = run["enum"].cost
            for alg in ("new", "previous"):
                log = run[alg].log
                assert np.all(np.diff(log.lower_bounds) >= 0)
                assert np.all(np.diff(log.upper_bounds) <= 0)
                if math.isfinite(opt):
                    assert max(log.lower_bounds) <= opt * (1 + 1e-9)
                    assert log.upper_bounds[-1] == opt

    def test_junction_above_source(self):
        res = solve_global(tiny_infeasible())
        assert res.status == INFEASIBLE
        assert res.design is None and res.cost == math.inf

    def test_needs_bounds(self):
        with pytest.raises(ValueError, match="derive bounds"):
            solve_global(single_pipe())

    def test_deterministic_logs(self):
        rng = np.random.default_rng(77)
        net = derive_bounds(random_instance(rng, n_arcs=3, n_options=3, infeasible_prob=0.0))
        cfg = SolverConfig(algorithm="previous", seed=7, clock="work")
        a, b = solve_global(net, cfg), solve_global(net, cfg)
        assert a.log.to_csv() == b.log.to_csv()
        assert a.design == b.design

    def test_node_limit(self, shamir):
        res = solve_global(shamir, SolverConfig(node_limit=3))
        assert res.status == NODE_LIMIT
        assert res.nodes == 3
        assert res.lower_bound <= SHAMIR_COST <= res.cost

    def test_time_limit(self, shamir):
        res = solve_global(shamir, SolverConfig(time_limit=0.001))
        assert res.status == TIME_LIMIT
        assert math.isfinite(res.cost) and math.isfinite(res.lower_bound)
        assert res.lower_bound <= res.cost

    def test_absolute_gap(self):
        rng = np.random.default_rng(21)
        net = derive_bounds(random_instance(rng, n_arcs=3, n_options=3, infeasible_prob=0.0))
        res = solve_global(net, SolverConfig(gap_type="absolute", gap_tolerance=1e-6))
        assert res.status in (OPTIMAL, INFEASIBLE)
        if res.status == OPTIMAL:
            assert res.absolute_gap <= 1e-6
            assert res.cost == enumerate_designs(net).cost

    def test_deepest_cut_point_variant(self, oracle_runs):
        for run in oracle_runs[:10]:
            res = solve_global(run["net"], SolverConfig(cut_point="deepest"))
            assert res.design == run["enum"].design
