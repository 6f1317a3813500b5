"""Bounded-variable linear programs solved with the HiGHS dual simplex.

``LpSolver`` keeps one HiGHS instance alive so the branch-and-bound can append
rows, change column bounds and restart from a stored basis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import highspy
import numpy as np
import scipy.sparse as sp

INF = highspy.kHighsInf
FEAS_TOL = 1e-7
BOUND_TOL = 1e-9
OPT_TOL = 1e-9

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration_limit"

_BASIC = highspy.HighsBasisStatus.kBasic


class LpError(RuntimeError):
    pass


@dataclass
class LinearProgram:
    """minimize c @ x  s.t.  row_lower <= A @ x <= row_upper,  lb <= x <= ub."""

    c: np.ndarray
    A: sp.csr_matrix
    row_lower: np.ndarray
    row_upper: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self) -> None:
        self.c = np.asarray(self.c, dtype=float)
        self.A = sp.csr_matrix(self.A, dtype=float)
        self.row_lower = np.asarray(self.row_lower, dtype=float)
        self.row_upper = np.asarray(self.row_upper, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        m, n = self.A.shape
        if not (len(self.c) == len(self.lb) == len(self.ub) == n):
            raise ValueError("column dimensions disagree")
        if not (len(self.row_lower) == len(self.row_upper) == m):
            raise ValueError("row dimensions disagree")
        if not (np.all(np.isfinite(self.lb)) and np.all(np.isfinite(self.ub))):
            raise ValueError("every variable needs finite bounds")

    @classmethod
    def from_rows(
        cls,
        c: Sequence[float],
        rows: Sequence[dict[int, float]],
        senses: Sequence[str],
        rhs: Sequence[float],
        lb: Sequence[float],
        ub: Sequence[float],
    ) -> "LinearProgram":
        """Build from sparse rows with senses '<=', '>=' or '=='."""
        n = len(c)
        lower, upper = _sense_bounds(senses, rhs)
        data, indices, indptr = [], [], [0]
        for row in rows:
            for j, v in row.items():
                indices.append(j)
                data.append(v)
            indptr.append(len(indices))
        A = sp.csr_matrix((data, indices, indptr), shape=(len(rows), n))
        return cls(np.asarray(c), A, lower, upper, np.asarray(lb), np.asarray(ub))

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float = float("nan")
    basis: "Basis | None" = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class Basis:
    """Simplex basis snapshot; keeps the solver's compact native form."""

    def __init__(self, raw: "highspy.HighsBasis"):
        self.raw = raw
        self.num_cols = len(raw.col_status)
        self.num_rows = len(raw.row_status)

    @property
    def col_status(self) -> list:
        return list(self.raw.col_status)

    @property
    def row_status(self) -> list:
        return list(self.raw.row_status)


def _sense_bounds(senses: Sequence[str], rhs: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    lower = np.empty(len(rhs))
    upper = np.empty(len(rhs))
    for k, (s, b) in enumerate(zip(senses, rhs)):
        if s == "<=":
            lower[k], upper[k] = -INF, b
        elif s == ">=":
            lower[k], upper[k] = b, INF
        elif s in ("==", "="):
            lower[k], upper[k] = b, b
        else:
            raise ValueError(f"unknown sense {s!r}")
    return lower, upper


class LpSolver:
    """Persistent LP with incremental rows and warm-startable bases."""

    def __init__(self, lp: LinearProgram, iteration_limit: int | None = None):
        self._h = highspy.Highs()
        h = self._h
        h.setOptionValue("output_flag", bool(__import__("os").environ.get("WDN_LPDEBUG")))
        h.setOptionValue("presolve", "off")
        h.setOptionValue("solver", "simplex")
        h.setOptionValue("simplex_strategy", 1)  # dual
        h.setOptionValue("primal_feasibility_tolerance", BOUND_TOL)
        h.setOptionValue("dual_feasibility_tolerance", OPT_TOL)
        h.setOptionValue("random_seed", 0)
        h.setOptionValue("threads", 1)
        if iteration_limit is not None:
            h.setOptionValue("simplex_iteration_limit", int(iteration_limit))
        n = len(lp.c)
        self.base_lb = lp.lb.copy()
        self.base_ub = lp.ub.copy()
        self.c = lp.c.copy()
        # HiGHS's dual ratio test dislikes large costs; solve with unit-scale costs
        cmax = float(np.max(np.abs(lp.c), initial=0.0))
        self.cost_scale = 1.0 / cmax if cmax > 0 else 1.0
        h.addVars(n, lp.lb, lp.ub)
        h.changeColsCost(n, np.arange(n, dtype=np.int32), lp.c * self.cost_scale)
        self._rows: list[sp.csr_matrix] = []
        self._row_lower: list[np.ndarray] = []
        self._row_upper: list[np.ndarray] = []
        if lp.A.shape[0]:
            self.add_rows(lp.A, lp.row_lower, lp.row_upper)

    @property
    def num_rows(self) -> int:
        return self._h.getNumRow()

    @property
    def num_cols(self) -> int:
        return self._h.getNumCol()

    def add_rows(self, A: sp.spmatrix, lower: np.ndarray, upper: np.ndarray) -> None:
        A = sp.csr_matrix(A, dtype=float)
        if A.shape[0] == 0:
            return
        if A.shape[1] != self.num_cols:
            raise ValueError("row width does not match column count")
        self._h.addRows(
            A.shape[0],
            np.asarray(lower, dtype=float),
            np.asarray(upper, dtype=float),
            A.nnz,
            A.indptr[:-1].astype(np.int32),
            A.indices.astype(np.int32),
            A.data,
        )
        self._rows.append(A)
        self._row_lower.append(np.asarray(lower, dtype=float))
        self._row_upper.append(np.asarray(upper, dtype=float))

    def set_bounds(self, lb: np.ndarray, ub: np.ndarray) -> None:
        n = self.num_cols
        self._h.changeColsBounds(n, np.arange(n, dtype=np.int32), lb, ub)

    def matrix(self) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
        if not self._rows:
            return sp.csr_matrix((0, self.num_cols)), np.empty(0), np.empty(0)
        return (
            sp.vstack(self._rows, format="csr"),
            np.concatenate(self._row_lower),
            np.concatenate(self._row_upper),
        )

    def solve(
        self,
        basis: Basis | None = None,
        lb: np.ndarray | None = None,
        ub: np.ndarray | None = None,
    ) -> LpSolution:
        h = self._h
        lb = self.base_lb if lb is None else lb
        ub = self.base_ub if ub is None else ub
        if np.any(lb > ub + BOUND_TOL):
            return LpSolution(INFEASIBLE)
        self.set_bounds(lb, ub)
        if basis is not None:
            self._set_basis(basis)
        h.run()
        status = h.getModelStatus()
        info = h.getInfo()
        iters = int(info.simplex_iteration_count)
        if status == highspy.HighsModelStatus.kOptimal:
            x = np.array(h.getSolution().col_value)
            x = np.clip(x, lb, ub)
            return LpSolution(OPTIMAL, x, float(self.c @ x), self._get_basis(), iters)
        if status == highspy.HighsModelStatus.kInfeasible:
            return LpSolution(INFEASIBLE, iterations=iters)
        if status == highspy.HighsModelStatus.kIterationLimit:
            return LpSolution(ITERATION_LIMIT, iterations=iters)
        # Numerical trouble: retry once from scratch before giving up.
        h.clearSolver()
        h.run()
        status = h.getModelStatus()
        if status == highspy.HighsModelStatus.kOptimal:
            x = np.clip(np.array(h.getSolution().col_value), lb, ub)
            return LpSolution(OPTIMAL, x, float(self.c @ x), self._get_basis(), iters)
        if status == highspy.HighsModelStatus.kInfeasible:
            return LpSolution(INFEASIBLE, iterations=iters)
        raise LpError(f"LP solve failed with status {h.modelStatusToString(status)}")

    def _get_basis(self) -> Basis:
        return Basis(self._h.getBasis())

    def _set_basis(self, basis: Basis) -> None:
        m = self.num_rows
        if basis.num_rows > m or basis.num_cols != self.num_cols:
            return
        if basis.num_rows == m:
            self._h.setBasis(basis.raw)
            return
        hb = highspy.HighsBasis()
        hb.col_status = basis.raw.col_status
        hb.row_status = list(basis.raw.row_status) + [_BASIC] * (m - basis.num_rows)
        hb.valid = True
        hb.alien = False
        self._h.setBasis(hb)


def solve_lp(
    lp: LinearProgram, warm_basis: Basis | None = None, iteration_limit: int | None = None
) -> LpSolution:
    """Solve one LP; deterministic for identical input and warm basis."""
    return LpSolver(lp, iteration_limit=iteration_limit).solve(warm_basis)


def primal_residual(lp: LinearProgram, x: np.ndarray) -> float:
    """Largest violation of the row and bound constraints at ``x``."""
    ax = lp.A @ x
    viol = np.concatenate(
        [
            np.maximum(lp.row_lower - ax, 0.0),
            np.maximum(ax - lp.row_upper, 0.0),
            np.maximum(lp.lb - x, 0.0),
            np.maximum(x - lp.ub, 0.0),
        ]
    )
    return float(viol.max(initial=0.0))
