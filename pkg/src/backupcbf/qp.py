"""Dense QP solver for ``min ||u - u_d||^2`` over a box and rows ``a_i . u >= b_i``.

The solver is a Goldfarb-Idnani dual active-set method specialised to the
identity Hessian. It starts from the unconstrained minimiser ``u_d`` and adds
violated constraints one at a time, so no feasible starting point is needed.
An infeasibility verdict is only returned after a linear feasibility program
confirms that no point in the box satisfies every row within ``INFEAS_TOL``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .core import InputBox
from .errors import ConfigurationError, NumericalError

INFEAS_TOL = 1e-7
KKT_TOL = 1e-8
_DEP_TOL = 1e-12

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class QpProblem:
    u_d: np.ndarray
    box: Optional[InputBox] = None
    A_ineq: Optional[np.ndarray] = None
    b_ineq: Optional[np.ndarray] = None

    def __post_init__(self):
        u_d = np.atleast_1d(np.asarray(self.u_d, dtype=float)).reshape(-1)
        m = u_d.size
        A = np.zeros((0, m)) if self.A_ineq is None else np.asarray(self.A_ineq, dtype=float).reshape(-1, m)
        b = np.zeros(0) if self.b_ineq is None else np.atleast_1d(np.asarray(self.b_ineq, dtype=float)).reshape(-1)
        if A.shape[0] != b.size:
            raise ConfigurationError(f"A_ineq has {A.shape[0]} rows but b_ineq has {b.size} entries")
        if self.box is not None and self.box.m != m:
            raise ConfigurationError(f"box has dimension {self.box.m}, u_d has {m}")
        if not (np.all(np.isfinite(u_d)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ConfigurationError("QP data must be finite")
        object.__setattr__(self, "u_d", u_d)
        object.__setattr__(self, "A_ineq", A)
        object.__setattr__(self, "b_ineq", b)

    @property
    def m(self) -> int:
        return self.u_d.size

    @property
    def K(self) -> int:
        return self.b_ineq.size

    def objective(self, u) -> float:
        d = np.asarray(u, dtype=float) - self.u_d
        return float(d @ d)


@dataclass(frozen=True)
class QpSolution:
    u: np.ndarray
    status: str
    kkt_residual: float = np.nan
    active_set: tuple = ()
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _stack_rows(p: QpProblem):
    """Normalised rows n_i . u >= c_i plus a tag telling where each row came from."""
    rows, rhs, tags = [], [], []
    norms = np.linalg.norm(p.A_ineq, axis=1)
    for i in range(p.K):
        a, b = p.A_ineq[i], p.b_ineq[i]
        if norms[i] <= 1e-14 * max(1.0, abs(b)):
            if b > INFEAS_TOL * (1.0 + abs(b)):
                return None
            continue
        rows.append(a / norms[i])
        rhs.append(b / norms[i])
        tags.append(("row", i, norms[i]))
    if p.box is not None:
        for j in range(p.m):
            e = np.zeros(p.m)
            e[j] = 1.0
            if np.isfinite(p.box.u_min[j]):
                rows.append(e)
                rhs.append(p.box.u_min[j])
                tags.append(("lower", j, 1.0))
            if np.isfinite(p.box.u_max[j]):
                rows.append(-e)
                rhs.append(-p.box.u_max[j])
                tags.append(("upper", j, 1.0))
    N = np.array(rows).reshape(-1, p.m)
    c = np.array(rhs, dtype=float)
    return N, c, tags


def _dual_active_set(u_d, N, c, max_iter):
    """Goldfarb-Idnani iterations. Returns (x, active, lam, iterations) or None when infeasible."""
    x = u_d.copy()
    active: list[int] = []
    lam = np.zeros(0)
    it = 0
    scale = 1.0 + np.abs(c)
    while True:
        s = N @ x - c
        if active:
            s[active] = np.inf
        p = int(np.argmin(s)) if s.size else -1
        if p < 0 or s[p] >= -1e-13 * scale[p]:
            return x, active, lam, it
        lam_plus = np.append(lam, 0.0)
        n_p = N[p]
        while True:
            it += 1
            if it > max_iter:
                raise NumericalError(f"QP active-set cycling guard tripped after {it} iterations")
            if active:
                Na = N[active].T
                r = np.linalg.lstsq(Na, n_p, rcond=None)[0]
                z = n_p - Na @ r
            else:
                r = np.zeros(0)
                z = n_p
            zz = float(z @ z)
            sp = float(n_p @ x - c[p])
            t2 = -sp / zz if zz > _DEP_TOL else np.inf
            t1, k = np.inf, -1
            for j in range(len(active)):
                if r[j] > 1e-14:
                    ratio = lam_plus[j] / r[j]
                    if ratio < t1:
                        t1, k = ratio, j
            t = min(t1, t2)
            if not np.isfinite(t):
                return None
            if np.isinf(t2):
                lam_plus[:-1] -= t * r
                lam_plus[-1] += t
                lam_plus = np.delete(lam_plus, k)
                del active[k]
                continue
            x = x + t * z
            lam_plus[:-1] -= t * r
            lam_plus[-1] += t
            if t2 <= t1:
                active.append(p)
                lam = lam_plus
                break
            lam_plus = np.delete(lam_plus, k)
            del active[k]


def _max_feasibility_margin(p: QpProblem, N, c, tags) -> tuple[float, np.ndarray]:
    """max over the box of min_i (n_i . u - c_i), solved as an LP."""
    m = p.m
    row_mask = np.array([t[0] == "row" for t in tags], dtype=bool)
    lo = np.full(m, -np.inf) if p.box is None else p.box.u_min
    hi = np.full(m, np.inf) if p.box is None else p.box.u_max
    # box rows are handled through variable bounds
    obj = np.zeros(m + 1)
    obj[-1] = -1.0
    A_ub = np.hstack([-N[row_mask], np.ones((row_mask.sum(), 1))])
    b_ub = -c[row_mask]
    bounds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b) for a, b in zip(lo, hi)]
    bounds.append((None, 1.0))
    res = linprog(obj, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise NumericalError(f"feasibility LP failed: {res.message}")
    return float(res.x[-1]), res.x[:m]


def solve_qp(p: QpProblem) -> QpSolution:
    """Solve the box- and row-constrained projection problem.

    Returns ``status="infeasible"`` as a value when no admissible point exists.
    The returned ``multipliers`` refer to the original (unnormalised) rows
    and the objective ``||u - u_d||^2``.
    """
    stacked = _stack_rows(p)
    if stacked is None:
        return QpSolution(u=p.box.clip(p.u_d) if p.box else p.u_d.copy(), status=INFEASIBLE)
    N, c, tags = stacked
    max_iter = 10 * (p.m + p.K) + 10 * p.m + 10
    res = _dual_active_set(p.u_d, N, c, max_iter)
    c_used = c
    if res is None:
        margin, _ = _max_feasibility_margin(p, N, c, tags)
        if margin < -INFEAS_TOL:
            return QpSolution(u=p.box.clip(p.u_d) if p.box else p.u_d.copy(), status=INFEASIBLE)
        # feasible only within tolerance: shift the rows by the certified margin
        c_used = c - (max(0.0, -margin) + 1e-12)
        res = _dual_active_set(p.u_d, N, c_used, max_iter)
        if res is None:
            raise NumericalError("dual active-set declared infeasible a feasible QP")
    x, active, lam, iterations = res

    # multipliers for the objective ||u - u_d||^2 are twice the GI ones
    lam_full = np.zeros(len(c))
    lam_full[active] = 2.0 * lam
    grad = 2.0 * (x - p.u_d)
    stationarity = grad - N.T @ lam_full
    slack = N @ x - c_used
    comp = np.abs(lam_full * slack).max() if len(c) else 0.0
    kkt = float(np.linalg.norm(stationarity) / (1.0 + np.linalg.norm(p.u_d) + np.linalg.norm(x)) + comp)
    if lam_full.size and np.any(lam_full < -1e-9 * (1.0 + np.abs(lam_full).max())):
        raise NumericalError("negative multiplier at QP termination")

    u = p.box.clip(x) if p.box is not None else x
    row_mult = np.zeros(p.K)
    act_rows = []
    for idx in active:
        kind, j, nrm = tags[idx]
        if kind == "row":
            row_mult[j] = lam_full[idx] / nrm
            act_rows.append(j)
    return QpSolution(
        u=u,
        status=OPTIMAL,
        kkt_residual=kkt,
        active_set=tuple(sorted(act_rows)),
        multipliers=row_mult,
        iterations=iterations,
    )
