"""Online safety filters: the plain CBF-QP and the backup CBF-QP.

Both solve ``min ||u - k_d(x)||^2`` subject to affine rows in u. The plain
filter has a single row from ``h``; the backup filter has one row per
rollout node of the backup flow plus a terminal row from ``h_b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .core import ClassKappa, ConstraintFunction, ControlAffineSystem, InputBox
from .errors import ConfigurationError, DivergenceError, FilterError
from .flow import FlowRollout, rollout
from .qp import INFEASIBLE, OPTIMAL, QpProblem, solve_qp
from .synthesis import BackupPair

FALLBACKS = ("backup_controller", "hold_desired")

Desired = Union[Callable[[np.ndarray], np.ndarray], np.ndarray, float]


@dataclass(frozen=True)
class FilterConfig:
    """Horizon, node count, class-K functions and the infeasibility fallback."""

    T: float
    N_c: int
    alpha: ClassKappa
    alpha_b: ClassKappa
    fallback: str = "backup_controller"

    def __post_init__(self):
        if not self.T >= 0:
            raise ConfigurationError(f"horizon must be non-negative, got {self.T}")
        if self.N_c < 1 or (self.T > 0 and self.N_c < 2):
            raise ConfigurationError(f"need N_c >= 2 for T > 0, got N_c={self.N_c}")
        if self.T == 0 and self.N_c != 1:
            raise ConfigurationError("a zero horizon takes exactly one node")
        if self.fallback not in FALLBACKS:
            raise ConfigurationError(f"fallback must be one of {FALLBACKS}, got {self.fallback!r}")


@dataclass(frozen=True)
class FilterStep:
    u: np.ndarray
    u_desired: np.ndarray
    qp_status: str
    h_value: float
    h_b_at_T: float = np.nan
    active_constraint_count: int = 0
    fallback_used: bool = False
    kkt_residual: float = np.nan
    rollout: Optional[FlowRollout] = field(default=None, repr=False, compare=False)

    @property
    def intervened(self) -> bool:
        return bool(np.any(np.abs(self.u - self.u_desired) > 1e-9 * (1.0 + np.abs(self.u_desired))))


def _desired(k_d: Desired, x, m: int) -> np.ndarray:
    u = k_d(x) if callable(k_d) else k_d
    u = np.atleast_1d(np.asarray(u, dtype=float)).reshape(-1)
    if u.size != m:
        raise ConfigurationError(f"desired input has {u.size} entries, expected {m}")
    return u


def cbf_qp(
    sys: ControlAffineSystem,
    cf: ConstraintFunction,
    alpha: ClassKappa,
    k_d: Desired,
    box: Optional[InputBox],
    x,
    saturated: bool = False,
) -> FilterStep:
    """Plain CBF-QP with the row ``dh/dx (f + g u) >= -alpha(h)``.

    With ``saturated=True`` the box is left out of the QP and the minimizer
    is clamped afterwards, so the applied input may violate the row. With
    ``saturated=False`` the box is a QP constraint and the problem may be
    infeasible; the returned input is then the clamped desired input.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u_d = _desired(k_d, x, sys.m)
    h = cf.value(x)
    dh = cf.gradient(x)
    a = dh @ sys.input_matrix(x)
    b = -alpha(h) - dh @ sys.drift(x)
    qp_box = None if saturated else box
    sol = solve_qp(QpProblem(u_d=u_d, box=qp_box, A_ineq=a[None, :], b_ineq=[b]))
    u = sol.u if sol.optimal else u_d
    if box is not None:
        u = box.clip(u)
    return FilterStep(
        u=u,
        u_desired=u_d,
        qp_status=sol.status,
        h_value=h,
        active_constraint_count=len(sol.active_set),
        kkt_residual=sol.kkt_residual,
    )


def backup_rows(sys: ControlAffineSystem, cf: ConstraintFunction, pair: BackupPair, config: FilterConfig, x, flow: FlowRollout):
    """Rows ``A u >= b`` of the backup CBF-QP for a computed rollout.

    Node k gives ``dh(phi_k) Phi_k (f + g u) >= -alpha(h(phi_k))``; the last
    row uses ``h_b`` and ``alpha_b`` at the final node.
    """
    fx = sys.drift(x)
    gx = sys.input_matrix(x)
    phis = flow.states
    h_nodes = cf.values(phis)
    grads = np.einsum("ki,kij->kj", cf.gradients(phis), flow.sensitivities)
    hb_T = pair.h_b(phis[-1])
    grad_b = pair.grad_h_b(phis[-1]) @ flow.sensitivities[-1]
    G = np.vstack([grads, grad_b[None, :]])
    A = G @ gx
    rhs = np.concatenate([-config.alpha(h_nodes), [-config.alpha_b(hb_T)]]) - G @ fx
    return A, rhs, h_nodes, hb_T


def backup_cbf_qp(
    sys: ControlAffineSystem,
    cf: ConstraintFunction,
    pair: BackupPair,
    config: FilterConfig,
    k_d: Desired,
    box: InputBox,
    x,
) -> FilterStep:
    """Backup CBF-QP with the box inside the QP.

    On an infeasible QP the configured fallback is applied: the backup
    controller (default) or the clamped desired input.

    Raises:
        FilterError: if the backup flow diverges; carries the state.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u_d = _desired(k_d, x, sys.m)
    try:
        flow = rollout(sys, pair, x, config.T, config.N_c)
    except DivergenceError as exc:
        raise FilterError(f"backup rollout diverged from {x}: {exc}", state=x) from exc
    A, b, h_nodes, hb_T = backup_rows(sys, cf, pair, config, x, flow)
    sol = solve_qp(QpProblem(u_d=u_d, box=box, A_ineq=A, b_ineq=b))
    fallback = False
    if sol.optimal:
        u = sol.u
    else:
        fallback = True
        u = pair.kb(x) if config.fallback == "backup_controller" else u_d
    return FilterStep(
        u=box.clip(u),
        u_desired=u_d,
        qp_status=sol.status,
        h_value=float(h_nodes[0]),
        h_b_at_T=hb_T,
        active_constraint_count=len(sol.active_set),
        fallback_used=fallback,
        kkt_residual=sol.kkt_residual,
        rollout=flow,
    )


def select_high(box: InputBox) -> Callable[[np.ndarray], np.ndarray]:
    """Constant controller at the lower input bound (maximal braking for force inputs)."""
    u = np.array(box.u_min, dtype=float)

    def k(x=None):
        return u.copy()

    return k


def backup_direct(pair: BackupPair) -> Callable[[np.ndarray], np.ndarray]:
    """The saturated backup controller applied without any filter."""
    return pair.kb


__all__ = [
    "FALLBACKS",
    "FilterConfig",
    "FilterStep",
    "INFEASIBLE",
    "OPTIMAL",
    "backup_cbf_qp",
    "backup_direct",
    "backup_rows",
    "cbf_qp",
    "select_high",
]
