"""Construction and checking of backup set / backup controller pairs.

The backup controller saturates a feedback-linearizing law that turns the
output coordinates ``eta`` into the linear system ``eta_dot = A eta``; the
backup set is the ellipsoid ``c - eta^T P eta >= 0`` where P solves the
Lyapunov equation for A. ``c`` is picked by bisection so that the ellipsoid
stays inside the constraint set and inside the region where the
linearizing law does not saturate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ConstraintFunction, ControlAffineSystem, InputBox
from .errors import ConfigurationError, LinearizationError, PreconditionError, SynthesisError
from .lyapunov import is_hurwitz, solve_ctle

Array = np.ndarray

SAFETY_FACTOR = 0.95
MAX_COND = 1e10


@dataclass(frozen=True)
class OutputMap:
    """Output ``y`` with relative degree ``r`` and its Lie derivatives.

    ``lie[i-1]`` is ``L_f^i y`` and ``lie_jac[i-1]`` its Jacobian for
    ``i = 1..r``. ``decoupling`` is ``L_g L_f^{r-1} y`` (p x p);
    ``decoupling_jac_cols`` returns the Jacobians of its columns and may be
    omitted when the decoupling matrix is constant.
    """

    p: int
    r: int
    y: Callable[[Array], Array]
    y_jac: Callable[[Array], Array]
    lie: Sequence[Callable[[Array], Array]]
    lie_jac: Sequence[Callable[[Array], Array]]
    decoupling: Callable[[Array], Array]
    decoupling_jac_cols: Optional[Callable[[Array], Sequence[Array]]] = None

    def __post_init__(self):
        if self.r < 1 or self.p < 1:
            raise ConfigurationError("relative degree and output dimension must be positive")
        if len(self.lie) != self.r or len(self.lie_jac) != self.r:
            raise ConfigurationError(f"need {self.r} Lie derivatives and Jacobians")

    def eta(self, x, y_ref) -> Array:
        parts = [np.atleast_1d(self.y(x)) - np.atleast_1d(y_ref)]
        parts += [np.atleast_1d(self.lie[i](x)) for i in range(self.r - 1)]
        return np.concatenate(parts).astype(float)

    def eta_jac(self, x) -> Array:
        n = np.asarray(x).size
        rows = [np.asarray(self.y_jac(x), dtype=float).reshape(self.p, n)]
        rows += [np.asarray(self.lie_jac[i](x), dtype=float).reshape(self.p, n) for i in range(self.r - 1)]
        return np.vstack(rows)

    def decoupling_matrix(self, x) -> Array:
        return np.atleast_2d(np.asarray(self.decoupling(x), dtype=float)).reshape(self.p, self.p)


def identity_output(sys: ControlAffineSystem) -> OutputMap:
    """Full-state output ``y = x`` (relative degree one, decoupling matrix g)."""
    if sys.n != sys.m:
        raise PreconditionError("full-state linearization needs n == m")
    return OutputMap(
        p=sys.n,
        r=1,
        y=lambda x: np.asarray(x, dtype=float),
        y_jac=lambda x: np.eye(sys.n),
        lie=[sys.drift],
        lie_jac=[sys.drift_jacobian],
        decoupling=sys.input_matrix,
        decoupling_jac_cols=sys.input_column_jacobians,
    )


def check_output_map(sys: ControlAffineSystem, output: OutputMap, states, tol: float = 1e-10) -> None:
    """Raise ConfigurationError unless the relative-degree conditions hold at every state."""
    if output.p != sys.m:
        raise ConfigurationError(f"output dimension {output.p} must equal input dimension {sys.m}")
    for x in np.atleast_2d(states):
        gx = sys.input_matrix(x)
        jacs = [np.asarray(output.y_jac(x)).reshape(output.p, sys.n)]
        jacs += [np.asarray(output.lie_jac[i](x)).reshape(output.p, sys.n) for i in range(output.r - 1)]
        for i, Jy in enumerate(jacs[:-1]):
            if np.abs(Jy @ gx).max() > tol:
                raise ConfigurationError(f"L_g L_f^{i} y is nonzero at {x}")
        D = output.decoupling_matrix(x)
        if not np.allclose(jacs[-1] @ gx, D, atol=1e-8, rtol=1e-8):
            raise ConfigurationError(f"decoupling matrix inconsistent with Lie derivatives at {x}")
        if np.linalg.matrix_rank(D) < output.p or np.linalg.cond(D) >= 1e8:
            raise ConfigurationError(f"decoupling matrix is rank deficient at {x}")


def assemble_A(gains: Sequence, p: int = 1) -> Array:
    """Block companion matrix with identity super-diagonal and last row ``[-K_1 ... -K_r]``."""
    Ks = [np.atleast_2d(np.asarray(K, dtype=float)) for K in gains]
    if not Ks:
        raise ConfigurationError("need at least one gain")
    for K in Ks:
        if K.shape != (p, p):
            raise ConfigurationError(f"gain has shape {K.shape}, expected ({p}, {p})")
    r = len(Ks)
    A = np.zeros((r * p, r * p))
    for i in range(r - 1):
        A[i * p:(i + 1) * p, (i + 1) * p:(i + 2) * p] = np.eye(p)
    for i, K in enumerate(Ks):
        A[(r - 1) * p:, i * p:(i + 1) * p] = -K
    return A


def saturate(u_raw, box: InputBox):
    """Componentwise clamp. Flags are set only for components strictly outside the box."""
    u = np.atleast_1d(np.asarray(u_raw, dtype=float))
    flags = (u > box.u_max) | (u < box.u_min)
    return np.clip(u, box.u_min, box.u_max), flags


def smooth_saturate(u_raw, box: InputBox, kappa: float):
    """Softplus-blended saturation and its diagonal derivative.

    Approaches the hard clamp as ``kappa`` grows; the result is clipped so it
    never leaves the box.
    """
    u = np.atleast_1d(np.asarray(u_raw, dtype=float))
    lo, hi = box.u_min, box.u_max
    zu = kappa * (u - hi)
    zl = kappa * (lo - u)
    sp_u = np.logaddexp(0.0, zu) / kappa
    sp_l = np.logaddexp(0.0, zl) / kappa
    out = u - sp_u + sp_l
    dout = 1.0 - 0.5 * (1.0 + np.tanh(0.5 * zu)) - 0.5 * (1.0 + np.tanh(0.5 * zl))
    return np.clip(out, lo, hi), dout


def _checked_solve(M, v, what="input matrix"):
    M = np.atleast_2d(M)
    try:
        cond = np.linalg.cond(M)
    except np.linalg.LinAlgError as exc:
        raise LinearizationError(f"{what} is singular") from exc
    if not np.isfinite(cond) or cond >= MAX_COND:
        raise LinearizationError(f"{what} is singular (condition number {cond:.3g})")
    return np.linalg.solve(M, v)


def feedback_lin_full_state(sys: ControlAffineSystem, A, x_star, x) -> Array:
    """``g(x)^{-1} (-f(x) + A (x - x*))`` (unsaturated)."""
    if sys.n != sys.m:
        raise PreconditionError("full-state linearization needs n == m")
    x = np.asarray(x, dtype=float).reshape(-1)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    v = -sys.drift(x) + A @ (x - np.asarray(x_star, dtype=float).reshape(-1))
    return _checked_solve(sys.input_matrix(x), v)


def feedback_lin_output(sys: ControlAffineSystem, output: OutputMap, gains, y_ref, x) -> Array:
    """``(L_g L_f^{r-1} y)^{-1} (-L_f^r y - sum_i K_i eta_i)`` with ``eta_1 = y(x) - y_ref``."""
    A = assemble_A(gains, output.p)
    return _output_law(output, A, y_ref, np.asarray(x, dtype=float).reshape(-1))


def _output_law(output: OutputMap, A, y_ref, x):
    p = output.p
    eta = output.eta(x, y_ref)
    v = -np.atleast_1d(output.lie[-1](x)) + A[-p:, :] @ eta
    return _checked_solve(output.decoupling_matrix(x), v, "decoupling matrix")


def _output_law_jac(output: OutputMap, A, y_ref, x, k):
    """Jacobian of the unsaturated output law at x, given its value k."""
    p = output.p
    n = x.size
    dv = -np.asarray(output.lie_jac[-1](x), dtype=float).reshape(p, n) + A[-p:, :] @ output.eta_jac(x)
    if output.decoupling_jac_cols is not None:
        for j, dD in enumerate(output.decoupling_jac_cols(x)):
            dv = dv - np.asarray(dD, dtype=float).reshape(p, n) * k[j]
    return np.linalg.solve(output.decoupling_matrix(x), dv)


@dataclass(frozen=True)
class EquilibriumReport:
    x_star: Array
    u_star: Array
    h_value: float
    in_constraint_set: bool
    input_interior: bool
    input_margin: float
    residual: float

    @property
    def valid(self) -> bool:
        return self.in_constraint_set and self.input_interior


def validate_equilibrium(candidate, cf: ConstraintFunction, box: InputBox, x_star=None) -> EquilibriumReport:
    """Solve ``f(x*) + g(x*) u* = 0`` and check ``h(x*) > 0`` and ``u*`` strictly inside the box.

    ``candidate`` is either a :class:`BackupPair` (its system and center are
    used) or a :class:`ControlAffineSystem` together with ``x_star``.
    """
    if isinstance(candidate, BackupPair):
        sys = candidate.system
        x_star = candidate.x_star if x_star is None else x_star
    else:
        sys = candidate
    if x_star is None:
        raise ConfigurationError("x_star is required when passing a bare system")
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    fx = sys.drift(x_star)
    gx = sys.input_matrix(x_star)
    u_star, *_ = np.linalg.lstsq(gx, -fx, rcond=None)
    residual = float(np.linalg.norm(fx + gx @ u_star))
    if residual > 1e-9 * (1.0 + np.linalg.norm(fx)):
        raise SynthesisError(f"x* = {x_star} is not an equilibrium for any input (residual {residual:.3g})")
    h_val = cf.value(x_star)
    margin = float(min(np.min(u_star - box.u_min), np.min(box.u_max - u_star)))
    return EquilibriumReport(
        x_star=x_star,
        u_star=u_star,
        h_value=h_val,
        in_constraint_set=h_val > 0.0,
        input_interior=margin > 0.0,
        input_margin=margin,
        residual=residual,
    )


@dataclass(frozen=True)
class BackupPair:
    """Backup set ``{c - eta^T P eta >= 0}`` with its saturated backup controller.

    ``eta`` maps states to the barrier coordinates (the output coordinates
    in the standard construction); ``k_fl`` is the unsaturated linearizing
    law. ``state_from_eta`` maps barrier coordinates back to a state, taking
    any remaining coordinates from an anchor state; ``anchors`` lists the
    anchors used when sampling the ellipsoid boundary.
    """

    system: ControlAffineSystem
    box: InputBox
    A: Array
    P: Array
    Q: Array
    c: float
    x_star: Array
    u_star: Array
    eta: Callable[[Array], Array]
    eta_jac: Callable[[Array], Array]
    k_fl: Callable[[Array], Array]
    k_fl_jac: Callable[[Array], Array]
    state_from_eta: Callable[[Array, Optional[Array]], Array]
    anchors: tuple = (None,)
    output: Optional[OutputMap] = None
    fast: object = None
    saturation: str = "hard"
    kappa: float = 50.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigurationError(f"level c must be positive, got {self.c}")
        if self.saturation not in ("hard", "smooth"):
            raise ConfigurationError(f"unknown saturation {self.saturation!r}")

    @property
    def barrier_dim(self) -> int:
        return self.P.shape[0]

    def kb(self, x) -> Array:
        u = self.k_fl(np.asarray(x, dtype=float))
        if self.saturation == "smooth":
            return smooth_saturate(u, self.box, self.kappa)[0]
        return saturate(u, self.box)[0]

    def sat_mask(self, x) -> Array:
        return saturate(self.k_fl(np.asarray(x, dtype=float)), self.box)[1]

    def kb_jac(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        u = self.k_fl(x)
        J = np.asarray(self.k_fl_jac(x), dtype=float).reshape(self.box.m, -1)
        if self.saturation == "smooth":
            return smooth_saturate(u, self.box, self.kappa)[1][:, None] * J
        # the saturated side wins at the boundary: clamped rows have zero slope
        return np.where(saturate(u, self.box)[1][:, None], 0.0, J)

    def h_b(self, x) -> float:
        e = self.eta(np.asarray(x, dtype=float))
        return float(self.c - e @ self.P @ e)

    def grad_h_b(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        e = self.eta(x)
        return -2.0 * (self.P @ e) @ np.asarray(self.eta_jac(x), dtype=float)

    def in_no_saturation_set(self, x, strict: bool = True) -> bool:
        u = self.k_fl(np.asarray(x, dtype=float))
        if strict:
            return bool(np.all(u > self.box.u_min) and np.all(u < self.box.u_max))
        return self.box.contains(u)

    def with_c(self, c: float) -> "BackupPair":
        return replace(self, c=float(c))

    def boundary_states(self, n_samples: int = 10_000, seed: int = 0, c: Optional[float] = None) -> Array:
        """States on ``{eta^T P eta = c}``: unit-sphere samples mapped through chol(P^-1) * sqrt(c).

        ``n_samples`` points are drawn for every anchor.
        """
        c = self.c if c is None else c
        rng = np.random.default_rng(seed)
        d = self.barrier_dim
        L = np.linalg.cholesky(np.linalg.inv(self.P))
        z = rng.standard_normal((n_samples, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        etas = np.sqrt(c) * z @ L.T
        out = [self.state_from_eta(e, a) for a in self.anchors for e in etas]
        return np.array(out)


def build_hb(pair: BackupPair) -> ConstraintFunction:
    """The backup-set function ``c - eta^T P eta`` with its chain-rule gradient."""
    return ConstraintFunction(h=pair.h_b, grad_h=pair.grad_h_b, name="h_b")


def synthesize_output_pair(
    sys: ControlAffineSystem,
    output: OutputMap,
    A,
    box: InputBox,
    c: float,
    y_ref,
    x_star,
    state_from_eta: Callable,
    Q=None,
    anchors: tuple = (None,),
    **kwargs,
) -> BackupPair:
    """Assemble a pair from an output map with relative degree r and closed-loop matrix A.

    ``A`` is ``rp x rp``; only its last p rows enter the control law, so for
    r > 1 it should be the companion matrix from :func:`assemble_A`.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = output.r * output.p
    if A.shape != (d, d):
        raise ConfigurationError(f"A has shape {A.shape}, expected ({d}, {d})")
    if not is_hurwitz(A):
        raise PreconditionError("closed-loop matrix A is not Hurwitz")
    Q = np.eye(d) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    P = solve_ctle(A, Q).P
    y_ref = np.atleast_1d(np.asarray(y_ref, dtype=float))
    x_star = np.asarray(x_star, dtype=float).reshape(-1)

    def k_fl(x):
        return _output_law(output, A, y_ref, np.asarray(x, dtype=float).reshape(-1))

    def k_fl_jac(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        return _output_law_jac(output, A, y_ref, x, k_fl(x))

    return BackupPair(
        system=sys,
        box=box,
        A=A,
        P=P,
        Q=Q,
        c=float(c),
        x_star=x_star,
        u_star=k_fl(x_star),
        eta=lambda x: output.eta(np.asarray(x, dtype=float).reshape(-1), y_ref),
        eta_jac=lambda x: output.eta_jac(np.asarray(x, dtype=float).reshape(-1)),
        k_fl=k_fl,
        k_fl_jac=k_fl_jac,
        state_from_eta=state_from_eta,
        anchors=anchors,
        output=output,
        **kwargs,
    )


def synthesize_full_state_pair(sys: ControlAffineSystem, A, x_star, box: InputBox, c: float, Q=None, **kwargs) -> BackupPair:
    """Pair for a fully actuated system with invertible g: ``eta = x - x*``."""
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    return synthesize_output_pair(
        sys,
        identity_output(sys),
        A,
        box,
        c,
        y_ref=x_star,
        x_star=x_star,
        state_from_eta=lambda e, anchor=None: x_star + np.asarray(e, dtype=float),
        Q=Q,
        **kwargs,
    )


def _admissible_level(pair: BackupPair, cf: ConstraintFunction, box: InputBox, c: float, n_samples: int, seed: int) -> bool:
    for x in pair.boundary_states(n_samples, seed, c=c):
        if not cf.value(x) > 0.0:
            return False
        u = pair.k_fl(x)
        if not (np.all(u > box.u_min) and np.all(u < box.u_max)):
            return False
    return True


def max_c(
    pair: BackupPair,
    cf: ConstraintFunction,
    box: Optional[InputBox] = None,
    n_samples: int = 10_000,
    seed: int = 0,
    c_hi: Optional[float] = None,
    rel_tol: float = 1e-6,
) -> float:
    """Largest admissible ellipsoid level, scaled by the 0.95 safety factor.

    A level is admissible when every boundary sample lies strictly inside the
    constraint set and the unsaturated law is strictly inside the box there.
    Bisection runs on ``[0, c_hi]``; without ``c_hi`` the upper end is found by
    doubling from 1.
    """
    box = pair.box if box is None else box
    ok = lambda c: _admissible_level(pair, cf, box, c, n_samples, seed)
    lo = 0.0
    if c_hi is None:
        hi = 1.0
        for _ in range(60):
            if not ok(hi):
                break
            lo, hi = hi, 2.0 * hi
        else:
            raise SynthesisError("backup set level is unbounded; constraint set not enclosed")
    else:
        hi = float(c_hi)
        if ok(hi):
            return SAFETY_FACTOR * hi
    while hi - lo > rel_tol * max(hi, 1e-300):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
        if hi < 1e-300:
            break
    if lo <= 0.0:
        raise SynthesisError("no positive level c is admissible; equilibrium too close to a boundary")
    return SAFETY_FACTOR * lo


@dataclass
class ValidityReport:
    """Outcome of the sampled (C1)-(C3) checks plus the no-saturation containment."""

    c1_min_h: float
    c1_worst: Array
    c2_max_violation: float
    c2_worst: Array
    c3_min_hb_dot: float
    c3_worst: Array
    ns_min_margin: float
    ns_worst: Array
    n_boundary: int
    n_region: int
    c3_tol: float = 1e-9

    @property
    def c1(self) -> bool:
        return self.c1_min_h >= 0.0

    @property
    def c2(self) -> bool:
        return self.c2_max_violation <= 0.0

    @property
    def c3(self) -> bool:
        return self.c3_min_hb_dot >= -self.c3_tol

    @property
    def no_saturation(self) -> bool:
        return self.ns_min_margin >= 0.0

    @property
    def valid(self) -> bool:
        return self.c1 and self.c2 and self.c3

    @property
    def passed(self) -> bool:
        return self.valid and self.no_saturation

    def as_lines(self) -> list[str]:
        fmt = lambda v: np.array2string(np.asarray(v), precision=6, separator=",")
        return [
            f"C1_subset_of_S: {'pass' if self.c1 else 'FAIL'}",
            f"C1_min_h: {self.c1_min_h:.9g}",
            f"C1_worst_state: {fmt(self.c1_worst)}",
            f"C2_input_admissible: {'pass' if self.c2 else 'FAIL'}",
            f"C2_max_violation: {self.c2_max_violation:.9g}",
            f"C3_forward_invariant: {'pass' if self.c3 else 'FAIL'}",
            f"C3_min_hb_dot: {self.c3_min_hb_dot:.9g}",
            f"C3_worst_state: {fmt(self.c3_worst)}",
            f"no_saturation_in_Sb: {'pass' if self.no_saturation else 'FAIL'}",
            f"no_saturation_min_margin: {self.ns_min_margin:.9g}",
            f"no_saturation_worst_state: {fmt(self.ns_worst)}",
            f"boundary_samples: {self.n_boundary}",
            f"region_samples: {self.n_region}",
            f"valid: {'yes' if self.valid else 'no'}",
        ]


def verify_validity(
    pair: BackupPair,
    cf: ConstraintFunction,
    box: Optional[InputBox] = None,
    n_samples: int = 10_000,
    region: Optional[tuple] = None,
    seed: int = 0,
    c3_tol: float = 1e-9,
) -> ValidityReport:
    """Sampled check of the pair conditions.

    C1: ``h >= 0`` on the ellipsoid boundary. C2: ``kb(x)`` in the box at
    ``n_samples`` uniform states of ``region = (lo, hi)``; without a region
    the bounding box of the boundary samples, enlarged three times about
    its center, is used. C3: ``h_b_dot``
    under ``kb`` is non-negative (to ``-c3_tol``) on the boundary. The
    no-saturation margin checks that the unsaturated law stays in the box on
    the boundary.
    """
    sys = pair.system
    box = pair.box if box is None else box
    bnd = pair.boundary_states(n_samples, seed)
    h_vals = np.array([cf.value(x) for x in bnd])
    hb_dot = np.empty(len(bnd))
    ns_margin = np.empty(len(bnd))
    for i, x in enumerate(bnd):
        u_fl = pair.k_fl(x)
        ns_margin[i] = min(np.min(u_fl - box.u_min), np.min(box.u_max - u_fl))
        hb_dot[i] = pair.grad_h_b(x) @ sys.rhs(x, pair.kb(x))

    rng = np.random.default_rng(seed + 1)
    if region is None:
        region = pair.meta.get("region")
    if region is None:
        mid = 0.5 * (bnd.min(axis=0) + bnd.max(axis=0))
        half = 1.5 * (bnd.max(axis=0) - bnd.min(axis=0)) + 1e-9
        region = (mid - half, mid + half)
    lo, hi = (np.asarray(v, dtype=float) for v in region)
    pts = rng.uniform(lo, hi, size=(n_samples, lo.size))
    viol = np.empty(n_samples)
    for i, x in enumerate(pts):
        try:
            u = pair.kb(x)
        except (LinearizationError, ArithmeticError):
            # states where the law is undefined (e.g. singular model) are skipped
            viol[i] = -np.inf
            continue
        viol[i] = max(np.max(box.u_min - u), np.max(u - box.u_max))

    i1, i2, i3, i4 = np.argmin(h_vals), np.argmax(viol), np.argmin(hb_dot), np.argmin(ns_margin)
    return ValidityReport(
        c1_min_h=float(h_vals[i1]),
        c1_worst=bnd[i1],
        c2_max_violation=float(viol[i2]),
        c2_worst=pts[i2],
        c3_min_hb_dot=float(hb_dot[i3]),
        c3_worst=bnd[i3],
        ns_min_margin=float(ns_margin[i4]),
        ns_worst=bnd[i4],
        n_boundary=len(bnd),
        n_region=n_samples,
        c3_tol=c3_tol,
    )
