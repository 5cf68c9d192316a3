"""Continuous-time Lyapunov equation ``A^T P + P A = -Q`` and quadratic level sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError, PreconditionError

HURWITZ_MARGIN = 1e-12
KRONECKER_MAX_N = 8


@dataclass(frozen=True)
class CtleSolution:
    P: np.ndarray
    residual_norm: float
    min_eig_P: float


def is_hurwitz(A) -> bool:
    """True iff every eigenvalue of A has real part below ``-1e-12``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise PreconditionError(f"A must be square, got {A.shape}")
    try:
        eig = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue computation failed: {exc}") from exc
    if not np.all(np.isfinite(eig)):
        raise NumericalError("non-finite eigenvalues")
    return bool(np.all(eig.real < -HURWITZ_MARGIN))


def _ctle_residual(A, P, Q):
    return A.T @ P + P @ A + Q


def _solve_kronecker(A, Q):
    n = A.shape[0]
    eye = np.eye(n)
    # column-major vec: vec(A^T P) = (I kron A^T) vec P, vec(P A) = (A^T kron I) vec P
    L = np.kron(eye, A.T) + np.kron(A.T, eye)
    try:
        lu = scipy.linalg.lu_factor(L, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"Kronecker system factorization failed: {exc}") from exc
    if np.any(np.abs(np.diag(lu[0])) < np.finfo(float).eps * max(1.0, np.abs(L).max())):
        raise NumericalError("Kronecker system is singular")
    P = scipy.linalg.lu_solve(lu, -Q.reshape(-1, order="F")).reshape(n, n, order="F")
    # one step of iterative refinement
    R = _ctle_residual(A, P, Q)
    dP = scipy.linalg.lu_solve(lu, -R.reshape(-1, order="F")).reshape(n, n, order="F")
    return P + dP


def solve_ctle(A, Q=None, method: str = "auto") -> CtleSolution:
    """Solve ``A^T P + P A = -Q`` for the symmetric positive definite P.

    ``method`` is ``"kronecker"`` (vectorized direct solve), ``"schur"``
    (Bartels-Stewart via scipy) or ``"auto"``, which picks the Kronecker path
    for n <= 8.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    Q = np.eye(n) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    if A.shape != (n, n) or Q.shape != (n, n):
        raise PreconditionError(f"shape mismatch: A {A.shape}, Q {Q.shape}")
    if not is_hurwitz(A):
        raise PreconditionError("A is not Hurwitz")
    if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise PreconditionError("Q is not symmetric")
    if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() <= 0.0:
        raise PreconditionError("Q is not positive definite")

    if method == "auto":
        method = "kronecker" if n <= KRONECKER_MAX_N else "schur"
    if method == "kronecker":
        P = _solve_kronecker(A, Q)
    elif method == "schur":
        # scipy solves a X + X a^H = q
        P = scipy.linalg.solve_continuous_lyapunov(A.T, -Q)
    else:
        raise ValueError(f"unknown method {method!r}")
    P = 0.5 * (P + P.T)
    if not np.all(np.isfinite(P)):
        raise NumericalError("non-finite Lyapunov solution")
    residual = float(np.linalg.norm(_ctle_residual(A, P, Q), "fro"))
    return CtleSolution(P=P, residual_norm=residual, min_eig_P=float(np.linalg.eigvalsh(P).min()))


def quadratic_level_value(P, center, x) -> float:
    """``(x - center)^T P (x - center)``."""
    d = np.atleast_1d(np.asarray(x, dtype=float)) - np.atleast_1d(np.asarray(center, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape != (d.size, d.size):
        raise PreconditionError(f"P has shape {P.shape}, state has size {d.size}")
    return float(d @ P @ d)
