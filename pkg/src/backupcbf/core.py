"""Control-affine systems, constraint functions, class-K functions and input boxes.

A system is described by ``xdot = f(x) + g(x) u``. Everything is dense numpy;
the state dimensions in this package never exceed a handful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError

Array = np.ndarray


def fd_jacobian(fun: Callable[[Array], Array], x: Array, rel_step: float = 1e-6) -> Array:
    """Central finite-difference Jacobian of a vector (or scalar) function.

    The step for coordinate i is ``rel_step * max(1, |x_i|)``.
    """
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(fun(x), dtype=float))
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        eps = rel_step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += eps
        xm[i] -= eps
        fp = np.atleast_1d(np.asarray(fun(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(fun(xm), dtype=float))
        jac[:, i] = (fp - fm) / (2.0 * eps)
    return jac


@dataclass(frozen=True)
class ControlAffineSystem:
    """Dynamics ``xdot = f(x) + g(x) u`` with state dimension n and input dimension m.

    ``jac_f`` and ``jac_g_cols`` are optional; when omitted a central
    finite-difference fallback is used and ``analytic`` is False. The fallback
    is noticeably less accurate and should only be used for user-supplied
    models.
    """

    n: int
    m: int
    f: Callable[[Array], Array]
    g: Callable[[Array], Array]
    jac_f: Optional[Callable[[Array], Array]] = None
    jac_g_cols: Optional[Callable[[Array], Sequence[Array]]] = None
    name: str = "system"
    analytic: bool = field(init=False, default=True)

    def __post_init__(self):
        if int(self.n) <= 0 or int(self.m) <= 0:
            raise ConfigurationError(f"dimensions must be positive, got n={self.n}, m={self.m}")
        if self.jac_f is None or self.jac_g_cols is None:
            object.__setattr__(self, "analytic", False)

    def drift(self, x) -> Array:
        fx = np.asarray(self.f(np.asarray(x, dtype=float)), dtype=float).reshape(-1)
        if fx.shape != (self.n,):
            raise ConfigurationError(f"f(x) has shape {fx.shape}, expected ({self.n},)")
        return fx

    def input_matrix(self, x) -> Array:
        gx = np.asarray(self.g(np.asarray(x, dtype=float)), dtype=float).reshape(self.n, -1)
        if gx.shape != (self.n, self.m):
            raise ConfigurationError(f"g(x) has shape {gx.shape}, expected ({self.n}, {self.m})")
        return gx

    def drift_jacobian(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if self.jac_f is None:
            return fd_jacobian(self.drift, x)
        return np.asarray(self.jac_f(x), dtype=float).reshape(self.n, self.n)

    def input_column_jacobians(self, x) -> list[Array]:
        """Jacobians of each column of g, a list of m (n, n) arrays."""
        x = np.asarray(x, dtype=float)
        if self.jac_g_cols is None:
            return [fd_jacobian(lambda z, j=j: self.input_matrix(z)[:, j], x) for j in range(self.m)]
        cols = [np.asarray(J, dtype=float).reshape(self.n, self.n) for J in self.jac_g_cols(x)]
        if len(cols) != self.m:
            raise ConfigurationError(f"jac_g_cols returned {len(cols)} matrices, expected {self.m}")
        return cols

    def rhs(self, x, u) -> Array:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.shape != (self.m,):
            raise ConfigurationError(f"input has shape {u.shape}, expected ({self.m},)")
        return self.drift(x) + self.input_matrix(x) @ u


@dataclass(frozen=True)
class InputBox:
    """Admissible input set ``u_min <= u <= u_max`` (componentwise)."""

    u_min: Array
    u_max: Array

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.u_min, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.u_max, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigurationError("u_min and u_max must be vectors of equal length")
        if not np.all(lo < hi):
            raise ConfigurationError(f"box requires u_min < u_max, got {lo} and {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "u_min", lo)
        object.__setattr__(self, "u_max", hi)

    @property
    def m(self) -> int:
        return self.u_min.size

    def contains(self, u, tol: float = 0.0) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.u_min - tol) and np.all(u <= self.u_max + tol))

    def clip(self, u) -> Array:
        return np.clip(np.asarray(u, dtype=float), self.u_min, self.u_max)

    @classmethod
    def unbounded(cls, m: int) -> "InputBox":
        return cls(np.full(m, -np.inf), np.full(m, np.inf))


@dataclass(frozen=True)
class ConstraintFunction:
    """Scalar constraint ``h`` whose zero-superlevel set is the constraint set.

    With ``vectorized=True`` both callables accept a stack of states (shape
    ``(k, n)``) and index the state along the last axis; :meth:`values` and
    :meth:`gradients` then evaluate a whole rollout at once.
    """

    h: Callable[[Array], float]
    grad_h: Optional[Callable[[Array], Array]] = None
    name: str = "h"
    vectorized: bool = False

    def value(self, x) -> float:
        return float(self.h(np.asarray(x, dtype=float)))

    def gradient(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if self.grad_h is None:
            return fd_jacobian(lambda z: np.array([self.value(z)]), x)[0]
        return np.asarray(self.grad_h(x), dtype=float).reshape(-1)

    def values(self, X) -> Array:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.vectorized:
            return np.asarray(self.h(X), dtype=float).reshape(X.shape[0])
        return np.array([self.value(x) for x in X])

    def gradients(self, X) -> Array:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.vectorized and self.grad_h is not None:
            return np.asarray(self.grad_h(X), dtype=float).reshape(X.shape)
        return np.array([self.gradient(x) for x in X])


@dataclass(frozen=True)
class ClassKappa:
    """Class-K function. Only the linear kind ``alpha(h) = coefficient * h`` exists."""

    coefficient: float
    kind: str = "linear"

    def __post_init__(self):
        if self.kind != "linear":
            raise ConfigurationError(f"unsupported class-K kind {self.kind!r}")
        if not self.coefficient > 0:
            raise ConfigurationError("class-K coefficient must be positive")

    def __call__(self, h):
        return self.coefficient * h


def closed_loop_rhs(sys: ControlAffineSystem, k: Callable[[Array], Array], x) -> Array:
    """Evaluate ``f(x) + g(x) k(x)``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (sys.n,):
        raise ConfigurationError(f"state has shape {x.shape}, expected ({sys.n},)")
    return sys.rhs(x, np.atleast_1d(k(x)))


def h_dot(cf: ConstraintFunction, sys: ControlAffineSystem, x, u) -> float:
    """Time derivative of h along the system for input u."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (sys.n,):
        raise ConfigurationError(f"state has shape {x.shape}, expected ({sys.n},)")
    grad = cf.gradient(x)
    if grad.shape != (sys.n,):
        raise ConfigurationError(f"gradient has shape {grad.shape}, expected ({sys.n},)")
    return float(grad @ sys.rhs(x, np.atleast_1d(u)))
