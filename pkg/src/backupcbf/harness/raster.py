"""Set membership on a state grid: S, S_ns, S_I(T) and S_b as bit flags per cell.

Bits: 1 = in S, 2 = in S_ns (unsaturated law strictly inside the box),
4 = in S_I(T) (all rollout nodes in S, final node in S_b), 8 = in S_b.
A cell with no bit set is outside every set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..core import ConstraintFunction
from ..errors import ConfigurationError, DivergenceError
from ..flow import rollout
from ..synthesis import BackupPair

IN_S, IN_SNS, IN_SI, IN_SB = 1, 2, 4, 8
BIT_NAMES = {"in_S": IN_S, "in_Sns": IN_SNS, "in_SI": IN_SI, "in_Sb": IN_SB}


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid over one or two state coordinates.

    ``dims`` names the varied coordinates; the others are taken from
    ``base``. For a 1-D grid leave ``y_range`` as None.
    """

    x_range: tuple
    nx: int
    y_range: Optional[tuple] = None
    ny: int = 1
    dims: tuple = (0, 1)
    base: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigurationError("grid needs at least one cell per axis")
        if self.y_range is None and self.ny != 1:
            raise ConfigurationError("a 1-D grid has ny = 1")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_range[0], self.x_range[1], self.nx)

    @property
    def ys(self) -> np.ndarray:
        if self.y_range is None:
            return np.zeros(1)
        return np.linspace(self.y_range[0], self.y_range[1], self.ny)

    def state(self, i: int, j: int, n: int) -> np.ndarray:
        x = np.zeros(n) if self.base is None else np.array(self.base, dtype=float)
        x[self.dims[0]] = self.xs[i]
        if self.y_range is not None:
            x[self.dims[1]] = self.ys[j]
        return x


@dataclass
class RasterResult:
    grid: GridSpec
    flags: dict  # horizon -> uint8 array of shape (ny, nx)
    d_theta: float
    meta: dict = field(default_factory=dict)

    def count(self, T: float, bit: int) -> int:
        return int(np.count_nonzero(self.flags[T] & bit))


def rasterize_sets(
    cf: ConstraintFunction,
    pair: BackupPair,
    grid: GridSpec,
    horizons: Sequence[float],
    d_theta: float = 0.1,
) -> RasterResult:
    """Label every grid cell for each horizon.

    One rollout per cell to the longest horizon with node spacing
    ``d_theta``; shorter horizons use a prefix of the same nodes, so the
    S_I labels of different horizons are mutually consistent. Each horizon
    must be a multiple of ``d_theta``. Diverging rollouts leave the cell
    outside S_I.
    """
    horizons = sorted(float(T) for T in horizons)
    if not horizons or horizons[0] < 0:
        raise ConfigurationError("need non-negative horizons")
    if not d_theta > 0:
        raise ConfigurationError("d_theta must be positive")
    node_idx = {}
    for T in horizons:
        k = T / d_theta
        if abs(k - round(k)) > 1e-9 * max(1.0, k):
            raise ConfigurationError(f"horizon {T} is not a multiple of d_theta={d_theta}")
        node_idx[T] = int(round(k))
    K = node_idx[horizons[-1]]
    T_max = K * d_theta
    sys = pair.system
    n = sys.n
    flags = {T: np.zeros((grid.ny, grid.nx), dtype=np.uint8) for T in horizons}
    for j in range(grid.ny):
        for i in range(grid.nx):
            x = grid.state(i, j, n)
            base = 0
            if cf.value(x) >= 0.0:
                base |= IN_S
            try:
                if pair.in_no_saturation_set(x, strict=True):
                    base |= IN_SNS
            except ArithmeticError:
                pass
            if pair.h_b(x) >= 0.0:
                base |= IN_SB
            si = {T: False for T in horizons}
            if base & IN_S:
                try:
                    states = rollout(sys, pair, x, T_max, K + 1).states if K > 0 else x[None, :]
                    ok = cf.values(states) >= 0.0
                    # first index where the flow leaves S
                    bad = int(np.argmin(ok)) if not ok.all() else K + 1
                    for T in horizons:
                        kT = node_idx[T]
                        si[T] = bad > kT and pair.h_b(states[kT]) >= 0.0
                except (DivergenceError, ArithmeticError):
                    pass
            for T in horizons:
                flags[T][j, i] = base | (IN_SI if si[T] else 0)
    return RasterResult(grid=grid, flags=flags, d_theta=d_theta, meta={"horizons": horizons})
