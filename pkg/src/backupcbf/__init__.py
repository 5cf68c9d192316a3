"""Backup control barrier functions for input-constrained safety filters."""

from .core import ClassKappa, ConstraintFunction, ControlAffineSystem, InputBox
from .errors import (
    BackupCBFError,
    ConfigurationError,
    DivergenceError,
    FilterError,
    LinearizationError,
    NumericalError,
    PreconditionError,
    SingularityError,
    SynthesisError,
)
from .flow import FlowRollout, rollout
from .lyapunov import solve_ctle
from .qp import QpProblem, QpSolution, solve_qp
from .synthesis import BackupPair, OutputMap, build_hb, max_c, verify_validity

__version__ = "0.1.0"
