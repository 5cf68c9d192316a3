"""Reference plants: scalar example, inverted pendulum, split-friction vehicle braking."""

from .pendulum import GAIN_PRESETS, PendulumParams, pendulum_backup_pair, pendulum_constraint, pendulum_system
from .scalar import ScalarParams, scalar_backup_pair, scalar_constraint, scalar_system
from .vehicle import (
    VehicleParams,
    driver_steering,
    tire_slip_angles,
    vehicle_backup_pair,
    vehicle_constraint,
    vehicle_dynamics,
    vehicle_system,
)

__all__ = [
    "GAIN_PRESETS",
    "PendulumParams",
    "ScalarParams",
    "VehicleParams",
    "driver_steering",
    "pendulum_backup_pair",
    "pendulum_constraint",
    "pendulum_system",
    "scalar_backup_pair",
    "scalar_constraint",
    "scalar_system",
    "tire_slip_angles",
    "vehicle_backup_pair",
    "vehicle_constraint",
    "vehicle_dynamics",
    "vehicle_system",
]
