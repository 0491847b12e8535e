"""Cost-limited reachable sets from a single stored value field."""
from .dynamics import builtin_system
from .grid import GridSpec, ValueField, interpolate, load_field, save_field
from .solver import SolverConfig, compute_horizon, solve

__all__ = ["GridSpec", "SolverConfig", "ValueField", "builtin_system", "compute_horizon", "interpolate",
           "load_field", "save_field", "solve"]
__version__ = "0.1.0"
