"""Safety-aware multi-UAV scheduling for aerial 3D printing."""

from .geometry import (ConflictPair, ConflictSet, GeometryError, PrintPath, Segment,
                       arrival_offsets, conflict_probability, detect_conflicts,
                       segment_min_distance)
from .instance import (DependencyGraph, MissionInstance, MissionParams, RobotSpec, SchemaError,
                       Task, generate_rect_instance, importance, in_degree, load_instance,
                       make_instance, save_instance, validate_instance)
from .model import MilpModel, Variant, big_m, build_model, export_lp
from .oracle import OracleRefused, brute_force_schedule
from .solver import (DiffConstraintSystem, Schedule, SolveLimits, SolveReport, earliest_starts,
                     solve, sweep_fleet)

__version__ = "0.1.0"
