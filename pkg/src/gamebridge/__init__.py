"""Programmed iteration for differential approach games and their transformed games."""
from .bridge import (
    GridSpec,
    TimeSlicedGrid,
    absorption_step,
    build_controllability_target,
    build_target_cylinder,
    compare_grids,
    decreasing_by_sections_check,
    programmed_iteration,
    target_grid,
)
from .flows import check_flow_commutation, check_rearrangement, flow_const, flow_piecewise
from .gamespec import (
    AuxiliarySystem,
    Controllability,
    Cylinder,
    ExplicitGrid,
    GameProblem,
    TerminalSet,
    build_transformed,
    sample_control_set,
)
from .isaacs import isaacs_gap, isaacs_gap_transformed
from .simulate import ExtremalShift, run_trials
from .vectorfield import FieldSignature, eval_field, lie_bracket, parse_expr, parse_field

__version__ = "0.1.0"
