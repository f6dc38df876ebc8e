"""Guaranteed control synthesis for sampled switched systems.

Pipeline: interval/box arithmetic -> validated Runge-Kutta reachability
(Post/Tube of mode patterns) -> state-space bisection synthesis of
switching controllers -> independently checkable certificates and
closed-loop simulation.
"""

__version__ = "1.0.0"

from .intervals import Box, Interval, bisect, format_box, parse_box
from .model import SwitchedSystem, lie_derivative, load_model, parse_model
from .expr import eval_interval, parse_expr, print_expr
from .integrate import (
    DEFAULT_OPTIONS,
    IntegratorOptions,
    SCHEMES,
    TubeResult,
    integrate_mode,
    picard_enclosure,
    post,
    tube,
    validated_step,
)

__all__ = [
    "Box",
    "Interval",
    "IntegratorOptions",
    "DEFAULT_OPTIONS",
    "SCHEMES",
    "SwitchedSystem",
    "TubeResult",
    "bisect",
    "eval_interval",
    "format_box",
    "integrate_mode",
    "lie_derivative",
    "load_model",
    "parse_box",
    "parse_expr",
    "parse_model",
    "picard_enclosure",
    "post",
    "print_expr",
    "tube",
    "validated_step",
]
