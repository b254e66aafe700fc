"""Circuit IR, text format and builders."""

from .builders import (
    build_bfec,
    build_cat_prep,
    build_full_toffoli,
    build_modified_prep,
    build_pfec,
    build_shor_prep,
    build_toffoli_decomposition,
)
from .expr import Expr, parse_expr
from .ir import Circuit, CircuitError, FaultLocation, Gate, InvalidRounds, QubitId, locations
from .text import CircuitParseError, dumps, loads

__all__ = [
    "Circuit",
    "CircuitError",
    "CircuitParseError",
    "Expr",
    "FaultLocation",
    "Gate",
    "InvalidRounds",
    "QubitId",
    "build_bfec",
    "build_cat_prep",
    "build_full_toffoli",
    "build_modified_prep",
    "build_pfec",
    "build_shor_prep",
    "build_toffoli_decomposition",
    "dumps",
    "loads",
    "locations",
    "parse_expr",
]
