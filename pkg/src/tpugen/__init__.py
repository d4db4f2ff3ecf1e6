"""Generation, validation and characterization of approximate systolic-array TPUs."""
from .arith import Unit, parse_unit
from .config import TpuConfig, config_from_spec, spec_from_config
from .spec_parser import Budget, DesignSpec, canonicalize, parse_spec, render_prompt

__version__ = "0.1.0"

__all__ = [
    "Unit",
    "parse_unit",
    "TpuConfig",
    "config_from_spec",
    "spec_from_config",
    "Budget",
    "DesignSpec",
    "canonicalize",
    "parse_spec",
    "render_prompt",
]
