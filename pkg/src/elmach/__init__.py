"""Low-Mach Ericksen-Leslie nematic flow on a periodic square."""
from .grid import Grid, set_threads
from .model import FlowState, LeslieCoefficients, validate_coefficients

__version__ = "0.1.0"

__all__ = ["Grid", "set_threads", "FlowState", "LeslieCoefficients", "validate_coefficients"]
