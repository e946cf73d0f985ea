"""Data-driven failure envelopes for unidirectional fiber composites.

Random fiber microstructures are meshed and analysed under a grid of
in-plane loads.  Each analysis is scaled to first failure, and the scaled
stress states become a cloud that new stress states are checked against
with k-nearest neighbors.
"""

from .config import PipelineConfig
from .errors import PCFCError

__version__ = "0.1.0"

__all__ = ["PipelineConfig", "PCFCError", "__version__"]
