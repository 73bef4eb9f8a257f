from .aerial import AerialBranch, AerialBranchConfig, adapt_input_layer
from .temporal import TemporalBranch, TemporalBranchConfig, align_to_aerial

__all__ = [
    "AerialBranch",
    "AerialBranchConfig",
    "adapt_input_layer",
    "TemporalBranch",
    "TemporalBranchConfig",
    "align_to_aerial",
]
