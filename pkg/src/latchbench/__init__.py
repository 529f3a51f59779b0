"""Goal-pivot stress benchmark: trajectory forging, agent strategies, judging and metrics."""

from .tokens import derive_seed, estimate_tokens

__version__ = "0.1.0"

__all__ = ["derive_seed", "estimate_tokens", "__version__"]
