"""Session-based next-item recommendation with interest-trend attention.

The package is a small numpy-backed stack: a reverse-mode autodiff tensor
core (``autograd``), the attention model (``model``), difficulty-weighted
training (``losses``, ``optim``, ``train``), dataset handling (``data``),
ranking metrics (``metrics``), checkpointing (``checkpoint``), and a
command-line front end (``cli``).
"""

__version__ = "0.1.0"

from .autograd import Tensor, backward, finite_diff_grad
from .errors import TrendRecError

__all__ = ["Tensor", "backward", "finite_diff_grad", "TrendRecError", "__version__"]
