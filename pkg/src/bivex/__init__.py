"""bivex: unified recognition of horizontal and vertical word images.

Pipeline: aspect-ratio routing (vertical inputs rotated 90 degrees), an
optional directional-encoding input channel, a small CNN encoder, and an
attention LSTM decoder whose score head can be selected per direction.
Everything runs on a built-in tape-based autodiff engine over numpy.
"""

__version__ = "0.1.0"

from bivex.routing import Direction, decide_direction, dem_mask, route
from bivex.tensor import Tape, Tensor

__all__ = [
    "Direction",
    "Tape",
    "Tensor",
    "decide_direction",
    "dem_mask",
    "route",
    "__version__",
]
