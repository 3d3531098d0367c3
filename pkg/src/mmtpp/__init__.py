"""Multimodal event-sequence toolkit.

Encode timestamped multimodal events into token streams, compress long
sequences by temporal similarity, fit and evaluate classical point-process
likelihoods, and train a toy autoregressive model with two-stage
objectives.
"""

__version__ = "0.1.0"

from .events import Event, EventSequence, IntervalSeries  # noqa: F401
from .compression import CompressionPolicy  # noqa: F401
from .templating import TokenStream, Vocabulary  # noqa: F401
