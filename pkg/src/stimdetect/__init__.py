"""Detection and identification of self-stimulatory behaviours in short video chunks."""

__version__ = "0.1.0"

from .errors import StimDetectError
from .labels import ACTION_LABELS, ALL_LABELS, ChunkLabel

__all__ = ["ACTION_LABELS", "ALL_LABELS", "ChunkLabel", "StimDetectError", "__version__"]
