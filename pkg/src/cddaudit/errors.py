"""Error type shared by every module of the toolkit."""

from __future__ import annotations


class ToolkitError(Exception):
    """Raised for any contract violation; ``code`` carries a stable tag.

    Tags in use: MISSING_FILE, MALFORMED_HEADER, MALFORMED_DATA,
    LENGTH_MISMATCH, IO_FAILURE, DIM_MISMATCH, NON_CUBIC_GRID, BAD_PARAMS,
    NEGATIVE_INPUT, SCALE_TOO_LARGE, SHAPE_MISMATCH, BAD_CHANNEL,
    NEGATIVE_FACTOR, INSUFFICIENT_CHANNELS, MODEL_FAILURE, MODEL_TIMEOUT,
    BAD_OUTPUT, ALL_MASKED, EMPTY_SUPPORT, MISSING_TRUTH.
    """

    def __init__(self, code: str, message: str = ""):
        self.code = code
        self.message = message
        super().__init__(f"{code}: {message}" if message else code)
