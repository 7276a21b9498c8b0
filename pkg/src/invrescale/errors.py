"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Raised when tensor extents do not satisfy an operation's contract.

    The message always names the offending axis or channel count so the
    failure can be traced without a debugger.
    """


class CodecError(ValueError):
    """Raised on malformed model, sidecar, or netpbm payloads.

    ``offset`` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(RuntimeError):
    """Raised when the optimization loop must halt (non-finite loss or gradient)."""
