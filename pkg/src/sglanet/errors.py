"""Exception hierarchy shared by every subsystem."""


class SGLAError(Exception):
    """Base class for all library errors."""


class ShapeError(SGLAError, ValueError):
    """An operand has the wrong rank or extent.

    ``op`` names the operation, ``axis`` the offending axis (or None when the
    rank itself is wrong).
    """

    def __init__(self, op, message, axis=None, expected=None, got=None):
        self.op = op
        self.axis = axis
        self.expected = expected
        self.got = got
        where = f" (axis {axis})" if axis is not None else ""
        super().__init__(f"{op}: {message}{where}")


class PrecisionError(SGLAError, TypeError):
    """Operands of one computation use different float widths."""


class LabelError(SGLAError, ValueError):
    def __init__(self, label, num_classes):
        self.label = label
        self.num_classes = num_classes
        super().__init__(f"label {label} out of range [0, {num_classes})")


class NoBackwardError(SGLAError, RuntimeError):
    """Raised when a gradient is requested through a node without a backward pass."""


class BackwardTwiceError(SGLAError, RuntimeError):
    pass


class ConfigError(SGLAError):
    pass


class DataError(SGLAError):
    pass


class CheckpointError(SGLAError):
    def __init__(self, message, tensor=None):
        self.tensor = tensor
        super().__init__(message)
