"""Exception hierarchy shared by every subpackage."""


class StructMetaError(Exception):
    """Base class for all package errors."""


class ShapeError(StructMetaError, ValueError):
    def __init__(self, message, node=None):
        self.node = node
        if node is not None:
            message = f"{message} (at node {node!r})"
        super().__init__(message)


class StateError(StructMetaError, RuntimeError):
    pass


class CapabilityError(StructMetaError, RuntimeError):
    pass


class NumericalError(StructMetaError, ArithmeticError):
    def __init__(self, message, task=None, iteration=None):
        self.task = task
        self.iteration = iteration
        ctx = []
        if iteration is not None:
            ctx.append(f"iteration={iteration}")
        if task is not None:
            ctx.append(f"task={task}")
        if ctx:
            message = f"{message} [{', '.join(ctx)}]"
        super().__init__(message)


class DivergenceError(NumericalError):
    pass


class SpecError(StructMetaError, ValueError):
    pass


class ConfigError(StructMetaError, ValueError):
    pass


class DataError(StructMetaError, ValueError):
    pass


class SplitError(DataError):
    pass


class FormatError(DataError):
    pass
