"""Exception types raised across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class ParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateGeometryError(ValueError):
    """Distances carry no spread, so the Gaussian kernel width is zero."""


class NormalizationError(ValueError):
    def __init__(self, node):
        self.node = node
        super().__init__(f"node {node!r} has no observed entries in the training split")


class NumericalError(ArithmeticError):
    pass


class UndefinedLossError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    def __init__(self, step, lr, grad_norm, value):
        self.step = step
        self.lr = lr
        self.grad_norm = grad_norm
        super().__init__(
            f"non-finite loss {value} at step {step} (lr={lr:.3g}, grad_norm={grad_norm:.4g})"
        )


class CheckpointVersionError(RuntimeError):
    pass
