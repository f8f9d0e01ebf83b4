"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class NoRouteError(RuntimeError):
    """Raised when no lane route connects the requested pieces."""


class SingularSteeringError(ValueError):
    """Raised when the steering angle reaches +-pi/2 and tan(delta) diverges."""


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""
