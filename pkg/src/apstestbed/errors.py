"""Exception types shared across the testbed."""


class TestbedError(Exception):
    """Base class for all testbed errors."""


class ConfigError(TestbedError, ValueError):
    """Invalid configuration, detected before any simulation step runs."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class NonFiniteError(TestbedError, ValueError):
    """A state variable or parameter is NaN or infinite."""

    def __init__(self, field, value):
        self.field = field
        self.value = value
        super().__init__(f"non-finite value for {field!r}: {value!r}")


class SimulationAborted(TestbedError, RuntimeError):
    """The closed loop produced a non-finite state and was stopped."""

    def __init__(self, step, detail):
        self.step = step
        super().__init__(f"simulation aborted at step {step}: {detail}")


class InsufficientHistory(TestbedError, ValueError):
    """Not enough CGM samples to make a predictive decision."""


class Unidentifiable(TestbedError, ValueError):
    """The regression design matrix is rank deficient."""

    def __init__(self, params, message="design matrix is rank deficient"):
        self.params = tuple(params)
        super().__init__(f"{message}; unidentifiable: {', '.join(self.params)}")

