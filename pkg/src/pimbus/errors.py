"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Invalid configuration or descriptor.

    Carries one message per failing field so callers can report all
    problems at once instead of stopping at the first.
    """

    def __init__(self, field_errors):
        if isinstance(field_errors, str):
            field_errors = [field_errors]
        self.field_errors = list(field_errors)
        super().__init__("; ".join(self.field_errors))


class SimulationAbort(RuntimeError):
    """A scenario could not run to completion."""


class TimingViolationError(SimulationAbort):
    """The protocol checker rejected a command emitted during simulation."""

    def __init__(self, violation):
        self.violation = violation
        super().__init__(str(violation))
