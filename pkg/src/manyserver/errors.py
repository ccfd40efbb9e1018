class ConfigError(ValueError):
    """Invalid model or experiment configuration."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvariantViolation(RuntimeError):
    """Raised by the engine when a per-event invariant check fails."""

    def __init__(self, report):
        self.report = report
        super().__init__(str(report))

    def __reduce__(self):
        return (InvariantViolation, (self.report,))
