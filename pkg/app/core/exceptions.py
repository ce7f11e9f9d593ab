class QKDError(ValueError):
    """Root of every error raised by the workbench services."""


class FieldMismatchError(QKDError):
    pass


class DomainError(QKDError):
    pass


class ChannelSpecError(QKDError):
    pass


class UnsupportedModelError(QKDError):
    pass


class DegenerateInputError(QKDError):
    pass


class InsufficientLengthError(QKDError):
    def __init__(self, required: int, actual: int):
        super().__init__(f"key too short: need at least {required} positions, got {actual}")
        self.required = required
        self.actual = actual


class ProtocolError(QKDError):
    """Raised inside a role; `reason` is what goes into the ABORT frame."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
