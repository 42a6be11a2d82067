class ContractError(ValueError):
    """Raised when an operation's input violates its documented contract."""


class FormatError(ValueError):
    """Raised when a dataset or checkpoint file is malformed."""

    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: at byte offset {offset}: {message}")
        self.path = path
        self.offset = offset
