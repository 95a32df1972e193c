class DataError(ValueError):
    """Input data violates a documented format or precondition."""


class NotResolvedError(DataError):
    """A bug never entered the terminal state."""

    def __init__(self, bug_id, terminal):
        super().__init__(f"NOT_RESOLVED: bug {bug_id} never reached {terminal!r}")
        self.bug_id = bug_id
        self.terminal = terminal
