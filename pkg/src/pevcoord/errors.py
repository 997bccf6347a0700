"""Failure verdicts raised by the solvers; the CLI maps them to exit codes."""


class InfeasibleError(RuntimeError):
    exit_code = 1

    def __init__(self, message: str, slot: int | None = None, diagnostics=None):
        super().__init__(message if slot is None else f"slot {slot}: {message}")
        self.slot = slot
        self.diagnostics = diagnostics


class NonConvergenceError(RuntimeError):
    exit_code = 3

    def __init__(self, message: str, slot: int | None = None, diagnostics=None, best=None):
        super().__init__(message if slot is None else f"slot {slot}: {message}")
        self.slot = slot
        self.diagnostics = diagnostics
        self.best = best
