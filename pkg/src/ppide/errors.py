"""Exception hierarchy shared by all modules."""


class PpideError(Exception):
    """Base class for library errors."""


class InputError(PpideError, ValueError):
    """Arguments are malformed or mutually inconsistent."""


class AssumptionError(InputError):
    """A model bound required by the theory is violated.

    Attributes:
        assumption: Short name of the violated standing assumption.
    """

    def __init__(self, assumption: str, message: str):
        super().__init__(f"[{assumption}] {message}")
        self.assumption = assumption


class SimulationError(PpideError):
    """A coefficient evaluation produced a non-finite value."""

    def __init__(self, message: str, t: float, path_index: int):
        super().__init__(f"{message} (t={t:.6g}, path={path_index})")
        self.t = t
        self.path_index = path_index


class SolverError(PpideError):
    """A numerical solver could not produce a trustworthy answer."""

    def __init__(self, message: str, step: int | None = None, trace: list[float] | None = None):
        where = f" at time step {step}" if step is not None else ""
        super().__init__(f"{message}{where}")
        self.step = step
        self.trace = trace or []


class ApproximationError(PpideError):
    """A requested approximation accuracy was not reached."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved sup-error {achieved:.6g})")
        self.achieved = achieved


class EvaluationError(PpideError):
    """A functional could not be evaluated at the requested point."""
