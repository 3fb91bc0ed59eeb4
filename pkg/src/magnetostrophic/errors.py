"""Exception hierarchy shared by all modules."""


class InvalidArgument(ValueError):
    """Input violates a documented precondition."""


class NumericalDegeneracy(ArithmeticError):
    """A linear system that must be regular turned out singular."""


class InternalConsistencyError(AssertionError):
    """Two independent evaluations of the same quantity disagree."""


class BlowUp(FloatingPointError):
    """Non-finite values appeared during time stepping.

    Attributes:
        step: Index of the step that produced the non-finite state.
        trajectories: Trajectory ids affected (may be empty for a single run).
        tag: Optional free-form label (e.g. the parameter pair of a sweep).
    """

    def __init__(self, step, trajectories=(), tag=None):
        self.step = int(step)
        self.trajectories = tuple(int(t) for t in trajectories)
        self.tag = tag
        where = f" in trajectories {list(self.trajectories)}" if self.trajectories else ""
        label = f" [{tag}]" if tag is not None else ""
        super().__init__(f"non-finite state at step {self.step}{where}{label}")
