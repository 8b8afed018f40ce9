"""Shared exception types."""


class RefusalError(RuntimeError):
    """An audit's mathematical precondition fails, so no bound is emitted.

    Raised instead of returning a vacuous number, e.g. when a distance
    bound is requested for a loss whose slope is unbounded, or when the
    training data does not cover the probe domain tightly enough.
    """
