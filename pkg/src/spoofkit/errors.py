"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: usage errors -> 1, data errors -> 2,
numerical failures -> 3.  Library code raises plain ValueError for
programming-contract violations (bad shapes, out-of-range arguments).
"""


class SpoofkitError(Exception):
    """Base class for toolkit errors."""


class UsageError(SpoofkitError):
    """Bad command line, bad config file, or missing required option."""


class DataError(SpoofkitError):
    """Malformed or missing input data: files, manifests, stale artifacts."""


class NumericalError(SpoofkitError):
    """Non-finite values where finite ones are required (e.g. diverged loss)."""
