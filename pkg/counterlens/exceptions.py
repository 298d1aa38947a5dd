"""
Error hierarchy shared by every counterlens module.

Each error carries the exit code the command line reports for it.
"""


class CounterLensError(Exception):
    exit_code = 1


class ProcessNotFound(CounterLensError):
    exit_code = 2


class AdapterFailure(CounterLensError):
    exit_code = 3


class AdapterQueryError(Exception):
    """Raised by an adapter when a single counter query fails."""


class ProcessGone(Exception):
    """Raised by an adapter when the queried process no longer exists."""


class DataIOError(CounterLensError):
    exit_code = 4


class FormatError(DataIOError):
    pass


class EmptyFile(FormatError):
    pass


class DegenerateData(CounterLensError):
    exit_code = 5


class EmptyDataset(DegenerateData):
    pass


class EmptyLabel(DegenerateData):
    pass


class SingleCluster(DegenerateData):
    pass


class TooFewPrograms(DegenerateData):
    pass


class MissingProgramData(DegenerateData):
    pass


class EmptyTrials(DegenerateData):
    pass


class EmptyValidation(DegenerateData):
    pass


class EmptyNormal(DegenerateData):
    pass


class EmptyCluster(DegenerateData):
    """A trained cluster ended up nearest to none of the training vectors."""


class ShapeMismatch(CounterLensError):
    exit_code = 6


class DegenerateClusterWarning(UserWarning):
    """A cluster lost all members during Lloyd iterations and was re-seeded."""


USAGE_EXIT_CODE = 64
