"""Exception hierarchy shared by all modules."""


class WindCorrectError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigError(WindCorrectError, ValueError):
    pass


class InputError(WindCorrectError, ValueError):
    pass


class DomainError(InputError):
    pass


class SchemaError(InputError):
    pass


class RowError(InputError):
    """Too many malformed rows in a delimited input file.

    ``offenders`` holds ``(line_number, message)`` pairs, at most 20.
    """

    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


class FitError(WindCorrectError, ValueError):
    pass


class SplitError(WindCorrectError, ValueError):
    pass


class SpecError(WindCorrectError, ValueError):
    pass


class TrainingError(WindCorrectError, RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class SearchError(WindCorrectError, RuntimeError):
    def __init__(self, message, trials=()):
        super().__init__(message)
        self.trials = list(trials)


class IntegrityError(WindCorrectError):
    pass


class UnsupportedKindError(WindCorrectError, ValueError):
    pass
