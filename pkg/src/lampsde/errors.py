"""Exception hierarchy and process exit codes.

Every failure mode that can surface through the CLI maps to a distinct exit
code so scripted callers can branch on the cause.
"""

EXIT_OK = 0
EXIT_CONFIG_INVALID = 2
EXIT_INADMISSIBLE_STEP = 3
EXIT_SOLVER_FAILURE = 4
EXIT_IO_FAILURE = 5


class LampSdeError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidParamsError(LampSdeError):
    """Model parameters violate the model's validity conditions."""

    exit_code = EXIT_CONFIG_INVALID


class ConfigError(LampSdeError):
    """Experiment configuration cannot be parsed or is inconsistent."""

    exit_code = EXIT_CONFIG_INVALID


class DomainError(LampSdeError):
    """A state or evaluation point left the model's open domain.

    Carries the first offending index when raised for a sequence.
    """

    exit_code = EXIT_SOLVER_FAILURE

    def __init__(self, message, index=None, value=None):
        super().__init__(message)
        self.index = index
        self.value = value


class InadmissibleStepError(LampSdeError):
    """Step size fails the 2*max(0,K)*dt < eta admissibility condition."""

    exit_code = EXIT_INADMISSIBLE_STEP


class NoConvergenceError(LampSdeError):
    """Implicit-step iteration exhausted its budget.

    `bracket` holds the best (lo, hi) enclosure found before giving up and
    `step_index` the time step at which the solve failed (when stepping a
    whole path).
    """

    exit_code = EXIT_SOLVER_FAILURE

    def __init__(self, message, bracket=None, step_index=None):
        super().__init__(message)
        self.bracket = bracket
        self.step_index = step_index
