"""
Exceptions raised by the OPAD simulator.

Library code raises these; ``main.py`` turns them into a diagnostic and a
nonzero exit code.
"""


class OPADError(Exception):
    """Base class for simulator errors"""


class ConfigurationError(OPADError, ValueError):
    """Invalid, missing or inconsistent configuration"""


class IntegrityError(OPADError, RuntimeError):
    """A pool, split or regime invariant would be violated"""


class EndOfEpisode(OPADError):
    """The unlabelled pool cannot supply another candidate set"""


class BudgetExceeded(OPADError):
    """Charging an annotation would overrun the seconds budget"""
