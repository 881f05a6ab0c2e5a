"""Error taxonomy shared across the package.

Each class maps to one process exit code in the CLI:
config/usage/contract problems exit 2, missing or malformed
artifacts exit 3, numerical aborts exit 4.
"""


class MarlError(Exception):
    """Base class for all package errors."""


class ConfigError(MarlError):
    """Invalid configuration: unknown key, bad value, missing requirement."""


class UsageError(MarlError):
    """API misuse: calls out of order or with senseless arguments."""


class ContractViolation(MarlError):
    """Environment or data contract broken, e.g. unavailable action taken."""


class CapacityError(MarlError):
    """Instance exceeds a documented size guard."""


class ArtifactError(MarlError):
    """Missing, corrupt, or incompatible artifact file."""


class NumericalError(MarlError):
    """Non-finite value where finite numbers are required."""
