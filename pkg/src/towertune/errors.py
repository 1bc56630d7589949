"""Exception taxonomy shared across the package.

Every error carries a short machine-parsable category used by the CLI
for its one-line error output and exit codes.
"""


class TowertuneError(Exception):
    category = "error"


class DimensionError(TowertuneError):
    """Shape disagreement between tensors or against a config."""

    category = "dimension-error"


class ConfigError(TowertuneError):
    """Invalid or inconsistent configuration value."""

    category = "config-error"


class IntegrityError(TowertuneError):
    """Violation of an internal contract (missing gradient, corrupt checkpoint)."""

    category = "integrity-error"


class VocabularyError(TowertuneError):
    """Token or word outside the closed vocabulary."""

    category = "vocabulary-error"


class InputError(TowertuneError):
    """Malformed input sequence or empty input."""

    category = "input-error"


class CapacityError(TowertuneError):
    """Requested dataset size exceeds what the generator can produce."""

    category = "capacity-error"


class VariantError(TowertuneError):
    """Operation not allocated under the active transfer variant."""

    category = "variant-error"


class NumericError(TowertuneError):
    """Non-finite value where the pipeline requires finite arithmetic."""

    category = "numeric-error"
