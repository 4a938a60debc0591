"""Exception hierarchy shared across the package."""


class QDistillError(Exception):
    """Base class for all package errors."""


class ConfigError(QDistillError, ValueError):
    """Invalid configuration or hyperparameter."""


class ShapeError(QDistillError, ValueError):
    """Array or feature dimension does not match what an operation needs."""


class StructuralError(QDistillError, ValueError):
    """Circuit structure is inconsistent (qubit index, parameter count)."""


class DegenerateInputError(QDistillError, ValueError):
    """Input cannot be normalised (near-zero norm)."""


class FormatError(QDistillError, ValueError):
    """A file does not follow the expected binary or text layout."""


class CoverageError(QDistillError, KeyError):
    """A lookup table is missing required keys."""

    def __init__(self, missing):
        self.missing = sorted(int(m) for m in missing)
        shown = self.missing[:20]
        more = "" if len(self.missing) <= 20 else f" (+{len(self.missing) - 20} more)"
        super().__init__(f"missing {len(self.missing)} keys: {shown}{more}")

    def __str__(self):
        return self.args[0]


class StateError(QDistillError, RuntimeError):
    """Object used before it was fitted or initialised."""


class ValidationError(ConfigError):
    """Several configuration fields are invalid at once; ``errors`` lists each one."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ThresholdError(QDistillError):
    """An experiment ran but missed a declared acceptance threshold."""
