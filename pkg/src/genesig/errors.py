"""Exception hierarchy.

Every error carries the process exit code the CLI reports for it:
1 for usage/config problems, 2 for data-format problems, 3 for
numerical failures.
"""


class GenesigError(Exception):
    exit_code = 1


class ConfigError(GenesigError, ValueError):
    exit_code = 1


class DataFormatError(GenesigError, ValueError):
    exit_code = 2


class ShapeError(DataFormatError):
    """Array dimensions do not chain or do not match the network."""


class DomainError(DataFormatError):
    """Non-finite values where finite ones are required."""


class MissingGeneError(ConfigError, DataFormatError):
    """Requested genes are absent from the expression matrix."""

    exit_code = 2

    def __init__(self, genes):
        self.genes = list(genes)
        super().__init__("genes not found in expression data: " + ", ".join(self.genes))


class InsufficientSamplesError(DataFormatError):
    pass


class NumericalError(GenesigError, ArithmeticError):
    exit_code = 3


class TrainingDivergedError(NumericalError):
    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


class DegenerateVarianceError(NumericalError):
    pass


class DivisionHazardError(NumericalError):
    pass


class PipelineError(NumericalError):
    """A selection stage produced nothing to pass on."""
