"""
Error Hierarchy
===============

Every failure the toolkit reports on purpose derives from ``EGTSynError``.
It subclasses ``ValueError`` so call sites that guard with ``except
ValueError`` keep catching it.

The CLI maps any ``EGTSynError`` to exit code 1, except
``NonFiniteLossError`` which gets its own code so a diverged run is
distinguishable from bad input.
"""


class EGTSynError(ValueError):
    """Base class for all toolkit errors."""


class DimensionError(EGTSynError):
    """Operand shapes do not agree."""


class ParameterError(EGTSynError):
    """A numeric argument is outside its allowed range."""


class ContractError(EGTSynError):
    """A caller broke an operation's precondition."""


class ConfigError(EGTSynError):
    """Model configuration is invalid or does not match the data."""


class DataError(EGTSynError):
    """Input values are malformed (bad labels, missing scores, ...)."""


class ProtocolError(EGTSynError):
    """A split or evaluation protocol cannot be applied to the data."""


class MetricUndefinedError(EGTSynError):
    """A metric has no defined value for the given inputs."""


class CheckpointError(EGTSynError):
    """A checkpoint document cannot be read."""


class NonFiniteError(EGTSynError):
    """A tensor holds NaN or Inf."""


class NonFiniteLossError(NonFiniteError):
    """Training produced a NaN/Inf loss and was aborted."""

    def __init__(self, epoch, batch, lr):
        self.epoch = epoch
        self.batch = batch
        self.lr = lr
        super().__init__(
            f"Non-finite loss at epoch {epoch}, batch {batch} (lr={lr:g}). "
            f"Try a learning rate 10x smaller or a larger L2 delta."
        )


class IngestionError(EGTSynError):
    """Input files could not be ingested. ``offenders`` lists the culprits."""

    def __init__(self, message, offenders=None):
        self.offenders = list(offenders or [])
        if self.offenders:
            shown = ", ".join(str(o) for o in self.offenders[:10])
            more = f" (+{len(self.offenders) - 10} more)" if len(self.offenders) > 10 else ""
            message = f"{message}: {shown}{more}"
        super().__init__(message)


class SmilesError(EGTSynError):
    """A SMILES string could not be read. ``position`` is a byte offset."""

    def __init__(self, message, smiles, position):
        self.smiles = smiles
        self.position = position
        self.reason = message
        super().__init__(f"{message} at offset {position} in {smiles!r}")


class LexError(SmilesError):
    """Unrecognized character in a SMILES string."""


class ParseError(SmilesError):
    """Structurally invalid SMILES (unbalanced branches, dangling ring bonds, ...)."""


class EmptyGraphError(DimensionError):
    """A graph or pooled matrix has no rows."""
