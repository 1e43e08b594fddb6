"""Exception types shared across the toolkit."""


class PartkitError(Exception):
    """Base class for all toolkit errors."""


class VocabMismatch(PartkitError):
    """A part or object id does not belong to the vocabulary in use."""


class OverlapError(PartkitError):
    """Instance masks overlap without a declared inclusion relation."""


class EmptyInput(PartkitError):
    """An operation received an empty collection it cannot work with."""


class DimensionError(PartkitError):
    """Grids or masks have incompatible dimensions."""


class EmptyRecord(PartkitError):
    """An annotation record holds no part instance to work with."""


class SpecError(PartkitError):
    """A specification object (dataset, backbone, episode) is invalid."""


class RatioError(PartkitError):
    """Split ratios are malformed."""


class AllZero(PartkitError):
    """No relevant part category has a positive score."""


class ShapeError(PartkitError):
    """Tensor shapes do not match the model contract."""


class DomainError(PartkitError):
    """A numeric argument is outside the mathematical domain."""


class DataError(PartkitError):
    """Input data is missing or inconsistent with the requested run."""


class ConfigError(PartkitError):
    """A configuration file or override is invalid."""


class SchemaError(PartkitError):
    """A report file does not match its expected schema."""


class IdMismatch(PartkitError):
    """Two collections keyed by sample id do not cover the same ids."""
