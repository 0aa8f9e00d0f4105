"""Exception types raised by validation and pipeline steps."""


class PrevmapError(ValueError):
    """Base class for all validation and pipeline errors."""


class SchemaError(PrevmapError):
    """A required column or field is missing from an input file."""


class RecordValidationError(PrevmapError):
    """A row violates a record-level invariant (carries the row number)."""


class ConsistencyError(PrevmapError):
    """Cross-row inconsistency, e.g. one cluster mapped to two regions."""


class GeometryError(PrevmapError):
    """A boundary feature is malformed or of an unsupported type."""


class EmptyDatasetError(PrevmapError):
    """An operation would produce a dataset with no usable records."""


class ModelError(PrevmapError):
    """A model specification is unusable (mismatched regions, bad priors)."""
