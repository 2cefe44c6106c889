"""Exception types shared across the package."""


class SpatialFLError(Exception):
    """Base class for every error raised by this package."""


# -- model arithmetic ---------------------------------------------------------

class InvalidDimensionError(SpatialFLError):
    """A model dimension is zero or negative."""


class ShapeError(SpatialFLError):
    """Array shapes are inconsistent with the model's dimensions."""


class InvalidLabelError(SpatialFLError):
    """A class label lies outside [0, n_classes)."""


# -- spatial encoding ---------------------------------------------------------

class EmptyCorpusError(SpatialFLError):
    """A vocabulary was requested for an empty record set."""


class InconsistentHierarchyError(SpatialFLError):
    """Hierarchy paths disagree in length or parentage."""


class UnknownRegionError(SpatialFLError):
    """A hierarchy label is absent from the vocabulary."""


# -- federation ---------------------------------------------------------------

class EmptyClientError(SpatialFLError):
    """A client was asked to train on an empty dataset."""


class EmptyAggregationError(SpatialFLError):
    """Aggregation was requested over zero updates."""


class DegenerateWeightsError(SpatialFLError):
    """Aggregation weights are negative or sum to zero."""


class MissingClientError(SpatialFLError):
    """A topology client has no dataset or no update."""


class TopologyError(SpatialFLError):
    """The tier tree violates a structural invariant."""


class CorruptModelError(SpatialFLError):
    """A serialized model file failed validation."""


# -- data pipeline ------------------------------------------------------------

class SchemaError(SpatialFLError):
    """The CSV header does not carry a mapped column."""


class RowError(SpatialFLError):
    """A CSV data row failed to parse."""


class UnitUnusableError(SpatialFLError):
    """A spatial unit has no usable target values."""


class ThinClientError(SpatialFLError):
    """One or more leaves carry fewer rows than the minimum."""


class SplitError(SpatialFLError):
    """A train/validation split would leave one side empty."""


class EmptyDatasetError(SpatialFLError):
    """A pooled training set is empty."""


# -- harness ------------------------------------------------------------------

class EmptyEvaluationError(SpatialFLError):
    """Accuracy was requested over zero rows."""


class ConfigError(SpatialFLError):
    """One or more experiment-config validation failures."""

    def __init__(self, errors):
        self.errors = [str(e) for e in errors]
        super().__init__("; ".join(self.errors))
