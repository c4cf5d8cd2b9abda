"""Exception hierarchy shared across the pipeline."""


class Sparse4DError(Exception):
    """Base class for all pipeline errors."""


# --- mesh / landmark ingestion -------------------------------------------

class MalformedFileError(Sparse4DError):
    """A line of an input file could not be parsed."""


class EmptyMeshError(Sparse4DError):
    """A mesh file contained no vertices."""


class UnsupportedFormatError(Sparse4DError):
    """File extension or encoding outside the supported subset."""


# --- rendering ------------------------------------------------------------

class MissingColorsError(Sparse4DError):
    """Texture projection requested for a mesh without vertex colors."""


class DegenerateExtentError(Sparse4DError):
    """Mesh bounding box unusable for rasterization (non-finite)."""


# --- augmentation ---------------------------------------------------------

class DimensionMismatchError(Sparse4DError):
    """Images fed to the channel train do not share dimensions."""


class TrainTooSmallError(Sparse4DError):
    """Channel train has fewer channels than one composite needs."""


class NegativeWeightError(Sparse4DError):
    """Luminance weights must be nonnegative."""


# --- landmark descriptors ---------------------------------------------------

class DegenerateConfigurationError(Sparse4DError):
    """All projected landmarks coincide; normalization undefined."""


# --- sparse coding ----------------------------------------------------------

class RankDeficientSupportError(Sparse4DError):
    """Dictionary columns of a support are (numerically) rank deficient."""


class EnumerationTooLargeError(Sparse4DError):
    """Exhaustive support enumeration would exceed the size cap."""


class BadIndexSetError(Sparse4DError):
    """Reduction index set is not a set of distinct valid atom indices."""


class EmptyCalibrationSetError(Sparse4DError):
    """Index-set calibration needs at least one estimate."""


# --- feature extraction -----------------------------------------------------

class ImageTooSmallError(Sparse4DError):
    """Image smaller than the block grid."""


# --- sequence model ---------------------------------------------------------

class ShapeMismatchError(Sparse4DError):
    """Input tensor shape inconsistent with the model parameters."""


class DegenerateDatasetError(Sparse4DError):
    """Training set does not contain at least two classes."""


# --- fusion / evaluation -----------------------------------------------------

class AllZeroWeightsError(Sparse4DError):
    """Score fusion needs at least one positive weight."""


class TooFewSubjectsError(Sparse4DError):
    """Cannot build k subject-disjoint folds from fewer than k subjects."""


# --- CLI ----------------------------------------------------------------------

class ConfigError(Sparse4DError):
    """Pipeline configuration document violates the schema."""


class StageError(Sparse4DError):
    """A pipeline stage failed; message carries the stage label."""
