"""
Exceptions raised by scikit-sits

Input-validation errors also derive from ``ValueError``, so callers written
against the scikit-learn conventions keep catching them.
"""


class SITSError(Exception):
    """Base class for all scikit-sits errors"""


class EmptyBatch(SITSError, ValueError):
    """A batch was requested from an empty list of samples"""


class ShapeMismatch(SITSError, ValueError):
    """Samples do not share the same channel or spatial dimensions"""


class ShapeError(SITSError, ValueError):
    """A tensor does not have the shape an operation requires"""


class DegenerateStats(SITSError, ValueError):
    """Normalisation statistics with a non-positive standard deviation"""


class DegenerateSequence(SITSError, ValueError):
    """A sequence without any real (unpadded) acquisition"""


class SizeError(SITSError, ValueError):
    """A predicted bounding box size is not strictly positive"""


class ThresholdError(SITSError, ValueError):
    """The quality threshold cannot be tuned"""


class EmptyEvaluation(SITSError, ValueError):
    """Nothing left to evaluate, e.g. an all-void image or an empty split"""


class ConfigError(SITSError, ValueError):
    """Invalid run or model configuration"""


class UnknownAblation(ConfigError):
    """Ablation variant outside of the supported set"""


class IncompatibleCheckpoint(ConfigError):
    """Checkpoint produced with another model configuration"""


class DatasetError(SITSError):
    """Base class for data errors"""


class EmptyLayout(DatasetError):
    """The synthetic layout generator did not manage to place any parcel"""


class DatasetIndexError(DatasetError):
    """Missing or corrupt dataset metadata or patch file"""

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{message}: {path}")
        self.path = path


class FormatError(DatasetError):
    """An array file header does not match what the index announces"""


class InvalidFold(DatasetError, ValueError):
    """Fold identifier outside of 1..5"""


class EmptyTrainingSet(DatasetError, ValueError):
    """No training samples to compute statistics from"""


class DivergenceError(SITSError):
    """Training produced a non-finite loss"""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot
