"""repscore: rating movement-exercise repetitions (scores 1/2/3) from multi-IMU
time series with CNN-LSTM networks.

The package is organised as a plain numpy library:

- ``repscore.nn``        minimal deterministic neural-network engine
- ``repscore.arch``      builders for the three network variants
- ``repscore.pipeline``  raw recordings -> model-ready windowed batches
- ``repscore.labels``    rater aggregation and Krippendorff's alpha
- ``repscore.metrics``   confusion matrix / per-class F1 / macro F1
- ``repscore.harness``   LOSO splits, training loop, k-fold experiments
- ``repscore.sweep``     seeded random hyperparameter search
- ``repscore.synthgen``  seeded synthetic multi-IMU dataset generator
- ``repscore.cli``       command-line entry point (``repscore <command>``)
"""

__version__ = "0.1.0"

from .errors import DataValidationError, NumericError, TrainingDiverged

__all__ = [
    "DataValidationError",
    "NumericError",
    "TrainingDiverged",
    "__version__",
]
