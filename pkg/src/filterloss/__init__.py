"""Per-sample loss weighting from undersampler consensus, for fine-tuning
classifiers on small imbalanced datasets."""

__version__ = "0.1.0"
