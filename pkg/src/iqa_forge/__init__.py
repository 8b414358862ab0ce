"""iqa-forge: distortion simulation, rank-fusion quality annotation, and
evaluation statistics for building blind-IQA training corpora."""

__version__ = "0.1.0"
