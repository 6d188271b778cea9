"""Concept activation vectors for soft item attributes on top of
collaborative-filtering embeddings: synthetic data generation, embedding
training, CAV learning with sense disentangling, baselines, evaluation, and
a simulated critiquing recommender."""

__version__ = "0.1.0"

from .core import Dataset, SplitDataset, TagView, tag_view, validate_dataset

__all__ = ["Dataset", "SplitDataset", "TagView", "tag_view",
           "validate_dataset", "__version__"]
