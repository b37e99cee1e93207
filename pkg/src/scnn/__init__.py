"""Unsupervised feature learning from selective-search object proposals.

Pipeline: graph-based segmentation -> selective-search proposals -> a
surrogate classification dataset (one class per source image) -> small-CNN
training -> 4-quadrant max-pooled features -> one-vs-all linear SVM.
"""

__version__ = "0.1.0"
