"""Compact binary codes for visual place recognition.

Supervised hashing (CCA + iterative quantization) and random-hyperplane
LSH over image descriptors, Hamming-space retrieval, and the evaluation
and sequence-alignment tools around them.
"""
from .codes import BinaryCodeSet, MatchResult, hamming, pack, top_k, unpack
from .dataset import TraversalPair, build_similarity_labels, is_true_positive, load_traversal_pair
from .featio import FeatureMatrix
from .hashlearn import HashModel, encode, fit_cca, fit_ccaitq, fit_itq, fit_lsh, quantization_loss

__version__ = "0.1.0"

__all__ = [
    "BinaryCodeSet",
    "FeatureMatrix",
    "HashModel",
    "MatchResult",
    "TraversalPair",
    "build_similarity_labels",
    "encode",
    "fit_cca",
    "fit_ccaitq",
    "fit_itq",
    "fit_lsh",
    "hamming",
    "is_true_positive",
    "load_traversal_pair",
    "pack",
    "quantization_loss",
    "top_k",
    "unpack",
]
