"""Complete word-similarity graph over the words of a sentence."""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ContractError


@dataclass
class SimilarityGraph:
    n: int
    A: np.ndarray
    D: np.ndarray
    A_hat: np.ndarray


def normalize_adjacency(A) -> np.ndarray:
    """Symmetric normalization D^-1/2 A D^-1/2 with D the row sums of A."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractError(f"adjacency must be square, got {A.shape}")
    deg = A.sum(axis=1)
    if (deg <= 0).any():
        row = int(np.flatnonzero(deg <= 0)[0])
        raise ContractError(f"row {row} of the adjacency has non-positive sum")
    inv = 1.0 / np.sqrt(deg)
    return A * inv[:, None] * inv[None, :]


def build_wsg(word_vectors) -> SimilarityGraph:
    """Edge weight = cosine similarity clamped at 0, with a unit diagonal."""
    X = word_vectors.data if isinstance(word_vectors, Tensor) else np.asarray(word_vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ContractError(f"word vectors must be an n x d matrix with n >= 1, got {X.shape}")
    norms = np.linalg.norm(X, axis=1)
    if (norms == 0).any():
        row = int(np.flatnonzero(norms == 0)[0])
        raise ContractError(f"word vector {row} has zero norm")
    U = X / norms[:, None]
    A = np.clip(U @ U.T, 0.0, 1.0)
    A = 0.5 * (A + A.T)
    np.fill_diagonal(A, 1.0)
    D = A.sum(axis=1)
    return SimilarityGraph(X.shape[0], A, D, normalize_adjacency(A))
