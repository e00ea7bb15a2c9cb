"""
Semantic distance providers for the diversity reward

A provider maps a list of n responses to an n x n symmetric distance matrix with
a zero diagonal. The default is model-free; any embedding model can be plugged in
through embedding_distances.
"""
from typing import Callable, Sequence

import numpy as np
from sklearn.feature_extraction.text import CountVectorizer
from sklearn.metrics.pairwise import cosine_distances

DistanceFn = Callable[[Sequence[str]], np.ndarray]

# Boundary marks give every response (even an empty one) at least one trigram
_LEFT_MARK = '\x02\x02'
_RIGHT_MARK = '\x03\x03'


def _finalize(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    matrix = 0.5 * (matrix + matrix.T)
    np.fill_diagonal(matrix, 0.0)
    return np.clip(matrix, 0.0, None)


def char_trigram_distances(texts: Sequence[str]) -> np.ndarray:
    """Cosine distance between character-trigram count vectors"""
    marked = [f"{_LEFT_MARK}{text}{_RIGHT_MARK}" for text in texts]
    vectorizer = CountVectorizer(analyzer='char', ngram_range=(3, 3), lowercase=False)
    counts = vectorizer.fit_transform(marked)
    return _finalize(cosine_distances(counts))


def embedding_distances(embed: Callable[[Sequence[str]], np.ndarray]) -> DistanceFn:
    """Wrap an embedding provider (texts -> n x d array) as a cosine-distance provider"""

    def distances(texts: Sequence[str]) -> np.ndarray:
        return _finalize(cosine_distances(np.asarray(embed(list(texts)), dtype=np.float64)))

    return distances


def pairwise_distances_from(distance: Callable[[str, str], float]) -> DistanceFn:
    """Lift a scalar distance d(a, b) into a matrix provider"""

    def distances(texts: Sequence[str]) -> np.ndarray:
        n = len(texts)
        matrix = np.zeros((n, n), dtype=np.float64)
        for i in range(n):
            for j in range(i + 1, n):
                matrix[i, j] = matrix[j, i] = float(distance(texts[i], texts[j]))
        return matrix

    return distances
