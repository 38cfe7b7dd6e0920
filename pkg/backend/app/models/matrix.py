"""
Sparse user x app rating matrix with fixed, lexicographically sorted axes.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterable, List, Set, Tuple

import numpy as np
from scipy import sparse


@dataclass(frozen=True)
class RatingMatrix:
    """
    Ratings in {0.2, ..., 1.0}; absent entries mean "none rating" (0).

    Rows follow `users`, columns follow `apps`. Partitions of the same
    interactions (train / validation / test) share both axes.
    """

    users: Tuple[str, ...]
    apps: Tuple[str, ...]
    values: sparse.csr_matrix

    @cached_property
    def user_index(self) -> Dict[str, int]:
        return {u: i for i, u in enumerate(self.users)}

    @cached_property
    def app_index(self) -> Dict[str, int]:
        return {a: i for i, a in enumerate(self.apps)}

    @property
    def shape(self) -> Tuple[int, int]:
        return (len(self.users), len(self.apps))

    @property
    def n_entries(self) -> int:
        return int(self.values.nnz)

    @property
    def sparsity(self) -> float:
        """|entries| / (|users| * |apps|)"""
        cells = len(self.users) * len(self.apps)
        return self.n_entries / cells if cells else 0.0

    @property
    def entries(self) -> Dict[Tuple[int, int], float]:
        coo = self.values.tocoo()
        return {(int(i), int(j)): float(v) for i, j, v in zip(coo.row, coo.col, coo.data)}

    def dense(self) -> np.ndarray:
        return self.values.toarray()

    def items_of(self, user: int) -> np.ndarray:
        """Sorted app indices the user interacted with"""
        start, end = self.values.indptr[user], self.values.indptr[user + 1]
        return np.sort(self.values.indices[start:end])

    def item_sets(self) -> List[Set[int]]:
        return [set(self.items_of(u).tolist()) for u in range(len(self.users))]

    def item_counts(self) -> np.ndarray:
        """Number of users per app"""
        return np.bincount(self.values.indices, minlength=len(self.apps))

    def restrict(self, pairs: Iterable[Tuple[int, int]]) -> "RatingMatrix":
        """Same axes, only the given (user index, app index) entries"""
        pairs = sorted(set(pairs))
        if not pairs:
            empty = sparse.csr_matrix(self.shape, dtype=np.float64)
            return RatingMatrix(self.users, self.apps, empty)
        rows = np.array([p[0] for p in pairs], dtype=np.int64)
        cols = np.array([p[1] for p in pairs], dtype=np.int64)
        data = np.asarray(self.values[rows, cols]).ravel()
        values = sparse.csr_matrix((data, (rows, cols)), shape=self.shape)
        return RatingMatrix(self.users, self.apps, values)
