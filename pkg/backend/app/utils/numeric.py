"""
Small numeric kernels shared by the embedding, propagation and evaluation code.
"""

import numpy as np
from scipy import sparse


def sigmoid(x):
    """Logistic function, stable for large |x|"""
    arr = np.asarray(x, dtype=np.float64)
    flat = np.atleast_1d(arr)
    out = np.empty_like(flat)
    pos = flat >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    ex = np.exp(flat[~pos])
    out[~pos] = ex / (1.0 + ex)
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def softplus(x):
    """log(1 + exp(x)); -log(sigmoid(s)) == softplus(-s)"""
    return np.logaddexp(0.0, x)


def segment_softmax(scores: np.ndarray, segments: np.ndarray, n_segments: int) -> np.ndarray:
    """
    Softmax of `scores` within each segment id, with max subtraction.

    Args:
        scores: (nnz,) raw scores
        segments: (nnz,) segment id per score, in [0, n_segments)
        n_segments: number of segments

    Returns:
        (nnz,) weights summing to 1 within every non-empty segment
    """
    seg_max = np.full(n_segments, -np.inf)
    np.maximum.at(seg_max, segments, scores)
    ex = np.exp(scores - seg_max[segments])
    denom = np.zeros(n_segments)
    np.add.at(denom, segments, ex)
    return ex / denom[segments]


def hellinger_distance(p: np.ndarray, q: np.ndarray) -> float:
    """(1/sqrt 2) * ||sqrt p - sqrt q||_2 between two probability vectors"""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distribution length mismatch: {p.shape} vs {q.shape}")
    dist = np.sqrt(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)) / np.sqrt(2.0)
    return float(min(max(dist, 0.0), 1.0))


def hellinger_distance_matrix(phi: np.ndarray) -> np.ndarray:
    """Pairwise Hellinger distances between the rows of a row-stochastic matrix"""
    root = np.sqrt(np.asarray(phi, dtype=np.float64))
    sq = np.sum(root ** 2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * root @ root.T, 0.0)
    return np.clip(np.sqrt(d2) / np.sqrt(2.0), 0.0, 1.0)


def tanimoto(r_i, r_j) -> float:
    """
    Tanimoto coefficient r_i.r_j / (|r_i|^2 + |r_j|^2 - r_i.r_j).

    Accepts dense vectors or 1-row sparse matrices; 0 when both are all-zero.
    """
    if sparse.issparse(r_i) or sparse.issparse(r_j):
        a = sparse.csr_matrix(r_i)
        b = sparse.csr_matrix(r_j)
        dot = float(a.multiply(b).sum())
        na = float(a.multiply(a).sum())
        nb = float(b.multiply(b).sum())
    else:
        a = np.asarray(r_i, dtype=np.float64)
        b = np.asarray(r_j, dtype=np.float64)
        dot = float(a @ b)
        na = float(a @ a)
        nb = float(b @ b)
    denom = na + nb - dot
    if denom <= 0.0:
        return 0.0
    return dot / denom


def tanimoto_matrix(ratings: sparse.spmatrix) -> sparse.csr_matrix:
    """
    Pairwise Tanimoto similarity between the rows of a sparse rating matrix.

    Only pairs with a nonzero dot product can be similar, so the result keeps
    the sparsity pattern of R R^T. The diagonal is included.
    """
    r = sparse.csr_matrix(ratings, dtype=np.float64)
    gram = (r @ r.T).tocoo()
    sq = np.asarray(r.multiply(r).sum(axis=1)).ravel()
    denom = sq[gram.row] + sq[gram.col] - gram.data
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(denom > 0, gram.data / denom, 0.0)
    sim = sparse.csr_matrix((values, (gram.row, gram.col)), shape=gram.shape)
    sim.eliminate_zeros()
    return sim


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / (||a|| + ||b||), 0 when both vanish"""
    a = np.ravel(a)
    b = np.ravel(b)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
