"""
Content-Topic identification.

Handles:
- Readme preprocessing into a sorted-vocabulary corpus
- LDA by collapsed Gibbs sampling (seeded, single-threaded)
- One Content-Topic per app (argmax of theta, smallest index on ties)
- Topic-topic similarity as 1 - Hellinger distance
- phi.tsv / theta.tsv / vocab.txt persistence
"""

import os
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from app.exceptions import CorpusError, TopicModelError
from app.utils.numeric import hellinger_distance, hellinger_distance_matrix
from app.utils.text import ENGLISH_STOPWORDS, ReadmeNormalizer


@dataclass(frozen=True)
class Corpus:
    """Documents aligned with app ordering, as vocabulary-index sequences"""
    doc_ids: Tuple[str, ...]
    vocabulary: Tuple[str, ...]
    tokens: Tuple[np.ndarray, ...]

    @property
    def n_documents(self) -> int:
        return len(self.tokens)

    @property
    def empty_documents(self) -> List[int]:
        return [i for i, doc in enumerate(self.tokens) if doc.size == 0]

    def words(self, doc: int) -> List[str]:
        return [self.vocabulary[i] for i in self.tokens[doc]]


@dataclass(frozen=True)
class TopicModel:
    """phi: K x V topic-word distributions; theta: D x K document-topic proportions"""
    phi: np.ndarray
    theta: np.ndarray
    vocabulary: Tuple[str, ...]

    @property
    def k_topics(self) -> int:
        return self.phi.shape[0]

    def top_words(self, topic: int, n: int = 10) -> List[str]:
        order = np.lexsort((np.arange(self.phi.shape[1]), -self.phi[topic]))
        return [self.vocabulary[i] for i in order[:n]]


def preprocess(
    readme_texts: Sequence[str],
    stopword_list: Iterable[str] = ENGLISH_STOPWORDS,
    min_term_count: int = 5,
    doc_ids: Optional[Sequence[str]] = None,
) -> Corpus:
    """
    Lowercase, tokenize, drop stopwords, stem, then prune rare terms.

    Terms seen fewer than `min_term_count` times across the corpus are
    removed. Documents left empty are kept (and flagged) so the corpus stays
    aligned with the app list.
    """
    normalizer = ReadmeNormalizer(stopword_list)
    stemmed = [normalizer.normalize(text) for text in readme_texts]

    counts = Counter(term for doc in stemmed for term in doc)
    vocabulary = tuple(sorted(t for t, n in counts.items() if n >= min_term_count))
    index = {t: i for i, t in enumerate(vocabulary)}
    tokens = tuple(
        np.array([index[t] for t in doc if t in index], dtype=np.int64) for doc in stemmed
    )

    ids = tuple(doc_ids) if doc_ids is not None else tuple(str(i) for i in range(len(tokens)))
    if len(ids) != len(tokens):
        raise ValueError("doc_ids must align with readme_texts")

    corpus = Corpus(doc_ids=ids, vocabulary=vocabulary, tokens=tokens)
    empty = corpus.empty_documents
    if len(empty) == len(tokens):
        raise CorpusError("all documents are empty after preprocessing")
    if empty:
        logger.warning(f"{len(empty)} documents are empty after preprocessing: {[ids[i] for i in empty[:10]]}")
    logger.info(f"Preprocessed {len(tokens)} documents, vocabulary size {len(vocabulary)}")
    return corpus


def fit_lda(
    corpus: Corpus,
    k_topics: int,
    alpha: Optional[float] = None,
    beta: float = 0.01,
    iterations: int = 200,
    seed: int = 0,
) -> TopicModel:
    """
    Collapsed Gibbs sampling for LDA.

    phi and theta are read off the smoothed count tables of the final sweep.
    Identical inputs and seed give bit-identical outputs; documents with no
    tokens receive a uniform theta.
    """
    if k_topics < 2:
        raise TopicModelError("k_topics must be at least 2")
    if corpus.n_documents == 0 or not any(doc.size for doc in corpus.tokens):
        raise TopicModelError("corpus has no tokens")
    alpha = 50.0 / k_topics if alpha is None else alpha
    if alpha <= 0 or beta <= 0:
        raise TopicModelError("alpha and beta must be positive")
    n_vocab = len(corpus.vocabulary)
    if k_topics > n_vocab:
        raise TopicModelError(f"{k_topics} topics exceed the vocabulary size {n_vocab}")

    rng = np.random.default_rng(seed)
    n_docs = corpus.n_documents
    n_dk = np.zeros((n_docs, k_topics), dtype=np.float64)
    n_kw = np.zeros((k_topics, n_vocab), dtype=np.float64)
    n_k = np.zeros(k_topics, dtype=np.float64)

    z = []
    for d, doc in enumerate(corpus.tokens):
        zd = rng.integers(k_topics, size=doc.size)
        np.add.at(n_dk[d], zd, 1.0)
        np.add.at(n_kw, (zd, doc), 1.0)
        np.add.at(n_k, zd, 1.0)
        z.append(zd)

    v_beta = n_vocab * beta
    logger.info(f"Running collapsed Gibbs sampler: D={n_docs}, V={n_vocab}, K={k_topics}, iterations={iterations}")
    for it in range(iterations):
        for d, doc in enumerate(corpus.tokens):
            if doc.size == 0:
                continue
            zd = z[d]
            uniforms = rng.random(doc.size)
            row = n_dk[d]
            for n in range(doc.size):
                w = doc[n]
                k = zd[n]
                row[k] -= 1.0
                n_kw[k, w] -= 1.0
                n_k[k] -= 1.0

                weights = (n_kw[:, w] + beta) / (n_k + v_beta) * (row + alpha)
                cum = np.cumsum(weights)
                k = int(np.searchsorted(cum, uniforms[n] * cum[-1], side="right"))
                k = min(k, k_topics - 1)

                zd[n] = k
                row[k] += 1.0
                n_kw[k, w] += 1.0
                n_k[k] += 1.0
        if (it + 1) % 50 == 0:
            logger.debug(f"Gibbs sweep {it + 1}/{iterations}")

    phi = (n_kw + beta) / (n_k[:, None] + v_beta)
    phi /= phi.sum(axis=1, keepdims=True)
    theta = n_dk + alpha
    theta /= theta.sum(axis=1, keepdims=True)

    logger.info("LDA fit complete")
    return TopicModel(phi=phi, theta=theta, vocabulary=corpus.vocabulary)


def assign_topics(model: TopicModel) -> np.ndarray:
    """Content-Topic index (0-based) per document; np.argmax keeps the first maximum"""
    return np.argmax(model.theta, axis=1)


def topic_similarity(phi_i: np.ndarray, phi_j: np.ndarray) -> float:
    """1 - Hellinger distance; symmetric, in [0, 1]"""
    return 1.0 - hellinger_distance(phi_i, phi_j)


def topic_similarity_matrix(phi: np.ndarray) -> np.ndarray:
    return 1.0 - hellinger_distance_matrix(phi)


# ===== PERSISTENCE =====

def _write_matrix(path: str, matrix: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in matrix:
            f.write("\t".join(f"{x:.12g}" for x in row) + "\n")


def _read_matrix(path: str) -> np.ndarray:
    matrix = np.loadtxt(path, delimiter="\t", ndmin=2, dtype=np.float64)
    return matrix / matrix.sum(axis=1, keepdims=True)


def save_topic_model(model: TopicModel, out_dir: str) -> dict:
    """Write phi.tsv, theta.tsv and vocab.txt; returns the artifact paths"""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "phi": os.path.join(out_dir, "phi.tsv"),
        "theta": os.path.join(out_dir, "theta.tsv"),
        "vocab": os.path.join(out_dir, "vocab.txt"),
    }
    _write_matrix(paths["phi"], model.phi)
    _write_matrix(paths["theta"], model.theta)
    with open(paths["vocab"], "w", encoding="utf-8", newline="\n") as f:
        f.writelines(term + "\n" for term in model.vocabulary)
    logger.info(f"Saved topic model ({model.k_topics} topics) to {out_dir}")
    return paths


def load_topic_model(out_dir: str) -> TopicModel:
    try:
        phi = _read_matrix(os.path.join(out_dir, "phi.tsv"))
        theta = _read_matrix(os.path.join(out_dir, "theta.tsv"))
        with open(os.path.join(out_dir, "vocab.txt"), "r", encoding="utf-8") as f:
            vocabulary = tuple(line.rstrip("\n") for line in f)
    except OSError as e:
        raise TopicModelError(f"cannot read topic model from {out_dir}: {e}") from e
    if phi.shape[1] != len(vocabulary) or theta.shape[1] != phi.shape[0]:
        raise TopicModelError(f"inconsistent topic model files in {out_dir}")
    return TopicModel(phi=phi, theta=theta, vocabulary=vocabulary)
