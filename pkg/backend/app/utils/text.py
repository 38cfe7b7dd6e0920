"""
Readme text normalization for the Content-Topic corpus.

Lowercases, tokenizes on non-alphanumeric boundaries, drops stopwords and
stems with NLTK's Porter stemmer. No lemmatization dictionary and no typo
correction.
"""

import re
from functools import lru_cache
from typing import FrozenSet, Iterable, List, Optional

from loguru import logger
from nltk.stem import PorterStemmer


ENGLISH_STOPWORDS: FrozenSet[str] = frozenset("""
a about above after again against all am an and any are as at be because been
before being below between both but by can could did do does doing down during
each few for from further had has have having he her here hers herself him
himself his how i if in into is it its itself just me more most my myself no nor
not now of off on once only or other our ours ourselves out over own same she
should so some such than that the their theirs them themselves then there these
they this those through to too under until up very was we were what when where
which while who whom why will with would you your yours yourself yourselves
app apps
""".split())

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def load_stopwords(path: Optional[str]) -> FrozenSet[str]:
    """Read one stopword per line; None → built-in English list"""
    if path is None:
        return ENGLISH_STOPWORDS
    with open(path, "r", encoding="utf-8") as f:
        words = {line.strip().lower() for line in f if line.strip()}
    logger.info(f"Loaded {len(words)} stopwords from {path}")
    return frozenset(words)


class ReadmeNormalizer:
    """
    Turns a readme text into a list of stemmed terms.

    Stemming is cached per surface form; the Porter rules are deterministic
    so the cache never changes results.
    """

    def __init__(self, stopwords: Iterable[str] = ENGLISH_STOPWORDS):
        self.stopwords = frozenset(w.lower() for w in stopwords)
        self._stemmer = PorterStemmer()
        self._stem = lru_cache(maxsize=65536)(self._stemmer.stem)

    def tokenize(self, text: str) -> List[str]:
        return _TOKEN_RE.findall(text.lower())

    def normalize(self, text: str) -> List[str]:
        return [self._stem(tok) for tok in self.tokenize(text) if tok not in self.stopwords]
