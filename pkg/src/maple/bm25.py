"""BM25 abstract retrieval for the retrieved-evidence dataset configuration."""

from __future__ import annotations

import math
import re
from collections import Counter
from typing import Mapping, Sequence

from .corpus import ClaimEvidencePair, Label
from .errors import DataError

_TOKEN = re.compile(r"\w+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class BM25:
    """Okapi BM25 with the non-negative (Lucene) idf: ln(1 + (N-n+0.5)/(n+0.5))."""

    def __init__(self, docs: Sequence[str], k1: float = 1.5, b: float = 0.75):
        if not docs:
            raise DataError("BM25 needs a non-empty document corpus")
        self.k1 = k1
        self.b = b
        self._tokenized = [tokenize(d) for d in docs]
        self._doc_lens = [len(d) for d in self._tokenized]
        self._n_docs = len(docs)
        self._avgdl = sum(self._doc_lens) / self._n_docs
        self._term_freqs = [Counter(d) for d in self._tokenized]
        df: Counter[str] = Counter()
        for tf in self._term_freqs:
            df.update(tf.keys())
        self._idf = {
            t: math.log(1.0 + (self._n_docs - n + 0.5) / (n + 0.5)) for t, n in df.items()
        }

    def score(self, query: str) -> list[float]:
        """BM25 score of the query against every document, in corpus order."""
        q_terms = tokenize(query)
        scores = [0.0] * self._n_docs
        for i, tf in enumerate(self._term_freqs):
            if self._avgdl > 0:
                norm = self.k1 * (1 - self.b + self.b * self._doc_lens[i] / self._avgdl)
            else:
                norm = self.k1
            s = 0.0
            for t in q_terms:
                f = tf.get(t)
                if not f:
                    continue
                s += self._idf[t] * f * (self.k1 + 1) / (f + norm)
            scores[i] = s
        return scores

    def top_k(self, query: str, k: int) -> list[int]:
        """Indices of the k best documents, descending score; ties by corpus order."""
        scores = self.score(query)
        order = sorted(range(self._n_docs), key=lambda i: (-scores[i], i))
        return order[: min(k, self._n_docs)]


def retrieve_evidence(
    claims: Sequence[tuple[str, str]],
    abstracts: Sequence[tuple[str, str]],
    k: int,
    labels: Mapping[str, Label] | None = None,
    k1: float = 1.5,
    b: float = 0.75,
) -> list[ClaimEvidencePair]:
    """Pair each claim with its top-k BM25 abstracts joined by a single space.

    claims are (id, text) tuples; abstracts are (doc_id, text) tuples. Labels,
    when given, are carried over from the source claim annotations by id.
    """
    if not abstracts:
        raise DataError("abstract corpus is empty")
    if k < 1:
        raise DataError("k must be >= 1")
    index = BM25([text for _, text in abstracts], k1=k1, b=b)
    out: list[ClaimEvidencePair] = []
    for claim_id, claim_text in claims:
        ranked = index.top_k(claim_text, k)
        evidence = " ".join(abstracts[i][1] for i in ranked)
        out.append(
            ClaimEvidencePair(
                id=claim_id,
                claim=claim_text,
                evidence=evidence,
                label=labels.get(claim_id) if labels else None,
            )
        )
    return out
