"""Pair-scoring metrics: SemSim plus the classic NLG ablation suite.

SemSim is cosine similarity over sentence embeddings. Encoders resolve from
config strings: "stub-hash[:dim]" and "stub-bow[:dim]" are deterministic
offline stubs for tests; anything else loads a sentence-transformers
checkpoint (hub id or local path).
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from ._porter import stem as porter_stem
from .errors import BackendError, ConfigurationError

log = logging.getLogger(__name__)

_TOKEN = re.compile(r"\w+")


def _tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


# ---------------------------------------------------------------------------
# Encoders


class Encoder(Protocol):
    name: str

    def encode(self, texts: Sequence[str]) -> np.ndarray: ...


class HashEncoder:
    """Deterministic pseudo-random unit vector per distinct text.

    Carries no semantics; exists so metric properties (bounds, symmetry,
    self-identity) can be tested without model weights.
    """

    def __init__(self, dim: int = 384):
        self.dim = dim
        self.name = f"stub-hash:{dim}"

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            v = rng.standard_normal(self.dim)
            out[i] = (v / np.linalg.norm(v)).astype(np.float32)
        return out


class BowEncoder:
    """Hashed bag-of-words embedding; cosine reflects lexical overlap."""

    def __init__(self, dim: int = 512):
        self.dim = dim
        self.name = f"stub-bow:{dim}"

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            for tok in _tokenize(text):
                digest = hashlib.sha256(tok.encode("utf-8")).digest()
                idx = int.from_bytes(digest[:4], "little") % self.dim
                sign = 1.0 if digest[4] % 2 == 0 else -1.0
                out[i, idx] += sign
        return out


class SentenceTransformerEncoder:
    """sentence-transformers checkpoint behind the Encoder protocol."""

    def __init__(self, model_id: str, batch_size: int = 64):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:  # pragma: no cover
            raise BackendError(f"sentence-transformers not installed: {exc}") from exc
        path = resolve_model_path(model_id)
        try:
            self._model = SentenceTransformer(path, device="cpu")
        except Exception as exc:
            raise BackendError(f"cannot load encoder {model_id!r}: {exc}") from exc
        self.name = model_id
        self.batch_size = batch_size

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        return np.asarray(
            self._model.encode(
                list(texts), batch_size=self.batch_size, show_progress_bar=False
            ),
            dtype=np.float32,
        )


def resolve_model_path(model_id: str) -> str:
    """Map a model id onto a local directory when MAPLE_MODEL_CACHE holds one."""
    cache = os.environ.get("MAPLE_MODEL_CACHE")
    if cache:
        candidate = Path(cache) / model_id.replace("/", "--")
        if candidate.exists():
            return str(candidate)
        candidate = Path(cache) / model_id
        if candidate.exists():
            return str(candidate)
    return model_id


_STUB_PATTERN = re.compile(r"^stub-(hash|bow)(?::(\d+))?$")


def get_encoder(encoder_id: str) -> Encoder:
    m = _STUB_PATTERN.match(encoder_id)
    if m:
        kind, dim = m.group(1), m.group(2)
        if kind == "hash":
            return HashEncoder(int(dim) if dim else 384)
        return BowEncoder(int(dim) if dim else 512)
    return SentenceTransformerEncoder(encoder_id)


# ---------------------------------------------------------------------------
# Embedding cache


def _text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class EmbeddingCache:
    """Content-addressed embedding store, optionally persisted as one .npz.

    Keys are (encoder id, sha256 of text); the file lives next to the feature
    store. Writes are serialized with a file lock; readers load the whole
    file up front.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._store: dict[str, np.ndarray] = {}
        if self.path and self.path.exists():
            with np.load(self.path) as data:
                self._store = {k: data[k] for k in data.files}

    @staticmethod
    def key(encoder_id: str, text: str) -> str:
        return f"{_text_key(encoder_id)[:16]}_{_text_key(text)}"

    def get(self, encoder_id: str, text: str) -> np.ndarray | None:
        return self._store.get(self.key(encoder_id, text))

    def put(self, encoder_id: str, text: str, vector: np.ndarray) -> None:
        self._store[self.key(encoder_id, text)] = np.asarray(vector, dtype=np.float32)

    def __len__(self) -> int:
        return len(self._store)

    def save(self) -> None:
        if self.path is None:
            return
        from filelock import FileLock

        self.path.parent.mkdir(parents=True, exist_ok=True)
        with FileLock(str(self.path) + ".lock"):
            tmp = self.path.with_suffix(".tmp.npz")
            np.savez(tmp, **self._store)
            tmp.replace(self.path)


def embed(
    texts: Sequence[str], encoder: Encoder, cache: EmbeddingCache | None = None
) -> np.ndarray:
    """One embedding row per text, batched, cache-aware.

    Distinct texts are encoded once even within a single call.
    """
    if not isinstance(texts, (list, tuple)):
        texts = list(texts)
    if len(texts) == 0:
        raise ConfigurationError("embed() needs a non-empty list of texts")
    vectors: dict[str, np.ndarray] = {}
    missing: list[str] = []
    for t in dict.fromkeys(texts):  # unique, original order
        hit = cache.get(encoder.name, t) if cache is not None else None
        if hit is not None:
            vectors[t] = hit
        else:
            missing.append(t)
    if missing:
        encoded = encoder.encode(missing)
        for t, v in zip(missing, encoded):
            vectors[t] = v
            if cache is not None:
                cache.put(encoder.name, t, v)
    mat = np.stack([vectors[t] for t in texts]).astype(np.float32)
    if not np.all(np.isfinite(mat)):
        raise ConfigurationError(f"encoder {encoder.name!r} produced non-finite embeddings")
    return mat


# ---------------------------------------------------------------------------
# SemSim


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity clamped to [-1, 1]; zero-norm inputs score 0.0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        log.warning("cosine: zero-norm embedding, returning 0.0")
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def semsim(
    text_a: str, text_b: str, encoder: Encoder, cache: EmbeddingCache | None = None
) -> float:
    vecs = embed([text_a, text_b], encoder, cache)
    return cosine(vecs[0], vecs[1])


# ---------------------------------------------------------------------------
# Classic NLG metrics (single reference, sentence level, scores in [0, 1])


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, reference: str, max_n: int = 4) -> float:
    """Smoothed sentence BLEU: raw unigram precision, add-one for n >= 2."""
    cand = _tokenize(candidate)
    ref = _tokenize(reference)
    if not cand or not ref:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_ngrams = _ngrams(cand, n)
        ref_ngrams = _ngrams(ref, n)
        overlap = sum(min(c, ref_ngrams[g]) for g, c in cand_ngrams.items())
        total = max(len(cand) - n + 1, 0)
        if n == 1:
            if overlap == 0:
                return 0.0
            p = overlap / total
        else:
            p = (overlap + 1) / (total + 1)
        log_sum += math.log(p)
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return bp * math.exp(log_sum / max_n)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """ROUGE-L F1 (beta = 1) over the longest common subsequence."""
    cand = _tokenize(candidate)
    ref = _tokenize(reference)
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


SynonymFn = Callable[[str], set[str]]


def _align(
    cand: list[str], ref: list[str], synonyms: SynonymFn | None
) -> list[tuple[int, int]]:
    """Greedy left-to-right unigram alignment in stages: exact, stem, synonym."""
    matches: list[tuple[int, int]] = []
    cand_free = set(range(len(cand)))
    ref_free = set(range(len(ref)))

    def run_stage(equal: Callable[[str, str], bool]) -> None:
        for i in sorted(cand_free):
            for j in sorted(ref_free):
                if equal(cand[i], ref[j]):
                    matches.append((i, j))
                    cand_free.discard(i)
                    ref_free.discard(j)
                    break

    run_stage(lambda c, r: c == r)
    run_stage(lambda c, r: porter_stem(c) == porter_stem(r))
    if synonyms is not None:
        run_stage(lambda c, r: r in synonyms(c) or c in synonyms(r))
    return sorted(matches)


def _chunks(matches: list[tuple[int, int]]) -> int:
    if not matches:
        return 0
    count = 1
    for (ci, ri), (cj, rj) in zip(matches, matches[1:]):
        if cj != ci + 1 or rj != ri + 1:
            count += 1
    return count


def meteor(
    candidate: str,
    reference: str,
    alpha: float = 0.9,
    beta: float = 3.0,
    gamma: float = 0.5,
    synonyms: SynonymFn | None = None,
) -> float:
    """METEOR with exact and Porter-stem stages; synonym stage is pluggable.

    The synonym stage needs an external resource (e.g. WordNet) supplied as a
    callable; without one it is skipped.
    """
    cand = _tokenize(candidate)
    ref = _tokenize(reference)
    if not cand or not ref:
        return 0.0
    matches = _align(cand, ref, synonyms)
    m = len(matches)
    if m == 0:
        return 0.0
    precision = m / len(cand)
    recall = m / len(ref)
    f_mean = precision * recall / (alpha * precision + (1 - alpha) * recall)
    penalty = gamma * (_chunks(matches) / m) ** beta
    return f_mean * (1.0 - penalty)


_13A_SPLITS = [
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),
]


def _tokenize_13a(text: str) -> list[str]:
    text = text.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    for pattern, repl in _13A_SPLITS:
        text = pattern.sub(repl, text)
    return text.lower().split()


def sacrebleu_sentence(candidate: str, reference: str, max_n: int = 4) -> float:
    """Sentence BLEU under mteval-13a-style tokenization with exponential
    smoothing and effective n-gram order, rescaled to [0, 1]."""
    cand = _tokenize_13a(candidate)
    ref = _tokenize_13a(reference)
    if not cand or not ref:
        return 0.0
    effective_order = min(max_n, len(cand))
    log_sum = 0.0
    smooth_inv = 1.0
    for n in range(1, effective_order + 1):
        cand_ngrams = _ngrams(cand, n)
        ref_ngrams = _ngrams(ref, n)
        overlap = sum(min(c, ref_ngrams[g]) for g, c in cand_ngrams.items())
        total = len(cand) - n + 1
        if overlap == 0:
            smooth_inv *= 2.0
            p = 1.0 / (smooth_inv * total)
        else:
            p = overlap / total
        log_sum += math.log(p)
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return bp * math.exp(log_sum / effective_order)


# ---------------------------------------------------------------------------
# Metric registry


@dataclass
class PairMetric:
    name: str
    score_fn: Callable[[str, str], float]

    def __call__(self, text_a: str, text_b: str) -> float:
        return self.score_fn(text_a, text_b)


def _external_adapter(name: str) -> Callable[[str, str], float]:
    def missing(_a: str, _b: str) -> float:
        raise ConfigurationError(
            f"metric {name!r} is an external-model adapter; register an "
            f"implementation with maple.metrics.register_metric({name!r}, fn)"
        )

    return missing


_CLASSIC: dict[str, Callable[[str, str], float]] = {
    "bleu": bleu,
    "rouge_l": rouge_l,
    "meteor": meteor,
    "sacrebleu": sacrebleu_sentence,
    "bleurt": _external_adapter("bleurt"),
    "bartscore": _external_adapter("bartscore"),
}

METRIC_NAMES = ("semsim",) + tuple(_CLASSIC)


def register_metric(name: str, score_fn: Callable[[str, str], float]) -> None:
    """Plug an external metric (e.g. a BLEURT adapter) into the registry."""
    _CLASSIC[name] = score_fn


def classic_metric(name: str, candidate: str, reference: str) -> float:
    if name not in _CLASSIC:
        raise ConfigurationError(f"unknown metric {name!r}; known: {sorted(_CLASSIC)}")
    return _CLASSIC[name](candidate, reference)


def resolve_metric(
    name: str,
    encoder: Encoder | None = None,
    cache: EmbeddingCache | None = None,
) -> PairMetric:
    """Bind a metric name to a scoring function, aborting on unknown names."""
    if name == "semsim":
        if encoder is None:
            raise ConfigurationError("semsim needs an encoder")
        return PairMetric("semsim", lambda a, b: semsim(a, b, encoder, cache))
    if name in _CLASSIC:
        fn = _CLASSIC[name]
        return PairMetric(name, fn)
    raise ConfigurationError(f"unknown metric {name!r}; known: {sorted(METRIC_NAMES)}")
