"""Few-shot classifiers: the logistic head over evolution features, and the
SEED baseline (nearest class vector over embedding differences)."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np
from scipy.optimize import minimize

from .corpus import ClaimEvidencePair, Label, LABELS
from .errors import DataError
from .metrics import EmbeddingCache, Encoder, cosine, embed

log = logging.getLogger(__name__)


@dataclass
class FitConfig:
    reg_strength: float = 1.0
    max_iter: int = 1000
    tol: float = 1e-6
    seed: int = 0


@dataclass
class LogisticModel:
    weights: np.ndarray  # [classes x features]
    bias: np.ndarray  # [classes]
    classes: tuple[Hashable, ...]
    reg_strength: float
    seed: int


def _canonical_classes(labels: Sequence[Hashable]) -> tuple[Hashable, ...]:
    uniq: list[Hashable] = []
    for lab in labels:
        if lab not in uniq:
            uniq.append(lab)
    if all(isinstance(lab, Label) for lab in uniq):
        return tuple(sorted(uniq, key=LABELS.index))
    return tuple(uniq)  # first-appearance order: deterministic for fixed input


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_logistic(
    features: np.ndarray,
    labels: Sequence[Hashable],
    cfg: FitConfig | None = None,
    classes: Sequence[Hashable] | None = None,
) -> LogisticModel:
    """Multinomial logistic regression, L2 on weights, deterministic L-BFGS.

    Zero initialisation and a full-batch second-order solver make refits
    bit-reproducible for identical inputs.
    """
    cfg = cfg or FitConfig()
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"features must be 2-D, got shape {X.shape}")
    if len(labels) != X.shape[0]:
        raise DataError(f"{X.shape[0]} feature rows but {len(labels)} labels")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite feature values")
    class_order = tuple(classes) if classes is not None else _canonical_classes(labels)
    present = set(labels)
    absent = [c for c in class_order if c not in present]
    if absent:
        raise DataError(f"classes absent from the training sample: {absent}")
    unknown = [lab for lab in labels if lab not in class_order]
    if unknown:
        raise DataError(f"labels outside the class set: {sorted(set(map(str, unknown)))}")

    n, f = X.shape
    k = len(class_order)
    class_index = {c: i for i, c in enumerate(class_order)}
    y = np.zeros((n, k), dtype=np.float64)
    for i, lab in enumerate(labels):
        y[i, class_index[lab]] = 1.0

    lam = cfg.reg_strength

    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        w = theta[: k * f].reshape(k, f)
        b = theta[k * f :]
        logits = X @ w.T + b
        logits -= logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(logits).sum(axis=1))
        nll = float(np.sum(log_z - logits[np.arange(n), y.argmax(axis=1)]))
        loss = nll + 0.5 * lam * float(np.sum(w * w))
        p = np.exp(logits - log_z[:, None])
        diff = p - y
        grad_w = diff.T @ X + lam * w
        grad_b = diff.sum(axis=0)
        return loss, np.concatenate([grad_w.ravel(), grad_b])

    theta0 = np.zeros(k * f + k)
    result = minimize(
        objective, theta0, jac=True, method="L-BFGS-B",
        options={"maxiter": cfg.max_iter, "ftol": cfg.tol, "gtol": cfg.tol},
    )
    w = result.x[: k * f].reshape(k, f)
    b = result.x[k * f :]
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
        raise DataError("optimizer produced non-finite parameters")
    return LogisticModel(
        weights=w, bias=b, classes=class_order, reg_strength=lam, seed=cfg.seed
    )


def predict_logistic(
    model: LogisticModel, features: np.ndarray
) -> tuple[list[Hashable], np.ndarray]:
    """Argmax of softmax scores; ties break toward the earliest class."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != model.weights.shape[1]:
        raise DataError(
            f"feature dimension {X.shape[1]} != model dimension {model.weights.shape[1]}"
        )
    probs = _softmax(X @ model.weights.T + model.bias)
    picks = probs.argmax(axis=1)  # first occurrence wins ties
    return [model.classes[i] for i in picks], probs


def save_logistic(model: LogisticModel, path: str | Path, config_hash: str = "") -> None:
    payload = {
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
        "classes": [c.value if isinstance(c, Label) else c for c in model.classes],
        "reg_strength": model.reg_strength,
        "seed": model.seed,
        "config_hash": config_hash,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_logistic(path: str | Path) -> LogisticModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    classes = tuple(
        Label(c) if c in {l.value for l in LABELS} else c for c in payload["classes"]
    )
    return LogisticModel(
        weights=np.array(payload["weights"], dtype=np.float64),
        bias=np.array(payload["bias"], dtype=np.float64),
        classes=classes,
        reg_strength=payload["reg_strength"],
        seed=payload["seed"],
    )


# ---------------------------------------------------------------------------
# SEED baseline


@dataclass
class SeedModel:
    class_vectors: dict[Label, np.ndarray] = field(default_factory=dict)
    encoder_id: str = ""


def _difference_vectors(
    pairs: Sequence[ClaimEvidencePair], encoder: Encoder, cache: EmbeddingCache | None
) -> np.ndarray:
    claims = embed([p.claim for p in pairs], encoder, cache)
    evidences = embed([p.evidence for p in pairs], encoder, cache)
    return claims.astype(np.float64) - evidences.astype(np.float64)


def fit_seed(
    sample: Sequence[ClaimEvidencePair],
    encoder: Encoder,
    cache: EmbeddingCache | None = None,
) -> SeedModel:
    """Per-class mean of claim-minus-evidence embedding differences."""
    if not sample:
        raise DataError("empty training sample")
    diffs = _difference_vectors(sample, encoder, cache)
    model = SeedModel(encoder_id=encoder.name)
    for lab in LABELS:
        idx = [i for i, p in enumerate(sample) if p.label == lab]
        if not idx:
            raise DataError(f"class {lab.value} absent from the training sample")
        model.class_vectors[lab] = diffs[idx].mean(axis=0)
    return model


def predict_seed(
    model: SeedModel,
    pairs: Sequence[ClaimEvidencePair] | ClaimEvidencePair,
    encoder: Encoder,
    cache: EmbeddingCache | None = None,
    metric: str = "cosine",
) -> list[Label]:
    """Nearest class vector by cosine (default) or euclidean distance."""
    single = isinstance(pairs, ClaimEvidencePair)
    batch = [pairs] if single else list(pairs)
    diffs = _difference_vectors(batch, encoder, cache)
    out: list[Label] = []
    for diff in diffs:
        if metric == "cosine":
            if np.linalg.norm(diff) == 0:
                log.warning("zero difference vector; falling back to tie-break class")
            scores = [cosine(diff, model.class_vectors[lab]) for lab in LABELS]
        elif metric == "euclidean":
            scores = [-float(np.linalg.norm(diff - model.class_vectors[lab])) for lab in LABELS]
        else:
            raise DataError(f"unknown seed metric {metric!r}")
        out.append(LABELS[int(np.argmax(scores))])
    return out
