"""Claim-evidence corpora: pair files, test-set reservation, few-shot sampling.

A dataset configuration is materialised as a JSONL pair file (one object per
line: id, claim, evidence, label). Splitting reserves a balanced test set and
leaves the remainder as the train pool, which doubles as the unlabeled pool
for seq2seq training when labels are ignored.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError


class Label(str, Enum):
    SUPPORTS = "SUPPORTS"
    REFUTES = "REFUTES"
    NOT_ENOUGH_INFO = "NOT_ENOUGH_INFO"


# Canonical class order; also the tie-break order everywhere downstream.
LABELS: tuple[Label, ...] = (Label.SUPPORTS, Label.REFUTES, Label.NOT_ENOUGH_INFO)

DATASET_NAMES = ("fever", "cfever", "scifact_oracle", "scifact_retrieved")


@dataclass(frozen=True)
class ClaimEvidencePair:
    id: str
    claim: str
    evidence: str
    label: Label | None = None

    def __post_init__(self) -> None:
        if not self.claim.strip():
            raise DataError(f"pair {self.id!r}: empty claim")
        if not self.evidence.strip():
            raise DataError(f"pair {self.id!r}: empty evidence")


@dataclass
class DatasetConfig:
    name: str
    test_per_class: int = 150
    split_seed: int = 42

    def __post_init__(self) -> None:
        if self.test_per_class < 1:
            raise DataError("test_per_class must be >= 1")


@dataclass
class SplitBundle:
    train_pool: list[ClaimEvidencePair]
    test_set: list[ClaimEvidencePair]

    def by_id(self) -> dict[str, ClaimEvidencePair]:
        out = {p.id: p for p in self.train_pool}
        out.update({p.id: p for p in self.test_set})
        return out


@dataclass
class FewShotSample:
    n: int
    seed: int
    instances: list[ClaimEvidencePair] = field(default_factory=list)


def _parse_label(raw: object, context: str) -> Label | None:
    if raw is None:
        return None
    try:
        return Label(raw)
    except ValueError:
        raise DataError(f"{context}: unknown label {raw!r}") from None


def load_dataset(path: str | Path, name: str | None = None) -> list[ClaimEvidencePair]:
    """Read a JSONL pair file into validated pairs.

    Malformed lines and unknown labels raise DataError naming the line.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"pair file not found: {path}")
    tag = name or path.name
    pairs: list[ClaimEvidencePair] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{tag}:{lineno}: malformed JSON ({exc.msg})") from None
            try:
                pair = ClaimEvidencePair(
                    id=str(rec["id"]),
                    claim=rec["claim"],
                    evidence=rec["evidence"],
                    label=_parse_label(rec.get("label"), f"{tag}:{lineno}"),
                )
            except KeyError as exc:
                raise DataError(f"{tag}:{lineno}: missing field {exc.args[0]!r}") from None
            if pair.id in seen:
                raise DataError(f"{tag}:{lineno}: duplicate id {pair.id!r}")
            seen.add(pair.id)
            pairs.append(pair)
    return pairs


def save_pairs(pairs: Iterable[ClaimEvidencePair], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            rec = {
                "id": p.id,
                "claim": p.claim,
                "evidence": p.evidence,
                "label": p.label.value if p.label is not None else None,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _group_by_label(pairs: Sequence[ClaimEvidencePair]) -> dict[Label, list[ClaimEvidencePair]]:
    groups: dict[Label, list[ClaimEvidencePair]] = {lab: [] for lab in LABELS}
    for p in pairs:
        if p.label is None:
            raise DataError(f"pair {p.id!r} is unlabeled; splits need labels")
        groups[p.label].append(p)
    return groups


def build_splits(pairs: Sequence[ClaimEvidencePair], cfg: DatasetConfig) -> SplitBundle:
    """Reserve test_per_class instances per class; the rest form the train pool.

    Deterministic for a given split_seed; input order is preserved within
    each side of the split.
    """
    groups = _group_by_label(pairs)
    for lab in LABELS:
        if len(groups[lab]) <= cfg.test_per_class:
            raise DataError(
                f"class {lab.value} has {len(groups[lab])} instances; "
                f"need > {cfg.test_per_class} to reserve a test set"
            )
    rng = random.Random(cfg.split_seed)
    test_ids: set[str] = set()
    for lab in LABELS:
        ids = sorted(p.id for p in groups[lab])
        test_ids.update(rng.sample(ids, cfg.test_per_class))
    train = [p for p in pairs if p.id not in test_ids]
    test = [p for p in pairs if p.id in test_ids]
    return SplitBundle(train_pool=train, test_set=test)


def sample_few_shot(bundle: SplitBundle, n: int, seed: int) -> FewShotSample:
    """Draw n instances per class from the train pool, without replacement.

    Output ordering is stable: class canonical order, then id.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    groups = _group_by_label(bundle.train_pool)
    for lab in LABELS:
        if len(groups[lab]) < n:
            raise DataError(
                f"class {lab.value} has only {len(groups[lab])} train instances; cannot draw {n}"
            )
    rng = random.Random(seed)
    chosen: list[ClaimEvidencePair] = []
    for lab in LABELS:
        members = sorted(groups[lab], key=lambda p: p.id)
        chosen.extend(rng.sample(members, n))
    chosen.sort(key=lambda p: (LABELS.index(p.label), p.id))
    return FewShotSample(n=n, seed=seed, instances=chosen)


def save_split_manifest(bundle: SplitBundle, cfg: DatasetConfig, path: str | Path) -> None:
    """Write the manifest that pins a split for exact reproduction."""
    manifest = {
        "config": {"name": cfg.name, "test_per_class": cfg.test_per_class},
        "split_seed": cfg.split_seed,
        "train_ids": [p.id for p in bundle.train_pool],
        "test_ids": [p.id for p in bundle.test_set],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def load_split_manifest(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def apply_split_manifest(pairs: Sequence[ClaimEvidencePair], manifest: dict) -> SplitBundle:
    """Rebuild a SplitBundle from a manifest written by save_split_manifest."""
    by_id = {p.id: p for p in pairs}
    missing = [i for i in manifest["train_ids"] + manifest["test_ids"] if i not in by_id]
    if missing:
        raise DataError(f"manifest references {len(missing)} unknown ids (first: {missing[0]!r})")
    return SplitBundle(
        train_pool=[by_id[i] for i in manifest["train_ids"]],
        test_set=[by_id[i] for i in manifest["test_ids"]],
    )


def label_histogram(pairs: Iterable[ClaimEvidencePair]) -> dict[Label, int]:
    hist = {lab: 0 for lab in LABELS}
    for p in pairs:
        if p.label is not None:
            hist[p.label] += 1
    return hist
