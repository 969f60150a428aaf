"""Triple scoring and per-instance feature assembly.

Each triple becomes three pair scores (claim-evidence, claim-mutation,
evidence-mutation); an instance's feature vector is the concatenation of its
scores across both directions and all checkpoint epochs, direction-major,
epochs ascending, (s_ce, s_cm, s_em) within each checkpoint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .evolve import EvolveConfig, Triple, TripleSet, DIRECTIONS
from .metrics import PairMetric

SCORE_KINDS = ("s_ce", "s_cm", "s_em")


@dataclass(frozen=True)
class TripleScores:
    instance_id: str
    direction: str
    epoch: int
    s_ce: float  # claim vs evidence
    s_cm: float  # claim vs mutation
    s_em: float  # evidence vs mutation


@dataclass
class FeatureMatrix:
    instance_ids: list[str]
    columns: list[str]  # "direction:epoch:kind" descriptors
    values: np.ndarray  # [instances x features]
    meta: dict

    def row(self, instance_id: str) -> np.ndarray:
        try:
            return self.values[self.instance_ids.index(instance_id)]
        except ValueError:
            raise DataError(f"no feature row for instance {instance_id!r}") from None

    def rows(self, instance_ids: Sequence[str]) -> np.ndarray:
        index = {iid: i for i, iid in enumerate(self.instance_ids)}
        missing = [i for i in instance_ids if i not in index]
        if missing:
            raise DataError(f"no feature rows for {len(missing)} instances (first: {missing[0]!r})")
        return self.values[[index[i] for i in instance_ids]]


def score_triples(
    triples: TripleSet | Sequence[Triple], metric: PairMetric
) -> list[TripleScores]:
    """Score every triple; metric failures are counted and raised at the end."""
    items = triples.triples if isinstance(triples, TripleSet) else list(triples)
    out: list[TripleScores] = []
    failures = 0
    for t in items:
        try:
            s_ce = metric(t.claim, t.evidence)
            s_cm = metric(t.claim, t.mutation)
            s_em = metric(t.evidence, t.mutation)
        except Exception:
            s_ce = s_cm = s_em = math.nan
            failures += 1
        out.append(
            TripleScores(
                instance_id=t.instance_id, direction=t.direction, epoch=t.epoch,
                s_ce=s_ce, s_cm=s_cm, s_em=s_em,
            )
        )
    if failures:
        raise DataError(f"metric {metric.name!r} failed on {failures} of {len(items)} triples")
    return out


def column_descriptors(cfg: EvolveConfig) -> list[str]:
    return [
        f"{direction}:{epoch}:{kind}"
        for direction in DIRECTIONS
        for epoch in cfg.checkpoint_epochs
        for kind in SCORE_KINDS
    ]


def assemble(
    scores: Sequence[TripleScores],
    cfg: EvolveConfig,
    meta: dict | None = None,
    standardize: bool = False,
) -> FeatureMatrix:
    """Build the instance-by-feature matrix in canonical column and row order.

    Rows are sorted by instance id, so any permutation of the input scores
    assembles identically. Missing cells or NaN scores abort.
    """
    if not scores:
        raise DataError("no scores to assemble")
    cell: dict[tuple[str, str, int], TripleScores] = {}
    for s in scores:
        cell[(s.instance_id, s.direction, s.epoch)] = s
    instance_ids = sorted({s.instance_id for s in scores})

    missing = [
        (iid, d, e)
        for iid in instance_ids
        for d in DIRECTIONS
        for e in cfg.checkpoint_epochs
        if (iid, d, e) not in cell
    ]
    if missing:
        raise DataError(
            f"feature assembly is missing {len(missing)} (instance, direction, epoch) "
            f"cells; first: {missing[0]}"
        )

    columns = column_descriptors(cfg)
    values = np.empty((len(instance_ids), len(columns)), dtype=np.float64)
    for r, iid in enumerate(instance_ids):
        c = 0
        for d in DIRECTIONS:
            for e in cfg.checkpoint_epochs:
                s = cell[(iid, d, e)]
                values[r, c : c + 3] = (s.s_ce, s.s_cm, s.s_em)
                c += 3
    if not np.all(np.isfinite(values)):
        bad = int(np.sum(~np.isfinite(values)))
        raise DataError(f"feature matrix contains {bad} non-finite entries; aborting")
    if standardize:
        mu = values.mean(axis=0)
        sd = values.std(axis=0)
        sd[sd == 0] = 1.0
        values = (values - mu) / sd
    return FeatureMatrix(
        instance_ids=list(instance_ids),
        columns=columns,
        values=values,
        meta=dict(meta or {}),
    )


def save_features(fm: FeatureMatrix, path: str | Path) -> None:
    """Write the feature store: a CSV with full-precision floats plus a
    schema sidecar holding metric/encoder/config provenance."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bad = [iid for iid in fm.instance_ids if "," in iid or "\n" in iid]
    if bad:
        raise DataError(f"instance ids unsafe for the CSV store (first: {bad[0]!r})")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["instance_id"] + fm.columns) + "\n")
        for iid, row in zip(fm.instance_ids, fm.values):
            fh.write(iid + "," + ",".join(repr(float(v)) for v in row) + "\n")
    schema_path = path.with_suffix(path.suffix + ".schema.json")
    with open(schema_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(
            {"columns": fm.columns, "n_instances": len(fm.instance_ids), "meta": fm.meta},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")


def load_features(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    if not path.exists():
        raise DataError(f"feature store not found: {path}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[0] != "instance_id":
            raise DataError(f"{path}: not a feature store (header {header[:2]}...)")
        columns = header[1:]
        instance_ids: list[str] = []
        rows: list[list[float]] = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(columns) + 1:
                raise DataError(f"{path}:{lineno}: expected {len(columns) + 1} fields")
            instance_ids.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    meta = {}
    schema_path = path.with_suffix(path.suffix + ".schema.json")
    if schema_path.exists():
        with open(schema_path, encoding="utf-8") as fh:
            meta = json.load(fh).get("meta", {})
    return FeatureMatrix(
        instance_ids=instance_ids,
        columns=columns,
        values=np.array(rows, dtype=np.float64),
        meta=meta,
    )
