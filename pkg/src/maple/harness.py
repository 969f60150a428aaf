"""Experiment matrix: methods x shots x sampling seeds, with resumable
results, aggregation, runtime logging, and class-separation diagnostics."""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import Label, LABELS, SplitBundle, sample_few_shot
from .errors import DataError
from .evolve import EvolveConfig
from .features import FeatureMatrix, TripleScores
from .metrics import EmbeddingCache, Encoder
from .verify import FitConfig, fit_logistic, fit_seed, predict_logistic, predict_seed

log = logging.getLogger(__name__)

METHOD_MAPLE = "maple"
METHOD_SEED = "seed"

RESULT_FIELDS = (
    "method", "n", "seed", "macro_f1", "accuracy",
    "f1_SUPPORTS", "f1_REFUTES", "f1_NOT_ENOUGH_INFO",
)


@dataclass
class ExperimentConfig:
    dataset: str
    methods: tuple[str, ...] = (METHOD_MAPLE, METHOD_SEED)
    shots: tuple[int, ...] = (1, 2, 3, 4, 5)
    seeds: tuple[int, ...] = tuple(range(123, 223))  # 100 sampling seeds
    metric: str = "semsim"
    encoder_id: str = "sentence-transformers/all-mpnet-base-v2"
    seed_encoder_id: str = "sentence-transformers/bert-base-nli-mean-tokens"
    evolve: EvolveConfig = field(default_factory=EvolveConfig)
    output_dir: str = "runs"

    def __post_init__(self) -> None:
        if any(n < 1 for n in self.shots):
            raise DataError("shots must all be >= 1")
        if not self.seeds:
            raise DataError("need at least one sampling seed")
        unknown = [m for m in self.methods if m not in (METHOD_MAPLE, METHOD_SEED)]
        if unknown:
            raise DataError(f"unknown methods: {unknown}")


@dataclass
class RunResult:
    method: str
    n: int
    seed: int
    macro_f1: float
    accuracy: float
    classwise_f1: dict[Label, float]
    wall_time: float = 0.0


@dataclass
class ResultTable:
    rows: list[RunResult]

    def aggregates(self) -> dict[tuple[str, int], dict[str, float]]:
        return aggregate(self.rows)


# ---------------------------------------------------------------------------
# Scoring


def classwise_f1(
    predictions: Sequence[Label], gold: Sequence[Label], classes: Sequence[Label] = LABELS
) -> dict[Label, float]:
    if len(predictions) != len(gold):
        raise DataError(f"{len(predictions)} predictions vs {len(gold)} gold labels")
    if not gold:
        raise DataError("empty evaluation set")
    out: dict[Label, float] = {}
    for lab in classes:
        tp = sum(1 for p, g in zip(predictions, gold) if p == lab and g == lab)
        fp = sum(1 for p, g in zip(predictions, gold) if p == lab and g != lab)
        fn = sum(1 for p, g in zip(predictions, gold) if p != lab and g == lab)
        denom = 2 * tp + fp + fn
        out[lab] = (2 * tp / denom) if denom else 0.0
    return out


def macro_f1(
    predictions: Sequence[Label], gold: Sequence[Label], classes: Sequence[Label] = LABELS
) -> float:
    """Unweighted mean of per-class F1 over the fixed class set."""
    per_class = classwise_f1(predictions, gold, classes)
    return sum(per_class.values()) / len(per_class)


def accuracy(predictions: Sequence[Label], gold: Sequence[Label]) -> float:
    if len(predictions) != len(gold):
        raise DataError(f"{len(predictions)} predictions vs {len(gold)} gold labels")
    if not gold:
        raise DataError("empty evaluation set")
    return sum(1 for p, g in zip(predictions, gold) if p == g) / len(gold)


def aggregate(rows: Sequence[RunResult]) -> dict[tuple[str, int], dict[str, float]]:
    """Per (method, n): mean and sample std (n-1) of macro F1 and accuracy."""
    cells: dict[tuple[str, int], list[RunResult]] = {}
    for r in rows:
        cells.setdefault((r.method, r.n), []).append(r)
    out: dict[tuple[str, int], dict[str, float]] = {}
    for key, members in sorted(cells.items()):
        f1s = np.array([m.macro_f1 for m in members])
        accs = np.array([m.accuracy for m in members])
        single = len(members) == 1
        if single:
            log.warning("aggregate cell %s has a single row; std reported as 0", key)
        out[key] = {
            "count": len(members),
            "f1_mean": float(f1s.mean()),
            "f1_std": 0.0 if single else float(f1s.std(ddof=1)),
            "accuracy_mean": float(accs.mean()),
            "accuracy_std": 0.0 if single else float(accs.std(ddof=1)),
            "single_row": single,
        }
    return out


# ---------------------------------------------------------------------------
# Result persistence (resume-safe)


def _result_to_csv_row(r: RunResult) -> list[str]:
    return [
        r.method, str(r.n), str(r.seed), repr(r.macro_f1), repr(r.accuracy),
        repr(r.classwise_f1[Label.SUPPORTS]),
        repr(r.classwise_f1[Label.REFUTES]),
        repr(r.classwise_f1[Label.NOT_ENOUGH_INFO]),
    ]


def read_results(path: str | Path) -> list[RunResult]:
    path = Path(path)
    if not path.exists():
        return []
    rows: list[RunResult] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                RunResult(
                    method=rec["method"],
                    n=int(rec["n"]),
                    seed=int(rec["seed"]),
                    macro_f1=float(rec["macro_f1"]),
                    accuracy=float(rec["accuracy"]),
                    classwise_f1={
                        Label.SUPPORTS: float(rec["f1_SUPPORTS"]),
                        Label.REFUTES: float(rec["f1_REFUTES"]),
                        Label.NOT_ENOUGH_INFO: float(rec["f1_NOT_ENOUGH_INFO"]),
                    },
                )
            )
    return rows


def write_results(rows: Sequence[RunResult], path: str | Path) -> None:
    """Full rewrite in canonical (method, n, seed) order; wall times are kept
    out of this file so identical reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(rows, key=lambda r: (r.method, r.n, r.seed))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(RESULT_FIELDS) + "\n")
        for r in ordered:
            fh.write(",".join(_result_to_csv_row(r)) + "\n")


def append_result(r: RunResult, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new_file = not path.exists()
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        if new_file:
            fh.write(",".join(RESULT_FIELDS) + "\n")
        fh.write(",".join(_result_to_csv_row(r)) + "\n")
        fh.flush()


def append_timing(path: str | Path, stage: str, detail: str, seconds: float) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new_file = not path.exists()
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        if new_file:
            fh.write("stage,detail,seconds\n")
        fh.write(f"{stage},{detail},{seconds:.3f}\n")
        fh.flush()


# ---------------------------------------------------------------------------
# Experiment runner


def _run_cell(
    method: str,
    n: int,
    seed: int,
    bundle: SplitBundle,
    features: FeatureMatrix | None,
    seed_encoder: Encoder | None,
    cache: EmbeddingCache | None,
) -> RunResult:
    t0 = time.monotonic()
    sample = sample_few_shot(bundle, n, seed)
    gold = [p.label for p in bundle.test_set]
    if method == METHOD_MAPLE:
        if features is None:
            raise DataError("MAPLE needs a precomputed feature matrix")
        train_x = features.rows([p.id for p in sample.instances])
        model = fit_logistic(
            train_x, [p.label for p in sample.instances], FitConfig(seed=seed), classes=LABELS
        )
        test_x = features.rows([p.id for p in bundle.test_set])
        predictions, _ = predict_logistic(model, test_x)
    elif method == METHOD_SEED:
        if seed_encoder is None:
            raise DataError("SEED needs an encoder")
        model = fit_seed(sample.instances, seed_encoder, cache)
        predictions = predict_seed(model, bundle.test_set, seed_encoder, cache)
    else:
        raise DataError(f"unknown method {method!r}")
    per_class = classwise_f1(predictions, gold)
    return RunResult(
        method=method, n=n, seed=seed,
        macro_f1=sum(per_class.values()) / len(per_class),
        accuracy=accuracy(predictions, gold),
        classwise_f1=per_class,
        wall_time=time.monotonic() - t0,
    )


def run_experiment(
    cfg: ExperimentConfig,
    features: FeatureMatrix | None,
    bundle: SplitBundle,
    seed_encoder: Encoder | None = None,
    cache: EmbeddingCache | None = None,
    results_path: str | Path | None = None,
    timings_path: str | Path | None = None,
    workers: int = 1,
    progress: Callable[[str], None] | None = None,
) -> ResultTable:
    """Evaluate every (method, n, seed) cell on the fixed test set.

    Finished cells found in results_path are not recomputed; fresh cells are
    appended as they finish, and the file is rewritten in canonical order on
    completion so interrupted and uninterrupted runs end up identical.
    """
    existing = read_results(results_path) if results_path else []
    done = {(r.method, r.n, r.seed) for r in existing}
    todo = [
        (method, n, seed)
        for method in cfg.methods
        for n in cfg.shots
        for seed in cfg.seeds
        if (method, n, seed) not in done
    ]
    rows = list(existing)

    def work(cell: tuple[str, int, int]) -> RunResult:
        method, n, seed = cell
        return _run_cell(method, n, seed, bundle, features, seed_encoder, cache)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            computed = list(pool.map(work, todo))
    else:
        computed = [work(cell) for cell in todo]

    for result in computed:
        rows.append(result)
        if results_path:
            append_result(result, results_path)
        if timings_path:
            append_timing(
                timings_path, "experiment_cell",
                f"{result.method}:{result.n}:{result.seed}", result.wall_time,
            )
        if progress:
            progress(
                f"{result.method} n={result.n} seed={result.seed} "
                f"f1={result.macro_f1:.4f} acc={result.accuracy:.4f}"
            )

    if results_path:
        write_results(rows, results_path)
    rows.sort(key=lambda r: (r.method, r.n, r.seed))
    return ResultTable(rows=rows)


# ---------------------------------------------------------------------------
# Class-separation diagnostic


@dataclass
class SeparationReport:
    rows: list[dict]  # direction, epoch, label, kind, mean, std, count
    p_values: dict[str, float]  # e.g. "s_em:NOT_ENOUGH_INFO<SUPPORTS" -> p
    final_epoch: int
    notes: list[str] = field(default_factory=list)


def class_separation_report(
    scores: Sequence[TripleScores],
    labels: Mapping[str, Label],
    kinds: tuple[str, ...] = ("s_em", "s_cm"),
) -> SeparationReport:
    """Per-class score trajectories plus one-sided Mann-Whitney tests of
    NOT_ENOUGH_INFO sitting below each other class at the final epoch."""
    from scipy.stats import mannwhitneyu

    scored = [s for s in scores if s.instance_id in labels]
    if not scored:
        raise DataError("no scored triples with labels")
    final_epoch = max(s.epoch for s in scored)
    directions = sorted({s.direction for s in scored})
    epochs = sorted({s.epoch for s in scored})

    rows: list[dict] = []
    for direction in directions:
        for epoch in epochs:
            for lab in LABELS:
                for kind in kinds:
                    vals = [
                        getattr(s, kind)
                        for s in scored
                        if s.direction == direction
                        and s.epoch == epoch
                        and labels[s.instance_id] == lab
                    ]
                    if not vals:
                        continue
                    arr = np.array(vals)
                    rows.append({
                        "direction": direction, "epoch": epoch, "label": lab.value,
                        "kind": kind, "mean": float(arr.mean()),
                        "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                        "count": len(arr),
                    })

    notes: list[str] = []
    p_values: dict[str, float] = {}

    def final_epoch_values(lab: Label, kind: str) -> tuple[list[float], int]:
        hits = [
            s for s in scored if s.epoch == final_epoch and labels[s.instance_id] == lab
        ]
        return [getattr(s, kind) for s in hits], len({s.instance_id for s in hits})

    for kind in kinds:
        nei, nei_instances = final_epoch_values(Label.NOT_ENOUGH_INFO, kind)
        for other in (Label.SUPPORTS, Label.REFUTES):
            other_vals, other_instances = final_epoch_values(other, kind)
            key = f"{kind}:NOT_ENOUGH_INFO<{other.value}"
            if nei_instances < 2 or other_instances < 2:
                notes.append(f"{key}: skipped (class with < 2 instances)")
                continue
            p_values[key] = float(
                mannwhitneyu(nei, other_vals, alternative="less").pvalue
            )
    return SeparationReport(
        rows=rows, p_values=p_values, final_epoch=final_epoch, notes=notes
    )


def plot_separation(report: SeparationReport, path: str | Path) -> None:
    """Trajectory plot: per-class mean score (band = std) across epochs."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directions = sorted({r["direction"] for r in report.rows})
    kinds = sorted({r["kind"] for r in report.rows})
    fig, axes = plt.subplots(
        len(kinds), len(directions),
        figsize=(5.5 * len(directions), 3.5 * len(kinds)),
        squeeze=False,
    )
    for i, kind in enumerate(kinds):
        for j, direction in enumerate(directions):
            ax = axes[i][j]
            for lab in LABELS:
                series = sorted(
                    (r for r in report.rows
                     if r["kind"] == kind and r["direction"] == direction
                     and r["label"] == lab.value),
                    key=lambda r: r["epoch"],
                )
                if not series:
                    continue
                xs = [r["epoch"] for r in series]
                means = np.array([r["mean"] for r in series])
                stds = np.array([r["std"] for r in series])
                ax.plot(xs, means, marker="o", markersize=2.5, label=lab.value)
                ax.fill_between(xs, means - stds, means + stds, alpha=0.15)
            ax.set_title(f"{kind} ({direction})")
            ax.set_xlabel("epoch")
            ax.set_ylabel("score")
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_f1_vs_shots(
    aggregates: Mapping[tuple[str, int], Mapping[str, float]],
    path: str | Path,
    title: str = "",
) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    methods = sorted({m for m, _ in aggregates})
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in methods:
        cells = sorted((n, v) for (m, n), v in aggregates.items() if m == method)
        xs = [n for n, _ in cells]
        means = np.array([v["f1_mean"] for _, v in cells])
        stds = np.array([v["f1_std"] for _, v in cells])
        ax.plot(xs, means, marker="o", label=method)
        ax.fill_between(xs, means - stds, means + stds, alpha=0.15)
    ax.set_xlabel("shots per class")
    ax.set_ylabel("macro F1")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
