"""Command-line pipeline: prepare -> evolve -> transform -> run -> report.

Stages are separated so the expensive ones (seq2seq training and scoring over
the whole pool) amortize across every few-shot experiment. Each command
resolves its configuration from an optional YAML file plus flag overrides,
echoes the resolved config into the work directory, and prints its hash.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 backend/model
error.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import corpus, evolve, features, harness, metrics
from .errors import BackendError, ConfigurationError, DataError

log = logging.getLogger("maple")

DEFAULT_ENCODER = "sentence-transformers/all-mpnet-base-v2"
DEFAULT_SEED_ENCODER = "sentence-transformers/bert-base-nli-mean-tokens"


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    import yaml

    p = Path(path)
    if not p.exists():
        raise click.UsageError(f"config file not found: {path}")
    with open(p, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise click.UsageError(f"config file {path} must hold a mapping")
    return data


def _pick(flag, file_cfg: dict, key: str, default):
    """Flags override file values; file values override defaults."""
    if flag is not None:
        return flag
    if key in file_cfg:
        return file_cfg[key]
    return default


def _echo_config(workdir: Path, command: str, resolved: dict) -> str:
    workdir.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(resolved, sort_keys=True, default=str)
    digest = hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
    out = workdir / f"config_{command}.json"
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    click.echo(f"[{command}] config hash {digest}")
    return digest


def _parse_seeds(spec: str) -> tuple[int, ...]:
    spec = str(spec)
    if ":" in spec:
        lo, hi = spec.split(":", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(s) for s in spec.split(","))


def _parse_ints(spec: str) -> tuple[int, ...]:
    return tuple(int(s) for s in str(spec).split(","))


def _evolve_config(file_cfg: dict, **flags) -> evolve.EvolveConfig:
    section = dict(file_cfg.get("evolve", {}))
    kwargs = {}
    for name in (
        "epochs", "include_epoch_zero", "learning_rate", "batch_size", "max_length",
        "adapter", "lora_dropout", "lora_alpha", "lora_rank", "prompt",
        "base_model_id", "max_new_tokens", "train_seed",
    ):
        value = _pick(flags.get(name), section, name, None)
        if value is not None:
            kwargs[name] = value
    return evolve.EvolveConfig(**kwargs)


def _load_bundle(workdir: Path) -> corpus.SplitBundle:
    pool_path = workdir / "pool.jsonl"
    test_path = workdir / "test.jsonl"
    if not pool_path.exists() or not test_path.exists():
        raise DataError(
            f"no prepared split in {workdir}; run `maple prepare` first"
        )
    return corpus.SplitBundle(
        train_pool=corpus.load_dataset(pool_path),
        test_set=corpus.load_dataset(test_path),
    )


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging.")
def cli(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command()
@click.option("--config", "config_path", type=str, default=None)
@click.option("--pairs", "pairs_path", type=str, default=None, help="JSONL pair file.")
@click.option("--dataset", type=str, default=None)
@click.option("--workdir", type=str, default=None)
@click.option("--test-per-class", type=int, default=None)
@click.option("--split-seed", type=int, default=None)
def prepare(config_path, pairs_path, dataset, workdir, test_per_class, split_seed):
    """Reserve the balanced test set; write pool, test, and split manifest."""
    file_cfg = _load_config_file(config_path)
    pairs_path = _pick(pairs_path, file_cfg, "pairs_file", None)
    dataset = _pick(dataset, file_cfg, "dataset", None)
    workdir = Path(_pick(workdir, file_cfg, "workdir", None) or "runs")
    test_per_class = _pick(test_per_class, file_cfg, "test_per_class", 150)
    split_seed = _pick(split_seed, file_cfg, "split_seed", 42)
    if not pairs_path:
        raise click.UsageError("--pairs (or pairs_file in the config) is required")
    if not dataset:
        raise click.UsageError("--dataset is required")

    cfg = corpus.DatasetConfig(name=dataset, test_per_class=test_per_class, split_seed=split_seed)
    _echo_config(workdir, "prepare", {
        "pairs_file": str(pairs_path), "dataset": dataset,
        "test_per_class": test_per_class, "split_seed": split_seed,
    })
    pairs = corpus.load_dataset(pairs_path, dataset)
    bundle = corpus.build_splits(pairs, cfg)
    corpus.save_pairs(bundle.train_pool, workdir / "pool.jsonl")
    corpus.save_pairs(bundle.test_set, workdir / "test.jsonl")
    corpus.save_split_manifest(bundle, cfg, workdir / "split_manifest.json")
    click.echo(
        f"[prepare] {dataset}: pool {len(bundle.train_pool)}, test {len(bundle.test_set)}"
    )


@cli.command(name="evolve")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--workdir", type=str, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--epoch-zero/--no-epoch-zero", "include_epoch_zero", default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--max-length", type=int, default=None)
@click.option("--adapter", type=click.Choice(["lora", "sft"]), default=None)
@click.option("--lora-rank", type=int, default=None)
@click.option("--lora-alpha", type=float, default=None)
@click.option("--lora-dropout", type=float, default=None)
@click.option("--prompt", type=str, default=None)
@click.option("--base-model", "base_model_id", type=str, default=None)
@click.option("--max-new-tokens", type=int, default=None)
@click.option("--train-seed", type=int, default=None)
@click.option("--include-test/--no-include-test", "include_test", default=None,
              help="Also generate mutations for the reserved test set (default on).")
def evolve_cmd(config_path, workdir, include_test, **flags):
    """Fine-tune both directions, snapshotting mutations every epoch."""
    file_cfg = _load_config_file(config_path)
    workdir = Path(_pick(workdir, file_cfg, "workdir", None) or "runs")
    include_test = _pick(include_test, file_cfg, "include_test", True)
    cfg = _evolve_config(file_cfg, **flags)
    _echo_config(workdir, "evolve", {"include_test": include_test, **asdict(cfg)})

    bundle = _load_bundle(workdir)
    eval_pairs = bundle.train_pool + (bundle.test_set if include_test else [])
    store = evolve.MutationStore(workdir / "mutations.jsonl")
    timings = workdir / "timings.csv"

    def sink(event: dict) -> None:
        if event.get("stage") == "train_epoch":
            log.info(
                "%s epoch %d loss %.4f (%.1fs)",
                event["direction"], event["epoch"], event["loss"], event["seconds"],
            )
            harness.append_timing(
                timings, "train_epoch", f"{event['direction']}:{event['epoch']}",
                event["seconds"],
            )
        elif event.get("stage") == "snapshot":
            harness.append_timing(
                timings, "snapshot", f"{event['direction']}:{event['epoch']}",
                event["seconds"],
            )

    t0 = time.monotonic()
    triple_set = evolve.run_evolution(
        bundle.train_pool, cfg,
        eval_pairs=eval_pairs, store=store,
        checkpoint_dir=workdir / "checkpoints", progress_sink=sink,
    )
    harness.append_timing(timings, "evolve_total", "both_directions", time.monotonic() - t0)
    click.echo(f"[evolve] {len(triple_set.triples)} triples recorded")


@cli.command()
@click.option("--config", "config_path", type=str, default=None)
@click.option("--workdir", type=str, default=None)
@click.option("--metric", type=str, default=None)
@click.option("--encoder", "encoder_id", type=str, default=None)
def transform(config_path, workdir, metric, encoder_id):
    """Score every triple and assemble the per-instance feature matrix."""
    file_cfg = _load_config_file(config_path)
    workdir = Path(_pick(workdir, file_cfg, "workdir", None) or "runs")
    metric_name = _pick(metric, file_cfg, "metric", "semsim")
    encoder_id = _pick(encoder_id, file_cfg, "encoder", DEFAULT_ENCODER)
    _echo_config(workdir, "transform", {"metric": metric_name, "encoder": encoder_id})

    store = evolve.MutationStore(workdir / "mutations.jsonl")
    provenance = store.read_provenance()
    if provenance is None:
        raise DataError(f"no mutation store in {workdir}; run `maple evolve` first")
    ecfg = evolve.EvolveConfig(**provenance["config"])
    mutations = store.read()
    if not mutations:
        raise DataError(f"mutation store {store.path} is empty")

    bundle = _load_bundle(workdir)
    by_id = bundle.by_id()
    eval_ids = {m.instance_id for m in mutations}
    eval_pairs = [p for pid, p in by_id.items() if pid in eval_ids]

    cache = None
    encoder = None
    if metric_name == "semsim":
        encoder = metrics.get_encoder(encoder_id)
        cache = metrics.EmbeddingCache(workdir / "embeddings.npz")
    pair_metric = metrics.resolve_metric(metric_name, encoder=encoder, cache=cache)

    t0 = time.monotonic()
    triple_set = evolve.join_triples(mutations, eval_pairs, ecfg, provenance)
    scores = features.score_triples(triple_set, pair_metric)
    fm = features.assemble(scores, ecfg, meta={
        "metric": metric_name,
        "encoder": encoder_id if metric_name == "semsim" else None,
        "evolve_config_hash": provenance["config_hash"],
    })
    features.save_features(fm, workdir / "features.csv")
    if cache is not None:
        cache.save()
    harness.append_timing(
        workdir / "timings.csv", "transform", metric_name, time.monotonic() - t0
    )
    click.echo(
        f"[transform] features {fm.values.shape[0]} x {fm.values.shape[1]} -> "
        f"{workdir / 'features.csv'}"
    )


@cli.command()
@click.option("--config", "config_path", type=str, default=None)
@click.option("--workdir", type=str, default=None)
@click.option("--methods", type=str, default=None, help="Comma list: maple,seed")
@click.option("--shots", type=str, default=None, help="Comma list, e.g. 1,2,3,4,5")
@click.option("--seeds", type=str, default=None, help="Range lo:hi or comma list.")
@click.option("--seed-encoder", "seed_encoder_id", type=str, default=None)
@click.option("--workers", type=int, default=None)
def run(config_path, workdir, methods, shots, seeds, seed_encoder_id, workers):
    """Run the few-shot experiment matrix against the cached features."""
    file_cfg = _load_config_file(config_path)
    workdir = Path(_pick(workdir, file_cfg, "workdir", None) or "runs")
    methods_val = _pick(methods, file_cfg, "methods", "maple,seed")
    if isinstance(methods_val, (list, tuple)):
        methods = tuple(methods_val)
    else:
        methods = tuple(str(methods_val).replace(" ", "").split(","))
    shots_val = _pick(shots, file_cfg, "shots", "1,2,3,4,5")
    shots_t = tuple(shots_val) if isinstance(shots_val, (list, tuple)) else _parse_ints(shots_val)
    seeds_val = _pick(seeds, file_cfg, "seeds", "123:222")
    seeds_t = tuple(seeds_val) if isinstance(seeds_val, (list, tuple)) else _parse_seeds(seeds_val)
    seed_encoder_id = _pick(seed_encoder_id, file_cfg, "seed_encoder", DEFAULT_SEED_ENCODER)
    workers = _pick(workers, file_cfg, "workers", 1)

    feats_path = workdir / "features.csv"
    if not feats_path.exists():
        raise DataError(
            f"feature store {feats_path} not found; run `maple transform` first"
        )
    fm = features.load_features(feats_path)
    bundle = _load_bundle(workdir)

    cfg = harness.ExperimentConfig(
        dataset=str(file_cfg.get("dataset", workdir.name)),
        methods=methods, shots=shots_t, seeds=seeds_t,
        seed_encoder_id=seed_encoder_id, output_dir=str(workdir),
    )
    _echo_config(workdir, "run", {
        "methods": list(methods), "shots": list(shots_t),
        "seeds": list(seeds_t), "seed_encoder": seed_encoder_id,
        "workers": workers,
    })

    seed_encoder = None
    cache = None
    if harness.METHOD_SEED in methods:
        seed_encoder = metrics.get_encoder(seed_encoder_id)
        cache = metrics.EmbeddingCache(workdir / "embeddings_seed.npz")

    table = harness.run_experiment(
        cfg, fm, bundle,
        seed_encoder=seed_encoder, cache=cache,
        results_path=workdir / "results.csv",
        timings_path=workdir / "timings.csv",
        workers=workers,
        progress=lambda line: log.info("%s", line),
    )
    if cache is not None:
        cache.save()
    click.echo(f"[run] {len(table.rows)} results -> {workdir / 'results.csv'}")


@cli.command()
@click.option("--config", "config_path", type=str, default=None)
@click.option("--workdir", type=str, default=None)
def report(config_path, workdir):
    """Aggregate results; emit tables and figures."""
    file_cfg = _load_config_file(config_path)
    workdir = Path(_pick(workdir, file_cfg, "workdir", None) or "runs")
    results_path = workdir / "results.csv"
    rows = harness.read_results(results_path)
    if not rows:
        raise DataError(f"no results in {results_path}; run `maple run` first")
    _echo_config(workdir, "report", {"results": str(results_path), "rows": len(rows)})

    aggregates = harness.aggregate(rows)
    agg_json = {
        f"{method}:{n}": stats for (method, n), stats in sorted(aggregates.items())
    }
    with open(workdir / "aggregates.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(agg_json, fh, indent=2, sort_keys=True)
        fh.write("\n")

    # classwise mean/std per (method, n), mirroring the runtime logs' shape
    classwise_rows = []
    for (method, n) in sorted({(r.method, r.n) for r in rows}):
        members = [r for r in rows if r.method == method and r.n == n]
        entry = {"method": method, "n": n}
        for lab in corpus.LABELS:
            vals = [m.classwise_f1[lab] for m in members]
            entry[f"f1_{lab.value}_mean"] = float(sum(vals) / len(vals))
            entry[f"f1_{lab.value}_std"] = (
                float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            )
        classwise_rows.append(entry)
    with open(workdir / "classwise.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(classwise_rows, fh, indent=2)
        fh.write("\n")

    harness.plot_f1_vs_shots(
        aggregates, workdir / "plots" / "f1_vs_shots.png", title=workdir.name
    )

    # class-separation diagnostic, when the feature store and labels exist
    feats_path = workdir / "features.csv"
    test_path = workdir / "test.jsonl"
    if feats_path.exists() and test_path.exists():
        fm = features.load_features(feats_path)
        test_pairs = corpus.load_dataset(test_path)
        labels = {p.id: p.label for p in test_pairs if p.label is not None}
        scored = scores_from_features(fm, set(labels))
        if scored:
            sep = harness.class_separation_report(scored, labels)
            with open(workdir / "separation.json", "w", encoding="utf-8", newline="\n") as fh:
                json.dump(
                    {"p_values": sep.p_values, "final_epoch": sep.final_epoch,
                     "notes": sep.notes, "rows": sep.rows},
                    fh, indent=2,
                )
                fh.write("\n")
            harness.plot_separation(sep, workdir / "plots" / "separation.png")

    for (method, n), stats in sorted(aggregates.items()):
        click.echo(
            f"[report] {method} {n}-shot: F1 {stats['f1_mean']:.4f} "
            f"+/- {stats['f1_std']:.4f} acc {stats['accuracy_mean']:.4f} "
            f"+/- {stats['accuracy_std']:.4f} ({stats['count']} runs)"
        )


def scores_from_features(fm: features.FeatureMatrix, instance_ids: set[str]):
    """Rebuild per-triple scores from a feature matrix (inverse of assemble)."""
    out = []
    parsed = []
    for c, desc in enumerate(fm.columns):
        direction, epoch, kind = desc.split(":")
        parsed.append((c, direction, int(epoch), kind))
    for r, iid in enumerate(fm.instance_ids):
        if iid not in instance_ids:
            continue
        cells: dict[tuple[str, int], dict[str, float]] = {}
        for c, direction, epoch, kind in parsed:
            cells.setdefault((direction, epoch), {})[kind] = float(fm.values[r, c])
        for (direction, epoch), kinds in cells.items():
            out.append(
                features.TripleScores(
                    instance_id=iid, direction=direction, epoch=epoch,
                    s_ce=kinds["s_ce"], s_cm=kinds["s_cm"], s_em=kinds["s_em"],
                )
            )
    return out


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        return 1
    except ConfigurationError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except DataError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except BackendError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
