import json

import pytest

from maple import harness
from maple.cli import main
from maple.corpus import Label, LABELS, load_dataset, save_pairs
from maple.evolve import MutationStore
from maple.features import load_features
from maple.harness import RunResult, write_results

from conftest import make_toy_pool, save_tiny_backend


@pytest.fixture(scope="module")
def tiny_model_dir(tmp_path_factory):
    return save_tiny_backend(tmp_path_factory.mktemp("tiny_model"))


@pytest.fixture
def pairs_file(tmp_path):
    path = tmp_path / "toy_pairs.jsonl"
    save_pairs(make_toy_pool(n_per_class=10), path)
    return path


def evolve_args(workdir, model_dir, extra=()):
    return [
        "evolve", "--workdir", str(workdir), "--base-model", model_dir,
        "--epochs", "1", "--batch-size", "8", "--max-length", "32",
        "--max-new-tokens", "8", "--lora-rank", "2", "--lora-alpha", "4",
        "--prompt", "summarize:", *extra,
    ]


class TestPrepare:
    def test_prepare_writes_split(self, tmp_path, pairs_file):
        workdir = tmp_path / "w"
        code = main([
            "prepare", "--pairs", str(pairs_file), "--dataset", "toy",
            "--workdir", str(workdir), "--test-per-class", "2",
        ])
        assert code == 0
        manifest = json.loads((workdir / "split_manifest.json").read_text())
        assert len(manifest["test_ids"]) == 6
        assert len(load_dataset(workdir / "pool.jsonl")) == 24

    def test_prepare_idempotent(self, tmp_path, pairs_file):
        workdir = tmp_path / "w"
        args = [
            "prepare", "--pairs", str(pairs_file), "--dataset", "toy",
            "--workdir", str(workdir), "--test-per-class", "2",
        ]
        assert main(args) == 0
        first = (workdir / "split_manifest.json").read_bytes()
        pool_first = (workdir / "pool.jsonl").read_bytes()
        assert main(args) == 0
        assert (workdir / "split_manifest.json").read_bytes() == first
        assert (workdir / "pool.jsonl").read_bytes() == pool_first

    def test_missing_input_names_path(self, tmp_path, capsys):
        code = main([
            "prepare", "--pairs", str(tmp_path
/ "absent.jsonl"), "--dataset", "toy",
            "--workdir", str(tmp_path / "w"),
        ])
        assert code == 2
        assert "absent.jsonl" in capsys.readouterr().err

    def test_usage_error_exit_code(self):
        assert main(["prepare", "--workdir", "/tmp/x"]) == 1

    def test_config_hash_echoed(self, tmp_path, pairs_file, capsys):
        main([
            "prepare", "--pairs", str(pairs_file), "--dataset", "toy",
            "--workdir", str(tmp_path / "w"), "--test-per-class", "2",
        ])
        assert "config hash" in capsys.readouterr().out


class TestEvolveTransform:
    def _prepared(self, tmp_path, per_class=4, test_per_class=1):
        workdir = tmp_path / "w"
        workdir.mkdir()
        pool = make_toy_pool(n_per_class=per_class, prefix="pool")
        test = make_toy_pool(n_per_class=test_per_class, seed=21, prefix="test")
        save_pairs(pool, workdir / "pool.jsonl")
        save_pairs(test, workdir / "test.jsonl")
        return workdir, pool, test

    def test_two_pair_pool_four_mutations(self, tmp_path, tiny_model_dir):
        workdir = tmp_path / "w"
        workdir.mkdir()
        pool = make_toy_pool(n_per_class=1)[:2]
        save_pairs(pool, workdir / "pool.jsonl")
        save_pairs(make_toy_pool(n_per_class=1, seed=9, prefix="t"), workdir / "test.jsonl")
        code = main(evolve_args(workdir, tiny_model_dir,
                                ["--no-epoch-zero", "--no-include-test"]))
        assert code == 0
        assert len(MutationStore(workdir / "mutations.jsonl").read()) == 4

    def test_full_stage_chain(self, tmp_path, tiny_model_dir):
        workdir, pool, test = self._prepared(tmp_path)
        assert main(evolve_args(workdir, tiny_model_dir)) == 0
        # 2 directions x (12 pool + 3 test) x 2 checkpoints (epoch 0 and 1)
        assert len(MutationStore(workdir / "mutations.jsonl").read()) == 60

        assert main([
            "transform", "--workdir", str(workdir),
            "--metric", "semsim", "--encoder", "stub-hash:32",
        ]) == 0
        fm = load_features(workdir / "features.csv")
        assert fm.values.shape == (15, 12)  # 2 dirs * 2 checkpoints * 3 kinds

        assert main([
            "run", "--workdir", str(workdir), "--methods", "maple,seed",
            "--shots", "1,2", "--seeds", "123:125",
            "--seed-encoder", "stub-hash:32",
        ]) == 0
        rows = harness.read_results(workdir / "results.csv")
        assert len(rows) == 2 * 2 * 3

        assert main(["report", "--workdir", str(workdir)]) == 0
        aggregates = json.loads((workdir / "aggregates.json").read_text())
        assert len(aggregates) == 4
        assert (workdir / "plots" / "f1_vs_shots.png").exists()
        assert (workdir / "separation.json").exists()

    def test_evolve_resume_skips_completed(self, tmp_path, tiny_model_dir):
        workdir, _, _ = self._prepared(tmp_path)
        assert main(evolve_args(workdir, tiny_model_dir)) == 0
        first = MutationStore(workdir / "mutations.jsonl").read()
        # re-running with identical config leaves the store unchanged
        assert main(evolve_args(workdir, tiny_model_dir)) == 0
        assert MutationStore(workdir / "mutations.jsonl").read() == first

    def test_transform_without_evolve(self, tmp_path, capsys):
        workdir, _, _ = self._prepared(tmp_path)
        code = main(["transform", "--workdir", str(workdir)])
        assert code == 2
        assert "maple evolve" in capsys.readouterr().err

    def test_run_without_transform(self, tmp_path, capsys):
        workdir, _, _ = self._prepared(tmp_path)
        code = main(["run", "--workdir", str(workdir)])
        assert code == 2
        assert "maple transform" in capsys.readouterr().err

    def test_unknown_base_model_is_backend_error(self, tmp_path):
        workdir, _, _ = self._prepared(tmp_path)
        code = main(["evolve", "--workdir", str(workdir), "--base-model",
                     str(tmp_path / "no_such_model")])
        assert code == 3

    def test_config_file_with_flag_override(self, tmp_path, tiny_model_dir):
        import yaml

        workdir, _, _ = self._prepared(tmp_path)
        cfg_path = tmp_path / "cfg.yaml"
        cfg_path.write_text(yaml.safe_dump({
            "workdir": str(workdir),
            "evolve": {
                "epochs": 3, "batch_size": 8, "max_length": 32,
                "max_new_tokens": 8, "lora_rank": 2, "lora_alpha": 4,
                "prompt": "summarize:", "base_model_id": tiny_model_dir,
                "include_epoch_zero": False,
            },
        }))
        assert main(["evolve", "--config", str(cfg_path), "--epochs", "1"]) == 0
        echoed = json.loads((workdir / "config_evolve.json").read_text())
        assert echoed["epochs"] == 1  # flag beats file
        assert echoed["base_model_id"] == tiny_model_dir


class TestReport:
    def test_thousand_rows_ten_cells(self, tmp_path):
        workdir = tmp_path / "w"
        rows = [
            RunResult(method, n, seed, 0.5, 0.5, {lab: 0.5 for lab in LABELS})
            for method in ("maple", "seed")
            for n in (1, 2, 3, 4, 5)
            for seed in range(123, 223)
        ]
        assert len(rows) == 1000
        write_results(rows, workdir / "results.csv")
        assert main(["report", "--workdir", str(workdir)]) == 0
        aggregates = json.loads((workdir / "aggregates.json").read_text())
        assert len(aggregates) == 10
        assert all(v["count"] == 100 for v in aggregates.values())

    def test_empty_results_dir(self, tmp_path):
        assert main(["report", "--workdir", str(tmp_path / "empty")]) == 2

    def test_aggregates_match_hand_recomputation(self, tmp_path):
        import numpy as np

        workdir = tmp_path / "w"
        rng = np.random.default_rng(5)
        f1s = rng.uniform(0.3, 0.7, size=20)
        rows = [
            RunResult("maple", 1, 123 + i, float(f1), float(f1), {lab: 0.5 for lab in LABELS})
            for i, f1 in enumerate(f1s)
        ]
        write_results(rows, workdir / "results.csv")
        assert main(["report", "--workdir", str(workdir)]) == 0
        aggregates = json.loads((workdir / "aggregates.json").read_text())
        cell = aggregates["maple:1"]
        assert cell["f1_mean"] == pytest.approx(float(np.mean(f1s)), abs=1e-12)
        assert cell["f1_std"] == pytest.approx(float(np.std(f1s, ddof=1)), abs=1e-12)
