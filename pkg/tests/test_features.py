import random

import numpy as np
import pytest

from maple.errors import DataError
from maple.evolve import C2E, E2C, Triple
from maple.features import (
    FeatureMatrix,
    TripleScores,
    assemble,
    column_descriptors,
    load_features,
    save_features,
    score_triples,
)
from maple.metrics import HashEncoder, PairMetric, resolve_metric

from conftest import tiny_evolve_config


def make_triples(n_instances=2, epochs=3, include_zero=False):
    cfg = tiny_evolve_config(epochs=epochs, include_epoch_zero=include_zero)
    triples = []
    for i in range(n_instances):
        for d in (C2E, E2C):
            for e in cfg.checkpoint_epochs:
                triples.append(
                    Triple(
                        instance_id=f"i{i}", direction=d, epoch=e,
                        claim=f"claim text {i}", evidence=f"evidence text {i}",
                        mutation=f"mutation {i} {d} {e}",
                    )
                )
    return triples, cfg


class TestScoreTriples:
    def test_identical_mutation_and_evidence(self):
        metric = resolve_metric("semsim", encoder=HashEncoder(64))
        t = Triple("a", C2E, 1, "some claim", "the evidence", "the evidence")
        (scores,) = score_triples([t], metric)
        assert scores.s_em == pytest.approx(1.0, abs=1e-6)

    def test_s_ce_constant_across_epochs(self):
        triples, _ = make_triples(n_instances=1, epochs=4)
        metric = resolve_metric("semsim", encoder=HashEncoder(64))
        scores = score_triples(triples, metric)
        c2e = [s.s_ce for s in scores if s.direction == C2E]
        assert len(set(c2e)) == 1

    def test_counts(self):
        triples, _ = make_triples(n_instances=2, epochs=3)
        metric = resolve_metric("rouge_l")
        scores = score_triples(triples, metric)
        assert len(scores) == 12
        assert sum(3 for _ in scores) == 36  # 3 scalars per record

    def test_metric_failure_aborts_with_count(self):
        triples, _ = make_triples(n_instances=1, epochs=2)

        def flaky(a, b):
            raise RuntimeError("boom")

        with pytest.raises(DataError, match="failed on 4 of 4"):
            score_triples(triples, PairMetric("flaky", flaky))


class TestAssemble:
    def _scores(self, triples, metric=None):
        metric = metric or resolve_metric("semsim", encoder=HashEncoder(32))
        return score_triples(triples, metric)

    def test_default_config_has_126_columns(self):
        cfg = tiny_evolve_config(epochs=20, include_epoch_zero=True)
        assert len(column_descriptors(cfg)) == 2 * 21 * 3 == 126

    def test_minimal_matrix(self):
        triples, cfg = make_triples(n_instances=1, epochs=1)
        fm = assemble(self._scores(triples), cfg)
        assert fm.values.shape == (1, 6)

    def test_column_order_direction_major(self):
        triples, cfg = make_triples(n_instances=1, epochs=2, include_zero=True)
        fm = assemble(self._scores(triples), cfg)
        assert fm.columns[:6] == [
            "c2e:0:s_ce", "c2e:0:s_cm", "c2e:0:s_em",
            "c2e:1:s_ce", "c2e:1:s_cm", "c2e:1:s_em",
        ]
        assert fm.columns[9:12] == ["e2c:0:s_ce", "e2c:0:s_cm", "e2c:0:s_em"]

    def test_permutation_invariance(self):
        triples, cfg = make_triples(n_instances=3, epochs=2)
        scores = self._scores(triples)
        fm1 = assemble(scores, cfg)
        shuffled = list(scores)
        random.Random(4).shuffle(shuffled)
        fm2 = assemble(shuffled, cfg)
        assert fm1.instance_ids == fm2.instance_ids
        assert np.array_equal(fm1.values, fm2.values)

    def test_missing_cell_listed(self):
        triples, cfg = make_triples(n_instances=2, epochs=2)
        scores = self._scores(triples)[:-1]
        with pytest.raises(DataError, match="missing 1"):
            assemble(scores, cfg)

    def test_nan_aborts(self):
        triples, cfg = make_triples(n_instances=1, epochs=1)
        scores = [
            TripleScores(s.instance_id, s.direction, s.epoch, float("nan"), s.s_cm, s.s_em)
            for s in self._scores(triples)
        ]
        with pytest.raises(DataError, match="non-finite"):
            assemble(scores, cfg)

    def test_semsim_entries_bounded(self):
        triples, cfg = make_triples(n_instances=4, epochs=3)
        fm = assemble(self._scores(triples), cfg)
        assert np.all(fm.values >= -1.0) and np.all(fm.values <= 1.0)

    def test_row_lookup_total(self):
        triples, cfg = make_triples(n_instances=3, epochs=1)
        fm = assemble(self._scores(triples), cfg)
        for iid in ("i0", "i1", "i2"):
            assert fm.row(iid).shape == (6,)
        with pytest.raises(DataError):
            fm.row("missing")

    def test_standardize_flag(self):
        triples, cfg = make_triples(n_instances=5, epochs=2)
        fm = assemble(self._scores(triples), cfg, standardize=True)
        varying = fm.values.std(axis=0) > 0
        means = fm.values.mean(axis=0)
        assert np.allclose(means[varying], 0.0, atol=1e-12)


class TestPersistence:
    def test_roundtrip_bit_exact(self, tmp_path):
        triples, cfg = make_triples(n_instances=3, epochs=2)
        metric = resolve_metric("semsim", encoder=HashEncoder(48))
        fm = assemble(score_triples(triples, metric), cfg, meta={"metric": "semsim"})
        path = tmp_path / "features.csv"
        save_features(fm, path)
        loaded = load_features(path)
        assert loaded.instance_ids == fm.instance_ids
        assert loaded.columns == fm.columns
        assert np.array_equal(loaded.values, fm.values)  # bit-exact
        assert loaded.meta == {"metric": "semsim"}

    def test_save_deterministic_bytes(self, tmp_path):
        triples, cfg = make_triples(n_instances=2, epochs=2)
        metric = resolve_metric("semsim", encoder=HashEncoder(48))
        fm = assemble(score_triples(triples, metric), cfg)
        save_features(fm, tmp_path / "a.csv")
        save_features(fm, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_load_missing(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_features(tmp_path / "nope.csv")

    def test_load_rejects_foreign_csv(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(DataError, match="not a feature store"):
            load_features(path)
