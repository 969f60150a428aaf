import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maple.errors import ConfigurationError
from maple.metrics import (
    BowEncoder,
    EmbeddingCache,
    HashEncoder,
    PairMetric,
    bleu,
    classic_metric,
    cosine,
    embed,
    get_encoder,
    meteor,
    resolve_metric,
    rouge_l,
    sacrebleu_sentence,
    semsim,
)
from maple._porter import stem


class CountingEncoder:
    """Stub that counts encode() calls for cache tests."""

    def __init__(self, dim=8):
        self.inner = HashEncoder(dim)
        self.name = "counting-stub"
        self.calls = 0
        self.texts_encoded = 0

    def encode(self, texts):
        self.calls += 1
        self.texts_encoded += len(texts)
        return self.inner.encode(texts)


class TestCosine:
    def test_self_identity(self):
        v = np.array([0.3, -1.2, 4.0])
        assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_hand_computed(self):
        # 1/sqrt(2)
        got = cosine(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
        assert got == pytest.approx(0.7071067811865475, abs=1e-9)

    def test_zero_norm_is_zero(self):
        assert cosine(np.zeros(3), np.array([1.0, 2.0, 3.0])) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            cosine(np.ones(2), np.ones(3))

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=8),
        st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=8),
        st.floats(1e-3, 1e3),
    )
    def test_scale_invariance(self, a, b, alpha):
        n = min(len(a), len(b))
        va, vb = np.array(a[:n]), np.array(b[:n])
        assert cosine(alpha * va, vb) == pytest.approx(cosine(va, vb), abs=1e-9)


class TestEmbed:
    def test_identical_texts_identical_vectors(self):
        enc = HashEncoder(16)
        vecs = embed(["a", "a"], enc)
        assert np.array_equal(vecs[0], vecs[1])

    def test_shapes(self):
        enc = HashEncoder(24)
        texts = [f"text {i}" for i in range(1000)]
        vecs = embed(texts, enc)
        assert vecs.shape == (1000, 24)

    def test_cache_hit_avoids_recomputation(self):
        enc = CountingEncoder()
        cache = EmbeddingCache()
        embed(["hello world"], enc, cache)
        assert enc.texts_encoded == 1
        embed(["hello world"], enc, cache)
        assert enc.texts_encoded == 1  # served from cache

    def test_within_call_deduplication(self):
        enc = CountingEncoder()
        embed(["same", "same", "same"], enc)
        assert enc.texts_encoded == 1

    def test_cache_persistence(self, tmp_path):
        enc = CountingEncoder()
        cache = EmbeddingCache(tmp_path / "emb.npz")
        first = embed(["persisted text"], enc, cache)
        cache.save()
        reloaded = EmbeddingCache(tmp_path / "emb.npz")
        again = embed(["persisted text"], CountingEncoder(), reloaded)
        assert np.array_equal(first, again)

    def test_empty_list_rejected(self):
        with pytest.raises(ConfigurationError):
            embed([], HashEncoder(4))


class TestSemSim:
    def test_self_identity(self):
        enc = HashEncoder(64)
        for text in ["", "a", "some longer sentence with words"]:
            assert semsim(text, text, enc) == pytest.approx(1.0, abs=1e-6)

    def test_symmetry_exact(self):
        enc = HashEncoder(64)
        assert semsim("left", "right", enc) == semsim("right", "left", enc)

    def test_lexical_ordering_with_bow(self):
        # paraphrase vs unrelated sentence: overlap signal must order them
        enc = BowEncoder(512)
        claim = "more than half of adults consumed an alcoholic drink in 2015"
        paraphrase = "in 2015 a majority of adults had consumed an alcoholic drink"
        unrelated = "the novelist wrote short stories about a circus animal trainer"
        assert semsim(claim, paraphrase, enc) > semsim(claim, unrelated, enc)

    def test_semantic_ordering_with_default_encoder(self):
        # same ordering under the default sentence encoder, when its weights
        # are available locally
        model_id = "sentence-transformers/all-mpnet-base-v2"
        from pathlib import Path

        from maple.metrics import resolve_model_path

        resolved = resolve_model_path(model_id)
        if not Path(resolved).exists():
            try:
                from transformers import AutoConfig

                AutoConfig.from_pretrained(resolved, local_files_only=True)
            except Exception:
                pytest.skip(f"{model_id} not available locally")
        enc = get_encoder(model_id)
        claim = "more than half of adults consumed an alcoholic drink in 2015"
        paraphrase = "in 2015 a majority of adults had consumed an alcoholic drink"
        unrelated = "the novelist wrote short stories about a circus animal trainer"
        assert semsim(claim, paraphrase, enc) > semsim(claim, unrelated, enc)

    @settings(max_examples=100, deadline=None)
    @given(st.text(max_size=40), st.text(max_size=40))
    def test_bounds(self, a, b):
        enc = HashEncoder(32)
        assert -1.0 <= semsim(a, b, enc) <= 1.0


class TestPorterStem:
    @pytest.mark.parametrize(
        "word,expected",
        [
            ("caresses", "caress"), ("ponies", "poni"), ("cats", "cat"),
            ("agreed", "agre"), ("plastered", "plaster"), ("motoring", "motor"),
            ("hopping", "hop"), ("relational", "relat"), ("conditional", "condit"),
            ("digitizer", "digit"), ("operator", "oper"), ("formalize", "formal"),
            ("electrical", "electr"), ("adjustable", "adjust"), ("running", "run"),
            ("runs", "run"), ("argument", "argument"),
        ],
    )
    def test_reference_vectors(self, word, expected):
        assert stem(word) == expected


class TestClassicMetrics:
    def test_perfect_match(self):
        assert bleu("the cat sat", "the cat sat") == 1.0
        assert rouge_l("the cat sat", "the cat sat") == 1.0

    def test_zero_overlap_bleu(self):
        assert bleu("aa bb cc", "dd ee ff") == 0.0

    def test_rouge_l_hand_computed(self):
        # LCS 3, P=1, R=3/4, F1 = 6/7
        got = rouge_l("the cat sat", "the cat sat down")
        assert got == pytest.approx(6 / 7, abs=1e-12)

    def test_bleu_hand_computed(self):
        # p1=5/6, p2=4/6, p3=3/5, p4=2/4 under add-one smoothing for n>=2
        got = bleu("the cat sat on the mat", "the cat sat on a mat")
        assert got == pytest.approx(0.6389431042462724, abs=1e-12)

    def test_empty_candidate(self):
        assert bleu("", "ref") == 0.0
        assert rouge_l("", "ref") == 0.0
        assert meteor("", "ref") == 0.0
        assert sacrebleu_sentence("", "ref") == 0.0

    def test_meteor_identical(self):
        # full match, one chunk: penalty 0.5 * (1/3)^3
        assert meteor("the cat sat", "the cat sat") == pytest.approx(1 - 0.5 / 27)

    def test_meteor_scramble_penalty(self):
        # all tokens match but in 6 chunks: penalty exactly 0.5
        got = meteor("on the mat sat the cat", "the cat sat on the mat")
        assert got == pytest.approx(0.5, abs=1e-12)

    def test_meteor_stem_stage(self):
        with_stem = meteor("the cat running", "the cat runs")
        assert with_stem > meteor("the cat leaping", "the cat runs")

    def test_meteor_synonym_stage_pluggable(self):
        synonyms = lambda w: {"feline"} if w == "cat" else set()
        base = meteor("the cat sat", "the feline sat")
        with_syn = meteor("the cat sat", "the feline sat", synonyms=synonyms)
        assert with_syn > base

    def test_sacrebleu_identity_and_range(self):
        assert sacrebleu_sentence("Good morning, world!", "Good morning, world!") == 1.0
        val = sacrebleu_sentence("the small cat", "a small dog")
        assert 0.0 <= val <= 1.0

    def test_scores_in_unit_interval(self):
        for name in ("bleu", "rouge_l", "meteor", "sacrebleu"):
            val = classic_metric(name, "the quick brown fox", "a quick red fox jumps")
            assert 0.0 <= val <= 1.0

    def test_unknown_metric_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown metric"):
            classic_metric("chrf", "a", "b")


class TestRegistry:
    def test_resolve_semsim_requires_encoder(self):
        with pytest.raises(ConfigurationError):
            resolve_metric("semsim")

    def test_resolve_binds_encoder(self):
        metric = resolve_metric("semsim", encoder=HashEncoder(16))
        assert isinstance(metric, PairMetric)
        assert metric("x", "x") == pytest.approx(1.0, abs=1e-6)

    def test_resolve_classic(self):
        metric = resolve_metric("rouge_l")
        assert metric("a b", "a b") == 1.0

    def test_unknown_name_aborts(self):
        with pytest.raises(ConfigurationError):
            resolve_metric("unknown-metric")

    def test_external_adapters_need_registration(self):
        metric = resolve_metric("bleurt")
        with pytest.raises(ConfigurationError, match="adapter"):
            metric("a", "b")

    def test_stub_encoder_ids(self):
        assert get_encoder("stub-hash:16").encode(["x"]).shape == (1, 16)
        assert get_encoder("stub-bow:32").encode(["x"]).shape == (1, 32)
        assert get_encoder("stub-hash").dim == 384
