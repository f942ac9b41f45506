"""Literal-pool indexing, sampling, averaging, and the fallback path."""

from pathlib import Path

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from basicmip.basic_index import (
    AVERAGED_POOL,
    FALLBACK_DECONTEXTUALIZED,
    BasicEmbeddingResult,
    BasicIndex,
    EmbeddingCache,
    basic_embedding,
    build_basic_index,
    sample_pool,
)
from basicmip.corpus import AnnotatedInstance, Corpus, SubwordAlignment, load_corpus
from basicmip.encoder import ToyEncoder, contextual_target_embedding
from basicmip.errors import ConfigurationError, TruncationError, ValidationError
from basicmip.keying import get_key_policy, lemma_key, register_key_policy
from basicmip.manifest import fingerprint_instances

DATA = Path(__file__).parent / "data"


def _inst(sid, word, label, split="train", prefix=("we", "saw", "the")):
    tokens = prefix + (word,)
    return AnnotatedInstance(sid, tokens, len(tokens) - 1, label, split)


def _pool_corpus(word: str, n: int, start: int = 0) -> Corpus:
    return Corpus(tuple(_inst(f"s{start + i}", word, 0) for i in range(n)))


class TestBuildIndex:
    def test_fixture_pools_follow_labels(self):
        corpus = load_corpus(DATA / "vua_sample.tsv", "vua_shared_task", split="train")
        index = build_basic_index(corpus)
        assert len(index.pool("attacked")) == 2
        assert [ref[0] for ref in index.pool("attacked")] == ["kbw-fragment04", "clw-fragment11"]
        assert not index.has_pool("point")
        assert index.has_pool("fortress")
        assert index.corpus_fingerprint == fingerprint_instances(corpus)

    def test_all_metaphor_corpus_gives_empty_pools(self):
        corpus = Corpus((_inst("s0", "devoured", 1), _inst("s1", "devoured", 1)))
        index = build_basic_index(corpus)
        assert index.pools == {}
        assert sample_pool(index, "devoured", 3, seed=0) == []

    def test_non_train_instances_rejected(self):
        corpus = Corpus((_inst("s0", "cut", 0, split="dev"),))
        with pytest.raises(ValidationError, match="train split only"):
            build_basic_index(corpus)

    def test_surface_keying_lowercases(self):
        corpus = Corpus((_inst("s0", "Cut", 0), _inst("s1", "cut", 0)))
        index = build_basic_index(corpus)
        assert len(index.pool("cut")) == 2
        assert index.key_for("CUT") == "cut"

    def test_lemma_keying_merges_inflections(self):
        corpus = Corpus((_inst("s0", "running", 0), _inst("s1", "runs", 0)))
        index = build_basic_index(corpus, key_policy="lemma")
        assert len(index.pool("run")) == 2

    def test_pools_preserve_corpus_order(self):
        corpus = Corpus(tuple(_inst(f"s{i}", "cut", 0) for i in range(4)))
        index = build_basic_index(corpus)
        assert [ref[0] for ref in index.pool("cut")] == ["s0", "s1", "s2", "s3"]


class TestSamplePool:
    def test_pool_smaller_than_k_returned_whole(self):
        index = build_basic_index(_pool_corpus("cut", 2))
        assert sample_pool(index, "cut", 5, seed=0) == [("s0", 3), ("s1", 3)]

    def test_absent_key_yields_empty(self):
        index = build_basic_index(_pool_corpus("cut", 2))
        assert sample_pool(index, "press", 3, seed=0) == []

    def test_k_below_one_rejected(self):
        index = build_basic_index(_pool_corpus("cut", 2))
        with pytest.raises(ValidationError, match=">= 1"):
            sample_pool(index, "cut", 0, seed=0)

    def test_golden_subsets_frozen(self):
        # pinned generator: random.Random(f"{seed}:{key}").sample(range(5), 3)
        index = build_basic_index(_pool_corpus("cut", 5))
        got42 = sample_pool(index, "cut", 3, seed=42)
        assert got42 == [("s0", 3), ("s1", 3), ("s4", 3)]
        got7 = sample_pool(index, "cut", 3, seed=7)
        assert got7 == [("s1", 3), ("s3", 3), ("s4", 3)]
        assert sample_pool(index, "cut", 3, seed=42) == got42

    @given(
        pool_size=st.integers(min_value=1, max_value=9),
        k=st.integers(min_value=1, max_value=9),
        seed=st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=60, deadline=None)
    def test_sample_is_ordered_subset_without_replacement(self, pool_size, k, seed):
        index = build_basic_index(_pool_corpus("cut", pool_size))
        refs = sample_pool(index, "cut", k, seed)
        assert len(refs) == min(k, pool_size)
        assert len(set(refs)) == len(refs)
        pool = list(index.pool("cut"))
        positions = [pool.index(r) for r in refs]
        assert positions == sorted(positions)
        assert sample_pool(index, "cut", k, seed) == refs


class TestBasicEmbedding:
    def test_single_instance_pool_equals_its_hidden_state(self):
        corpus = _pool_corpus("cut", 1)
        index = build_basic_index(corpus)
        enc = ToyEncoder(seed=3)
        result = basic_embedding(index, "cut", enc, k=5, seed=0)
        assert result.source == AVERAGED_POOL
        assert result.pool_size_used == 1
        inst = corpus.instances[0]
        encoded = enc.encode(inst.tokens)
        expected = contextual_target_embedding(
            encoded, SubwordAlignment(inst.target_index, 4, 5)
        )
        assert torch.equal(result.vector, expected.detach())

    def test_two_instance_pool_is_componentwise_mean(self):
        corpus = Corpus(
            (
                _inst("s0", "cut", 0, prefix=("she", "made", "a")),
                _inst("s1", "cut", 0, prefix=("a", "deep", "clean")),
            )
        )
        index = build_basic_index(corpus)
        enc = ToyEncoder(seed=3)
        vecs = []
        for inst in corpus:
            encoded = enc.encode(inst.tokens)
            vecs.append(
                contextual_target_embedding(encoded, SubwordAlignment(3, 4, 5)).detach()
            )
        result = basic_embedding(index, "cut", enc, k=5, seed=0)
        assert torch.equal(result.vector, (vecs[0] + vecs[1]) / 2)

    def test_hundred_random_pools_match_sum_divide_oracle(self):
        import random as pyrandom

        rng = pyrandom.Random(99)
        enc = ToyEncoder(seed=0)
        fillers = ("mist", "iron", "glass", "wool", "salt", "clay", "rope", "coal")
        for trial in range(100):
            word = f"w{trial}"
            n = rng.randint(1, 8)
            insts = tuple(
                _inst(f"t{trial}-{i}", word, 0, prefix=(rng.choice(fillers), "and", "the"))
                for i in range(n)
            )
            index = build_basic_index(Corpus(insts))
            k = rng.randint(1, 8)
            seed = rng.randint(0, 1000)
            result = basic_embedding(index, word, enc, k=k, seed=seed)
            refs = sample_pool(index, word, k, seed)
            by_ref = {inst.ref: inst for inst in insts}
            total = torch.zeros(enc.hidden_dim, dtype=torch.float64)
            for ref in refs:
                encoded = enc.encode(by_ref[ref].tokens)
                total += encoded.hidden_states[4].detach().to(torch.float64)
            oracle = total / len(refs)
            rel = torch.norm(result.vector.to(torch.float64) - oracle) / torch.norm(oracle)
            assert rel.item() <= 1e-6

    def test_empty_pool_falls_back_to_decontextualized_bitwise(self):
        index = build_basic_index(Corpus((_inst("s0", "devoured", 1),)))
        enc = ToyEncoder(seed=1)
        result = basic_embedding(index, "devoured", enc, k=5, seed=0)
        assert result.source == FALLBACK_DECONTEXTUALIZED
        assert result.pool_size_used == 0
        assert torch.equal(result.vector, enc.decontextualized("devoured"))

    def test_exclude_removes_own_reference(self):
        corpus = _pool_corpus("cut", 2)
        index = build_basic_index(corpus)
        enc = ToyEncoder(seed=3)
        own = corpus.instances[0].ref
        result = basic_embedding(index, "cut", enc, k=5, seed=0, exclude=own)
        assert result.pool_size_used == 1
        other = corpus.instances[1]
        encoded = enc.encode(other.tokens)
        expected = contextual_target_embedding(encoded, SubwordAlignment(3, 4, 5)).detach()
        assert torch.equal(result.vector, expected)

    def test_exclude_sole_instance_triggers_fallback(self):
        corpus = _pool_corpus("cut", 1)
        index = build_basic_index(corpus)
        enc = ToyEncoder()
        result = basic_embedding(index, "cut", enc, k=5, seed=0, exclude=corpus.instances[0].ref)
        assert result.source == FALLBACK_DECONTEXTUALIZED
        assert torch.equal(result.vector, enc.decontextualized("cut"))

    def test_result_invariant_enforced(self):
        with pytest.raises(ValidationError, match="inconsistent"):
            BasicEmbeddingResult(torch.zeros(4), AVERAGED_POOL, 0)
        with pytest.raises(ValidationError, match="inconsistent"):
            BasicEmbeddingResult(torch.zeros(4), FALLBACK_DECONTEXTUALIZED, 2)

    def test_pool_vectors_cached_per_weights_version(self):
        corpus = _pool_corpus("cut", 3)
        index = build_basic_index(corpus)
        enc = ToyEncoder(seed=2)
        calls = []
        original = enc.encode

        def counting_encode(tokens):
            calls.append(tokens)
            return original(tokens)

        enc.encode = counting_encode
        basic_embedding(index, "cut", enc, k=3, seed=0)
        assert len(calls) == 3
        basic_embedding(index, "cut", enc, k=3, seed=0)
        assert len(calls) == 3
        with torch.no_grad():
            enc.attn_value.add_(0.25)
        enc.bump_weights_version()
        fresh = basic_embedding(index, "cut", enc, k=3, seed=0)
        assert len(calls) == 6
        enc.encode = original
        stale = index.cache.get("cut", corpus.instances[0].ref, enc.weights_version - 1)
        assert stale is None  # old-version entries are misses, not hits
        assert fresh.source == AVERAGED_POOL

    def test_encoder_failure_names_the_pool_sentence(self):
        corpus = _pool_corpus("cut", 1)
        index = build_basic_index(corpus)
        enc = ToyEncoder(max_len=3)
        with pytest.raises(TruncationError, match="basic-pool sentence 's0'"):
            basic_embedding(index, "cut", enc, k=1, seed=0)


class TestEmbeddingCache:
    def test_version_mismatch_is_a_miss(self):
        cache = EmbeddingCache()
        vec = torch.ones(4)
        cache.put("cut", ("s0", 3), 7, vec)
        assert cache.get("cut", ("s0", 3), 7) is vec
        assert cache.get("cut", ("s0", 3), 8) is None
        assert cache.get("cut", ("s1", 3), 7) is None
        assert len(cache) == 1

    def test_clear_empties(self):
        cache = EmbeddingCache()
        cache.put("cut", ("s0", 3), 1, torch.ones(2))
        cache.clear()
        assert len(cache) == 0

    def test_save_load_round_trip(self, tmp_path):
        cache = EmbeddingCache()
        cache.put("cut", ("s0", 3), 5, torch.tensor([1.0, 2.0]))
        cache.put("press", ("s9", 0), 5, torch.tensor([-1.0, 0.5]))
        fp = tmp_path / "pools.npz"
        cache.save(fp)
        loaded = EmbeddingCache.load(fp)
        assert len(loaded) == 2
        assert torch.equal(loaded.get("cut", ("s0", 3), 5), torch.tensor([1.0, 2.0]))
        assert torch.equal(loaded.get("press", ("s9", 0), 5), torch.tensor([-1.0, 0.5]))

    def test_save_empty_cache(self, tmp_path):
        fp = tmp_path / "empty.npz"
        EmbeddingCache().save(fp)
        assert len(EmbeddingCache.load(fp)) == 0


class TestIndexPersistence:
    def test_save_load_round_trip(self, tmp_path):
        corpus = load_corpus(DATA / "vua_sample.tsv", "vua_shared_task", split="train")
        index = build_basic_index(corpus)
        fp = tmp_path / "index.json"
        index.save(fp)
        loaded = BasicIndex.load(fp, corpus)
        assert loaded.pools == index.pools
        assert loaded.key_fn_id == index.key_fn_id
        assert loaded.corpus_fingerprint == index.corpus_fingerprint
        ref = loaded.pool("attacked")[0]
        assert loaded.resolve(ref).target_word == "attacked"

    def test_load_rejects_refs_missing_from_corpus(self, tmp_path):
        corpus = _pool_corpus("cut", 2)
        index = build_basic_index(corpus)
        fp = tmp_path / "index.json"
        index.save(fp)
        smaller = Corpus((corpus.instances[0],))
        with pytest.raises(ValidationError, match="not present"):
            BasicIndex.load(fp, smaller)

    def test_load_rejects_unknown_format_version(self, tmp_path):
        fp = tmp_path / "index.json"
        fp.write_text('{"format_version": 99, "key_fn_id": "surface", "pools": {}}')
        with pytest.raises(ConfigurationError, match="format_version"):
            BasicIndex.load(fp, Corpus(()))

    def test_resolve_unknown_ref(self):
        index = build_basic_index(_pool_corpus("cut", 1))
        with pytest.raises(ValidationError, match="no bound instance"):
            index.resolve(("ghost", 0))


class TestKeying:
    def test_lemma_rules(self):
        for word, lemma in [
            ("running", "run"),
            ("making", "make"),
            ("hoped", "hope"),
            ("walked", "walk"),
            ("cities", "city"),
            ("passes", "pass"),
            ("boxes", "box"),
            ("runs", "run"),
            ("glass", "glass"),
            ("focus", "focus"),
            ("cut", "cut"),
        ]:
            assert lemma_key(word) == lemma, word

    def test_unknown_policy_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown key policy"):
            get_key_policy("soundex")

    def test_duplicate_registration_rejected(self):
        with pytest.raises(ConfigurationError, match="already registered"):
            register_key_policy("surface", str.lower)
