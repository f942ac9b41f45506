"""Toy encoder arithmetic, determinism, and the shared encoder contract.

The oracles here re-derive the documented toy-encoder recipe independently
(blake2b-seeded word vectors, sinusoidal positions, one attention layer plus
a tanh feed-forward, both residual) so a wiring mistake in the package cannot
hide behind its own implementation.
"""

import hashlib
import math

import numpy as np
import pytest
import torch

from basicmip.corpus import SubwordAlignment
from basicmip.encoder import (
    START_MARKER,
    ToyEncoder,
    build_encoder,
    contextual_target_embedding,
    decontextualized_embedding,
    encode_sentence,
    sentence_embedding,
)
from basicmip.errors import ConfigurationError, TruncationError, ValidationError


def oracle_word_vector(seed: int, text: str, d: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}:{text}".encode("utf-8"), digest_size=8).digest()
    gen = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "big")))
    return (gen.standard_normal(d) / math.sqrt(d)).astype(np.float32)


def oracle_position_vector(position: int, d: int) -> np.ndarray:
    vec = np.empty(d, dtype=np.float64)
    for k in range(d // 2):
        angle = position / (10000.0 ** (2 * k / d))
        vec[2 * k] = math.sin(angle)
        vec[2 * k + 1] = math.cos(angle)
    return (0.1 * vec).astype(np.float32)


def oracle_encode(enc: ToyEncoder, tokens: tuple[str, ...]) -> np.ndarray:
    """Float64 re-implementation of the two mixing layers."""
    texts = [START_MARKER]
    for word in tokens:
        texts.extend(enc.pieces(word))
    d = enc.hidden_dim
    x = np.stack(
        [
            oracle_word_vector(enc.seed, t, d).astype(np.float64)
            + oracle_position_vector(i, d).astype(np.float64)
            for i, t in enumerate(texts)
        ]
    )
    wq = enc.attn_query.detach().numpy().astype(np.float64)
    wk = enc.attn_key.detach().numpy().astype(np.float64)
    wv = enc.attn_value.detach().numpy().astype(np.float64)
    w1 = enc.ff_in.detach().numpy().astype(np.float64)
    b1 = enc.ff_in_bias.detach().numpy().astype(np.float64)
    w2 = enc.ff_out.detach().numpy().astype(np.float64)
    b2 = enc.ff_out_bias.detach().numpy().astype(np.float64)
    scores = (x @ wq) @ (x @ wk).T / math.sqrt(d)
    scores -= scores.max(axis=-1, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=-1, keepdims=True)
    u = x + attn @ (x @ wv)
    return u + np.tanh(u @ w1 + b1) @ w2 + b2


class TestWordAndPositionVectors:
    def test_word_vector_matches_hash_recipe(self):
        enc = ToyEncoder(hidden_dim=16, seed=7)
        got = enc.word_vector("grace").numpy()
        np.testing.assert_array_equal(got, oracle_word_vector(7, "grace", 16))

    def test_word_vector_depends_on_seed_and_text(self):
        enc0 = ToyEncoder(seed=0)
        enc1 = ToyEncoder(seed=1)
        assert not torch.equal(enc0.word_vector("stone"), enc1.word_vector("stone"))
        assert not torch.equal(enc0.word_vector("stone"), enc0.word_vector("stones"))

    def test_position_vector_at_zero(self):
        enc = ToyEncoder(hidden_dim=6)
        expected = np.array([0.0, 0.1, 0.0, 0.1, 0.0, 0.1], dtype=np.float32)
        np.testing.assert_array_equal(enc.position_vector(0).numpy(), expected)

    def test_position_vector_matches_sinusoid(self):
        enc = ToyEncoder(hidden_dim=16)
        for pos in (1, 2, 9):
            np.testing.assert_array_equal(
                enc.position_vector(pos).numpy(), oracle_position_vector(pos, 16)
            )

    def test_parameters_drawn_in_documented_order(self):
        d = 8
        enc = ToyEncoder(hidden_dim=d, seed=3)
        rng = np.random.Generator(np.random.PCG64(3))
        for param in (enc.attn_query, enc.attn_key, enc.attn_value, enc.ff_in):
            expected = (rng.standard_normal((d, d)) / math.sqrt(d)).astype(np.float32)
            np.testing.assert_array_equal(param.detach().numpy(), expected)
        np.testing.assert_array_equal(enc.ff_in_bias.detach().numpy(), np.zeros(d, np.float32))
        expected = (rng.standard_normal((d, d)) / math.sqrt(d)).astype(np.float32)
        np.testing.assert_array_equal(enc.ff_out.detach().numpy(), expected)


class TestEncode:
    def test_shape_contract(self):
        enc = ToyEncoder(hidden_dim=16)
        out = encode_sentence(enc, ("one", "two", "three", "four"))
        assert out.hidden_states.shape == (5, 16)
        assert out.piece_counts == (1, 1, 1, 1)
        assert out.hidden_dim == 16

    def test_repeat_encoding_is_bitwise_identical(self):
        enc = ToyEncoder(seed=5)
        tokens = ("the", "river", "ran", "dry")
        a = encode_sentence(enc, tokens).hidden_states
        b = encode_sentence(enc, tokens).hidden_states
        assert torch.equal(a, b)

    def test_same_seed_same_outputs_across_instances(self):
        a = ToyEncoder(seed=11).encode(("cold", "facts"))
        b = ToyEncoder(seed=11).encode(("cold", "facts"))
        assert torch.equal(a.hidden_states, b.hidden_states)

    def test_identity_mixing_reproduces_input_rows(self):
        enc = ToyEncoder(hidden_dim=8, seed=2, identity_mixing=True)
        tokens = ("warm", "welcome")
        out = enc.encode(tokens)
        assert torch.equal(out.hidden_states, enc.input_embeddings(tokens))
        expected = np.stack(
            [
                oracle_word_vector(2, t, 8) + oracle_position_vector(i, 8)
                for i, t in enumerate([START_MARKER, "warm", "welcome"])
            ]
        )
        np.testing.assert_allclose(out.hidden_states.detach().numpy(), expected, atol=1e-7)

    def test_full_mixing_matches_hand_oracle(self):
        enc = ToyEncoder(hidden_dim=16, seed=4)
        tokens = ("ideas", "collide")
        got = enc.encode(tokens).hidden_states.detach().numpy()
        np.testing.assert_allclose(got, oracle_encode(enc, tokens), atol=1e-5)

    def test_empty_token_list_rejected(self):
        with pytest.raises(ValidationError):
            ToyEncoder().encode(())

    def test_truncation_error_names_the_sentence(self):
        enc = ToyEncoder(max_len=3)
        with pytest.raises(TruncationError, match="max_len is 3"):
            enc.encode(("a", "b", "c"))
        # 2 words + start marker exactly fits
        enc.encode(("a", "b"))


class TestPieces:
    def test_char_chunking(self):
        enc = ToyEncoder(max_word_chars=3)
        assert enc.pieces("metaphor") == ["met", "aph", "or"]
        assert enc.pieces("cat") == ["cat"]
        assert enc.piece_counts(("metaphor", "cat")) == [3, 1]

    def test_zero_keeps_whole_words(self):
        assert ToyEncoder().pieces("extraordinarily") == ["extraordinarily"]

    def test_multi_piece_rows_follow_word_order(self):
        enc = ToyEncoder(max_word_chars=2, identity_mixing=True, hidden_dim=8)
        out = enc.encode(("abcd", "ef"))
        assert out.piece_counts == (2, 1)
        assert out.hidden_states.shape[0] == 4
        row1 = enc.word_vector("ab") + enc.position_vector(1)
        assert torch.equal(out.hidden_states[1], row1)


class TestTargetExtraction:
    def test_single_piece_target_is_shifted_row(self):
        enc = ToyEncoder()
        out = enc.encode(("red", "sky", "at", "night"))
        align = SubwordAlignment(1, 2, 3)
        assert torch.equal(contextual_target_embedding(out, align), out.hidden_states[2])

    def test_first_piece_pooling(self):
        enc = ToyEncoder(max_word_chars=2)
        out = enc.encode(("abcdef",))
        align = SubwordAlignment(0, 1, 4, pooling="first_piece")
        assert torch.equal(contextual_target_embedding(out, align), out.hidden_states[1])

    def test_mean_pieces_matches_sum_oracle(self):
        enc = ToyEncoder(max_word_chars=2)
        out = enc.encode(("abcdef",))
        align = SubwordAlignment(0, 1, 4, pooling="mean_pieces")
        got = contextual_target_embedding(out, align)
        expected = (out.hidden_states[1] + out.hidden_states[2] + out.hidden_states[3]) / 3
        assert torch.allclose(got, expected, atol=0, rtol=0)

    def test_out_of_range_alignment_rejected(self):
        out = ToyEncoder().encode(("just", "two"))
        with pytest.raises(ValidationError, match="outside"):
            contextual_target_embedding(out, SubwordAlignment(5, 6, 7))

    def test_sentence_embedding_is_row_zero(self):
        out = ToyEncoder().encode(("any", "thing"))
        assert torch.equal(sentence_embedding(out), out.hidden_states[0])


class TestDecontextualized:
    def test_equals_single_word_encoding(self):
        enc = ToyEncoder(seed=9)
        vec = decontextualized_embedding(enc, "harvest")
        out = enc.encode(("harvest",))
        align = SubwordAlignment(0, 1, 2)
        assert torch.equal(vec, contextual_target_embedding(out, align))

    def test_repeat_calls_identical_under_fixed_weights(self):
        enc = ToyEncoder()
        assert torch.equal(enc.decontextualized("tide"), enc.decontextualized("tide"))

    def test_parameter_update_invalidates_cache(self):
        enc = ToyEncoder(seed=1)
        before = enc.decontextualized("drift").clone()
        with torch.no_grad():
            enc.attn_value.add_(0.5)
        enc.bump_weights_version()
        after = enc.decontextualized("drift")
        assert not torch.equal(before, after)

    def test_returned_vector_is_detached_copy(self):
        enc = ToyEncoder()
        vec = enc.decontextualized("anchor")
        assert not vec.requires_grad
        vec.add_(1.0)
        assert not torch.equal(vec, enc.decontextualized("anchor"))

    def test_empty_word_rejected(self):
        with pytest.raises(ValidationError):
            ToyEncoder().decontextualized("")


class TestHandleContract:
    def test_load_state_dict_bumps_weights_version(self):
        enc = ToyEncoder()
        v0 = enc.weights_version
        enc.load_state_dict(enc.state_dict())
        assert enc.weights_version == v0 + 1

    def test_hidden_dim_must_be_even(self):
        with pytest.raises(ConfigurationError):
            ToyEncoder(hidden_dim=7)
        with pytest.raises(ConfigurationError):
            ToyEncoder(hidden_dim=0)

    def test_unknown_pooling_rejected(self):
        with pytest.raises(ConfigurationError):
            ToyEncoder(pooling="max")

    def test_build_encoder_dispatch(self):
        enc = build_encoder("toy", hidden_dim=8, seed=2)
        assert enc.mode == "toy"
        assert enc.hidden_dim == 8
        with pytest.raises(ConfigurationError, match="checkpoint"):
            build_encoder("pretrained")
        with pytest.raises(ConfigurationError, match="unknown encoder mode"):
            build_encoder("frozen")
