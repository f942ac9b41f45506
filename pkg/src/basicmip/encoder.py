"""Contextual encoders producing per-position hidden states.

Every encoder shares one output contract: encoding a sentence of words that
segment into P pieces yields a ``(1 + P) x d`` matrix whose row 0 is the
start-of-input position (the sentence embedding) and whose remaining rows are
piece positions in word order. The word-level view on top of the piece rows
is provided by :class:`~basicmip.corpus.SubwordAlignment`.

Two implementations ship:

* :class:`ToyEncoder` -- a small, fully specified, deterministic encoder used
  by the test suite. Its arithmetic is simple enough to evaluate by hand.
* :class:`PretrainedEncoder` -- an adapter over a transformer checkpoint
  (loaded lazily through the ``transformers`` package). The checkpoint name
  is configuration, not code.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .corpus import POOLING_MODES, SubwordAlignment
from .errors import ConfigurationError, TruncationError, ValidationError

START_MARKER = "<s>"


@dataclass
class EncodedSentence:
    """Hidden states for one encoded sentence.

    ``hidden_states`` has ``1 + sum(piece_counts)`` rows; row 0 is the
    start-of-input position.
    """

    hidden_states: torch.Tensor
    piece_counts: tuple[int, ...]
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        expected = 1 + sum(self.piece_counts)
        if self.hidden_states.ndim != 2 or self.hidden_states.shape[0] != expected:
            raise ValidationError(
                f"hidden state matrix has shape {tuple(self.hidden_states.shape)}, "
                f"expected ({expected}, d)"
            )

    @property
    def hidden_dim(self) -> int:
        return int(self.hidden_states.shape[1])


class Encoder(nn.Module):
    """Base class: tracks a weights-version counter used for cache invalidation.

    The counter must be bumped on every parameter update; cached vectors
    (decontextualized embeddings, basic-pool embeddings) are keyed by it.
    """

    mode = "abstract"

    def __init__(self, hidden_dim: int, max_len: int, pooling: str) -> None:
        super().__init__()
        if pooling not in POOLING_MODES:
            raise ConfigurationError(f"unknown pooling mode {pooling!r}")
        self._hidden_dim = int(hidden_dim)
        self.max_len = int(max_len)
        self.pooling = pooling
        self.weights_version = 0
        self._decon_cache: dict[str, tuple[int, torch.Tensor]] = {}

    @property
    def hidden_dim(self) -> int:
        return self._hidden_dim

    def bump_weights_version(self) -> None:
        self.weights_version += 1

    def load_state_dict(self, *args, **kwargs):
        out = super().load_state_dict(*args, **kwargs)
        self.bump_weights_version()
        return out

    def piece_counts(self, tokens: tuple[str, ...]) -> list[int]:
        raise NotImplementedError

    def encode(self, tokens: tuple[str, ...]) -> EncodedSentence:
        raise NotImplementedError

    def decontextualized(self, word: str) -> torch.Tensor:
        """Embedding of a word presented alone, framed like a full sentence.

        Cached per (word, weights_version); the cached vector is detached, so
        gradients never flow through this branch.
        """
        if not word:
            raise ValidationError("decontextualized embedding of an empty word")
        cached = self._decon_cache.get(word)
        if cached is not None and cached[0] == self.weights_version:
            return cached[1].clone()
        with torch.no_grad():
            enc = self.encode((word,))
            counts = enc.piece_counts
            alignment = SubwordAlignment(0, 1, 1 + counts[0], pooling=self.pooling)
            vec = contextual_target_embedding(enc, alignment).detach().clone()
        self._decon_cache[word] = (self.weights_version, vec)
        return vec.clone()

    def _check_length(self, tokens: tuple[str, ...], total_pieces: int) -> None:
        if 1 + total_pieces > self.max_len:
            preview = " ".join(tokens)[:80]
            raise TruncationError(
                f"sentence needs {1 + total_pieces} positions but max_len is "
                f"{self.max_len}: {preview!r}"
            )


class ToyEncoder(Encoder):
    """Deterministic hash-embedding encoder with one attention mixing layer.

    Fully specified so tests can hand-compute every value:

    * ``word_vector(text)``: blake2b of ``"{seed}:{text}"`` (8-byte digest,
      big-endian int) seeds ``numpy.random.PCG64``; the vector is
      ``standard_normal(d) / sqrt(d)``, fixed and non-trainable.
    * ``position_vector(i)``: sinusoidal, ``sin(i / 10000^(2k/d))`` and
      ``cos(i / 10000^(2k/d))`` interleaved, scaled by 0.1.
    * Input row ``i`` is ``word_vector(piece_i) + position_vector(i)`` with a
      reserved ``<s>`` marker at row 0.
    * Layer 1 (attention): ``A = softmax(Q K^T / sqrt(d))`` with
      ``Q = X Wq``, ``K = X Wk``, ``V = X Wv``; ``U = X + A V``.
    * Layer 2 (feed-forward): ``H = U + tanh(U W1 + b1) W2 + b2``.

    Trainable parameters are exactly Wq, Wk, Wv, W1, b1, W2, b2, drawn from
    ``PCG64(seed)`` in that order with entries ``N(0, 1/d)`` (biases zero).
    With ``identity_mixing=True``, Wv, W2 and b2 start at zero, making the
    output rows bitwise equal to the input embedding rows until training
    moves them.

    ``max_word_chars`` > 0 splits words into character chunks of that size so
    multi-piece alignment paths can be exercised; 0 keeps one piece per word.
    """

    mode = "toy"

    def __init__(
        self,
        hidden_dim: int = 16,
        seed: int = 0,
        identity_mixing: bool = False,
        max_word_chars: int = 0,
        max_len: int = 512,
        pooling: str = "first_piece",
    ) -> None:
        super().__init__(hidden_dim, max_len, pooling)
        if hidden_dim < 2 or hidden_dim % 2 != 0:
            raise ConfigurationError("toy encoder hidden_dim must be an even integer >= 2")
        self.seed = int(seed)
        self.identity_mixing = bool(identity_mixing)
        self.max_word_chars = int(max_word_chars)
        self._word_vec_cache: dict[str, torch.Tensor] = {}

        d = hidden_dim
        rng = np.random.Generator(np.random.PCG64(self.seed))
        scale = 1.0 / math.sqrt(d)

        def mat() -> torch.Tensor:
            return torch.from_numpy(rng.standard_normal((d, d)) * scale).to(torch.float32)

        self.attn_query = nn.Parameter(mat())
        self.attn_key = nn.Parameter(mat())
        self.attn_value = nn.Parameter(mat())
        self.ff_in = nn.Parameter(mat())
        self.ff_in_bias = nn.Parameter(torch.zeros(d))
        self.ff_out = nn.Parameter(mat())
        self.ff_out_bias = nn.Parameter(torch.zeros(d))
        if identity_mixing:
            with torch.no_grad():
                self.attn_value.zero_()
                self.ff_out.zero_()
                self.ff_out_bias.zero_()

    def word_vector(self, text: str) -> torch.Tensor:
        """Fixed vector for one piece text (also used for the start marker)."""
        cached = self._word_vec_cache.get(text)
        if cached is None:
            digest = hashlib.blake2b(f"{self.seed}:{text}".encode("utf-8"), digest_size=8).digest()
            gen = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "big")))
            arr = gen.standard_normal(self._hidden_dim) / math.sqrt(self._hidden_dim)
            cached = torch.from_numpy(arr).to(torch.float32)
            self._word_vec_cache[text] = cached
        return cached

    def position_vector(self, position: int) -> torch.Tensor:
        d = self._hidden_dim
        vec = np.empty(d, dtype=np.float64)
        for k in range(d // 2):
            angle = position / (10000.0 ** (2 * k / d))
            vec[2 * k] = math.sin(angle)
            vec[2 * k + 1] = math.cos(angle)
        return torch.from_numpy(0.1 * vec).to(torch.float32)

    def pieces(self, word: str) -> list[str]:
        if self.max_word_chars <= 0 or len(word) <= self.max_word_chars:
            return [word]
        n = self.max_word_chars
        return [word[i : i + n] for i in range(0, len(word), n)]

    def piece_counts(self, tokens: tuple[str, ...]) -> list[int]:
        return [len(self.pieces(w)) for w in tokens]

    def input_embeddings(self, tokens: tuple[str, ...]) -> torch.Tensor:
        """Input rows before mixing: start marker first, then all pieces."""
        texts = [START_MARKER]
        for word in tokens:
            texts.extend(self.pieces(word))
        rows = [self.word_vector(t) + self.position_vector(i) for i, t in enumerate(texts)]
        return torch.stack(rows)

    def encode(self, tokens: tuple[str, ...]) -> EncodedSentence:
        tokens = tuple(tokens)
        if not tokens:
            raise ValidationError("cannot encode an empty token list")
        counts = self.piece_counts(tokens)
        self._check_length(tokens, sum(counts))

        x = self.input_embeddings(tokens)
        q = x @ self.attn_query
        k = x @ self.attn_key
        v = x @ self.attn_value
        attn = torch.softmax(q @ k.T / math.sqrt(self._hidden_dim), dim=-1)
        u = x + attn @ v
        h = u + torch.tanh(u @ self.ff_in + self.ff_in_bias) @ self.ff_out + self.ff_out_bias
        return EncodedSentence(h, tuple(counts), tokens)


class PretrainedEncoder(Encoder):
    """Adapter over a transformer checkpoint from the ``transformers`` package.

    The raw model output is reshaped to the canonical layout: row 0 is the
    start-of-input special token, rows 1..P are word pieces in order, and any
    trailing special tokens are dropped. Inputs are framed with the
    tokenizer's standard markers for full sentences and single words alike.
    """

    mode = "pretrained"

    def __init__(
        self,
        checkpoint: str,
        max_len: int = 512,
        pooling: str = "first_piece",
        freeze_layers: int = 0,
    ) -> None:
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise ConfigurationError(
                "the pretrained encoder requires the 'transformers' package "
                "(install the [pretrained] extra)"
            ) from exc
        tokenizer = AutoTokenizer.from_pretrained(checkpoint, use_fast=True, add_prefix_space=True)
        model = AutoModel.from_pretrained(checkpoint)
        super().__init__(model.config.hidden_size, max_len, pooling)
        self.checkpoint = checkpoint
        self.tokenizer = tokenizer
        self.model = model
        if freeze_layers:
            self._freeze(freeze_layers)

    def _freeze(self, n_layers: int) -> None:
        for param in self.model.embeddings.parameters():
            param.requires_grad_(False)
        layers = getattr(getattr(self.model, "encoder", None), "layer", None)
        if layers is None:
            raise ConfigurationError("freeze_layers is only supported for layered encoders")
        for layer in layers[:n_layers]:
            for param in layer.parameters():
                param.requires_grad_(False)

    def _word_pieces(self, tokens: tuple[str, ...]):
        encoding = self.tokenizer(list(tokens), is_split_into_words=True, return_tensors="pt")
        word_ids = encoding.word_ids()
        counts = [0] * len(tokens)
        for wid in word_ids:
            if wid is not None:
                counts[wid] += 1
        for i, c in enumerate(counts):
            if c == 0:
                raise ValidationError(f"token {tokens[i]!r} produced no pieces under {self.checkpoint}")
        return encoding, word_ids, counts

    def piece_counts(self, tokens: tuple[str, ...]) -> list[int]:
        return self._word_pieces(tuple(tokens))[2]

    def encode(self, tokens: tuple[str, ...]) -> EncodedSentence:
        tokens = tuple(tokens)
        if not tokens:
            raise ValidationError("cannot encode an empty token list")
        encoding, word_ids, counts = self._word_pieces(tokens)
        self._check_length(tokens, sum(counts))
        hidden = self.model(**encoding).last_hidden_state[0]
        # canonical layout: start marker, then piece rows in word order
        keep = [0] + [i for i, wid in enumerate(word_ids) if wid is not None]
        return EncodedSentence(hidden[keep], tuple(counts), tokens)


def build_encoder(
    mode: str,
    *,
    hidden_dim: int = 16,
    seed: int = 0,
    identity_mixing: bool = False,
    max_word_chars: int = 0,
    checkpoint: str | None = None,
    max_len: int = 512,
    pooling: str = "first_piece",
    freeze_layers: int = 0,
) -> Encoder:
    if mode == "toy":
        return ToyEncoder(
            hidden_dim=hidden_dim,
            seed=seed,
            identity_mixing=identity_mixing,
            max_word_chars=max_word_chars,
            max_len=max_len,
            pooling=pooling,
        )
    if mode == "pretrained":
        if not checkpoint:
            raise ConfigurationError("encoder.checkpoint is required for pretrained mode")
        return PretrainedEncoder(
            checkpoint, max_len=max_len, pooling=pooling, freeze_layers=freeze_layers
        )
    raise ConfigurationError(f"unknown encoder mode {mode!r}, expected 'toy' or 'pretrained'")


def encode_sentence(handle: Encoder, tokens) -> EncodedSentence:
    """Encode one pre-tokenized sentence into per-position hidden states."""
    return handle.encode(tuple(tokens))


def contextual_target_embedding(enc: EncodedSentence, alignment: SubwordAlignment) -> torch.Tensor:
    """Pooled hidden state at the target word's piece range."""
    rows = enc.hidden_states.shape[0]
    if alignment.start < 1 or alignment.end > rows:
        raise ValidationError(
            f"alignment range [{alignment.start}, {alignment.end}) outside "
            f"hidden-state rows [1, {rows})"
        )
    if alignment.pooling == "first_piece":
        return enc.hidden_states[alignment.start]
    # mean_pieces: summation pinned to piece order
    acc = enc.hidden_states[alignment.start]
    for i in range(alignment.start + 1, alignment.end):
        acc = acc + enc.hidden_states[i]
    return acc / (alignment.end - alignment.start)


def decontextualized_embedding(handle: Encoder, word: str) -> torch.Tensor:
    """Encoder representation of a word presented alone."""
    return handle.decontextualized(word)


def sentence_embedding(enc: EncodedSentence) -> torch.Tensor:
    """The start-of-input row, used as the whole-sentence meaning."""
    return enc.hidden_states[0]
