"""Literal-annotation index: pools of basic usages per target key.

For each target key the index lists the training instances annotated as
literal; sampling from that pool and averaging the target hidden states
yields the basic meaning embedding. Keys without literal annotations fall
back to the decontextualized embedding, which makes the basic contrast
degenerate to the aggregated contrast for those targets.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import AnnotatedInstance, Corpus, InstanceRef, align_subwords, LITERAL
from .encoder import Encoder, contextual_target_embedding
from .errors import BasicMipError, ConfigurationError, ValidationError
from .keying import get_key_policy
from .manifest import fingerprint_instances

INDEX_FORMAT_VERSION = 1

AVERAGED_POOL = "averaged_pool"
FALLBACK_DECONTEXTUALIZED = "fallback_decontextualized"


@dataclass
class BasicEmbeddingResult:
    """Basic meaning vector for one target key plus its provenance."""

    vector: torch.Tensor
    source: str
    pool_size_used: int

    def __post_init__(self) -> None:
        if (self.source == FALLBACK_DECONTEXTUALIZED) != (self.pool_size_used == 0):
            raise ValidationError(
                f"source {self.source!r} inconsistent with pool_size_used={self.pool_size_used}"
            )


class EmbeddingCache:
    """Vector cache keyed by (target key, instance ref) and weights version.

    Entries computed under an older weights version are treated as misses,
    so a parameter update can never leak stale vectors. Reads are safe to
    share; writes follow a single-writer contract.
    """

    def __init__(self) -> None:
        self._entries: dict[tuple[str, str, int], tuple[int, torch.Tensor]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def clear(self) -> None:
        """Drop all entries. Version counters are per encoder instance, so a
        run pairing this index with a new encoder must start from empty."""
        self._entries.clear()

    def get(self, key: str, ref: InstanceRef, weights_version: int) -> torch.Tensor | None:
        entry = self._entries.get((key, ref[0], ref[1]))
        if entry is None or entry[0] != weights_version:
            return None
        return entry[1]

    def put(self, key: str, ref: InstanceRef, weights_version: int, vector: torch.Tensor) -> None:
        self._entries[(key, ref[0], ref[1])] = (weights_version, vector)

    def save(self, path: str | Path) -> None:
        """Persist as a vector table (.npz) plus a json manifest alongside."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = []
        vectors = []
        for (key, sid, tidx), (version, vec) in sorted(self._entries.items()):
            rows.append({"key": key, "sentence_id": sid, "target_index": tidx, "weights_version": version})
            vectors.append(vec.detach().cpu().numpy())
        np.savez(path, vectors=np.stack(vectors) if vectors else np.zeros((0, 0)))
        manifest = path.with_suffix(path.suffix + ".manifest.json")
        manifest.write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingCache":
        path = Path(path)
        data = np.load(path)
        rows = json.loads(path.with_suffix(path.suffix + ".manifest.json").read_text(encoding="utf-8"))
        cache = cls()
        vectors = data["vectors"]
        for row, vec in zip(rows, vectors):
            cache.put(
                row["key"],
                (row["sentence_id"], int(row["target_index"])),
                int(row["weights_version"]),
                torch.from_numpy(np.asarray(vec)).to(torch.float32),
            )
        return cache


@dataclass
class BasicIndex:
    """Mapping target key -> literal training instances, in corpus order."""

    key_fn_id: str
    pools: dict[str, tuple[InstanceRef, ...]]
    corpus_fingerprint: str
    instances: dict[InstanceRef, AnnotatedInstance] = field(repr=False, default_factory=dict)
    cache: EmbeddingCache = field(repr=False, default_factory=EmbeddingCache)

    def has_pool(self, key: str) -> bool:
        return bool(self.pools.get(key))

    def pool(self, key: str) -> tuple[InstanceRef, ...]:
        return self.pools.get(key, ())

    def resolve(self, ref: InstanceRef) -> AnnotatedInstance:
        try:
            return self.instances[ref]
        except KeyError:
            raise ValidationError(f"index has no bound instance for ref {ref!r}") from None

    def key_for(self, word: str) -> str:
        return get_key_policy(self.key_fn_id)(word)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "format_version": INDEX_FORMAT_VERSION,
            "key_fn_id": self.key_fn_id,
            "corpus_fingerprint": self.corpus_fingerprint,
            "pools": {key: [list(ref) for ref in refs] for key, refs in self.pools.items()},
        }
        path.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, corpus: Corpus) -> "BasicIndex":
        """Load pool refs and re-bind them to instances of ``corpus``."""
        path = Path(path)
        payload = json.loads(path.read_text(encoding="utf-8"))
        version = payload.get("format_version")
        if version != INDEX_FORMAT_VERSION:
            raise ConfigurationError(f"index file {path} has format_version {version!r}, expected {INDEX_FORMAT_VERSION}")
        by_ref = corpus.by_ref()
        pools: dict[str, tuple[InstanceRef, ...]] = {}
        instances: dict[InstanceRef, AnnotatedInstance] = {}
        for key, refs in payload["pools"].items():
            bound = []
            for sid, tidx in refs:
                ref = (str(sid), int(tidx))
                inst = by_ref.get(ref)
                if inst is None:
                    raise ValidationError(f"index ref {ref!r} not present in the supplied corpus")
                bound.append(ref)
                instances[ref] = inst
            pools[key] = tuple(bound)
        return cls(
            key_fn_id=payload["key_fn_id"],
            pools=pools,
            corpus_fingerprint=payload["corpus_fingerprint"],
            instances=instances,
        )


def build_basic_index(train_corpus: Corpus, key_policy: str = "surface") -> BasicIndex:
    """Collect every literal training instance into its target key's pool.

    Keys whose only occurrences are metaphorical get no pool entry at all.
    The caller supplies a train-only corpus; anything else is rejected.
    """
    key_fn = get_key_policy(key_policy)
    pools: dict[str, list[InstanceRef]] = {}
    instances: dict[InstanceRef, AnnotatedInstance] = {}
    for inst in train_corpus:
        if inst.split != "train":
            raise ValidationError(
                f"basic index must be built from the train split only, got "
                f"{inst.split!r} instance {inst.ref!r}"
            )
        if inst.label != LITERAL:
            continue
        key = key_fn(inst.target_word)
        pools.setdefault(key, []).append(inst.ref)
        instances[inst.ref] = inst
    return BasicIndex(
        key_fn_id=key_policy,
        pools={k: tuple(v) for k, v in pools.items()},
        corpus_fingerprint=fingerprint_instances(train_corpus),
        instances=instances,
    )


def sample_pool(index: BasicIndex, key: str, k: int, seed: int) -> list[InstanceRef]:
    """Deterministically sample up to k pool entries without replacement.

    The result preserves pool order regardless of draw order, so any seed
    selecting the same subset yields the same summation order downstream.
    Absent keys yield an empty list.
    """
    if k < 1:
        raise ValidationError(f"pool sample size must be >= 1, got {k}")
    refs = index.pool(key)
    if len(refs) <= k:
        return list(refs)
    rng = random.Random(f"{seed}:{key}")
    chosen = sorted(rng.sample(range(len(refs)), k))
    return [refs[i] for i in chosen]


def basic_embedding(
    index: BasicIndex,
    key: str,
    encoder: Encoder,
    k: int = 5,
    seed: int = 0,
    exclude: InstanceRef | None = None,
) -> BasicEmbeddingResult:
    """Basic meaning embedding for a target key.

    The mean of the sampled pool's target hidden states, summed in pool
    order; when the sampled pool (minus ``exclude``) is empty, the
    decontextualized embedding of the key is returned instead. Pool vectors
    are encoded without gradients and cached per encoder weights version.
    """
    refs = [ref for ref in sample_pool(index, key, k, seed) if ref != exclude]
    if not refs:
        return BasicEmbeddingResult(
            vector=encoder.decontextualized(key),
            source=FALLBACK_DECONTEXTUALIZED,
            pool_size_used=0,
        )
    vectors = [_pool_vector(index, key, ref, encoder) for ref in refs]
    acc = vectors[0]
    for vec in vectors[1:]:
        acc = acc + vec
    return BasicEmbeddingResult(
        vector=acc / len(vectors),
        source=AVERAGED_POOL,
        pool_size_used=len(vectors),
    )


def _pool_vector(index: BasicIndex, key: str, ref: InstanceRef, encoder: Encoder) -> torch.Tensor:
    cached = index.cache.get(key, ref, encoder.weights_version)
    if cached is not None:
        return cached
    inst = index.resolve(ref)
    try:
        counts = encoder.piece_counts(inst.tokens)
        alignment = align_subwords(inst, counts, pooling=encoder.pooling)[inst.target_index]
        with torch.no_grad():
            enc = encoder.encode(inst.tokens)
            vector = contextual_target_embedding(enc, alignment).detach().clone()
    except BasicMipError as exc:
        raise type(exc)(f"{exc} (while encoding basic-pool sentence {inst.sentence_id!r})") from exc
    index.cache.put(key, ref, encoder.weights_version, vector)
    return vector
