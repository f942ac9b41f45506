"""Feature extraction: from an annotated instance to a feature bundle.

The current sentence is encoded with gradients enabled so the contextual
target and sentence embeddings can train the encoder; the basic-meaning and
decontextualized branches are detached reference points (see basic_index and
encoder for the stop-gradient contracts).
"""

from __future__ import annotations

import torch

from .basic_index import BasicIndex, basic_embedding
from .corpus import AnnotatedInstance, align_subwords
from .encoder import Encoder, contextual_target_embedding, encode_sentence, sentence_embedding
from .model import FeatureBundle, ModelHead, Prediction, predict, stack_bundles


def extract_features(
    instance: AnnotatedInstance,
    encoder: Encoder,
    index: BasicIndex,
    *,
    pool_size: int = 5,
    sample_seed: int = 0,
    exclude_self: bool = True,
) -> FeatureBundle:
    """Build the four-embedding bundle for one instance.

    ``exclude_self`` drops the instance itself from its sampled basic pool
    so no instance is contrasted against its own hidden state. The
    decontextualized embedding is computed on the index key (not the raw
    surface form), which makes the empty-pool fallback coincide with it
    exactly.
    """
    enc = encode_sentence(encoder, instance.tokens)
    alignment = align_subwords(instance, enc.piece_counts, pooling=encoder.pooling)
    v_ctx = contextual_target_embedding(enc, alignment[instance.target_index])
    v_sent = sentence_embedding(enc)

    key = index.key_for(instance.target_word)
    exclude = instance.ref if exclude_self else None
    basic = basic_embedding(
        index, key, encoder, k=pool_size, seed=sample_seed, exclude=exclude
    )
    v_agg = encoder.decontextualized(key)
    return FeatureBundle(
        v_context_target=v_ctx,
        v_basic=basic.vector,
        v_aggregated=v_agg,
        v_sentence=v_sent,
    )


def bundle_batch(
    instances: list[AnnotatedInstance],
    encoder: Encoder,
    index: BasicIndex,
    *,
    pool_size: int = 5,
    sample_seed: int = 0,
    exclude_self: bool = True,
) -> FeatureBundle:
    bundles = [
        extract_features(
            inst,
            encoder,
            index,
            pool_size=pool_size,
            sample_seed=sample_seed,
            exclude_self=exclude_self,
        )
        for inst in instances
    ]
    return stack_bundles(bundles)


def predict_instances(
    instances: list[AnnotatedInstance],
    encoder: Encoder,
    index: BasicIndex,
    head: ModelHead,
    *,
    pool_size: int = 5,
    sample_seed: int = 0,
    threshold: float = 0.5,
    exclude_self: bool = True,
) -> list[Prediction]:
    """Score instances with dropout disabled and no gradient tracking."""
    if not instances:
        return []
    was_training = head.training
    head.eval()
    encoder_was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            batch = bundle_batch(
                instances,
                encoder,
                index,
                pool_size=pool_size,
                sample_seed=sample_seed,
                exclude_self=exclude_self,
            )
            preds = predict(batch, head, threshold=threshold)
    finally:
        if was_training:
            head.train()
        if encoder_was_training:
            encoder.train()
    return preds if isinstance(preds, list) else [preds]
