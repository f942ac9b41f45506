"""Metaphor detection by contrasting contextual and basic word meanings."""

__version__ = "0.1.0"

from .basic_index import (
    AVERAGED_POOL,
    FALLBACK_DECONTEXTUALIZED,
    BasicEmbeddingResult,
    BasicIndex,
    basic_embedding,
    build_basic_index,
    sample_pool,
)
from .corpus import (
    LITERAL,
    METAPHOR,
    AnnotatedInstance,
    Corpus,
    SubwordAlignment,
    align_subwords,
    load_corpus,
    load_split_dir,
    save_corpus_jsonl,
)
from .encoder import (
    Encoder,
    EncodedSentence,
    PretrainedEncoder,
    ToyEncoder,
    build_encoder,
    contextual_target_embedding,
    decontextualized_embedding,
    encode_sentence,
    sentence_embedding,
)
from .errors import (
    BasicMipError,
    ConfigurationError,
    DegenerateCaseError,
    FingerprintMismatchError,
    NumericError,
    TruncationError,
    ValidationError,
)
from .model import (
    FeatureBundle,
    ModelHead,
    Prediction,
    amip_feature,
    bce_loss,
    bmip_feature,
    predict,
    spv_feature,
    stack_bundles,
)

__all__ = [
    "__version__",
    "AVERAGED_POOL",
    "FALLBACK_DECONTEXTUALIZED",
    "LITERAL",
    "METAPHOR",
    "AnnotatedInstance",
    "BasicEmbeddingResult",
    "BasicIndex",
    "BasicMipError",
    "ConfigurationError",
    "Corpus",
    "DegenerateCaseError",
    "EncodedSentence",
    "Encoder",
    "FeatureBundle",
    "FingerprintMismatchError",
    "ModelHead",
    "NumericError",
    "Prediction",
    "PretrainedEncoder",
    "SubwordAlignment",
    "ToyEncoder",
    "TruncationError",
    "ValidationError",
    "align_subwords",
    "amip_feature",
    "basic_embedding",
    "bce_loss",
    "bmip_feature",
    "build_basic_index",
    "build_encoder",
    "contextual_target_embedding",
    "decontextualized_embedding",
    "encode_sentence",
    "load_corpus",
    "load_split_dir",
    "predict",
    "sample_pool",
    "save_corpus_jsonl",
    "sentence_embedding",
    "spv_feature",
    "stack_bundles",
]
