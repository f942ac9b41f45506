"""Contrast features, prediction score and training loss.

Three affine contrast layers each read a concatenated pair of embeddings:
basic contrast (contextual target vs. basic meaning), aggregated contrast
(contextual target vs. decontextualized word), and sentence incongruity
(sentence vs. contextual target). A final linear classifier over the
concatenated contrast features produces the metaphoricity score through a
sigmoid, trained with binary cross entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import NumericError, ValidationError

# score bounds for predictions: keeps scores strictly inside (0, 1) while
# staying within 1e-9 of saturation for large logits
SCORE_BOUND = 1e-12

# loss-side clamp: log is undefined at exactly 0 or 1
LOSS_EPS = 1e-7


@dataclass
class FeatureBundle:
    """The four embeddings feeding the head, each (d,) or batched (n, d)."""

    v_context_target: torch.Tensor
    v_basic: torch.Tensor
    v_aggregated: torch.Tensor
    v_sentence: torch.Tensor

    def __post_init__(self) -> None:
        shapes = {
            tuple(t.shape)
            for t in (self.v_context_target, self.v_basic, self.v_aggregated, self.v_sentence)
        }
        if len(shapes) != 1:
            raise ValidationError(f"bundle vectors disagree in shape: {sorted(shapes)}")
        if self.v_context_target.ndim not in (1, 2):
            raise ValidationError("bundle vectors must be 1-D or batched 2-D")

    @property
    def hidden_dim(self) -> int:
        return int(self.v_context_target.shape[-1])

    @property
    def batched(self) -> bool:
        return self.v_context_target.ndim == 2


def stack_bundles(bundles: list[FeatureBundle]) -> FeatureBundle:
    if not bundles:
        raise ValidationError("cannot stack an empty bundle list")
    return FeatureBundle(
        v_context_target=torch.stack([b.v_context_target for b in bundles]),
        v_basic=torch.stack([b.v_basic for b in bundles]),
        v_aggregated=torch.stack([b.v_aggregated for b in bundles]),
        v_sentence=torch.stack([b.v_sentence for b in bundles]),
    )


@dataclass
class Prediction:
    """Metaphoricity score in (0, 1) and its thresholded label."""

    score: float
    label_hat: int

    def __post_init__(self) -> None:
        if not 0.0 < self.score < 1.0:
            raise ValidationError(f"score must lie strictly in (0, 1), got {self.score}")
        if self.label_hat not in (0, 1):
            raise ValidationError(f"label_hat must be 0 or 1, got {self.label_hat}")


class ModelHead(nn.Module):
    """Three contrast layers plus the final linear classifier.

    The contrast layers are purely affine (no activation); the classifier
    reads the concatenation [basic; aggregated; incongruity], or
    [aggregated; incongruity] when constructed with ``ablate_bmip=True``.
    Ablation is a construction-time property: a head trained with three
    blocks cannot be evaluated with two.
    """

    def __init__(
        self,
        input_dim: int,
        hidden_dim: int | None = None,
        ablate_bmip: bool = False,
        dropout: float = 0.2,
    ) -> None:
        super().__init__()
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim) if hidden_dim else self.input_dim
        self.ablate_bmip = bool(ablate_bmip)
        self.basic_contrast = None if ablate_bmip else nn.Linear(2 * self.input_dim, self.hidden_dim)
        self.incongruity = nn.Linear(2 * self.input_dim, self.hidden_dim)
        self.aggregated_contrast = nn.Linear(2 * self.input_dim, self.hidden_dim)
        n_blocks = 2 if ablate_bmip else 3
        self.classifier = nn.Linear(n_blocks * self.hidden_dim, 1)
        self.feature_dropout = nn.Dropout(dropout)

    def _check_bundle(self, bundle: FeatureBundle) -> None:
        if bundle.hidden_dim != self.input_dim:
            raise ValidationError(
                f"bundle dimension {bundle.hidden_dim} does not match head input "
                f"dimension {self.input_dim}"
            )

    def concat_features(self, bundle: FeatureBundle) -> torch.Tensor:
        blocks = []
        if not self.ablate_bmip:
            blocks.append(bmip_feature(bundle, self))
        blocks.append(amip_feature(bundle, self))
        blocks.append(spv_feature(bundle, self))
        return torch.cat(blocks, dim=-1)

    def logits(self, bundle: FeatureBundle) -> torch.Tensor:
        feats = self.feature_dropout(self.concat_features(bundle))
        return self.classifier(feats).squeeze(-1)

    def forward(self, bundle: FeatureBundle) -> torch.Tensor:
        """Differentiable scores in the head's parameter dtype."""
        return torch.sigmoid(self.logits(bundle))


def _affine(layer: nn.Linear, left: torch.Tensor, right: torch.Tensor) -> torch.Tensor:
    x = torch.cat([left, right], dim=-1).to(layer.weight.dtype)
    return layer(x)


def bmip_feature(bundle: FeatureBundle, head: ModelHead) -> torch.Tensor:
    """Basic contrast block: affine map of [contextual target, basic meaning]."""
    head._check_bundle(bundle)
    if head.basic_contrast is None:
        raise ValidationError("head was constructed with the basic contrast block ablated")
    return _affine(head.basic_contrast, bundle.v_context_target, bundle.v_basic)


def spv_feature(bundle: FeatureBundle, head: ModelHead) -> torch.Tensor:
    """Incongruity block: affine map of [sentence, contextual target]."""
    head._check_bundle(bundle)
    return _affine(head.incongruity, bundle.v_sentence, bundle.v_context_target)


def amip_feature(bundle: FeatureBundle, head: ModelHead) -> torch.Tensor:
    """Aggregated contrast block: affine map of [contextual target, decontextualized]."""
    head._check_bundle(bundle)
    return _affine(head.aggregated_contrast, bundle.v_context_target, bundle.v_aggregated)


def predict(
    bundle: FeatureBundle,
    head: ModelHead,
    threshold: float = 0.5,
    ablate_bmip: bool | None = None,
    instance_id: str | None = None,
) -> Prediction | list[Prediction]:
    """Score a bundle (or batch of bundles) with stochastic layers disabled.

    Evaluated in float64 regardless of the head's training dtype; scores are
    clamped to stay strictly inside (0, 1). Passing ``ablate_bmip`` asserts
    the head's construction-time ablation mode and rejects a mismatch.
    """
    if ablate_bmip is not None and ablate_bmip != head.ablate_bmip:
        raise ValidationError(
            f"requested ablate_bmip={ablate_bmip} but the head was constructed "
            f"with ablate_bmip={head.ablate_bmip}"
        )
    head._check_bundle(bundle)

    def lin(layer: nn.Linear, x: torch.Tensor) -> torch.Tensor:
        return x @ layer.weight.double().T + layer.bias.double()

    with torch.no_grad():
        ctx = bundle.v_context_target.double()
        blocks = []
        if not head.ablate_bmip:
            blocks.append(lin(head.basic_contrast, torch.cat([ctx, bundle.v_basic.double()], dim=-1)))
        blocks.append(lin(head.aggregated_contrast, torch.cat([ctx, bundle.v_aggregated.double()], dim=-1)))
        blocks.append(lin(head.incongruity, torch.cat([bundle.v_sentence.double(), ctx], dim=-1)))
        logit = lin(head.classifier, torch.cat(blocks, dim=-1)).squeeze(-1)

    if not torch.isfinite(logit).all():
        where = f" for instance {instance_id!r}" if instance_id else ""
        raise NumericError(f"non-finite prediction logit{where}")
    score = torch.clamp(torch.sigmoid(logit), SCORE_BOUND, 1.0 - SCORE_BOUND)

    if not bundle.batched:
        s = float(score)
        return Prediction(score=s, label_hat=int(s >= threshold))
    return [Prediction(score=float(s), label_hat=int(s >= threshold)) for s in score]


def bce_loss(
    scores,
    labels,
    reduction: str = "sum",
    eps: float = LOSS_EPS,
    pos_weight: float | None = None,
) -> float | torch.Tensor:
    """Binary cross entropy over scores in (0, 1).

    The canonical reported value is the plain sum over instances; mean
    reduction is available for optimization. Scores are clamped to
    [eps, 1 - eps] before the logs. ``pos_weight`` optionally scales the
    positive-class term (the default keeps the loss unweighted).

    Tensor inputs keep their dtype and gradient; list/array inputs are
    evaluated in float64 and returned as a plain float.
    """
    if reduction not in ("sum", "mean"):
        raise ValidationError(f"unknown reduction {reduction!r}")
    return_tensor = isinstance(scores, torch.Tensor)
    if not return_tensor:
        scores = torch.as_tensor(np.asarray(scores, dtype=np.float64))
    labels_t = torch.as_tensor(
        np.asarray(labels, dtype=np.float64) if not isinstance(labels, torch.Tensor) else labels
    ).to(scores.dtype)
    if labels_t.shape != scores.shape:
        raise ValidationError(
            f"scores and labels disagree in shape: {tuple(scores.shape)} vs {tuple(labels_t.shape)}"
        )
    if scores.numel() == 0:
        raise ValidationError("loss requires at least one instance")
    if not bool(((labels_t == 0) | (labels_t == 1)).all()):
        raise ValidationError("labels must all be 0 or 1")

    clamped = torch.clamp(scores, eps, 1.0 - eps)
    pos = labels_t * torch.log(clamped)
    if pos_weight is not None:
        pos = pos_weight * pos
    terms = pos + (1.0 - labels_t) * torch.log(1.0 - clamped)
    loss = -terms.sum() if reduction == "sum" else -terms.mean()
    return loss if return_tensor else float(loss)
