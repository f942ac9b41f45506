"""Evaluation: metrics, breakdowns, contrast statistics, significance, PCA.

Everything here is pure over immutable inputs. Reports carry raw confusion
counts plus derived rates; table formatting rounds percentages half-even to
one decimal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np
import torch
from scipy import stats

from .basic_index import BasicIndex, sample_pool
from .corpus import AnnotatedInstance
from .encoder import Encoder
from .errors import DegenerateCaseError, ValidationError
from .model import FeatureBundle, Prediction
from .pipeline import extract_features


def percent(value: float) -> str:
    """Format a rate in [0, 1] as a percentage with one half-even decimal."""
    return str(Decimal(repr(value * 100.0)).quantize(Decimal("0.1"), rounding=ROUND_HALF_EVEN))


@dataclass(frozen=True)
class EvalReport:
    """Confusion counts and the rates derived from them."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValidationError(f"confusion count {name} must be >= 0")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0

    @property
    def degenerate(self) -> bool:
        """True when precision or recall had a zero denominator."""
        return self.tp + self.fp == 0 or self.tp + self.fn == 0

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "degenerate": self.degenerate,
        }

    def format_row(self) -> str:
        row = (
            f"P {percent(self.precision)}  R {percent(self.recall)}  "
            f"F1 {percent(self.f1)}  Acc {percent(self.accuracy)}"
        )
        if self.degenerate:
            row += "  (degenerate: no positives on one side)"
        return row


def _hat(prediction) -> int:
    label = getattr(prediction, "label_hat", prediction)
    if label not in (0, 1):
        raise ValidationError(f"predicted label must be 0 or 1, got {label!r}")
    return int(label)


def compute_metrics(predictions, labels) -> EvalReport:
    """Exhaustive confusion tally over aligned prediction/label lists."""
    if len(predictions) != len(labels):
        raise ValidationError(
            f"{len(predictions)} predictions against {len(labels)} labels"
        )
    if not predictions:
        raise ValidationError("metrics require at least one instance")
    tp = fp = fn = tn = 0
    for pred, gold in zip(predictions, labels):
        if gold not in (0, 1):
            raise ValidationError(f"gold label must be 0 or 1, got {gold!r}")
        hat = _hat(pred)
        if hat == 1 and gold == 1:
            tp += 1
        elif hat == 1 and gold == 0:
            fp += 1
        elif hat == 0 and gold == 1:
            fn += 1
        else:
            tn += 1
    return EvalReport(tp=tp, fp=fp, fn=fn, tn=tn)


@dataclass(frozen=True)
class BucketReport:
    """Metrics for one breakdown bucket plus its size counts."""

    name: str
    n_samples: int
    n_targets: int
    report: EvalReport | None
    note: str | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_samples": self.n_samples,
            "n_targets": self.n_targets,
            "metrics": self.report.to_dict() if self.report else None,
            "note": self.note,
        }


@dataclass(frozen=True)
class BreakdownReport:
    has_literal: BucketReport
    no_literal: BucketReport

    def to_dict(self) -> dict:
        return {"has_literal": self.has_literal.to_dict(), "no_literal": self.no_literal.to_dict()}

    def format_table(self) -> str:
        lines = [f"{'bucket':<12} {'#sample':>8} {'#target':>8}  metrics"]
        for bucket in (self.has_literal, self.no_literal):
            metrics = bucket.report.format_row() if bucket.report else "(empty bucket)"
            if bucket.note:
                metrics += f"  [{bucket.note}]"
            lines.append(f"{bucket.name:<12} {bucket.n_samples:>8} {bucket.n_targets:>8}  {metrics}")
        return "\n".join(lines)


def breakdown_eval(
    predictions,
    instances: list[AnnotatedInstance],
    index: BasicIndex,
    agreement_ceiling: float | None = None,
) -> BreakdownReport:
    """Partition instances by whether their key has literal annotations.

    Bucket sizes always sum to the instance count and the bucket key sets
    are disjoint by construction. ``agreement_ceiling`` annotates (never
    asserts) a has-literal F1 at or above the human-agreement reference.
    """
    if len(predictions) != len(instances):
        raise ValidationError(
            f"{len(predictions)} predictions against {len(instances)} instances"
        )
    split: dict[bool, list[tuple[int, AnnotatedInstance]]] = {True: [], False: []}
    for pred, inst in zip(predictions, instances):
        key = index.key_for(inst.target_word)
        split[index.has_pool(key)].append((_hat(pred), inst))

    def bucket(name: str, rows) -> BucketReport:
        keys = {index.key_for(inst.target_word) for _, inst in rows}
        report = None
        note = None
        if rows:
            report = compute_metrics([hat for hat, _ in rows], [inst.label for _, inst in rows])
            if agreement_ceiling is not None and report.f1 >= agreement_ceiling:
                note = f"F1 at or above the {percent(agreement_ceiling)}% agreement ceiling"
        return BucketReport(name=name, n_samples=len(rows), n_targets=len(keys), report=report, note=note)

    return BreakdownReport(
        has_literal=bucket("has_literal", split[True]),
        no_literal=bucket("no_literal", split[False]),
    )


def cosine_contrast(u: torch.Tensor, v: torch.Tensor) -> float:
    """Cosine similarity in float64; 1.0 means no contrast at all.

    Raises on zero-norm input so callers can apply their exclusion policy.
    """
    a = u.detach().to(torch.float64).reshape(-1)
    b = v.detach().to(torch.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValidationError(f"vector shapes differ: {tuple(u.shape)} vs {tuple(v.shape)}")
    na = float(torch.linalg.vector_norm(a))
    nb = float(torch.linalg.vector_norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateCaseError("cosine contrast undefined for a zero-norm vector")
    value = float(torch.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, value))


def _group_mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


@dataclass(frozen=True)
class ContrastStats:
    """Mean similarities per gold label for the two embedding pairings."""

    ctx_vs_basic_literal: float | None
    ctx_vs_basic_metaphor: float | None
    ctx_vs_frequent_literal: float | None
    ctx_vs_frequent_metaphor: float | None
    n_literal: int
    n_metaphor: int
    excluded_zero_norm: int

    def to_dict(self) -> dict:
        return {
            "ctx_vs_basic": {"literal": self.ctx_vs_basic_literal, "metaphor": self.ctx_vs_basic_metaphor},
            "ctx_vs_frequent": {"literal": self.ctx_vs_frequent_literal, "metaphor": self.ctx_vs_frequent_metaphor},
            "n_literal": self.n_literal,
            "n_metaphor": self.n_metaphor,
            "excluded_zero_norm": self.excluded_zero_norm,
        }

    def format_table(self) -> str:
        def cell(x: float | None) -> str:
            return "n/a" if x is None else f"{x:.3f}"

        return "\n".join(
            [
                f"{'pairing':<24} {'metaphor':>9} {'literal':>9}",
                f"{'ctx vs basic':<24} {cell(self.ctx_vs_basic_metaphor):>9} {cell(self.ctx_vs_basic_literal):>9}",
                f"{'ctx vs decontextual':<24} {cell(self.ctx_vs_frequent_metaphor):>9} {cell(self.ctx_vs_frequent_literal):>9}",
            ]
        )


def contrast_measure(
    instances: list[AnnotatedInstance],
    encoder: Encoder,
    index: BasicIndex,
    *,
    pool_size: int = 5,
    sample_seed: int = 0,
    exclude_self: bool = True,
) -> ContrastStats:
    """Cosine similarity of the raw bundle vectors, averaged per gold label.

    Pairings are contextual-target vs. basic-meaning and contextual-target
    vs. decontextualized. Instances contributing a zero-norm vector are
    excluded and counted.
    """
    if not instances:
        raise ValidationError("contrast statistics require at least one instance")
    basic: dict[int, list[float]] = {0: [], 1: []}
    frequent: dict[int, list[float]] = {0: [], 1: []}
    counted: dict[int, int] = {0: 0, 1: 0}
    excluded = 0
    encoder.eval()
    with torch.no_grad():
        for inst in instances:
            bundle = extract_features(
                inst,
                encoder,
                index,
                pool_size=pool_size,
                sample_seed=sample_seed,
                exclude_self=exclude_self,
            )
            try:
                cb = cosine_contrast(bundle.v_context_target, bundle.v_basic)
                cf = cosine_contrast(bundle.v_context_target, bundle.v_aggregated)
            except DegenerateCaseError:
                excluded += 1
                continue
            basic[inst.label].append(cb)
            frequent[inst.label].append(cf)
            counted[inst.label] += 1
    return ContrastStats(
        ctx_vs_basic_literal=_group_mean(basic[0]),
        ctx_vs_basic_metaphor=_group_mean(basic[1]),
        ctx_vs_frequent_literal=_group_mean(frequent[0]),
        ctx_vs_frequent_metaphor=_group_mean(frequent[1]),
        n_literal=counted[0],
        n_metaphor=counted[1],
        excluded_zero_norm=excluded,
    )


@dataclass(frozen=True)
class TTestResult:
    t_stat: float
    p_value: float
    n: int
    mean_diff: float
    sd_diff: float

    def to_dict(self) -> dict:
        return {
            "t_stat": self.t_stat,
            "p_value": self.p_value,
            "n": self.n,
            "mean_diff": self.mean_diff,
            "sd_diff": self.sd_diff,
        }


def paired_ttest(pairs: list[tuple[float, float]]) -> TTestResult:
    """Two-tailed paired t-test on the differences a_i - b_i.

    t = mean(d) / (sd(d) / sqrt(n)) with the n-1 denominator in sd; the
    p-value doubles the upper tail of the t distribution with n-1 degrees
    of freedom. Zero variance of the differences leaves p undefined.
    """
    if len(pairs) < 2:
        raise ValidationError("paired test requires at least 2 pairs")
    diffs = [float(a) - float(b) for a, b in pairs]
    n = len(diffs)
    mean_d = sum(diffs) / n
    ss = sum((d - mean_d) ** 2 for d in diffs)
    if ss == 0.0:
        raise DegenerateCaseError("all paired differences are identical; p-value undefined")
    sd = (ss / (n - 1)) ** 0.5
    t_stat = mean_d / (sd / n**0.5)
    p_value = 2.0 * float(stats.t.sf(abs(t_stat), n - 1))
    return TTestResult(t_stat=t_stat, p_value=min(1.0, p_value), n=n, mean_diff=mean_d, sd_diff=sd)


@dataclass(frozen=True)
class CaseStudyEntry:
    """One instance the full model gets right and the ablation gets wrong."""

    target_word: str
    sentence: str
    gold: int
    full_label: int
    ablated_label: int
    basic_examples: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "target": self.target_word,
            "sentence": self.sentence,
            "gold": self.gold,
            "full_label": self.full_label,
            "ablated_label": self.ablated_label,
            "basic_examples": list(self.basic_examples),
        }


def case_study(
    pred_full,
    pred_ablated,
    instances: list[AnnotatedInstance],
    index: BasicIndex | None = None,
    *,
    max_examples: int = 3,
    sample_seed: int = 0,
) -> list[CaseStudyEntry]:
    """Instances where the full model is correct and the ablation is not.

    Each case carries up to ``max_examples`` sentences from the target's
    basic pool when an index is given.
    """
    if not (len(pred_full) == len(pred_ablated) == len(instances)):
        raise ValidationError(
            "case study needs aligned predictions: "
            f"{len(pred_full)} full, {len(pred_ablated)} ablated, {len(instances)} instances"
        )
    cases = []
    for full, ablated, inst in zip(pred_full, pred_ablated, instances):
        full_hat, abl_hat = _hat(full), _hat(ablated)
        if full_hat != inst.label or abl_hat == inst.label:
            continue
        examples: tuple[str, ...] = ()
        if index is not None:
            key = index.key_for(inst.target_word)
            refs = sample_pool(index, key, max_examples, sample_seed) if index.has_pool(key) else []
            examples = tuple(
                index.resolve(ref).sentence_text for ref in refs if ref != inst.ref
            )[:max_examples]
        cases.append(
            CaseStudyEntry(
                target_word=inst.target_word,
                sentence=inst.sentence_text,
                gold=inst.label,
                full_label=full_hat,
                ablated_label=abl_hat,
                basic_examples=examples,
            )
        )
    return cases


@dataclass(frozen=True)
class PcaResult:
    """2-D projection rows plus explained-variance ratios."""

    coordinates: tuple[tuple[str, float, float], ...]
    explained_variance: tuple[float, float]
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "coordinates": [list(row) for row in self.coordinates],
            "explained_variance": list(self.explained_variance),
            "degenerate": self.degenerate,
        }


def pca_export(vectors: list[tuple[str, np.ndarray]]) -> PcaResult:
    """Mean-centered projection onto the top two principal components.

    Components come from the singular value decomposition of the centered
    matrix, ordered by decreasing variance; each component's sign is pinned
    so its largest-magnitude loading is positive. All-identical input is
    flagged degenerate with zero coordinates.
    """
    if len(vectors) < 2:
        raise ValidationError("projection requires at least 2 vectors")
    labels = [label for label, _ in vectors]
    x = np.asarray([np.asarray(vec, dtype=np.float64).reshape(-1) for _, vec in vectors])
    if x.shape[1] < 2:
        raise ValidationError("projection requires at least 2 dimensions")
    centered = x - x.mean(axis=0)
    total_var = float((centered**2).sum())
    if total_var == 0.0:
        coords = tuple((label, 0.0, 0.0) for label in labels)
        return PcaResult(coordinates=coords, explained_variance=(0.0, 0.0), degenerate=True)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2].copy()
    if components.shape[0] < 2:
        components = np.vstack([components, np.zeros_like(components[0])])
        s = np.concatenate([s, [0.0]])
    for i in range(2):
        pivot = int(np.argmax(np.abs(components[i])))
        if components[i, pivot] < 0:
            components[i] = -components[i]
    projected = centered @ components.T
    ratios = (float(s[0] ** 2 / total_var), float(s[1] ** 2 / total_var))
    coords = tuple(
        (label, float(projected[i, 0]), float(projected[i, 1])) for i, label in enumerate(labels)
    )
    return PcaResult(coordinates=coords, explained_variance=ratios, degenerate=False)
