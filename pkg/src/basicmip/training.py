"""Joint fine-tuning of encoder and head with deterministic seeding.

One optimization stream: mini-batches in a seed-derived order, decoupled
weight decay with separate encoder and head learning rates, linear warmup
into linear decay. The basic-meaning branch always excludes the instance
being scored from its own pool.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import random
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import torch

from . import __version__
from .basic_index import BasicIndex
from .corpus import POOLING_MODES, Corpus
from .encoder import Encoder, build_encoder
from .errors import (
    BasicMipError,
    ConfigurationError,
    DegenerateCaseError,
    FingerprintMismatchError,
    NumericError,
    ValidationError,
)
from .evaluation import EvalReport, compute_metrics, paired_ttest
from .manifest import fingerprint_instances, fingerprint_mapping, fingerprint_text
from .model import ModelHead, bce_loss
from .pipeline import bundle_batch, predict_instances

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a run; defaults are recorded in each checkpoint."""

    seed: int = 13
    epochs: int = 30
    batch_size: int = 8
    encoder_lr: float = 3e-5
    head_lr: float = 1e-3
    pool_size: int = 5
    key_policy: str = "surface"
    ablate_bmip: bool = False
    resample_per_epoch: bool = False
    threshold: float = 0.5
    clamp_eps: float = 1e-7
    max_len: int = 512
    pooling: str = "first_piece"
    encoder_mode: str = "toy"
    hidden_dim: int = 16
    encoder_seed: int = 0
    identity_mixing: bool = False
    max_word_chars: int = 0
    checkpoint: str | None = None
    freeze_layers: int = 0
    head_hidden_dim: int | None = None
    dropout: float = 0.2
    weight_decay: float = 0.01
    warmup_frac: float = 0.1
    pos_weight: float | None = None
    num_threads: int | None = None

    def __post_init__(self) -> None:
        positive = {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "encoder_lr": self.encoder_lr,
            "head_lr": self.head_lr,
            "pool_size": self.pool_size,
            "max_len": self.max_len,
            "hidden_dim": self.hidden_dim,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigurationError(f"{name} must be > 0, got {value}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(f"threshold must lie in (0, 1), got {self.threshold}")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ConfigurationError(f"clamp_eps must lie in (0, 0.5), got {self.clamp_eps}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ConfigurationError(f"warmup_frac must lie in [0, 1), got {self.warmup_frac}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        if self.pooling not in POOLING_MODES:
            raise ConfigurationError(f"unknown pooling mode {self.pooling!r}")
        if self.encoder_mode not in ("toy", "pretrained"):
            raise ConfigurationError(f"unknown encoder mode {self.encoder_mode!r}")
        if self.pos_weight is not None and self.pos_weight <= 0:
            raise ConfigurationError("pos_weight must be > 0 when set")
        if self.head_hidden_dim is not None and self.head_hidden_dim <= 0:
            raise ConfigurationError("head_hidden_dim must be > 0 when set")

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        return fingerprint_mapping(self.to_dict())

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        """Read a flat json object of config keys."""
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid json: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config file {path} must hold a flat object")
        return cls.from_dict(raw)


@dataclass
class RunRecord:
    """Everything needed to audit one run and rerun it bit-for-bit."""

    seed: int
    config_fingerprint: str
    config: dict
    epoch_losses: list[float] = field(default_factory=list)
    train_f1: list[float] = field(default_factory=list)
    dev_f1: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    final_dev: dict | None = None
    final_test: dict | None = None
    wall_clock_sec: float = 0.0

    @property
    def primary_f1(self) -> float:
        """Test-split F1 when a test split exists, dev F1 otherwise."""
        report = self.final_test if self.final_test is not None else self.final_dev
        if report is None:
            raise ValidationError("run record holds no evaluation to read an F1 from")
        return report["f1"]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_fingerprint": self.config_fingerprint,
            "config": self.config,
            "epoch_losses": self.epoch_losses,
            "train_f1": self.train_f1,
            "dev_f1": self.dev_f1,
            "best_epoch": self.best_epoch,
            "final_dev": self.final_dev,
            "final_test": self.final_test,
            "wall_clock_sec": self.wall_clock_sec,
        }


def _state_fingerprint(module: torch.nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


@dataclass
class TrainedModel:
    """A trained encoder + head pair bound to its data fingerprints."""

    encoder: Encoder
    head: ModelHead
    config: TrainConfig
    corpus_fingerprint: str

    def weights_fingerprint(self) -> str:
        return fingerprint_text(
            _state_fingerprint(self.encoder) + _state_fingerprint(self.head)
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "format_version": CHECKPOINT_FORMAT_VERSION,
                "package_version": __version__,
                "config": self.config.to_dict(),
                "config_fingerprint": self.config.fingerprint(),
                "corpus_fingerprint": self.corpus_fingerprint,
                "encoder_state": self.encoder.state_dict(),
                "head_state": self.head.state_dict(),
            },
            path,
        )
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
        if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ConfigurationError(
                f"checkpoint format {payload.get('format_version')!r} is not "
                f"version {CHECKPOINT_FORMAT_VERSION}"
            )
        config = TrainConfig.from_dict(payload["config"])
        encoder = _build_run_encoder(config)
        head = ModelHead(
            encoder.hidden_dim,
            hidden_dim=config.head_hidden_dim,
            ablate_bmip=config.ablate_bmip,
            dropout=config.dropout,
        )
        encoder.load_state_dict(payload["encoder_state"])
        head.load_state_dict(payload["head_state"])
        # distinct loaded weights must never collide in a shared embedding
        # cache, so the version counter starts from a weights-derived token
        encoder.weights_version = int(_state_fingerprint(encoder)[:12], 16)
        encoder.eval()
        head.eval()
        return cls(
            encoder=encoder,
            head=head,
            config=config,
            corpus_fingerprint=payload["corpus_fingerprint"],
        )


@dataclass
class TrainResult:
    model: TrainedModel
    record: RunRecord


def _build_run_encoder(config: TrainConfig) -> Encoder:
    return build_encoder(
        config.encoder_mode,
        hidden_dim=config.hidden_dim,
        seed=config.encoder_seed,
        identity_mixing=config.identity_mixing,
        max_word_chars=config.max_word_chars,
        checkpoint=config.checkpoint,
        max_len=config.max_len,
        pooling=config.pooling,
        freeze_layers=config.freeze_layers,
    )


def _check_alignment(config: TrainConfig, corpus: Corpus, index: BasicIndex) -> None:
    expected = fingerprint_instances(corpus.split("train"))
    if expected != index.corpus_fingerprint:
        raise FingerprintMismatchError(
            "index was not built from this train split: "
            f"train split fingerprint {expected} vs index fingerprint {index.corpus_fingerprint}"
        )
    if index.key_fn_id != config.key_policy:
        raise ConfigurationError(
            f"config key policy {config.key_policy!r} does not match the "
            f"index key policy {index.key_fn_id!r}"
        )


def _split_f1(
    instances,
    encoder: Encoder,
    index: BasicIndex,
    head: ModelHead,
    config: TrainConfig,
) -> EvalReport:
    preds = predict_instances(
        instances,
        encoder,
        index,
        head,
        pool_size=config.pool_size,
        sample_seed=config.seed,
        threshold=config.threshold,
    )
    return compute_metrics(preds, [inst.label for inst in instances])


def train(
    config: TrainConfig,
    corpus: Corpus,
    index: BasicIndex,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Fine-tune encoder + head on the train split; keep the best-dev epoch.

    The test split never reaches the optimizer, the index, or checkpoint
    selection; it is scored once at the end if present. Reruns with the same
    config and seed produce identical records on the deterministic encoder.
    """
    _check_alignment(config, corpus, index)
    train_insts = list(corpus.split("train"))
    dev_insts = list(corpus.split("dev"))
    test_insts = list(corpus.split("test"))
    if not train_insts:
        raise ValidationError("corpus has an empty train split")
    if not dev_insts:
        raise ValidationError("corpus has an empty dev split")

    if config.num_threads:
        torch.set_num_threads(config.num_threads)
    torch.manual_seed(config.seed)

    index.cache.clear()
    encoder = _build_run_encoder(config)
    head = ModelHead(
        encoder.hidden_dim,
        hidden_dim=config.head_hidden_dim,
        ablate_bmip=config.ablate_bmip,
        dropout=config.dropout,
    )

    param_groups = []
    encoder_params = [p for p in encoder.parameters() if p.requires_grad]
    if encoder_params:
        param_groups.append({"params": encoder_params, "lr": config.encoder_lr})
    param_groups.append({"params": list(head.parameters()), "lr": config.head_lr})
    optimizer = torch.optim.AdamW(param_groups, weight_decay=config.weight_decay)

    batches_per_epoch = math.ceil(len(train_insts) / config.batch_size)
    total_steps = config.epochs * batches_per_epoch
    warmup_steps = max(1, round(config.warmup_frac * total_steps)) if config.warmup_frac > 0 else 0

    def lr_lambda(step: int) -> float:
        if warmup_steps and step < warmup_steps:
            return (step + 1) / warmup_steps
        if total_steps == warmup_steps:
            return 1.0
        return max(0.0, (total_steps - step) / (total_steps - warmup_steps))

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_lambda)

    record = RunRecord(seed=config.seed, config_fingerprint=config.fingerprint(), config=config.to_dict())
    best_dev = -1.0
    best_state: tuple[dict, dict] | None = None
    started = time.perf_counter()

    for epoch in range(config.epochs):
        order = list(range(len(train_insts)))
        random.Random(f"{config.seed}:epoch:{epoch}").shuffle(order)
        sample_seed = config.seed + epoch if config.resample_per_epoch else config.seed

        encoder.train()
        head.train()
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_insts[i] for i in order[start : start + config.batch_size]]
            optimizer.zero_grad()
            bundle = bundle_batch(
                batch, encoder, index, pool_size=config.pool_size, sample_seed=sample_seed
            )
            scores = head(bundle)
            labels = torch.tensor([inst.label for inst in batch], dtype=scores.dtype)
            loss_sum = bce_loss(
                scores, labels, reduction="sum", eps=config.clamp_eps, pos_weight=config.pos_weight
            )
            value = float(loss_sum.detach())
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite loss {value} at epoch {epoch} step {start // config.batch_size}"
                )
            (loss_sum / len(batch)).backward()
            optimizer.step()
            scheduler.step()
            encoder.bump_weights_version()
            epoch_loss += value

        record.epoch_losses.append(epoch_loss)
        record.train_f1.append(_split_f1(train_insts, encoder, index, head, config).f1)
        dev_report = _split_f1(dev_insts, encoder, index, head, config)
        record.dev_f1.append(dev_report.f1)
        if dev_report.f1 > best_dev:
            best_dev = dev_report.f1
            record.best_epoch = epoch
            best_state = (
                copy.deepcopy(encoder.state_dict()),
                copy.deepcopy(head.state_dict()),
            )

    if best_state is not None:
        encoder.load_state_dict(best_state[0])
        head.load_state_dict(best_state[1])
    encoder.eval()
    head.eval()

    record.final_dev = _split_f1(dev_insts, encoder, index, head, config).to_dict()
    if test_insts:
        record.final_test = _split_f1(test_insts, encoder, index, head, config).to_dict()
    record.wall_clock_sec = time.perf_counter() - started

    model = TrainedModel(
        encoder=encoder,
        head=head,
        config=config,
        corpus_fingerprint=index.corpus_fingerprint,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        model.save(out / "model.pt")
        (out / "run_record.json").write_text(
            json.dumps(record.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
    return TrainResult(model=model, record=record)


class SuiteAbortedError(BasicMipError):
    """A member run failed; completed records ride along for inspection."""

    def __init__(self, message: str, full_records: list, ablated_records: list) -> None:
        super().__init__(message)
        self.full_records = full_records
        self.ablated_records = ablated_records


@dataclass
class SeedSuiteResult:
    seeds: list[int]
    records: list[RunRecord]
    ablated_records: list[RunRecord]
    paired_f1: list[tuple[float, float]]
    p_value: float | None
    note: str | None = None

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "records": [r.to_dict() for r in self.records],
            "ablated_records": [r.to_dict() for r in self.ablated_records],
            "paired_f1": [list(pair) for pair in self.paired_f1],
            "p_value": self.p_value,
            "note": self.note,
        }


def run_seed_suite(
    config: TrainConfig,
    corpus: Corpus,
    index: BasicIndex,
    n_seeds: int = 10,
    seeds: list[int] | None = None,
    compare_ablated: bool = True,
    out_dir: str | Path | None = None,
) -> SeedSuiteResult:
    """Train per seed (full and, by default, ablated) and pair the F1 scores.

    Seeds default to base_seed + 0..n-1. The paired table feeds the paired
    t-test; with fewer than 2 distinct F1 differences the p-value is left
    unset with a note instead of a hard failure.
    """
    if seeds is None:
        if n_seeds < 2:
            raise ValidationError(f"a seed suite needs n_seeds >= 2, got {n_seeds}")
        seeds = [config.seed + i for i in range(n_seeds)]
    if len(seeds) < 2:
        raise ValidationError("a seed suite needs at least 2 seeds")
    if len(set(seeds)) != len(seeds):
        raise ValidationError(f"seeds must be distinct, got {seeds}")

    full_records: list[RunRecord] = []
    ablated_records: list[RunRecord] = []
    for seed in seeds:
        try:
            full = train(replace(config, seed=seed, ablate_bmip=False), corpus, index)
            full_records.append(full.record)
            if compare_ablated:
                ablated = train(replace(config, seed=seed, ablate_bmip=True), corpus, index)
                ablated_records.append(ablated.record)
        except BasicMipError as exc:
            raise SuiteAbortedError(
                f"seed {seed} failed: {exc}", full_records, ablated_records
            ) from exc

    paired = []
    p_value = None
    note = None
    if compare_ablated:
        paired = [
            (full.primary_f1, ablated.primary_f1)
            for full, ablated in zip(full_records, ablated_records)
        ]
        try:
            p_value = paired_ttest(paired).p_value
        except DegenerateCaseError as exc:
            note = str(exc)

    result = SeedSuiteResult(
        seeds=list(seeds),
        records=full_records,
        ablated_records=ablated_records,
        paired_f1=paired,
        p_value=p_value,
        note=note,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "seed_suite.json").write_text(
            json.dumps(result.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
    return result
