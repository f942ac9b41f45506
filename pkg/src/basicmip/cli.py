"""Command line entry point: ingest -> build-index -> train -> analyze.

Config precedence is CLI flag > config file > built-in default, and the
resolved configuration is echoed into the output directory's manifest so
every under-documented knob stays auditable. Output and cache locations
come from BASICMIP_OUTPUT_ROOT and BASICMIP_CACHE_DIR unless overridden by
--output-root / --cache-dir.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .basic_index import BasicIndex, EmbeddingCache, build_basic_index
from .corpus import CORPUS_FORMATS, SPLITS, Corpus, load_corpus, load_split_dir, save_corpus_jsonl
from .errors import BasicMipError, ConfigurationError, ValidationError
from .evaluation import (
    breakdown_eval,
    case_study,
    compute_metrics,
    contrast_measure,
    paired_ttest,
    pca_export,
)
from .keying import get_key_policy
from .manifest import (
    RunManifest,
    fingerprint_instances,
    fingerprint_mapping,
    fingerprint_text,
    write_manifest,
)
from .pipeline import extract_features, predict_instances
from .training import TrainConfig, TrainedModel, run_seed_suite, train

OUTPUT_ROOT_VAR = "BASICMIP_OUTPUT_ROOT"
CACHE_DIR_VAR = "BASICMIP_CACHE_DIR"


def _resolve_out(args) -> Path:
    out = Path(args.out)
    if not out.is_absolute():
        root = args.output_root or os.environ.get(OUTPUT_ROOT_VAR)
        if root:
            out = Path(root) / out
    return out


def cache_dir(args) -> Path | None:
    raw = getattr(args, "cache_dir", None) or os.environ.get(CACHE_DIR_VAR)
    return Path(raw) if raw else None


def _load_any_corpus(path: str, format: str | None = None, split: str | None = None) -> Corpus:
    p = Path(path)
    if p.is_dir():
        return load_split_dir(p)
    if format is None:
        format = "normalized_jsonl" if p.suffix == ".jsonl" else "vua_shared_task"
    return load_corpus(p, format=format, split=split)


def _load_model(path: str) -> TrainedModel:
    return TrainedModel.load(path)


def _split_instances(corpus: Corpus, split: str):
    instances = list(corpus.split(split))
    if not instances:
        raise ValidationError(f"corpus has no instances in split {split!r}")
    return instances


def _predictions(model: TrainedModel, instances, index: BasicIndex):
    cfg = model.config
    return predict_instances(
        instances,
        model.encoder,
        index,
        model.head,
        pool_size=cfg.pool_size,
        sample_seed=cfg.seed,
        threshold=cfg.threshold,
    )


def _open_pool_cache(model: TrainedModel, index: BasicIndex, args) -> Path | None:
    """Attach a persisted pool-vector cache keyed by the model's weights."""
    base = cache_dir(args)
    if base is None:
        return None
    base.mkdir(parents=True, exist_ok=True)
    path = base / f"pools-{model.weights_fingerprint()[:16]}.npz"
    if path.exists():
        index.cache = EmbeddingCache.load(path)
    return path


def _save_pool_cache(index: BasicIndex, path: Path | None) -> None:
    if path is not None and len(index.cache):
        index.cache.save(path)


def _check_model_index(model: TrainedModel, index: BasicIndex) -> None:
    if model.corpus_fingerprint != index.corpus_fingerprint:
        raise ConfigurationError(
            "model and index disagree on training data: "
            f"model fingerprint {model.corpus_fingerprint} vs "
            f"index fingerprint {index.corpus_fingerprint}"
        )


def _write_report(out: Path, name: str, payload: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


def _emit_manifest(out: Path, command: str, config_fp: str, data_fps: dict, seed, artifacts) -> None:
    write_manifest(
        out,
        RunManifest(
            command=command,
            config_fingerprint=config_fp,
            data_fingerprints=data_fps,
            seed=seed,
            artifacts=tuple(str(a) for a in artifacts),
        ),
    )


def _resolved_config(args) -> TrainConfig:
    """CLI flag > config file > defaults."""
    base = TrainConfig.from_file(args.config).to_dict() if args.config else {}
    overrides = {
        name: getattr(args, name)
        for name in TrainConfig.__dataclass_fields__
        if getattr(args, name, None) is not None
    }
    base.update(overrides)
    return TrainConfig.from_dict(base)


def cmd_ingest(args) -> int:
    corpus = _load_any_corpus(args.data, format=args.format, split=args.split)
    out = _resolve_out(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "corpus.jsonl"
    save_corpus_jsonl(corpus, path)
    counts = corpus.split_counts
    print(f"ingested {len(corpus)} instances {counts}; {corpus.malformed} malformed rows skipped")
    for warning in corpus.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    _emit_manifest(
        out,
        "ingest",
        fingerprint_mapping({"format": args.format, "split": args.split}),
        {"corpus": fingerprint_instances(corpus)},
        None,
        [path.name],
    )
    return 0


def cmd_build_index(args) -> int:
    corpus = _load_any_corpus(args.data)
    train_corpus = corpus.split("train")
    index = build_basic_index(train_corpus, key_policy=args.key_policy)
    out = _resolve_out(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "index.json"
    index.save(path)
    n_pools = len(index.pools)
    n_refs = sum(len(pool) for pool in index.pools.values())
    print(f"indexed {n_refs} literal instances across {n_pools} target keys")
    _emit_manifest(
        out,
        "build-index",
        fingerprint_mapping({"key_policy": args.key_policy}),
        {"train_split": index.corpus_fingerprint},
        None,
        [path.name],
    )
    return 0


def _load_index_for(corpus: Corpus, path: str) -> BasicIndex:
    return BasicIndex.load(path, corpus)


def cmd_train(args) -> int:
    config = _resolved_config(args)
    corpus = _load_any_corpus(args.data)
    index = _load_index_for(corpus, args.index)
    out = _resolve_out(args)
    result = train(config, corpus, index, out_dir=out)
    record = result.record
    final = record.final_test if record.final_test is not None else record.final_dev
    print(
        f"trained seed {config.seed} for {config.epochs} epochs; "
        f"best dev epoch {record.best_epoch}; final F1 {final['f1']:.4f}"
    )
    _emit_manifest(
        out,
        "train",
        config.fingerprint(),
        {"train_split": index.corpus_fingerprint, "corpus": fingerprint_instances(corpus)},
        config.seed,
        ["model.pt", "run_record.json"],
    )
    return 0


def cmd_seed_suite(args) -> int:
    config = _resolved_config(args)
    corpus = _load_any_corpus(args.data)
    index = _load_index_for(corpus, args.index)
    out = _resolve_out(args)
    result = run_seed_suite(
        config,
        corpus,
        index,
        n_seeds=args.n_seeds,
        compare_ablated=not args.skip_ablated,
        out_dir=out,
    )
    if result.paired_f1:
        for seed, (full_f1, abl_f1) in zip(result.seeds, result.paired_f1):
            print(f"seed {seed}: full F1 {full_f1:.4f}  ablated F1 {abl_f1:.4f}")
        p = "undefined" if result.p_value is None else f"{result.p_value:.6f}"
        print(f"paired two-tailed p = {p}")
    else:
        for seed, record in zip(result.seeds, result.records):
            print(f"seed {seed}: full F1 {record.primary_f1:.4f}")
    _emit_manifest(
        out,
        "seed-suite",
        config.fingerprint(),
        {"train_split": index.corpus_fingerprint},
        config.seed,
        ["seed_suite.json"],
    )
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args.model)
    corpus = _load_any_corpus(args.data)
    index = _load_index_for(corpus, args.index)
    _check_model_index(model, index)
    instances = _split_instances(corpus, args.split)
    cache_path = _open_pool_cache(model, index, args)
    preds = _predictions(model, instances, index)
    _save_pool_cache(index, cache_path)
    report = compute_metrics(preds, [inst.label for inst in instances])
    print(report.format_row())
    out = _resolve_out(args)
    path = _write_report(out, "eval.json", {"split": args.split, "metrics": report.to_dict()})
    _emit_manifest(
        out,
        "eval",
        model.config.fingerprint(),
        {"train_split": index.corpus_fingerprint},
        model.config.seed,
        [path.name],
    )
    return 0


def cmd_breakdown(args) -> int:
    model = _load_model(args.model)
    corpus = _load_any_corpus(args.data)
    index = _load_index_for(corpus, args.index)
    _check_model_index(model, index)
    instances = _split_instances(corpus, args.split)
    cache_path = _open_pool_cache(model, index, args)
    preds = _predictions(model, instances, index)
    _save_pool_cache(index, cache_path)
    report = breakdown_eval(preds, instances, index, agreement_ceiling=args.agreement_ceiling)
    print(report.format_table())
    out = _resolve_out(args)
    path = _write_report(out, "breakdown.json", {"split": args.split, **report.to_dict()})
    _emit_manifest(
        out,
        "breakdown",
        model.config.fingerprint(),
        {"train_split": index.corpus_fingerprint},
        model.config.seed,
        [path.name],
    )
    return 0


def cmd_contrast(args) -> int:
    model = _load_model(args.model)
    corpus = _load_any_corpus(args.data)
    index = _load_index_for(corpus, args.index)
    _check_model_index(model, index)
    instances = _split_instances(corpus, args.split)
    cache_path = _open_pool_cache(model, index, args)
    stats = contrast_measure(
        instances,
        model.encoder,
        index,
        pool_size=model.config.pool_size,
        sample_seed=model.config.seed,
    )
    _save_pool_cache(index, cache_path)
    print(stats.format_table())
    out = _resolve_out(args)
    path = _write_report(out, "contrast.json", {"split": args.split, **stats.to_dict()})
    _emit_manifest(
        out,
        "contrast",
        model.config.fingerprint(),
        {"train_split": index.corpus_fingerprint},
        model.config.seed,
        [path.name],
    )
    return 0


def cmd_ttest(args) -> int:
    payload = json.loads(Path(args.pairs).read_text(encoding="utf-8"))
    if isinstance(payload, dict):
        pairs = [tuple(pair) for pair in payload.get("paired_f1", [])]
    else:
        pairs = [tuple(pair) for pair in payload]
    result = paired_ttest(pairs)
    print(f"t = {result.t_stat:.6f}  p = {result.p_value:.6f}  (n = {result.n})")
    if args.out:
        out = _resolve_out(args)
        path = _write_report(out, "ttest.json", result.to_dict())
        _emit_manifest(
            out,
            "ttest",
            fingerprint_text(json.dumps(pairs)),
            {},
            None,
            [path.name],
        )
    return 0


def cmd_casestudy(args) -> int:
    model = _load_model(args.model)
    ablated = _load_model(args.ablated_model)
    if not ablated.head.ablate_bmip:
        raise ConfigurationError("--ablated-model must point at a model trained with ablate_bmip")
    corpus = _load_any_corpus(args.data)
    index = _load_index_for(corpus, args.index)
    _check_model_index(model, index)
    _check_model_index(ablated, index)
    instances = _split_instances(corpus, args.split)
    cache_path = _open_pool_cache(model, index, args)
    preds_full = _predictions(model, instances, index)
    _save_pool_cache(index, cache_path)
    # the ablated encoder has its own weights, so it gets a separate cache
    ablated_cache = _open_pool_cache(ablated, index, args)
    preds_ablated = _predictions(ablated, instances, index)
    _save_pool_cache(index, ablated_cache)
    cases = case_study(
        preds_full,
        preds_ablated,
        instances,
        index,
        max_examples=args.max_examples,
        sample_seed=model.config.seed,
    )
    print(f"{len(cases)} cases where the full model corrects the ablation")
    for case in cases[: args.max_cases]:
        print(f"  [{case.target_word}] {case.sentence}")
        for example in case.basic_examples:
            print(f"      basic: {example}")
    out = _resolve_out(args)
    path = _write_report(
        out, "casestudy.json", {"split": args.split, "cases": [c.to_dict() for c in cases]}
    )
    _emit_manifest(
        out,
        "casestudy",
        model.config.fingerprint(),
        {"train_split": index.corpus_fingerprint},
        model.config.seed,
        [path.name],
    )
    return 0


def cmd_pca_export(args) -> int:
    model = _load_model(args.model)
    corpus = _load_any_corpus(args.data)
    index = _load_index_for(corpus, args.index)
    _check_model_index(model, index)
    instances = _split_instances(corpus, args.split)
    if args.target_word:
        key = index.key_for(args.target_word)
        instances = [i for i in instances if index.key_for(i.target_word) == key]
        if not instances:
            raise ValidationError(f"no instances with target key {key!r} in split {args.split!r}")
    labeled = []
    for inst in instances:
        bundle = extract_features(
            inst,
            model.encoder,
            index,
            pool_size=model.config.pool_size,
            sample_seed=model.config.seed,
        )
        name = "metaphor" if inst.label == 1 else "literal"
        labeled.append((f"{inst.target_word}:{name}", bundle.v_context_target.detach().numpy()))
    result = pca_export(labeled)
    out = _resolve_out(args)
    out.mkdir(parents=True, exist_ok=True)
    table = out / "pca.tsv"
    lines = ["label\tx\ty"] + [f"{label}\t{x:.6f}\t{y:.6f}" for label, x, y in result.coordinates]
    table.write_text("\n".join(lines) + "\n", encoding="utf-8")
    path = _write_report(out, "pca.json", {"split": args.split, **result.to_dict()})
    ev = result.explained_variance
    print(f"projected {len(labeled)} vectors; explained variance {ev[0]:.3f} / {ev[1]:.3f}")
    _emit_manifest(
        out,
        "pca-export",
        model.config.fingerprint(),
        {"train_split": index.corpus_fingerprint},
        model.config.seed,
        [path.name, table.name],
    )
    return 0


def _add_common_out(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--out", required=required, help="output directory")
    parser.add_argument("--output-root", help=f"base for relative --out (or ${OUTPUT_ROOT_VAR})")
    parser.add_argument("--cache-dir", help=f"embedding cache directory (or ${CACHE_DIR_VAR})")


def _add_model_data_index(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", required=True, help="trained model checkpoint (model.pt)")
    parser.add_argument("--data", required=True, help="normalized jsonl file or split directory")
    parser.add_argument("--index", required=True, help="basic index file (index.json)")
    parser.add_argument("--split", default="test", choices=SPLITS, help="split to score")


def _add_config_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat json config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--encoder-lr", dest="encoder_lr", type=float)
    parser.add_argument("--head-lr", dest="head_lr", type=float)
    parser.add_argument("--pool-size", dest="pool_size", type=int)
    parser.add_argument("--key-policy", dest="key_policy")
    parser.add_argument("--threshold", type=float)
    parser.add_argument("--ablate-bmip", dest="ablate_bmip", action=argparse.BooleanOptionalAction)
    parser.add_argument(
        "--resample-per-epoch", dest="resample_per_epoch", action=argparse.BooleanOptionalAction
    )
    parser.add_argument("--encoder-mode", dest="encoder_mode", choices=("toy", "pretrained"))
    parser.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    parser.add_argument("--encoder-seed", dest="encoder_seed", type=int)
    parser.add_argument("--checkpoint", help="pretrained encoder checkpoint name or path")
    parser.add_argument("--pooling", choices=("first_piece", "mean_pieces"))
    parser.add_argument("--max-len", dest="max_len", type=int)
    parser.add_argument("--dropout", type=float)
    parser.add_argument("--num-threads", dest="num_threads", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="basicmip",
        description="metaphor detection from contextual vs. basic word meanings",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize a corpus to jsonl")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=CORPUS_FORMATS, help="input format (inferred by suffix)")
    p.add_argument("--split", choices=SPLITS, help="split for formats without a split column")
    _add_common_out(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-index", help="collect literal pools from the train split")
    p.add_argument("--data", required=True)
    p.add_argument("--key-policy", dest="key_policy", default="surface")
    _add_common_out(p)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("train", help="fine-tune encoder and head")
    p.add_argument("--data", required=True)
    p.add_argument("--index", required=True)
    _add_config_overrides(p)
    _add_common_out(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("seed-suite", help="train across seeds and pair full vs. ablated F1")
    p.add_argument("--data", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--n-seeds", dest="n_seeds", type=int, default=10)
    p.add_argument("--skip-ablated", action="store_true", help="run only the full model")
    _add_config_overrides(p)
    _add_common_out(p)
    p.set_defaults(func=cmd_seed_suite)

    p = sub.add_parser("eval", help="score a split with a trained model")
    _add_model_data_index(p)
    _add_common_out(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("breakdown", help="metrics split by literal-annotation availability")
    _add_model_data_index(p)
    p.add_argument(
        "--agreement-ceiling",
        dest="agreement_ceiling",
        type=float,
        help="annotate buckets at or above this F1 (e.g. 0.8)",
    )
    _add_common_out(p)
    p.set_defaults(func=cmd_breakdown)

    p = sub.add_parser("contrast", help="cosine similarity of bundle pairings per gold label")
    _add_model_data_index(p)
    _add_common_out(p)
    p.set_defaults(func=cmd_contrast)

    p = sub.add_parser("ttest", help="paired two-tailed t-test over an F1 pair table")
    p.add_argument("--pairs", required=True, help="json: [[a,b],...] or a seed_suite.json")
    p.add_argument("--out", help="optional output directory")
    p.add_argument("--output-root")
    p.add_argument("--cache-dir")
    p.set_defaults(func=cmd_ttest)

    p = sub.add_parser("casestudy", help="instances the full model fixes over the ablation")
    _add_model_data_index(p)
    p.add_argument("--ablated-model", dest="ablated_model", required=True)
    p.add_argument("--max-examples", dest="max_examples", type=int, default=3)
    p.add_argument("--max-cases", dest="max_cases", type=int, default=10)
    _add_common_out(p)
    p.set_defaults(func=cmd_casestudy)

    p = sub.add_parser("pca-export", help="2-D projection of contextual target embeddings")
    _add_model_data_index(p)
    p.add_argument("--target-word", dest="target_word", help="restrict to one target key")
    _add_common_out(p)
    p.set_defaults(func=cmd_pca_export)

    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except BasicMipError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
