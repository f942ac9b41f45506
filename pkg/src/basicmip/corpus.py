"""Token-annotated corpus ingestion and word-to-subword alignment.

Two input layouts are supported:

* ``vua_shared_task``: the tab-separated layout of the figurative-language
  shared tasks (header row; one annotated target per row with a sentence,
  a word index and a binary label).
* ``normalized_jsonl``: one JSON object per line with keys ``sentence_id``,
  ``tokens``, ``target_index``, ``label``, ``split``, ``pos_tag``, ``genre``.
  This is the format every downstream component consumes; the shared-task
  layout is converted into it by the importer.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

from .errors import ConfigurationError, ValidationError

SPLITS = ("train", "dev", "test")
POOLING_MODES = ("first_piece", "mean_pieces")
CORPUS_FORMATS = ("vua_shared_task", "normalized_jsonl")

LITERAL = 0
METAPHOR = 1

# Instances are referenced by (sentence_id, target_index) everywhere.
InstanceRef = tuple[str, int]

_JSONL_KEYS = ("sentence_id", "tokens", "target_index", "label", "split", "pos_tag", "genre")

# Column aliases seen across shared-task releases.
_TSV_ALIASES = {
    "sentence_id": ("index", "id", "sent_id", "sentence_id"),
    "label": ("label",),
    "sentence": ("sentence", "text"),
    "target_index": ("w_index", "word_index", "windex"),
    "pos_tag": ("pos", "postag", "pos_tag", "fgpos"),
    "genre": ("genre",),
}


@dataclass(frozen=True)
class AnnotatedInstance:
    """One sentence with a designated target word and a binary label."""

    sentence_id: str
    tokens: tuple[str, ...]
    target_index: int
    label: int
    split: str
    pos_tag: str | None = None
    genre: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValidationError(f"instance {self.sentence_id!r}: tokens must be non-empty")
        if any(not isinstance(t, str) or not t for t in self.tokens):
            raise ValidationError(f"instance {self.sentence_id!r}: every token must be a non-empty string")
        if not 0 <= self.target_index < len(self.tokens):
            raise ValidationError(
                f"instance {self.sentence_id!r}: target_index {self.target_index} "
                f"out of range for {len(self.tokens)} tokens"
            )
        if self.label not in (LITERAL, METAPHOR):
            raise ValidationError(f"instance {self.sentence_id!r}: label must be 0 or 1, got {self.label!r}")
        if self.split not in SPLITS:
            raise ValidationError(f"instance {self.sentence_id!r}: unknown split {self.split!r}")

    @property
    def target_word(self) -> str:
        return self.tokens[self.target_index]

    @property
    def ref(self) -> InstanceRef:
        return (self.sentence_id, self.target_index)

    @property
    def sentence_text(self) -> str:
        return " ".join(self.tokens)

    def to_json(self) -> dict:
        return {
            "sentence_id": self.sentence_id,
            "tokens": list(self.tokens),
            "target_index": self.target_index,
            "label": self.label,
            "split": self.split,
            "pos_tag": self.pos_tag,
            "genre": self.genre,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AnnotatedInstance":
        return cls(
            sentence_id=str(obj["sentence_id"]),
            tokens=tuple(obj["tokens"]),
            target_index=int(obj["target_index"]),
            label=int(obj["label"]),
            split=str(obj["split"]),
            pos_tag=obj.get("pos_tag"),
            genre=obj.get("genre"),
        )


@dataclass(frozen=True)
class Corpus:
    """Immutable collection of annotated instances, safe for concurrent reads."""

    instances: tuple[AnnotatedInstance, ...]
    malformed: int = 0
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "instances", tuple(self.instances))
        seen: set[tuple[str, InstanceRef]] = set()
        for inst in self.instances:
            key = (inst.split, inst.ref)
            if key in seen:
                raise ValidationError(
                    f"duplicate instance {inst.ref!r} within split {inst.split!r}"
                )
            seen.add(key)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[AnnotatedInstance]:
        return iter(self.instances)

    @property
    def split_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for inst in self.instances:
            counts[inst.split] = counts.get(inst.split, 0) + 1
        return counts

    def split(self, name: str) -> "Corpus":
        """Sub-corpus of one split, preserving instance order."""
        if name not in SPLITS:
            raise ConfigurationError(f"unknown split {name!r}, expected one of {SPLITS}")
        return Corpus(tuple(i for i in self.instances if i.split == name))

    def by_ref(self) -> dict[InstanceRef, AnnotatedInstance]:
        return {inst.ref: inst for inst in self.instances}

    def merged_with(self, other: "Corpus") -> "Corpus":
        return Corpus(
            self.instances + other.instances,
            malformed=self.malformed + other.malformed,
            warnings=self.warnings + other.warnings,
        )


@dataclass(frozen=True)
class SubwordAlignment:
    """Half-open range of encoder-piece positions owned by one word.

    Position 0 of an encoded sentence is the start-of-input marker, so the
    first word's pieces begin at position 1.
    """

    word_index: int
    start: int
    end: int
    pooling: str = "first_piece"

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise ValidationError(
                f"word {self.word_index}: empty piece range [{self.start}, {self.end})"
            )
        if self.pooling not in POOLING_MODES:
            raise ValidationError(f"unknown pooling mode {self.pooling!r}")

    @property
    def piece_range(self) -> tuple[int, int]:
        return (self.start, self.end)


def align_subwords(
    instance: AnnotatedInstance,
    piece_counts: Sequence[int],
    pooling: str = "first_piece",
) -> list[SubwordAlignment]:
    """Map each word to its piece positions given per-word piece counts.

    Ranges partition [1, 1 + total pieces): they are in word order, disjoint
    and gap-free, with position 0 reserved for the start-of-input marker.
    """
    if len(piece_counts) != len(instance.tokens):
        raise ValidationError(
            f"instance {instance.sentence_id!r}: {len(piece_counts)} piece counts "
            f"for {len(instance.tokens)} tokens"
        )
    if any(int(c) != c or c < 1 for c in piece_counts):
        raise ValidationError(
            f"instance {instance.sentence_id!r}: piece counts must be integers >= 1"
        )
    alignments = []
    start = 1
    for word_index, count in enumerate(piece_counts):
        end = start + int(count)
        alignments.append(SubwordAlignment(word_index, start, end, pooling=pooling))
        start = end
    return alignments


def load_corpus(path: str | Path, format: str, split: str | None = None) -> Corpus:
    """Load a corpus file into a normalized instance stream.

    Rows that do not parse under the named format are counted in
    ``Corpus.malformed`` (with a warning each), never silently dropped.
    A row that parses but carries an out-of-range target index raises a
    :class:`ValidationError` naming the row.

    ``split`` is required for ``vua_shared_task`` files unless the file name
    starts with a recognizable split name (``train``/``dev``/``val``/``test``).
    """
    path = Path(path)
    if format not in CORPUS_FORMATS:
        raise ConfigurationError(f"unknown corpus format {format!r}, expected one of {CORPUS_FORMATS}")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read corpus file {path}: {exc}") from exc

    if format == "normalized_jsonl":
        return _parse_jsonl(text, source=str(path))
    return _parse_shared_task(text, source=str(path), split=split or _infer_split(path))


def save_corpus_jsonl(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus in the normalized one-object-per-line layout."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for inst in corpus:
            fh.write(json.dumps(inst.to_json(), ensure_ascii=False) + "\n")


def load_split_dir(directory: str | Path) -> Corpus:
    """Merge every ``*.jsonl`` file in a directory into one corpus."""
    directory = Path(directory)
    files = sorted(directory.glob("*.jsonl"))
    if not files:
        raise ConfigurationError(f"no .jsonl corpus files found in {directory}")
    merged = Corpus(())
    for fp in files:
        merged = merged.merged_with(load_corpus(fp, "normalized_jsonl"))
    return merged


def _infer_split(path: Path) -> str:
    stem = path.stem.lower()
    for name in ("train", "test"):
        if stem.startswith(name):
            return name
    if stem.startswith(("dev", "val")):
        return "dev"
    raise ConfigurationError(
        f"cannot infer split from file name {path.name!r}; pass split= explicitly"
    )


def _parse_jsonl(text: str, source: str) -> Corpus:
    instances: list[AnnotatedInstance] = []
    warnings: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise TypeError("row is not an object")
            tokens = obj["tokens"]
            if not isinstance(tokens, list) or not tokens:
                raise TypeError("tokens must be a non-empty list")
            sentence_id = str(obj["sentence_id"])
            target_index = int(obj["target_index"])
            label = int(obj["label"])
            split = str(obj["split"])
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            warnings.append(f"{source}:{lineno}: malformed row ({exc})")
            continue
        instances.append(
            _build_instance(
                source,
                lineno,
                sentence_id=sentence_id,
                tokens=tuple(str(t) for t in tokens),
                target_index=target_index,
                label=label,
                split=split,
                pos_tag=obj.get("pos_tag"),
                genre=obj.get("genre"),
            )
        )
    return Corpus(tuple(instances), malformed=len(warnings), warnings=tuple(warnings))


def _parse_shared_task(text: str, source: str, split: str) -> Corpus:
    lines = text.splitlines()
    if not lines:
        return Corpus(())
    reader = csv.reader(lines, delimiter="\t")
    header = next(reader)
    columns = _resolve_columns(header, source)

    instances: list[AnnotatedInstance] = []
    warnings: list[str] = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            sentence_id = row[columns["sentence_id"]].strip()
            label = int(row[columns["label"]])
            sentence = row[columns["sentence"]]
            target_index = int(row[columns["target_index"]])
            tokens = tuple(sentence.split())
            if not tokens:
                raise ValueError("empty sentence")
            if not sentence_id:
                raise ValueError("empty sentence id")
        except (IndexError, ValueError) as exc:
            warnings.append(f"{source}:{lineno}: malformed row ({exc})")
            continue
        pos_tag = row[columns["pos_tag"]].strip() if columns.get("pos_tag") is not None else None
        genre = row[columns["genre"]].strip() if columns.get("genre") is not None else None
        instances.append(
            _build_instance(
                source,
                lineno,
                sentence_id=sentence_id,
                tokens=tokens,
                target_index=target_index,
                label=label,
                split=split,
                pos_tag=pos_tag or None,
                genre=genre or None,
            )
        )
    return Corpus(tuple(instances), malformed=len(warnings), warnings=tuple(warnings))


def _build_instance(source: str, lineno: int, **kwargs) -> AnnotatedInstance:
    try:
        return AnnotatedInstance(**kwargs)
    except ValidationError as exc:
        raise ValidationError(f"{source}:{lineno}: {exc}") from exc


def _resolve_columns(header: Sequence[str], source: str) -> dict[str, int | None]:
    lowered = [h.strip().lower() for h in header]
    columns: dict[str, int | None] = {}
    for field_name, aliases in _TSV_ALIASES.items():
        idx = next((lowered.index(a) for a in aliases if a in lowered), None)
        columns[field_name] = idx
    required = ("sentence_id", "label", "sentence", "target_index")
    missing = [name for name in required if columns[name] is None]
    if missing:
        raise ConfigurationError(
            f"{source}: header {header!r} is missing required columns {missing} "
            "for the vua_shared_task format"
        )
    return columns
