"""Bundled synthetic corpora for end-to-end overfit checks.

Every sentence follows one fixed frame, ``the <word> felt like f1 f2 f3 f4``,
where the four filler slots hold ``abstract_filler`` repeated t times followed
by ``concrete_filler``. The abstractness level t is the only thing that varies
within a word, so the encoder sees a single linear direction separating
contexts.

Balanced corpus: one global rule, metaphor iff t >= 3 (literal t in {0, 1},
metaphor t in {3, 4}); 10 words times 4 instances = 40 instances, of which
8 words (32 instances) are the train split and 2 words (8 instances) the dev
split. Any of the contextual embeddings suffices to separate it.

Adversarial corpus: the literal/metaphor boundary moves per word. Half the
words use the metaphor-frequent profile (literal twice at t=0, metaphor at
t in {2, 3, 4}), the other half the metaphor-rare profile (literal four times
at t=2, metaphor once at t=4). The rule "metaphor iff t exceeds the word's
literal level by more than 1" is affine in (contextual intensity, basic-pool
intensity) with margin 1, because every literal pool sits at a single t and
its mean is unchanged by self-exclusion. Without the basic-meaning branch the
boundary must be memorized word by word, and there are more words than
encoder dimensions.
"""

from __future__ import annotations

import argparse
from importlib import resources
from pathlib import Path

from .corpus import LITERAL, METAPHOR, AnnotatedInstance, Corpus, save_corpus_jsonl

ABSTRACT_FILLER = "grace"
CONCRETE_FILLER = "stone"
FRAME_PREFIX = ("the", None, "felt", "like")
TARGET_INDEX = 1
FILLER_SLOTS = 4

BALANCED_TRAIN_WORDS = (
    "anchor", "bridge", "current", "harvest",
    "root", "stream", "thread", "wall",
)
BALANCED_DEV_WORDS = ("spark", "chain")

# metaphor-frequent words first (the back/get profile), metaphor-rare after
ADVERSARIAL_FREQUENT = (
    "back", "get", "hold", "run", "fall", "rise", "break", "carry",
    "cut", "draw", "drive", "drop", "fold", "grasp", "lift", "march",
    "pour", "press", "pull", "push",
)
ADVERSARIAL_RARE = (
    "reach", "ride", "roll", "seed", "shift", "sink", "slide", "spin",
    "split", "spread", "stretch", "strike", "sweep", "swing", "throw",
    "tide", "touch", "turn", "twist", "weigh",
)
ADVERSARIAL_DEV_FREQUENT = ("serve", "stand")
ADVERSARIAL_DEV_RARE = ("trace", "wander")

FREQUENT_PROFILE = ((0, LITERAL), (0, LITERAL), (2, METAPHOR), (3, METAPHOR), (4, METAPHOR))
RARE_PROFILE = ((2, LITERAL), (2, LITERAL), (2, LITERAL), (2, LITERAL), (4, METAPHOR))

BALANCED_NAME = "synthetic_balanced.jsonl"
ADVERSARIAL_NAME = "synthetic_adversarial.jsonl"


def sentence_tokens(word: str, level: int) -> tuple[str, ...]:
    """Frame tokens at abstractness ``level`` (count of abstract fillers)."""
    if not 0 <= level <= FILLER_SLOTS:
        raise ValueError(f"abstractness level must be in [0, {FILLER_SLOTS}], got {level}")
    fillers = (ABSTRACT_FILLER,) * level + (CONCRETE_FILLER,) * (FILLER_SLOTS - level)
    return tuple(tok if tok is not None else word for tok in FRAME_PREFIX) + fillers


def _instance(tag: str, word: str, serial: int, level: int, label: int, split: str) -> AnnotatedInstance:
    return AnnotatedInstance(
        sentence_id=f"{tag}-{word}-{serial}",
        tokens=sentence_tokens(word, level),
        target_index=TARGET_INDEX,
        label=label,
        split=split,
        pos_tag="NOUN",
    )


def generate_balanced() -> Corpus:
    """40 instances, global boundary: literal at t in {0, 1}, metaphor at {3, 4}."""
    profile = ((0, LITERAL), (1, LITERAL), (3, METAPHOR), (4, METAPHOR))
    instances = []
    for split, words in (("train", BALANCED_TRAIN_WORDS), ("dev", BALANCED_DEV_WORDS)):
        for word in words:
            for serial, (level, label) in enumerate(profile):
                instances.append(_instance("bal", word, serial, level, label, split))
    return Corpus(instances=tuple(instances))


def generate_adversarial() -> Corpus:
    """Per-word boundaries; every literal pool sits at a single filler level.

    200 train instances (40 words times 5) plus 20 dev instances. The
    metaphor-frequent profile has two literal uses at level 0 and metaphors at
    levels 2..4; the metaphor-rare profile has four literal uses at level 2
    and one metaphor at level 4.
    """
    groups = (
        ("train", ADVERSARIAL_FREQUENT, FREQUENT_PROFILE),
        ("train", ADVERSARIAL_RARE, RARE_PROFILE),
        ("dev", ADVERSARIAL_DEV_FREQUENT, FREQUENT_PROFILE),
        ("dev", ADVERSARIAL_DEV_RARE, RARE_PROFILE),
    )
    instances = []
    for split, words, profile in groups:
        for word in words:
            for serial, (level, label) in enumerate(profile):
                instances.append(_instance("adv", word, serial, level, label, split))
    return Corpus(instances=tuple(instances))


def bundled_fixture_path(name: str) -> Path:
    """Path of a corpus shipped inside the package (``balanced`` or ``adversarial``)."""
    filename = {"balanced": BALANCED_NAME, "adversarial": ADVERSARIAL_NAME}.get(name)
    if filename is None:
        raise ValueError(f"unknown fixture {name!r}; expected 'balanced' or 'adversarial'")
    with resources.as_file(resources.files("basicmip") / "fixtures" / filename) as path:
        return Path(path)


def write_fixtures(out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for corpus, filename in (
        (generate_balanced(), BALANCED_NAME),
        (generate_adversarial(), ADVERSARIAL_NAME),
    ):
        path = out / filename
        save_corpus_jsonl(corpus, path)
        written.append(path)
    return written


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="regenerate the bundled synthetic corpora")
    parser.add_argument("out_dir", help="directory to write the jsonl files into")
    args = parser.parse_args(argv)
    for path in write_fixtures(args.out_dir):
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
