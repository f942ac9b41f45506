"""Target keying policies: how a surface word maps to an index key.

The key decides which training instances count as "the same target". The
conservative default is the lowercased surface form; a lightweight
rule-based lemmatizer is available as an alternative, and custom policies
can be registered for experiments.
"""

from __future__ import annotations

from typing import Callable

from .errors import ConfigurationError

KeyPolicy = Callable[[str], str]

_VOWELS = set("aeiou")


def surface_key(word: str) -> str:
    return word.lower()


def lemma_key(word: str) -> str:
    """Approximate English lemma via suffix stripping.

    Deliberately small: handles common plural, past and progressive
    inflections only. Irregular forms pass through unchanged.
    """
    w = word.lower()
    if len(w) <= 3:
        return w
    if w.endswith("ies") and len(w) > 4:
        return w[:-3] + "y"
    if w.endswith(("sses", "shes", "ches", "xes", "zes")):
        return w[:-2]
    if w.endswith("s") and not w.endswith(("ss", "us", "is")):
        return w[:-1]
    if w.endswith("ing") and len(w) > 5:
        return _restore_stem(w[:-3])
    if w.endswith("ed") and len(w) > 4:
        return _restore_stem(w[:-2])
    return w


def _restore_stem(stem: str) -> str:
    # undo consonant doubling (running -> run) and restore a silent e
    # after a consonant-vowel-consonant tail (hoped -> hope is handled by
    # the caller stripping 'd'; making -> make comes through here)
    if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] not in _VOWELS:
        return stem[:-1]
    if (
        len(stem) >= 3
        and stem[-1] not in _VOWELS
        and stem[-2] in _VOWELS
        and stem[-3] not in _VOWELS
    ):
        return stem + "e"
    return stem


_POLICIES: dict[str, KeyPolicy] = {
    "surface": surface_key,
    "lemma": lemma_key,
}


def get_key_policy(policy_id: str) -> KeyPolicy:
    try:
        return _POLICIES[policy_id]
    except KeyError:
        raise ConfigurationError(
            f"unknown key policy {policy_id!r}, expected one of {sorted(_POLICIES)}"
        ) from None


def register_key_policy(policy_id: str, fn: KeyPolicy) -> None:
    if policy_id in _POLICIES:
        raise ConfigurationError(f"key policy {policy_id!r} is already registered")
    _POLICIES[policy_id] = fn
