"""Rule-based finding extraction from report sentences.

A small deterministic stand-in for a UMLS concept tagger: lexicon trigger
phrases are matched on word boundaries, then each match is classified as
affirmed, negated or uncertain from cue phrases found in a token window
around it (NegEx-style scoping, truncated at terminator words).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence

from decoclip.findings import FINDING_NAMES, FindingLabel, FindingType

DEFAULT_WINDOW = 6

_TOKEN_RE = re.compile(r"[a-z0-9]+|;")
_SENT_END_RE = re.compile(r"[.!?]+(?=\s|$)")
_ABBREVIATIONS = frozenset(
    {"dr", "mr", "mrs", "ms", "vs", "e.g", "i.e", "approx", "cf", "fig", "etc", "st", "no"}
)


class UnmappedClassError(KeyError):
    """A dataset class name has no entry in the alias map."""

    def __init__(self, class_name: str):
        super().__init__(class_name)
        self.class_name = class_name

    def __str__(self):
        return f"unmapped class name: {self.class_name!r}"


class Polarity(str, Enum):
    AFFIRMED = "affirmed"
    NEGATED = "negated"
    UNCERTAIN = "uncertain"


class UncertaintyPolicy(str, Enum):
    AFFIRM = "affirm"
    IGNORE = "ignore"


@dataclass(frozen=True)
class EntityMention:
    finding: FindingType
    span: tuple[int, int]
    polarity: Polarity
    trigger: str = ""

    def __post_init__(self):
        start, end = self.span
        if not 0 <= start < end:
            raise ValueError(f"invalid mention span {self.span}")

    def to_dict(self) -> dict:
        return {
            "finding": self.finding.display_name,
            "trigger": self.trigger,
            "span": list(self.span),
            "polarity": self.polarity.value,
        }


def normalize_phrase(phrase: str) -> tuple[str, ...]:
    return tuple(_TOKEN_RE.findall(phrase.lower()))


def _normalize_name(name: str) -> str:
    return " ".join(name.strip().lower().replace("_", " ").split())


@dataclass(frozen=True)
class Lexicon:
    """Trigger phrases, cue lists and class-name aliases. Immutable."""

    triggers: Mapping[FindingType, tuple[str, ...]]
    negation_cues: tuple[str, ...]
    uncertainty_cues: tuple[str, ...]
    aliases: Mapping[str, tuple[FindingType, ...]]
    post_negation_cues: tuple[str, ...] = ()
    post_uncertainty_cues: tuple[str, ...] = ()
    terminators: tuple[str, ...] = ()
    window: int = DEFAULT_WINDOW
    _trigger_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("negation window must be >= 1")
        index: dict[tuple[str, ...], FindingType] = {}
        for finding, phrases in self.triggers.items():
            for phrase in phrases:
                key = normalize_phrase(phrase)
                if not key:
                    raise ValueError(f"empty trigger phrase for {finding.display_name}")
                if key in index and index[key] != finding:
                    raise ValueError(
                        f"trigger {phrase!r} is shared by {index[key].display_name} "
                        f"and {finding.display_name}"
                    )
                index[key] = finding
        aliases = {_normalize_name(name): (ft,) for name, ft in
                   ((FINDING_NAMES[ft], ft) for ft in FindingType)}
        aliases.update({_normalize_name(k): tuple(v) for k, v in self.aliases.items()})
        object.__setattr__(self, "aliases", MappingProxyType(aliases))
        object.__setattr__(self, "triggers", MappingProxyType(dict(self.triggers)))
        object.__setattr__(self, "_trigger_index", index)

    @classmethod
    def from_dict(cls, data: dict, window: int | None = None) -> "Lexicon":
        triggers = {
            FindingType.from_name(name): tuple(p.lower() for p in phrases)
            for name, phrases in data["triggers"].items()
        }
        aliases = {
            name: tuple(FindingType.from_name(t) for t in targets)
            for name, targets in data.get("aliases", {}).items()
        }
        return cls(
            triggers=triggers,
            negation_cues=tuple(data.get("negation_cues", ())),
            uncertainty_cues=tuple(data.get("uncertainty_cues", ())),
            aliases=aliases,
            post_negation_cues=tuple(data.get("post_negation_cues", ())),
            post_uncertainty_cues=tuple(data.get("post_uncertainty_cues", ())),
            terminators=tuple(data.get("terminators", ())),
            window=window if window is not None else int(data.get("window", DEFAULT_WINDOW)),
        )

    @classmethod
    def load(cls, path: str | Path | None = None, window: int | None = None) -> "Lexicon":
        if path is None:
            if window is None:
                return default_lexicon()
            text = resources.files("decoclip").joinpath("data/lexicon.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_dict(json.loads(text), window=window)

    def trigger_phrases(self, finding: FindingType) -> tuple[str, ...]:
        return self.triggers.get(finding, ())


@lru_cache(maxsize=1)
def default_lexicon() -> Lexicon:
    text = resources.files("decoclip").joinpath("data/lexicon.json").read_text()
    return Lexicon.from_dict(json.loads(text))


def split_report(report_text: str, min_words: int = 3) -> list[str]:
    """Split a report into sentences, dropping those under ``min_words`` words."""
    sentences = []
    for block in re.split(r"\n\s*\n", report_text or ""):
        start = 0
        for m in _SENT_END_RE.finditer(block):
            if m.group().startswith("."):
                prev = block[start:m.start()].split()
                if prev and prev[-1].lower().rstrip(".") in _ABBREVIATIONS:
                    # "No." is only an abbreviation when a number follows
                    if prev[-1].lower() != "no" or re.match(r"\s*\d", block[m.end():]):
                        continue
            sentences.append(block[start:m.end()])
            start = m.end()
        sentences.append(block[start:])
    out = []
    for s in sentences:
        s = " ".join(s.split())
        if len(s.split()) >= min_words:
            out.append(s)
    return out


def _tokenize(sentence: str) -> list[tuple[str, int, int]]:
    return [(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(sentence.lower())]


def _find_phrases(words: Sequence[str], phrases) -> list[tuple[int, int, tuple[str, ...]]]:
    """All (start, end, phrase) token matches of any phrase."""
    found = []
    n = len(words)
    for phrase in phrases:
        k = len(phrase)
        if not k:
            continue
        for i in range(n - k + 1):
            if tuple(words[i:i + k]) == phrase:
                found.append((i, i + k, phrase))
    return found


def _overlaps(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def tag_sentence(sentence: str, lexicon: Lexicon | None = None) -> list[EntityMention]:
    """Find lexicon findings in ``sentence`` and classify each one's polarity."""
    lexicon = lexicon or default_lexicon()
    tokens = _tokenize(sentence)
    words = [t[0] for t in tokens]
    index = lexicon._trigger_index

    # longest match wins, then leftmost
    candidates = sorted(_find_phrases(words, index.keys()), key=lambda m: (-(m[1] - m[0]), m[0]))
    accepted: list[tuple[int, int, tuple[str, ...]]] = []
    for cand in candidates:
        if not any(_overlaps(cand[:2], a[:2]) for a in accepted):
            accepted.append(cand)
    accepted.sort()

    def cues(phrases):
        spans = _find_phrases(words, [normalize_phrase(p) for p in phrases])
        return [s[:2] for s in spans if not any(_overlaps(s[:2], a[:2]) for a in accepted)]

    pre_neg = cues(lexicon.negation_cues)
    pre_unc = cues(lexicon.uncertainty_cues)
    post_neg = cues(lexicon.post_negation_cues)
    post_unc = cues(lexicon.post_uncertainty_cues)
    stops = {i for i, w in enumerate(words) if w in set(lexicon.terminators)}
    w = lexicon.window

    def before(cue_spans, start):
        return any(
            ce <= start and ce - 1 >= start - w and not stops.intersection(range(ce, start))
            for cs, ce in cue_spans
        )

    def after(cue_spans, end):
        return any(
            cs >= end and cs - end < w and not stops.intersection(range(end, cs))
            for cs, ce in cue_spans
        )

    mentions = []
    for start, end, phrase in accepted:
        if before(pre_neg, start) or after(post_neg, end):
            polarity = Polarity.NEGATED
        elif before(pre_unc, start) or after(post_unc, end):
            polarity = Polarity.UNCERTAIN
        else:
            polarity = Polarity.AFFIRMED
        span = (tokens[start][1], tokens[end - 1][2])
        mentions.append(EntityMention(index[phrase], span, polarity, sentence[span[0]:span[1]]))
    return mentions


def sentence_to_label(
    mentions: Sequence[EntityMention],
    uncertain: UncertaintyPolicy | str = UncertaintyPolicy.AFFIRM,
) -> FindingLabel:
    """Collapse one sentence's mentions into a multi-hot label.

    Affirmed findings set their bit; uncertain ones too unless the policy is
    ``ignore``. A sentence whose only evidence is negated becomes No Finding.
    No Finding is dropped whenever any other finding is present. The result
    is all-zero (``label.unlabeled``) when nothing qualifies.
    """
    policy = UncertaintyPolicy(uncertain)
    positive = {m.finding for m in mentions if m.polarity is Polarity.AFFIRMED}
    if policy is UncertaintyPolicy.AFFIRM:
        positive |= {m.finding for m in mentions if m.polarity is Polarity.UNCERTAIN}
    if len(positive) > 1:
        positive.discard(FindingType.NO_FINDING)
    if not positive and any(m.polarity is Polarity.NEGATED for m in mentions):
        positive = {FindingType.NO_FINDING}
    return FindingLabel.from_findings(positive)


def label_sentence(sentence: str, lexicon: Lexicon | None = None,
                   uncertain: UncertaintyPolicy | str = UncertaintyPolicy.AFFIRM):
    """Convenience: returns ``(label, mentions)`` for one sentence."""
    mentions = tag_sentence(sentence, lexicon)
    return sentence_to_label(mentions, uncertain), mentions


def class_to_label(class_name: str, lexicon: Lexicon | None = None) -> FindingLabel:
    """Map a dataset class name (``|``-separated for multi-label) to a label."""
    lexicon = lexicon or default_lexicon()
    findings: list[FindingType] = []
    for part in class_name.split("|"):
        key = _normalize_name(part)
        if key not in lexicon.aliases:
            raise UnmappedClassError(part.strip() or class_name)
        findings.extend(lexicon.aliases[key])
    return FindingLabel.from_findings(findings)
