"""The three aligned feature tracks built over a classification sample.

Each track is a 0/1 array exactly as long as the context:

* pos_track  - characters inside any occurrence of the disease
* neg_track  - characters inside any occurrence of a negation word
* order_track - characters belonging to enumerated-list items

All marking functions are pure; the lexicons they read are immutable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import SENTENCE_BOUNDARIES, Lexicon, LexiconKind
from .errors import BadPattern, EmptyContext

LABELS = ("non_current", "confirmed", "unknown")


class OrderTrackScope(Enum):
    """Whether order bits cover only the enumerator or the whole item."""

    ENUMERATOR_ONLY = "enumerator_only"
    WHOLE_ITEM = "whole_item"


@dataclass(frozen=True)
class ContextSample:
    disease: str
    context: str
    pos_track: np.ndarray
    neg_track: np.ndarray
    order_track: np.ndarray
    label: str | None = None

    def __post_init__(self):
        n = len(self.context)
        for name in ("pos_track", "neg_track", "order_track"):
            track = getattr(self, name)
            if len(track) != n:
                raise ValueError(f"{name} length {len(track)} != context length {n}")
        if self.label is not None and self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")


def _mark_occurrences(track: np.ndarray, context: str, needle: str) -> None:
    start = 0
    while True:
        idx = context.find(needle, start)
        if idx < 0:
            break
        track[idx : idx + len(needle)] = 1
        start = idx + 1  # overlapping occurrences union their ranges


def mark_disease_positions(disease: str, context: str) -> np.ndarray:
    """1 over every character of every occurrence of ``disease``."""
    if not disease:
        raise ValueError("disease must be non-empty")
    track = np.zeros(len(context), dtype=np.uint8)
    _mark_occurrences(track, context, disease)
    return track


def mark_negation(context: str, negation_lexicon: Lexicon) -> np.ndarray:
    """1 over every character inside any negation-word occurrence."""
    if negation_lexicon.kind is not LexiconKind.NEGATION_WORDS:
        raise ValueError(f"expected a negation lexicon, got {negation_lexicon.kind}")
    track = np.zeros(len(context), dtype=np.uint8)
    for word in negation_lexicon.entries:
        _mark_occurrences(track, context, word)
    return track


def compile_enumerator_patterns(lexicon: Lexicon) -> list[re.Pattern]:
    if lexicon.kind is not LexiconKind.ENUMERATOR_PATTERNS:
        raise ValueError(f"expected enumerator patterns, got {lexicon.kind}")
    compiled = []
    for raw in lexicon.entries:
        try:
            compiled.append(re.compile(raw))
        except re.error as exc:
            raise BadPattern(f"pattern {raw!r}: {exc}")
    return compiled


def mark_serial_numbers(
    context: str,
    enumerator_patterns: Lexicon,
    scope: OrderTrackScope = OrderTrackScope.WHOLE_ITEM,
) -> np.ndarray:
    """1 over enumerated-list items (or just their enumerator tokens).

    An item runs from its enumerator token to the character before the
    next enumerator or sentence terminator, whichever comes first.
    """
    patterns = compile_enumerator_patterns(enumerator_patterns)
    track = np.zeros(len(context), dtype=np.uint8)
    tokens: list[tuple[int, int]] = []
    for pattern in patterns:
        for match in pattern.finditer(context):
            if match.end() > match.start():
                tokens.append((match.start(), match.end()))
    tokens = sorted(set(tokens))
    if scope is OrderTrackScope.ENUMERATOR_ONLY:
        for start, end in tokens:
            track[start:end] = 1
        return track
    starts = [t[0] for t in tokens]
    for i, (start, end) in enumerate(tokens):
        item_end = len(context)
        for pos in range(end, len(context)):
            if context[pos] in SENTENCE_BOUNDARIES:
                item_end = pos
                break
        if i + 1 < len(tokens):
            item_end = min(item_end, starts[i + 1])
        track[start:item_end] = 1
    return track


@dataclass(frozen=True)
class FeatureLexicons:
    negation: Lexicon
    enumerators: Lexicon


def assemble_features(
    disease: str,
    context: str,
    lexicons: FeatureLexicons,
    label: str | None = None,
    max_disease: int = 30,
    max_context: int = 450,
    order_scope: OrderTrackScope = OrderTrackScope.WHOLE_ITEM,
) -> ContextSample:
    """Build a ContextSample with all three tracks, applying length caps."""
    disease = disease[:max_disease]
    context = context[:max_context]
    if not context:
        raise EmptyContext("cannot assemble features over an empty context")
    return ContextSample(
        disease=disease,
        context=context,
        pos_track=mark_disease_positions(disease, context),
        neg_track=mark_negation(context, lexicons.negation),
        order_track=mark_serial_numbers(context, lexicons.enumerators, order_scope),
        label=label,
    )
