"""Stage 1: find every lexicon disease in a record and build context windows.

The matcher is an Aho-Corasick automaton over characters, so a record is
scanned in a single pass regardless of lexicon size. Overlapping hits are
resolved by longest-match-wins: hits are ranked by (length desc, start asc)
and a hit is dropped when its span is fully covered by an already accepted
hit. This keeps a disease from being double-reported alongside one of its
substrings while preserving genuinely distinct partial overlaps.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

from .core import SENTENCE_BOUNDARIES, Lexicon, LexiconKind, MedicalRecord
from .errors import EmptyLexicon, WindowOverflow


@dataclass(frozen=True)
class DiseaseMention:
    """All occurrences of one disease in one record, plus its context."""

    disease: str
    spans: tuple[tuple[int, int, int], ...]  # (section_index, start, end)
    context: str = ""
    context_spans: tuple[tuple[int, int], ...] = ()


class _Node:
    __slots__ = ("children", "fail", "output")

    def __init__(self):
        self.children: dict[str, _Node] = {}
        self.fail: _Node | None = None
        self.output: list[str] = []


class DiseaseMatcher:
    """Aho-Corasick automaton over the entries of a disease lexicon."""

    def __init__(self, entries):
        self._root = _Node()
        count = 0
        for entry in entries:
            node = self._root
            for ch in entry:
                node = node.children.setdefault(ch, _Node())
            node.output.append(entry)
            count += 1
        if count == 0:
            raise EmptyLexicon("cannot build a matcher from an empty lexicon")
        self._entry_count = count
        self._build_links()

    def _build_links(self):
        root = self._root
        root.fail = root
        queue: deque[_Node] = deque()
        for child in root.children.values():
            child.fail = root
            queue.append(child)
        while queue:
            current = queue.popleft()
            for ch, child in current.children.items():
                fallback = current.fail
                while fallback is not root and ch not in fallback.children:
                    fallback = fallback.fail
                target = fallback.children.get(ch)
                child.fail = target if target is not None and target is not child else root
                child.output = child.output + child.fail.output
                queue.append(child)

    def __len__(self) -> int:
        return self._entry_count

    def scan(self, text: str) -> list[tuple[int, int, str]]:
        """All raw (start, end, entry) hits in a single pass, unfiltered."""
        root = self._root
        node = root
        hits: list[tuple[int, int, str]] = []
        for i, ch in enumerate(text):
            while node is not root and ch not in node.children:
                node = node.fail
            node = node.children.get(ch, root)
            for entry in node.output:
                hits.append((i + 1 - len(entry), i + 1, entry))
        return hits


def build_matcher(lexicon: Lexicon) -> DiseaseMatcher:
    if lexicon.kind is not LexiconKind.DISEASE_NAMES:
        raise ValueError(f"matcher requires a disease lexicon, got {lexicon.kind}")
    if len(lexicon) == 0:
        raise EmptyLexicon("disease lexicon is empty")
    return DiseaseMatcher(lexicon.entries)


def resolve_overlaps(hits: list[tuple[int, int, str]]) -> list[tuple[int, int, str]]:
    """Longest-match filter: drop hits fully covered by an accepted hit."""
    ranked = sorted(hits, key=lambda h: (-(h[1] - h[0]), h[0], h[2]))
    accepted: list[tuple[int, int, str]] = []
    for start, end, entry in ranked:
        covered = any(a <= start and end <= b for a, b, _ in accepted)
        if not covered:
            accepted.append((start, end, entry))
    accepted.sort()
    return accepted


def find_mentions(matcher: DiseaseMatcher, record: MedicalRecord) -> list[DiseaseMention]:
    """One mention per distinct disease, aggregating every occurrence.

    Sections are scanned independently; spans never cross sections.
    """
    by_disease: dict[str, list[tuple[int, int, int]]] = {}
    for section_index, (_, text) in enumerate(record.sections):
        for start, end, entry in resolve_overlaps(matcher.scan(text)):
            by_disease.setdefault(entry, []).append((section_index, start, end))
    mentions = [
        DiseaseMention(disease=disease, spans=tuple(sorted(spans)))
        for disease, spans in by_disease.items()
    ]
    mentions.sort(key=lambda m: m.spans[0])
    return mentions


def _sentence_window(text: str, start: int, end: int) -> tuple[int, int]:
    """Expand [start, end) to the enclosing sentence, terminator included."""
    left = start
    while left > 0 and text[left - 1] not in SENTENCE_BOUNDARIES:
        left -= 1
    right = end
    while right < len(text) and text[right] not in SENTENCE_BOUNDARIES:
        right += 1
    if right < len(text):
        right += 1  # keep the terminator
    return left, right


def _shrink_window(
    window: tuple[int, int, int, list[tuple[int, int]]],
    budget: int,
    surface_len: int,
) -> tuple[int, int, int, list[tuple[int, int]]] | None:
    """Fit a too-long window into ``budget`` chars around its spans.

    Keeps the longest prefix of spans whose bounding box fits, then pads
    symmetrically inside the original window bounds. Returns None when
    not even one span fits (caller decides whether that is an error).
    """
    section, w_start, w_end, spans = window
    if surface_len > budget:
        return None
    kept = [spans[0]]
    for span in spans[1:]:
        if span[1] - kept[0][0] <= budget:
            kept.append(span)
        else:
            break
    box_start, box_end = kept[0][0], kept[-1][1]
    extra = budget - (box_end - box_start)
    left = max(w_start, box_start - extra // 2)
    right = min(w_end, left + budget)
    left = max(w_start, right - budget)
    inside = [s for s in spans if left <= s[0] and s[1] <= right]
    return (section, left, right, inside)


def build_context_window(
    record: MedicalRecord,
    mention: DiseaseMention,
    max_context_len: int = 450,
) -> DiseaseMention:
    """Fill ``context`` with sentence-bounded windows around each span.

    Windows are merged when they overlap, selected by (span count desc,
    document order) under the length budget, and concatenated in document
    order. Spans that survive are re-mapped into the context.
    """
    if not mention.spans:
        raise ValueError("mention has no spans")
    surface_len = len(mention.disease)
    if surface_len > max_context_len:
        raise WindowOverflow(
            f"disease surface of {surface_len} chars exceeds budget {max_context_len}"
        )

    # Per-section merged sentence windows, each carrying its spans.
    windows: list[tuple[int, int, int, list[tuple[int, int]]]] = []
    for section, start, end in mention.spans:
        text = record.section_text(section)
        w_start, w_end = _sentence_window(text, start, end)
        merged = False
        for i, (sec, a, b, spans) in enumerate(windows):
            if sec == section and w_start < b and a < w_end:
                windows[i] = (sec, min(a, w_start), max(b, w_end), spans + [(start, end)])
                merged = True
                break
        if not merged:
            windows.append((section, w_start, w_end, [(start, end)]))

    order = sorted(
        range(len(windows)),
        key=lambda i: (-len(windows[i][3]), windows[i][0], windows[i][1]),
    )
    budget = max_context_len
    selected: list[tuple[int, int, int, list[tuple[int, int]]]] = []
    for rank, i in enumerate(order):
        window = windows[i]
        length = window[2] - window[1]
        if length <= budget:
            selected.append(window)
            budget -= length
        elif rank == 0:
            shrunk = _shrink_window(window, budget, surface_len)
            if shrunk is None:
                raise WindowOverflow(
                    f"disease surface of {surface_len} chars exceeds budget {budget}"
                )
            selected.append(shrunk)
            budget -= shrunk[2] - shrunk[1]

    selected.sort(key=lambda w: (w[0], w[1]))
    parts: list[str] = []
    context_spans: list[tuple[int, int]] = []
    offset = 0
    for section, a, b, spans in selected:
        text = record.section_text(section)
        parts.append(text[a:b])
        for start, end in sorted(spans):
            context_spans.append((start - a + offset, end - a + offset))
        offset += b - a
    context = "".join(parts)
    for start, end in context_spans:
        assert context[start:end] == mention.disease
    return replace(mention, context=context, context_spans=tuple(context_spans))
