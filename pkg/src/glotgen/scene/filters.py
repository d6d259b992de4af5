"""Data-quality filters applied during dataset construction.

Filter order is length -> language -> mismatch -> safety; order only
affects which filter gets the blame in the FilterReport, never the kept
set. The safety filter is a pass-through stub: procedural content is safe
by construction, the interface exists for parity with real pipelines.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .captions import CaptionRecord, tokens_of
from .geometry import SceneSpec
from .lexicon import (COLOR_CONCEPTS, COUNT_CONCEPTS, SHAPE_CONCEPTS,
                      TEMPLATE_WORDS, Lexicon)

MIN_CAPTION_TOKENS = 5
MAX_CAPTION_TOKENS = 500
LANGUAGE_CONFIDENCE_THRESHOLD = 0.9

FILTER_ORDER = ("length", "language", "mismatch", "safety")


@dataclass
class FilterReport:
    total: int = 0
    kept: int = 0
    rejected_by: dict[str, int] = field(default_factory=dict)

    def record(self, rejected_filter: str | None) -> None:
        self.total += 1
        if rejected_filter is None:
            self.kept += 1
        else:
            self.rejected_by[rejected_filter] = self.rejected_by.get(rejected_filter, 0) + 1

    def check(self) -> None:
        if self.kept + sum(self.rejected_by.values()) != self.total:
            raise AssertionError("filter report counts do not add up")


def length_filter(tokens: list[str]) -> bool:
    """Keep iff 5 <= token count <= 500."""
    return MIN_CAPTION_TOKENS <= len(tokens) <= MAX_CAPTION_TOKENS


def language_validate(tokens: list[str], language: str,
                      lexicon: Lexicon) -> tuple[bool, float]:
    """Lexicon-membership confidence over non-template tokens.

    Keep iff confidence is strictly above 0.9. Stands in for a language-id
    classifier: a token "belongs" to the language when the lexicon knows it.
    """
    if not tokens:
        raise ValueError("cannot validate an empty caption")
    templates = {lexicon.term_map[w] for w in TEMPLATE_WORDS if w in lexicon.term_map}
    content = [t for t in tokens if t not in templates]
    if not content:
        return True, 1.0
    known = sum(1 for t in content if lexicon.concept(t) is not None)
    confidence = known / len(content)
    return confidence > LANGUAGE_CONFIDENCE_THRESHOLD, confidence


def mismatch_filter(scene: SceneSpec, tokens: list[str], language: str,
                    lexicon: Lexicon, style: str) -> bool:
    """Keep iff caption concepts agree with the scene.

    Mentioned shapes/colors must exist in the scene; a mentioned count must
    equal the scene's count of the mentioned shape. Detailed-family styles
    must additionally mention every object's color and shape (both
    directions). Fillers, relations and zones are concept-neutral.
    """
    concepts = [c for c in (lexicon.concept(t) for t in tokens) if c is not None]
    shape_by_concept = {v: k for k, v in SHAPE_CONCEPTS.items()}
    color_by_concept = {v: k for k, v in COLOR_CONCEPTS.items()}
    count_by_concept = {v: k for k, v in COUNT_CONCEPTS.items()}

    said_shapes = {shape_by_concept[c] for c in concepts if c in shape_by_concept}
    said_colors = {color_by_concept[c] for c in concepts if c in color_by_concept}
    said_counts = [count_by_concept[c] for c in concepts if c in count_by_concept]

    scene_shapes = Counter(o.shape for o in scene.objects)
    scene_colors = {o.color for o in scene.objects}

    if not said_shapes <= set(scene_shapes):
        return False
    if not said_colors <= scene_colors:
        return False
    for count in said_counts:
        if len(said_shapes) != 1 or scene_shapes[next(iter(said_shapes))] != count:
            return False
    if style in ("detailed", "instruct"):
        if said_shapes != set(scene_shapes):
            return False
        if said_colors != scene_colors:
            return False
    return True


def safety_filter(tokens: list[str]) -> bool:
    """No-op stand-in for an NSFW/toxicity classifier; always keeps."""
    return True


def run_filters(scene: SceneSpec, record: CaptionRecord, lexicon: Lexicon,
                skip_length: bool = False) -> str | None:
    """Apply the filter chain; returns the rejecting filter's name or None.

    `skip_length` exempts label-style records: they are the analog of a
    class-label data lane, which never passes through caption length
    screening.
    """
    tokens = tokens_of(record.text, record.language, lexicon)
    if not skip_length and not length_filter(tokens):
        return "length"
    keep, _conf = language_validate(tokens, record.language, lexicon)
    if not keep:
        return "language"
    if not mismatch_filter(scene, tokens, record.language, lexicon, record.style):
        return "mismatch"
    if not safety_filter(tokens):
        return "safety"
    return None
