"""Templated multilingual captions for scenes.

Four template families mirror the data lanes of the training curriculum:

  label     object names only ("red square", "two circle")
  noisy     label plus 1-3 concept-neutral filler tokens (alt-text noise)
  detailed  every object's color, shape and spatial relation / zone
  instruct  imperative form of detailed ("draw a red square ...")

Templates expand to concept-id sequences first and only then to surface
forms, so parallel captions of one scene are token-aligned across all
languages. Filler positions are derived from the scene digest, not the
language, for the same reason.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .geometry import SceneSpec, dominant_relation, zone_of
from .lexicon import (COLOR_CONCEPTS, COUNT_CONCEPTS, FILLER_CONCEPTS,
                      REL_CONCEPTS, SHAPE_CONCEPTS, WORD_A, WORD_AND,
                      WORD_AT, WORD_DRAW, ZONE_CONCEPTS, Lexicon)

STYLES = ("label", "noisy", "detailed", "instruct")


@dataclass(frozen=True)
class CaptionRecord:
    scene_id: str
    language: str
    text: str
    style: str


def _counted_group(scene: SceneSpec) -> bool:
    shapes = {o.shape for o in scene.objects}
    return len(scene.objects) >= 2 and len(shapes) == 1


def label_concepts(scene: SceneSpec) -> list[str]:
    """Name the objects; counted groups collapse to 'N shape'."""
    if _counted_group(scene):
        return [COUNT_CONCEPTS[len(scene.objects)], SHAPE_CONCEPTS[scene.objects[0].shape]]
    out: list[str] = []
    for i, obj in enumerate(scene.objects):
        if i:
            out.append(WORD_AND)
        out += [COLOR_CONCEPTS[obj.color], SHAPE_CONCEPTS[obj.shape]]
    return out


def detailed_concepts(scene: SceneSpec) -> list[str]:
    """Color + shape for every object, chained by pairwise relations.

    Single-object scenes carry a coarse zone instead of a relation so the
    caption still pins the layout.
    """
    objs = scene.objects
    if len(objs) == 1:
        obj = objs[0]
        return [WORD_A, COLOR_CONCEPTS[obj.color], SHAPE_CONCEPTS[obj.shape],
                WORD_AT, ZONE_CONCEPTS[zone_of(obj, scene.grid_size)]]
    out: list[str] = []
    for i, obj in enumerate(objs):
        if i:
            rel = dominant_relation(objs[i - 1], obj)
            if rel is None:
                raise ValueError("consecutive objects have no decidable relation")
            out.append(REL_CONCEPTS[rel])
        out += [WORD_A, COLOR_CONCEPTS[obj.color], SHAPE_CONCEPTS[obj.shape]]
    return out


def noisy_concepts(scene: SceneSpec) -> list[str]:
    """Label concepts with 1-3 fillers spliced in at digest-derived spots."""
    base = label_concepts(scene)
    digest = hashlib.sha256(("noise:" + scene.scene_id()).encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    n_fill = int(rng.integers(1, 4))
    out = list(base)
    for _ in range(n_fill):
        pos = int(rng.integers(0, len(out) + 1))
        out.insert(pos, FILLER_CONCEPTS[int(rng.integers(0, len(FILLER_CONCEPTS)))])
    return out


def instruct_concepts(scene: SceneSpec) -> list[str]:
    return [WORD_DRAW] + detailed_concepts(scene)


_CONCEPT_FNS = {"label": label_concepts, "noisy": noisy_concepts,
                "detailed": detailed_concepts, "instruct": instruct_concepts}


def caption_concepts(scene: SceneSpec, style: str) -> list[str]:
    if style not in STYLES:
        raise ValueError(f"unknown caption style {style!r}")
    return _CONCEPT_FNS[style](scene)


def concepts_to_text(concepts: list[str], lexicon: Lexicon) -> str:
    joiner = "" if lexicon.language == "zh" else " "
    return joiner.join(lexicon.surface(c) for c in concepts)


def caption_scene(scene: SceneSpec, language: str, lexicon: Lexicon,
                  style: str) -> CaptionRecord:
    """Render the style's template for the scene in the given language."""
    if lexicon.language != language:
        raise ValueError(f"lexicon is for {lexicon.language!r}, not {language!r}")
    text = concepts_to_text(caption_concepts(scene, style), lexicon)
    return CaptionRecord(scene_id=scene.scene_id(), language=language,
                         text=text, style=style)


def tokens_of(record_text: str, language: str, lexicon: Lexicon) -> list[str]:
    """Split caption text back into surface tokens (script-aware)."""
    if language != "zh":
        return record_text.split()
    # greedy longest-match over the language's own surfaces
    forms = sorted(lexicon.term_map.values(), key=len, reverse=True)
    tokens, pos = [], 0
    while pos < len(record_text):
        for form in forms:
            if record_text.startswith(form, pos):
                tokens.append(form)
                pos += len(form)
                break
        else:
            tokens.append(record_text[pos])
            pos += 1
    return tokens
