"""Compositional scoring across the six oracle dimensions.

Each prompt instantiates exactly one dimension with an explicit constraint;
a generated grid passes when the detected objects satisfy the constraint's
predicate. Position uses a 1-cell dead zone on centroids: too-close-to-call
fails (strict).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..scene.geometry import (OBJECT_COLORS, POSITION_DEAD_ZONE, RELATIONS,
                              SHAPES, SceneError)
from ..scene.lexicon import (COLOR_CONCEPTS, COUNT_CONCEPTS, REL_CONCEPTS,
                             SHAPE_CONCEPTS, WORD_A, WORD_AND, Lexicon)
from ..vocab import TokenGrid
from .detector import DetectedObject, detect_objects

DIMENSIONS = ("single_object", "two_objects", "counting", "colors",
              "position", "color_attribute")


@dataclass(frozen=True)
class PromptConstraint:
    """What must hold on the generated grid."""
    dimension: str
    objects: tuple[tuple[str, int | None], ...] = ()   # (shape, color or None)
    count: int | None = None
    relation: str | None = None

    def validate(self) -> None:
        if self.dimension not in DIMENSIONS:
            raise SceneError(f"unknown dimension {self.dimension!r}")
        for shape, color in self.objects:
            if shape not in SHAPES:
                raise SceneError(f"unknown shape concept {shape!r}")
            if color is not None and color not in OBJECT_COLORS:
                raise SceneError(f"unknown color concept {color!r}")
        if self.relation is not None and self.relation not in RELATIONS:
            raise SceneError(f"unknown relation concept {self.relation!r}")

    def to_dict(self) -> dict:
        return {"dimension": self.dimension,
                "objects": [list(o) for o in self.objects],
                "count": self.count, "relation": self.relation}

    @classmethod
    def from_dict(cls, d: dict) -> "PromptConstraint":
        return cls(dimension=d["dimension"],
                   objects=tuple((s, c) for s, c in d.get("objects", [])),
                   count=d.get("count"), relation=d.get("relation"))


def _relation_between(a: DetectedObject, b: DetectedObject, relation: str) -> bool:
    (ra, ca), (rb, cb) = a.centroid, b.centroid
    if relation == "left_of":
        return cb - ca >= POSITION_DEAD_ZONE
    if relation == "right_of":
        return ca - cb >= POSITION_DEAD_ZONE
    if relation == "above":
        return rb - ra >= POSITION_DEAD_ZONE
    if relation == "below":
        return ra - rb >= POSITION_DEAD_ZONE
    raise SceneError(f"unknown relation {relation!r}")


def score_constraint(constraint: PromptConstraint,
                     detections: list[DetectedObject]) -> bool:
    """The dimension's pass predicate over detected objects."""
    constraint.validate()
    dim = constraint.dimension
    if dim == "single_object":
        (shape, color), = constraint.objects
        return len(detections) == 1 and detections[0].shape == shape \
            and detections[0].color == color
    if dim == "two_objects":
        shapes = {d.shape for d in detections}
        return all(s in shapes for s, _ in constraint.objects)
    if dim == "counting":
        (shape, _), = constraint.objects
        return len(detections) == constraint.count \
            and all(d.shape == shape for d in detections)
    if dim == "colors":
        ok = True
        for shape, color in constraint.objects:
            matching = [d for d in detections if d.shape == shape]
            ok &= bool(matching) and all(d.color == color for d in matching)
        return ok
    if dim == "position":
        (s1, c1), (s2, c2) = constraint.objects
        first = [d for d in detections if d.shape == s1 and d.color == c1]
        second = [d for d in detections if d.shape == s2 and d.color == c2]
        if len(first) != 1 or len(second) != 1:
            return False
        return _relation_between(first[0], second[0], constraint.relation)
    if dim == "color_attribute":
        if len(detections) != len(constraint.objects):
            return False
        return all(any(d.shape == s and d.color == c for d in detections)
                   for s, c in constraint.objects)
    raise SceneError(f"unknown dimension {dim!r}")


def score_prompt(constraint: PromptConstraint, grid: TokenGrid) -> dict[str, bool]:
    """Per-dimension pass flags for one generated grid (one dimension set)."""
    return {constraint.dimension: score_constraint(constraint, detect_objects(grid))}


@dataclass
class CompositionalScore:
    """Pass rates per dimension; overall is their unweighted mean."""
    rates: dict[str, float] = field(default_factory=dict)

    @property
    def overall(self) -> float:
        return float(np.mean([self.rates[d] for d in DIMENSIONS]))

    def to_dict(self) -> dict:
        return {**{d: self.rates[d] for d in DIMENSIONS}, "overall": self.overall}


def prompt_concepts(constraint: PromptConstraint) -> list[str]:
    """Concept-id sequence for the constraint, in a trained template form."""
    objs = constraint.objects
    dim = constraint.dimension
    if dim in ("single_object", "colors"):
        (shape, color), = objs
        return [COLOR_CONCEPTS[color], SHAPE_CONCEPTS[shape]]
    if dim in ("two_objects", "color_attribute"):
        (s1, c1), (s2, c2) = objs
        return [COLOR_CONCEPTS[c1], SHAPE_CONCEPTS[s1], WORD_AND,
                COLOR_CONCEPTS[c2], SHAPE_CONCEPTS[s2]]
    if dim == "counting":
        (shape, _), = objs
        return [COUNT_CONCEPTS[constraint.count], SHAPE_CONCEPTS[shape]]
    if dim == "position":
        (s1, c1), (s2, c2) = objs
        return [WORD_A, COLOR_CONCEPTS[c1], SHAPE_CONCEPTS[s1],
                REL_CONCEPTS[constraint.relation],
                WORD_A, COLOR_CONCEPTS[c2], SHAPE_CONCEPTS[s2]]
    raise SceneError(f"unknown dimension {dim!r}")


def prompt_text(constraint: PromptConstraint, lexicon: Lexicon) -> str:
    joiner = "" if lexicon.language == "zh" else " "
    return joiner.join(lexicon.surface(c) for c in prompt_concepts(constraint))


def sample_constraint(dimension: str, rng: np.random.Generator) -> PromptConstraint:
    """Random constraint for one dimension."""
    shapes = list(SHAPES)
    colors = list(OBJECT_COLORS)
    if dimension in ("single_object", "colors"):
        return PromptConstraint(dimension=dimension,
                                objects=((str(rng.choice(shapes)),
                                          int(rng.choice(colors))),))
    if dimension in ("two_objects", "color_attribute", "position"):
        s1, s2 = rng.choice(len(shapes), size=2, replace=False)
        c1, c2 = rng.choice(len(colors), size=2, replace=False)
        objects = ((shapes[int(s1)], colors[int(c1)]),
                   (shapes[int(s2)], colors[int(c2)]))
        relation = str(rng.choice(RELATIONS)) if dimension == "position" else None
        return PromptConstraint(dimension=dimension, objects=objects,
                                relation=relation)
    if dimension == "counting":
        return PromptConstraint(dimension=dimension,
                                objects=((str(rng.choice(shapes)), None),),
                                count=int(rng.integers(2, 5)))
    raise SceneError(f"unknown dimension {dimension!r}")
