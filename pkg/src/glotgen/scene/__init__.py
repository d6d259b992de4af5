"""Procedural scene world: geometry, lexicons, captions, filters, datasets."""

from .captions import STYLES, CaptionRecord, caption_concepts, caption_scene
from .dataset import build_dataset, load_records
from .filters import (FilterReport, language_validate, length_filter,
                      mismatch_filter, run_filters, safety_filter)
from .geometry import (BACKGROUND, GRID_SIZE, MAX_OBJECTS, OBJECT_COLORS,
                       PALETTE_SIZE, RELATIONS, SHAPES, SceneConstraints,
                       SceneError, SceneObject, SceneSpec, relation_holds,
                       render_scene, sample_scene, shape_cells, zone_of)
from .lexicon import LANGUAGES, Lexicon, LexiconError, load_builtin_lexicons

__all__ = [
    "BACKGROUND", "GRID_SIZE", "MAX_OBJECTS", "OBJECT_COLORS", "PALETTE_SIZE",
    "RELATIONS", "SHAPES", "STYLES", "LANGUAGES",
    "CaptionRecord", "FilterReport", "Lexicon", "LexiconError",
    "SceneConstraints", "SceneError", "SceneObject", "SceneSpec",
    "build_dataset", "caption_concepts", "caption_scene", "language_validate",
    "length_filter", "load_builtin_lexicons", "load_records", "mismatch_filter",
    "relation_holds", "render_scene", "run_filters", "safety_filter",
    "sample_scene", "shape_cells", "zone_of",
]
