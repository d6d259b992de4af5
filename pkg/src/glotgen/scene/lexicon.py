"""Hand-authored mini-lexicons for the six supported languages.

Each lexicon maps concept ids (shape.*, color.*, count.*, rel.*, zone.*,
word.*, filler.*) to one surface form. Templates are order-preserving
across languages, so captions of the same scene share a concept-id
sequence in every language; only the surface forms differ. Surface forms
never contain whitespace (French multiword terms are hyphenated), which
keeps greedy longest-match tokenization lossless.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

LANGUAGES = ("en", "zh", "nl", "fr", "hi", "fa")

SHAPE_CONCEPTS = {s: f"shape.{s}" for s in
                  ("square", "circle", "triangle", "cross", "ring", "bar")}
COLOR_CONCEPTS = {c: f"color.{name}" for c, name in
                  {1: "red", 2: "green", 3: "blue", 4: "yellow",
                   5: "orange", 6: "purple", 7: "pink"}.items()}
COUNT_CONCEPTS = {2: "count.2", 3: "count.3", 4: "count.4"}
REL_CONCEPTS = {r: f"rel.{r}" for r in ("left_of", "right_of", "above", "below")}
ZONE_CONCEPTS = {z: f"zone.{z}" for z in
                 ("top_left", "top", "top_right", "left", "center", "right",
                  "bottom_left", "bottom", "bottom_right")}
WORD_A, WORD_AND, WORD_AT, WORD_DRAW = "word.a", "word.and", "word.at", "word.draw"
FILLER_CONCEPTS = tuple(f"filler.{i}" for i in range(5))

TEMPLATE_WORDS = (WORD_A, WORD_AND, WORD_AT, WORD_DRAW)


class LexiconError(KeyError):
    """A concept id has no surface form in the requested language."""


@dataclass
class Lexicon:
    language: str
    term_map: dict[str, str]
    _inverse: dict[str, str] = field(init=False, repr=False)

    def __post_init__(self):
        surfaces = list(self.term_map.values())
        if len(set(surfaces)) != len(surfaces):
            dupes = sorted({s for s in surfaces if surfaces.count(s) > 1})
            raise ValueError(f"duplicate surface forms in {self.language}: {dupes}")
        if any((" " in s) or ("\t" in s) for s in surfaces):
            raise ValueError(f"surface forms must not contain whitespace ({self.language})")
        self._inverse = {surface: concept for concept, surface in self.term_map.items()}

    def surface(self, concept_id: str) -> str:
        try:
            return self.term_map[concept_id]
        except KeyError:
            raise LexiconError(f"no surface form for concept {concept_id!r} "
                               f"in language {self.language!r}") from None

    def concept(self, surface: str) -> str | None:
        return self._inverse.get(surface)

    def save_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for concept, surface in self.term_map.items():
                fh.write(f"{concept}\t{surface}\n")

    @classmethod
    def load_tsv(cls, path, language: str) -> "Lexicon":
        term_map: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 'concept<TAB>surface'")
                term_map[parts[0]] = parts[1]
        return cls(language=language, term_map=term_map)


def load_builtin_lexicons() -> dict[str, Lexicon]:
    """Load the packaged TSV lexicons for all six languages."""
    lexicons: dict[str, Lexicon] = {}
    base = resources.files(__package__) / "lexicons"
    for lang in LANGUAGES:
        with resources.as_file(base / f"{lang}.tsv") as path:
            lexicons[lang] = Lexicon.load_tsv(path, lang)
    return lexicons
