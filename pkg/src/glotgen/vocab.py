"""Unified token vocabulary: specials + closed text vocabulary + image codebook.

One id space embeds everything. Specials occupy [0, 8), text surface forms
[8, 8 + n_text), and the image palette [image_offset, image_offset + K).
Text encoding is greedy longest-match over the closed vocabulary, which is
lossless here because the caption corpus is closed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPECIALS = ("PAD", "T2I", "SOT", "EOT", "SOI", "EOI", "MASK", "NULL")
PAD, T2I, SOT, EOT, SOI, EOI, MASK, NULL = range(8)

# languages whose scripts are written without spaces between tokens
UNSPACED_LANGUAGES = frozenset({"zh"})

DEFAULT_MAX_TEXT_LEN = 32


class VocabError(ValueError):
    """Out-of-vocabulary surface form or malformed token ids."""


@dataclass(frozen=True)
class TokenGrid:
    """Square grid of palette indices, row-major."""
    side: int
    cells: np.ndarray          # (side, side) uint8

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.uint8)
        if cells.shape != (self.side, self.side):
            raise VocabError(f"grid cells must be {self.side}x{self.side}, got {cells.shape}")
        object.__setattr__(self, "cells", cells)

    def flat(self) -> list[int]:
        return self.cells.reshape(-1).tolist()

    @classmethod
    def from_flat(cls, side: int, values) -> "TokenGrid":
        arr = np.asarray(values, dtype=np.uint8).reshape(side, side)
        return cls(side=side, cells=arr)

    def __eq__(self, other) -> bool:
        return isinstance(other, TokenGrid) and self.side == other.side \
            and bool(np.array_equal(self.cells, other.cells))


@dataclass(frozen=True)
class SequenceLayout:
    """Where the prompt and image tokens sit inside an assembled sequence."""
    text_span: tuple[int, int]
    image_span: tuple[int, int]
    total_len: int

    @property
    def text_len(self) -> int:
        return self.text_span[1] - self.text_span[0]

    @property
    def image_len(self) -> int:
        return self.image_span[1] - self.image_span[0]


@dataclass
class UnifiedVocab:
    text_vocab: tuple[str, ...]
    image_k: int = 16
    _text_ids: dict[str, int] = field(init=False, repr=False)
    _by_length: tuple[str, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if len(set(self.text_vocab)) != len(self.text_vocab):
            raise VocabError("text vocabulary contains duplicates")
        self._text_ids = {form: len(SPECIALS) + i for i, form in enumerate(self.text_vocab)}
        self._by_length = tuple(sorted(self.text_vocab, key=len, reverse=True))

    @property
    def image_offset(self) -> int:
        return len(SPECIALS) + len(self.text_vocab)

    @property
    def size(self) -> int:
        return self.image_offset + self.image_k

    def kind(self, token_id: int) -> str:
        """Partition: every id is exactly one of special/text/image."""
        if 0 <= token_id < len(SPECIALS):
            return "special"
        if token_id < self.image_offset:
            return "text"
        if token_id < self.size:
            return "image"
        raise VocabError(f"token id {token_id} outside vocabulary")

    def text_id(self, form: str) -> int:
        try:
            return self._text_ids[form]
        except KeyError:
            raise VocabError(f"surface form {form!r} not in vocabulary") from None

    def text_form(self, token_id: int) -> str:
        if not len(SPECIALS) <= token_id < self.image_offset:
            raise VocabError(f"id {token_id} is not a text token")
        return self.text_vocab[token_id - len(SPECIALS)]

    @classmethod
    def from_lexicons(cls, lexicons, image_k: int = 16) -> "UnifiedVocab":
        """Union of all surface forms across lexicons, in stable sorted order."""
        forms = sorted({surface for lex in lexicons for surface in lex.term_map.values()})
        return cls(text_vocab=tuple(forms), image_k=image_k)

    def save(self, path) -> None:
        """One surface form per line; line number = id - 8. Specials implicit."""
        with open(path, "w", encoding="utf-8") as fh:
            for form in self.text_vocab:
                fh.write(form + "\n")

    @classmethod
    def load(cls, path, image_k: int = 16) -> "UnifiedVocab":
        with open(path, encoding="utf-8") as fh:
            forms = tuple(line.rstrip("\n") for line in fh if line.rstrip("\n"))
        return cls(text_vocab=forms, image_k=image_k)


def encode_text(text: str, vocab: UnifiedVocab, language: str = "en") -> list[int]:
    """Greedy longest-match encoding over the closed text vocabulary.

    Whitespace separates candidate chunks; unspaced scripts (Chinese) are
    matched greedily inside each chunk. Unknown surface material raises.
    """
    ids: list[int] = []
    for chunk in text.split():
        pos = 0
        while pos < len(chunk):
            for form in vocab._by_length:
                if chunk.startswith(form, pos):
                    ids.append(vocab.text_id(form))
                    pos += len(form)
                    break
            else:
                raise VocabError(f"cannot tokenize {chunk[pos:]!r} (language {language})")
    return ids


def decode_text(ids, vocab: UnifiedVocab, language: str = "en") -> str:
    joiner = "" if language in UNSPACED_LANGUAGES else " "
    return joiner.join(vocab.text_form(int(i)) for i in ids)


def grid_to_ids(grid: TokenGrid, vocab: UnifiedVocab) -> np.ndarray:
    """Palette indices -> image token ids (row-major)."""
    cells = grid.cells.reshape(-1)
    if cells.size and int(cells.max()) >= vocab.image_k:
        raise VocabError(f"palette index {int(cells.max())} >= codebook size {vocab.image_k}")
    return cells.astype(np.int64) + vocab.image_offset


def ids_to_grid(ids, vocab: UnifiedVocab, side: int = 16) -> TokenGrid:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.size != side * side:
        raise VocabError(f"expected {side * side} image ids, got {arr.size}")
    lo, hi = vocab.image_offset, vocab.image_offset + vocab.image_k
    if arr.size and (int(arr.min()) < lo or int(arr.max()) >= hi):
        bad = int(arr[(arr < lo) | (arr >= hi)][0])
        raise VocabError(f"id {bad} outside the image token range [{lo}, {hi})")
    return TokenGrid.from_flat(side, (arr - lo).astype(np.uint8))


def assemble_t2i_sequence(prompt_ids, image_ids_or_mask, vocab: UnifiedVocab,
                          max_text_len: int = DEFAULT_MAX_TEXT_LEN,
                          image_len: int = 256) -> tuple[np.ndarray, SequenceLayout]:
    """Build the fixed-length [T2I][SOT] p [EOT] PAD.. [SOI] image [EOI] sequence.

    Total length is always 5 + max_text_len + image_len; padding sits between
    [EOT] and [SOI] so spans keep static positions for the image block.
    """
    prompt = np.asarray(list(prompt_ids), dtype=np.int64)
    if prompt.size > max_text_len:
        raise VocabError(f"prompt length {prompt.size} exceeds max_text_len {max_text_len}")
    image = np.asarray(list(image_ids_or_mask), dtype=np.int64)
    if image.size != image_len:
        raise VocabError(f"image part must have length {image_len}, got {image.size}")
    lo, hi = vocab.image_offset, vocab.image_offset + vocab.image_k
    valid = ((image >= lo) & (image < hi)) | (image == MASK)
    if not bool(valid.all()):
        raise VocabError("image part entries must be image token ids or MASK")

    total = 5 + max_text_len + image_len
    seq = np.full(total, PAD, dtype=np.int64)
    seq[0], seq[1] = T2I, SOT
    n = prompt.size
    seq[2:2 + n] = prompt
    seq[2 + n] = EOT
    soi = 3 + max_text_len
    seq[soi] = SOI
    seq[soi + 1:soi + 1 + image_len] = image
    seq[soi + 1 + image_len] = EOI
    layout = SequenceLayout(text_span=(2, 2 + n),
                            image_span=(soi + 1, soi + 1 + image_len),
                            total_len=total)
    return seq, layout
