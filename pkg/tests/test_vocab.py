import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glotgen.scene import STYLES, caption_scene, sample_scene
from glotgen.scene.lexicon import LANGUAGES
from glotgen.vocab import (MASK, NULL, SPECIALS, TokenGrid, UnifiedVocab,
                           VocabError, assemble_t2i_sequence, decode_text,
                           encode_text, grid_to_ids, ids_to_grid)


class TestVocabPartition:
    def test_ranges_disjoint_and_contiguous(self, vocab):
        assert vocab.image_offset == len(SPECIALS) + len(vocab.text_vocab)
        kinds = [vocab.kind(i) for i in range(vocab.size)]
        assert kinds[:8] == ["special"] * 8
        assert all(k == "text" for k in kinds[8:vocab.image_offset])
        assert all(k == "image" for k in kinds[vocab.image_offset:])

    def test_out_of_range_id_rejected(self, vocab):
        with pytest.raises(VocabError):
            vocab.kind(vocab.size)

    def test_duplicate_surface_rejected(self):
        with pytest.raises(VocabError):
            UnifiedVocab(text_vocab=("a", "a"))

    def test_save_load_roundtrip(self, vocab, tmp_path):
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        loaded = UnifiedVocab.load(path)
        assert loaded.text_vocab == vocab.text_vocab
        # external interface: line number = id - 8
        lines = path.read_text(encoding="utf-8").splitlines()
        assert vocab.text_id(lines[0]) == 8
        assert vocab.text_id(lines[-1]) == 8 + len(lines) - 1


class TestEncodeText:
    def test_empty_text(self, vocab):
        assert encode_text("", vocab) == []

    def test_roundtrip_every_surface_form(self, vocab):
        for form in vocab.text_vocab:
            assert decode_text(encode_text(form, vocab), vocab) == form

    def test_unknown_form_raises_with_offender(self, vocab):
        with pytest.raises(VocabError, match="zzzzz"):
            encode_text("red zzzzz", vocab)

    def test_full_corpus_encodes(self, vocab, lexicons):
        # every caption over many scenes, languages, and styles
        for seed in range(25):
            scene = sample_scene(seed)
            for lang in LANGUAGES:
                for style in STYLES:
                    rec = caption_scene(scene, lang, lexicons[lang], style)
                    ids = encode_text(rec.text, vocab, lang)
                    assert ids, rec.text
                    assert decode_text(ids, vocab, lang) == rec.text


class TestGridIds:
    def test_palette0_maps_to_offset(self, vocab):
        grid = TokenGrid.from_flat(16, [0] * 256)
        assert grid_to_ids(grid, vocab)[0] == vocab.image_offset

    def test_roundtrip(self, vocab, rng):
        grid = TokenGrid.from_flat(16, rng.integers(0, 16, size=256))
        assert ids_to_grid(grid_to_ids(grid, vocab), vocab) == grid

    def test_max_palette_boundary(self, vocab):
        grid = TokenGrid.from_flat(16, [15] * 256)
        assert grid_to_ids(grid, vocab)[-1] == vocab.image_offset + 15

    def test_non_image_id_rejected(self, vocab):
        ids = np.full(256, vocab.image_offset, dtype=np.int64)
        ids[3] = 0   # PAD is not an image token
        with pytest.raises(VocabError, match="outside the image token range"):
            ids_to_grid(ids, vocab)

    @given(values=st.lists(st.integers(0, 15), min_size=16, max_size=16))
    @settings(max_examples=25, deadline=None)
    def test_roundtrip_property_small_grid(self, values):
        vocab = UnifiedVocab(text_vocab=("x",), image_k=16)
        grid = TokenGrid.from_flat(4, values)
        assert ids_to_grid(grid_to_ids(grid, vocab), vocab, side=4) == grid


class TestAssembly:
    def test_empty_prompt_all_mask(self, vocab):
        seq, layout = assemble_t2i_sequence([], [MASK] * 256, vocab)
        assert layout.text_span == (2, 2)
        assert (seq[layout.image_span[0]:layout.image_span[1]] == MASK).all()
        assert layout.total_len == 5 + 32 + 256

    def test_deterministic(self, vocab):
        prompt = encode_text("red square", vocab)
        image = [vocab.image_offset] * 256
        a, la = assemble_t2i_sequence(prompt, image, vocab)
        b, lb = assemble_t2i_sequence(prompt, image, vocab)
        assert np.array_equal(a, b) and la == lb

    def test_image_span_length(self, vocab):
        _, layout = assemble_t2i_sequence([], [MASK] * 256, vocab)
        assert layout.image_len == 256

    def test_prompt_too_long_rejected(self, vocab):
        with pytest.raises(VocabError, match="exceeds max_text_len"):
            assemble_t2i_sequence([8] * 33, [MASK] * 256, vocab)

    def test_wrong_image_length_rejected(self, vocab):
        with pytest.raises(VocabError, match="length"):
            assemble_t2i_sequence([], [MASK] * 255, vocab)

    def test_injective_on_prompt_image_pairs(self, vocab):
        image = [vocab.image_offset] * 256
        seq_a, _ = assemble_t2i_sequence(encode_text("red square", vocab),
                                         image, vocab)
        seq_b, _ = assemble_t2i_sequence(encode_text("red circle", vocab),
                                         image, vocab)
        assert not np.array_equal(seq_a, seq_b)

    def test_null_prompt_layout_matches_any_prompt_shape(self, vocab):
        # CFG null condition: same span structure, padding-only difference
        seq_null, lay_null = assemble_t2i_sequence([], [MASK] * 256, vocab)
        seq_red, lay_red = assemble_t2i_sequence(encode_text("red", vocab),
                                                 [MASK] * 256, vocab)
        assert lay_null.image_span == lay_red.image_span
        assert lay_null.total_len == lay_red.total_len
        differing = np.nonzero(seq_null != seq_red)[0]
        assert all(d < lay_null.image_span[0] - 1 for d in differing)

    def test_every_assembled_id_in_vocabulary(self, vocab):
        prompt = encode_text("a red square at top", vocab)
        grid = TokenGrid.from_flat(16, np.zeros(256, dtype=int))
        seq, _ = assemble_t2i_sequence(prompt, grid_to_ids(grid, vocab), vocab)
        for token in np.unique(seq):
            vocab.kind(int(token))

    def test_null_special_reserved(self, vocab):
        # NULL exists in the id space; the null condition is an empty span
        assert vocab.kind(NULL) == "special"
