#!/usr/bin/env python3
"""The unified vocabulary, sequence assembly, and modality-aware attention.

Shows the id-space partition, assembles a text-to-image sequence, and draws
the attention mask so the causal text block and the bidirectional image
block are visible.
"""

import numpy as np

from glotgen.model import ModelConfig, build_attention_mask, forward, \
    init_parameters
from glotgen.scene import load_builtin_lexicons
from glotgen.vocab import (MASK, SPECIALS, UnifiedVocab, assemble_t2i_sequence,
                           decode_text, encode_text)


def main():
    lexicons = load_builtin_lexicons()
    vocab = UnifiedVocab.from_lexicons(lexicons.values())
    print(f"specials: {SPECIALS}")
    print(f"text vocabulary: {len(vocab.text_vocab)} surface forms, "
          f"ids [8, {vocab.image_offset})")
    print(f"image codebook: K=16, ids [{vocab.image_offset}, {vocab.size})")

    prompt = "a red square at top-left"
    ids = encode_text(prompt, vocab, "en")
    print(f"\nencode({prompt!r}) -> {ids}")
    print(f"decode -> {decode_text(ids, vocab, 'en')!r}")
    zh = encode_text("一个红色正方形在左上角", vocab, "zh")
    print(f"encode(zh) -> {zh} (script-aware greedy longest-match)")

    seq, layout = assemble_t2i_sequence(ids, [MASK] * 256, vocab)
    print(f"\nassembled sequence: total={layout.total_len}, "
          f"text_span={layout.text_span}, image_span={layout.image_span}")
    print("head of sequence:", seq[:12].tolist(), "...")

    # draw a reduced mask: text block + first few image rows
    mask = build_attention_mask(layout)
    print("\nattention mask (rows/cols 0..9 then image rows 37..40):")
    picks = list(range(10)) + list(range(37, 41))
    for p in picks:
        row = "".join("#" if mask[p, j] else "." for j in picks)
        kind = "text" if p < 10 else "image"
        print(f"  pos {p:3d} [{kind:5s}] {row}")

    cfg = ModelConfig(vocab_size=vocab.size, max_seq_len=layout.total_len,
                      n_layers=2, n_heads=2, d_model=32, rng_seed=0)
    params = init_parameters(cfg)
    logits = forward(params, seq, mask)
    print(f"\nforward pass: logits shape {logits.shape}, "
          f"finite={np.isfinite(logits).all()}")


if __name__ == "__main__":
    main()
