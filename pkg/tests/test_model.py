import numpy as np
import pytest

from glotgen.model import (ModelConfig, ModelError, Workspace,
                           batch_attention_bias, build_attention_mask,
                           backward, forward, init_parameters, mask_to_bias,
                           parameter_shapes, qk_normalize, _forward_batch,
                           _masked_softmax_inplace)
from glotgen.vocab import MASK, SequenceLayout, assemble_t2i_sequence


def micro_layout(n_text=2, n_image=2):
    total = n_text + n_image
    return SequenceLayout(text_span=(0, n_text), image_span=(n_text, total),
                          total_len=total)


class TestAttentionMask:
    def test_two_text_two_image_rows(self):
        # forced by the modality rules: text causal, image attends everything
        mask = build_attention_mask(micro_layout(2, 2))
        expected = np.array([[1, 0, 0, 0],
                             [1, 1, 0, 0],
                             [1, 1, 1, 1],
                             [1, 1, 1, 1]], dtype=bool)
        assert np.array_equal(mask, expected)

    def test_all_image_layout_fully_true(self):
        mask = build_attention_mask(micro_layout(0, 4))
        assert mask.all()

    def test_deterministic(self, vocab):
        _, layout = assemble_t2i_sequence([8, 9], [MASK] * 256, vocab)
        assert np.array_equal(build_attention_mask(layout),
                              build_attention_mask(layout))

    def test_assembled_layout_rules(self, vocab):
        prompt = [8, 9, 10]
        _, layout = assemble_t2i_sequence(prompt, [MASK] * 256, vocab)
        mask = build_attention_mask(layout)
        text_end = layout.text_span[1]          # EOT position
        soi = layout.image_span[0] - 1
        pad = text_end + 1                      # first padding slot
        assert pad < soi
        # (a) causal inside the text region
        assert mask[text_end, 0] and not mask[0, text_end]
        # (b) text never attends image
        assert not mask[text_end, soi + 1]
        # (c) image rows attend all text and all image
        assert mask[soi + 1, 0] and mask[soi + 1, layout.image_span[1] - 1]
        # (d) bracketing specials follow their span's rule
        assert mask[soi, 0] and mask[layout.image_span[1], soi]
        # (e) padding neither attends nor is attended
        assert not mask[pad, :].any() and not mask[:, pad].any()

    def test_batch_bias_matches_single_mask(self, vocab):
        for n in (0, 1, 7, 32):
            _, layout = assemble_t2i_sequence([10] * n, [MASK] * 256, vocab)
            single = mask_to_bias(build_attention_mask(layout))
            batched = batch_attention_bias(np.array([n]), 32, 256)
            assert np.array_equal(single, batched)


class TestQkNorm:
    def test_unit_vector_gain_one_unchanged(self):
        q = np.zeros((1, 1, 1, 4), dtype=np.float64)
        q[..., 0] = 1.0
        # offset chosen so the effective gain (dh**0.25 * (1 + off)) is 1
        off = np.array([1.0 / (4 ** 0.25) - 1.0])
        qn, kn = qk_normalize(q, q.copy(), off, off, 4)
        assert np.allclose(qn, q) and np.allclose(kn, q)

    def test_scale_invariance(self, rng):
        q = rng.standard_normal((2, 2, 3, 8))
        k = rng.standard_normal((2, 2, 3, 8))
        off = rng.standard_normal(2) * 0.1
        a = qk_normalize(q, k, off, off, 8)
        b = qk_normalize(10.0 * q, 0.5 * k, off, off, 8)
        assert np.allclose(a[0], b[0], atol=1e-12)
        assert np.allclose(a[1], b[1], atol=1e-12)

    def test_zero_vector_stays_zero(self):
        q = np.zeros((1, 1, 2, 4))
        qn, _ = qk_normalize(q, q.copy(), np.zeros(1), np.zeros(1), 4)
        assert (qn == 0).all()


class TestForward:
    def test_bit_stable_across_calls(self, tiny_params, vocab):
        seq, layout = assemble_t2i_sequence([8, 9], [MASK] * 256, vocab)
        mask = build_attention_mask(layout)
        a = forward(tiny_params, seq, mask)
        b = forward(tiny_params, seq, mask)
        assert np.array_equal(a, b)

    def test_zeroed_attention_output_made_inert(self, tiny_params, vocab):
        # degenerate smoke test: with wo = 0 the attention mixing cannot
        # influence logits, so masks with different prompt lengths agree
        params = tiny_params.copy()
        for name in params.names():
            if name.endswith(".wo"):
                params.tensors[name][...] = 0.0
        seq, layout = assemble_t2i_sequence([8], [MASK] * 256, vocab)
        im_s = layout.image_span[0]
        logits_a = forward(params, seq, build_attention_mask(layout))
        alt_mask = build_attention_mask(
            SequenceLayout((2, 4), layout.image_span, layout.total_len))
        logits_b = forward(params, seq, alt_mask)
        assert np.allclose(logits_a[im_s:], logits_b[im_s:], atol=1e-6)

    def test_nan_in_params_detected(self, tiny_params, vocab):
        params = tiny_params.copy()
        params.tensors["layer0.w2"][0, 0] = np.nan
        seq, layout = assemble_t2i_sequence([8], [MASK] * 256, vocab)
        with pytest.raises(ModelError, match="layer 0"):
            forward(params, seq, build_attention_mask(layout))

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        scores = rng.standard_normal((2, 2, 6, 6)).astype(np.float32)
        layout = SequenceLayout(text_span=(0, 3), image_span=(4, 6), total_len=6)
        bias = mask_to_bias(build_attention_mask(layout))
        probs = _masked_softmax_inplace(scores, bias, None, 1.0)
        sums = probs.sum(axis=-1)
        attended = np.asarray(build_attention_mask(layout).any(axis=1))
        for row in range(6):
            expected = 1.0 if attended[row] else 0.0
            assert np.allclose(sums[:, :, row], expected, atol=1e-6)


class TestMaskFlow:
    def test_information_never_crosses_masked_entries(self, vocab):
        cfg = ModelConfig(vocab_size=vocab.size, max_seq_len=5 + 32 + 256,
                          n_layers=2, n_heads=2, d_model=32, rng_seed=5)
        params = init_parameters(cfg)
        rng = np.random.default_rng(7)
        prompt = [8, 9, 10, 11]
        seq, layout = assemble_t2i_sequence(
            prompt, rng.integers(vocab.image_offset,
                                 vocab.image_offset + 16, size=256), vocab)
        mask = build_attention_mask(layout)
        base = forward(params, seq, mask)
        text_end = layout.text_span[1]
        im_s = layout.image_span[0]
        # text position must not see a later text token nor any image token
        p = 3                                   # prompt position
        for j in (text_end, im_s + 5):
            assert not mask[p, j]
            perturbed = seq.copy()
            perturbed[j] = (perturbed[j] % 3) + 8
            out = forward(params, perturbed, mask)
            assert np.array_equal(out[p], base[p])
        # and must be sensitive to an attended earlier position
        perturbed = seq.copy()
        perturbed[2] = 20
        out = forward(params, perturbed, mask)
        assert np.abs(out[p] - base[p]).max() > 1e-8


class TestInit:
    def test_same_seed_identical(self, tiny_model_config):
        a = init_parameters(tiny_model_config)
        b = init_parameters(tiny_model_config)
        assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a.names())

    def test_different_seeds_differ(self, tiny_model_config, vocab):
        other = ModelConfig(vocab_size=vocab.size, max_seq_len=5 + 32 + 256,
                            n_layers=1, n_heads=2, d_model=32, rng_seed=12)
        a = init_parameters(tiny_model_config)
        b = init_parameters(other)
        assert any(not np.array_equal(a.tensors[k], b.tensors[k])
                   for k in a.names())

    def test_shapes_match_config(self, tiny_model_config, tiny_params):
        for name, shape in parameter_shapes(tiny_model_config).items():
            assert tiny_params.tensors[name].shape == shape

    def test_invalid_dims_rejected(self):
        with pytest.raises(ModelError):
            ModelConfig(vocab_size=10, max_seq_len=8, d_model=6, n_heads=4)


def finite_difference_check(n_layers=1, d_model=8, h=1e-3, seed=0):
    """Analytic vs central-difference gradients on a tiny config.

    Returns the worst relative error across parameter tensors. Uses the
    actual masked NLL objective over a small image block.
    """
    from glotgen.training import _loss_and_grad
    from glotgen.vocab import UnifiedVocab

    vocab = UnifiedVocab(text_vocab=tuple(f"w{i}" for i in range(6)), image_k=16)
    m = 16   # 4x4 image block
    cfg = ModelConfig(vocab_size=vocab.size, max_seq_len=5 + 4 + m,
                      n_layers=n_layers, n_heads=2, d_model=d_model, rng_seed=seed)
    params = init_parameters(cfg, dtype=np.float64)
    rng = np.random.default_rng(seed)
    prompt_lens = np.array([2, 0])
    bias = batch_attention_bias(prompt_lens, 4, m).astype(np.float64)
    seq = np.zeros((2, cfg.max_seq_len), dtype=np.int64)
    from glotgen.vocab import EOT, SOT, T2I, SOI, EOI
    for i, n in enumerate(prompt_lens):
        seq[i, 0], seq[i, 1] = T2I, SOT
        seq[i, 2:2 + n] = rng.integers(8, 8 + 6, size=n)
        seq[i, 2 + n] = EOT
    soi = 3 + 4
    seq[:, soi] = SOI
    image = rng.integers(vocab.image_offset, vocab.image_offset + 16, size=(2, m))
    mask_set = rng.random((2, m)) < 0.5
    mask_set[:, 0] = True
    seq[:, soi + 1:soi + 1 + m] = np.where(mask_set, MASK, image)
    seq[:, soi + 1 + m] = EOI
    rows = slice(soi + 1, soi + 1 + m)
    cols = slice(vocab.image_offset, vocab.image_offset + 16)
    rel = image - vocab.image_offset

    def loss_of(p):
        logits, _ = _forward_batch(p, seq, bias, logit_rows=rows, logit_cols=cols)
        loss, _ = _loss_and_grad(logits, rel, mask_set, "mean", want_grad=False)
        return loss

    logits, cache = _forward_batch(params, seq, bias, want_cache=True,
                                   logit_rows=rows, logit_cols=cols)
    _, d_logits = _loss_and_grad(logits, rel, mask_set, "mean")
    grads = backward(params, cache, d_logits)

    worst = 0.0
    for name in params.names():
        tensor = params.tensors[name]
        fd = np.zeros_like(tensor)
        it = np.nditer(tensor, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = tensor[idx]
            tensor[idx] = orig + h
            up = loss_of(params)
            tensor[idx] = orig - h
            down = loss_of(params)
            tensor[idx] = orig
            fd[idx] = (up - down) / (2 * h)
        rel_err = np.linalg.norm(grads[name] - fd) / max(np.linalg.norm(fd), 1e-12)
        worst = max(worst, rel_err)
    return worst


class TestGradients:
    def test_finite_difference_agreement(self):
        # 1 layer, d_model 8, h = 1e-3, relative error < 1e-3 per tensor
        assert finite_difference_check(n_layers=1, d_model=8, h=1e-3) < 1e-3
