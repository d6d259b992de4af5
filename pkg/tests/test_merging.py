import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glotgen.checkpoint import read_manifest, save_checkpoint
from glotgen.merging import (MergeError, MergeSpec, default_wma_weights, merge,
                             merge_ema, merge_sma, merge_to_file, merge_wma,
                             normalize_weights)
from glotgen.model import ModelConfig, Parameters, init_parameters


def make_checkpoints(n, vocab_size=24, seed0=0):
    cfg = ModelConfig(vocab_size=vocab_size, max_seq_len=12, n_layers=1,
                      n_heads=2, d_model=8, rng_seed=seed0)
    out = []
    for i in range(n):
        p = init_parameters(cfg)
        for t in p.tensors.values():
            t += 0.01 * i     # distinct, ordered checkpoints
        out.append(p)
    return out


class TestNormalizeWeights:
    def test_equal_pair(self):
        assert np.allclose(normalize_weights([1, 1]), [0.5, 0.5])

    def test_one_two_three(self):
        assert np.allclose(normalize_weights([1, 2, 3]), [1 / 6, 2 / 6, 3 / 6])

    def test_singleton(self):
        assert np.allclose(normalize_weights([5]), [1.0])

    def test_all_zero_rejected(self):
        with pytest.raises(MergeError, match="zero"):
            normalize_weights([0, 0])

    def test_negative_rejected(self):
        with pytest.raises(MergeError):
            normalize_weights([1, -1])

    def test_linear_weights_n20(self):
        # the N=20 trajectory setting: alpha_20 = 20/210
        alphas = normalize_weights(default_wma_weights(20))
        assert alphas[-1] == pytest.approx(20 / 210)
        assert alphas.sum() == pytest.approx(1.0)


class TestSma:
    def test_identical_checkpoints_idempotent(self):
        ckpts = make_checkpoints(1) * 3
        merged = merge_sma(ckpts)
        assert all(np.array_equal(merged.tensors[k], ckpts[0].tensors[k])
                   for k in merged.names())

    def test_midpoint_of_zero_and_two(self):
        a, b = make_checkpoints(2)
        for t in a.tensors.values():
            t[...] = 0.0
        for t in b.tensors.values():
            t[...] = 2.0
        merged = merge_sma([a, b])
        assert all((merged.tensors[k] == 1.0).all() for k in merged.names())

    def test_equals_wma_with_equal_weights(self):
        ckpts = make_checkpoints(4)
        sma = merge_sma(ckpts)
        wma = merge_wma(ckpts, np.ones(4))
        for k in sma.names():
            assert np.max(np.abs(sma.tensors[k].astype(np.float64)
                                 - wma.tensors[k].astype(np.float64))) < 1e-12

    def test_order_invariant(self):
        ckpts = make_checkpoints(3)
        a = merge_sma(ckpts)
        b = merge_sma(ckpts[::-1])
        assert all(np.allclose(a.tensors[k], b.tensors[k], atol=1e-12)
                   for k in a.names())


class TestEma:
    def test_alpha_one_returns_last(self):
        ckpts = make_checkpoints(3)
        merged = merge_ema(ckpts, alpha=1.0)
        assert all(np.array_equal(merged.tensors[k], ckpts[-1].tensors[k])
                   for k in merged.names())

    def test_single_checkpoint_identity(self):
        (only,) = make_checkpoints(1)
        merged = merge_ema([only], alpha=0.3)
        assert all(np.array_equal(merged.tensors[k], only.tensors[k])
                   for k in merged.names())

    def test_unrolled_weights_n3_alpha_half(self):
        # recursion unrolls to weights [0.25, 0.25, 0.5] over M1..M3
        ckpts = make_checkpoints(3)
        ema = merge_ema(ckpts, alpha=0.5)
        manual = merge_wma(ckpts, [0.25, 0.25, 0.5])
        for k in ema.names():
            assert np.max(np.abs(ema.tensors[k].astype(np.float64)
                                 - manual.tensors[k].astype(np.float64))) < 1e-12

    def test_order_sensitive_for_interior_alpha(self):
        ckpts = make_checkpoints(3)
        fwd = merge_ema(ckpts, alpha=0.5)
        rev = merge_ema(ckpts[::-1], alpha=0.5)
        assert any(not np.allclose(fwd.tensors[k], rev.tensors[k])
                   for k in fwd.names())


class TestWma:
    def test_last_only_weights(self):
        ckpts = make_checkpoints(3)
        merged = merge_wma(ckpts, [0, 0, 1])
        assert all(np.array_equal(merged.tensors[k], ckpts[-1].tensors[k])
                   for k in merged.names())

    def test_weight_count_mismatch_rejected(self):
        ckpts = make_checkpoints(2)
        with pytest.raises(MergeError):
            merge_wma(ckpts, [1, 1, 1])

    def test_shape_mismatch_names_tensor(self):
        a = make_checkpoints(1)[0]
        other_cfg = ModelConfig(vocab_size=30, max_seq_len=12, n_layers=1,
                                n_heads=2, d_model=8)
        b = init_parameters(other_cfg)
        with pytest.raises(MergeError, match="tok_emb"):
            merge_wma([a, b], [1, 1])


class TestMergeProperties:
    def test_convexity_envelope(self):
        ckpts = make_checkpoints(4)
        for strategy, merged in (
                ("sma", merge_sma(ckpts)),
                ("ema", merge_ema(ckpts, 0.4)),
                ("wma", merge_wma(ckpts, default_wma_weights(4)))):
            for k in merged.names():
                stack = np.stack([c.tensors[k] for c in ckpts])
                lo, hi = stack.min(axis=0), stack.max(axis=0)
                assert (merged.tensors[k] >= lo - 1e-6).all(), strategy
                assert (merged.tensors[k] <= hi + 1e-6).all(), strategy

    def test_affine_equivariance(self):
        ckpts = make_checkpoints(3)
        shifted = []
        for c in ckpts:
            s = c.copy()
            for t in s.tensors.values():
                t += 0.5
            shifted.append(s)
        base = merge_wma(ckpts, [1, 2, 3])
        moved = merge_wma(shifted, [1, 2, 3])
        for k in base.names():
            assert np.allclose(moved.tensors[k], base.tensors[k] + 0.5,
                               atol=1e-6)

    @given(weights=st.lists(st.floats(0.0, 10.0), min_size=2, max_size=5)
           .filter(lambda w: sum(w) > 0))
    @settings(max_examples=20, deadline=None)
    def test_normalized_weights_sum_to_one(self, weights):
        alphas = normalize_weights(weights)
        assert alphas.sum() == pytest.approx(1.0)
        assert (alphas >= 0).all()


class TestMergeFiles:
    def test_merge_to_file_records_provenance(self, tmp_path):
        ckpts = make_checkpoints(3)
        prefixes = []
        for i, c in enumerate(ckpts):
            prefix = tmp_path / f"ck{i}"
            save_checkpoint(c, prefix, step=100 * (i + 1))
            prefixes.append(str(prefix))
        spec = MergeSpec(checkpoints=tuple(prefixes), strategy="wma")
        out = merge_to_file(spec, tmp_path / "merged")
        manifest = read_manifest(out)
        assert manifest["merge_spec"]["strategy"] == "wma"
        assert manifest["merge_spec"]["checkpoints"] == prefixes
        assert manifest["step"] == 300
        assert manifest["has_optimizer_state"] is False

    def test_merge_never_touches_optimizer_state(self, tmp_path):
        from glotgen.checkpoint import load_checkpoint
        from glotgen.training import AdamWState
        ckpts = make_checkpoints(2)
        prefixes = []
        for i, c in enumerate(ckpts):
            opt = AdamWState.init(c)
            opt.t = 9
            prefix = tmp_path / f"ck{i}"
            save_checkpoint(c, prefix, step=i, opt_state=opt)
            prefixes.append(str(prefix))
        out = merge_to_file(MergeSpec(checkpoints=tuple(prefixes)), tmp_path / "m")
        _, _, opt_back = load_checkpoint(out, want_optimizer=True)
        assert opt_back is None
