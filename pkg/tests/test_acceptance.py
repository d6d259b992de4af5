"""Acceptance suite: one test per criterion, each printing a PASS line.

Criterion 7 verifies the recorded desk-scale pilot. The canonical artifact
is reports/pilot/pilot_summary.json (produced by scripts/run_pilot.py and
committed with the repo); point GLOTGEN_PILOT_DIR at a fresh run directory
to verify that instead. If no artifact exists the test runs the full pilot
itself, which takes hours on a small CPU.
"""

import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from glotgen.evaluation import clc_score, css_scores
from glotgen.merging import merge_ema, merge_sma, merge_wma
from glotgen.model import (ModelConfig, build_attention_mask, forward,
                           init_parameters)
from glotgen.training import (MaskSchedule, CurriculumStage, draw_style,
                              masked_nll_loss, stage_seed, step_rng)
from glotgen.vocab import MASK, UnifiedVocab, assemble_t2i_sequence

REPO = Path(__file__).resolve().parent.parent


def _report(n: int, text: str) -> None:
    print(f"[acceptance] criterion {n} PASS: {text}")


# ---------------------------------------------------------------- criterion 1

def test_criterion_1_loss_contract(vocab):
    m = 256
    _, layout = assemble_t2i_sequence([], [MASK] * m, vocab)
    rng = np.random.default_rng(0)
    targets = rng.integers(0, 16, size=m) + vocab.image_offset
    mask_set = rng.random(m) < 0.5
    mask_set[0] = True

    uniform = np.zeros((layout.total_len, vocab.size))
    loss = masked_nll_loss(uniform, targets, mask_set, layout, vocab)
    assert abs(loss - math.log(16)) < 1e-6

    noisy = rng.standard_normal((layout.total_len, vocab.size))
    base = masked_nll_loss(noisy, targets, mask_set, layout, vocab)
    for j in np.nonzero(~mask_set)[0][:20]:
        perturbed = noisy.copy()
        perturbed[layout.image_span[0] + j] += rng.standard_normal(vocab.size)
        assert masked_nll_loss(perturbed, targets, mask_set, layout,
                               vocab) == base
    _report(1, f"uniform-logit loss = ln 16 within 1e-6; unmasked rows "
               f"change the loss by exactly 0")


# ---------------------------------------------------------------- criterion 2

def test_criterion_2_gradient_check():
    from test_model import finite_difference_check
    worst = finite_difference_check(n_layers=1, d_model=8, h=1e-3)
    assert worst < 1e-3
    _report(2, f"analytic vs central-difference gradients agree, worst "
               f"relative error {worst:.2e} < 1e-3")


# ---------------------------------------------------------------- criterion 3

def test_criterion_3_attention_mask_flow(vocab):
    cfg = ModelConfig(vocab_size=vocab.size, max_seq_len=5 + 32 + 256,
                      n_layers=2, n_heads=2, d_model=32, rng_seed=21)
    params = init_parameters(cfg)
    rng = np.random.default_rng(77)
    probes = 0
    while probes < 50:
        n_prompt = int(rng.integers(0, 33))
        prompt = rng.integers(8, 8 + 40, size=n_prompt)
        image = rng.integers(vocab.image_offset, vocab.image_offset + 16,
                             size=256)
        seq, layout = assemble_t2i_sequence(prompt, image, vocab)
        mask = build_attention_mask(layout)
        p = int(rng.integers(0, layout.total_len))
        if not mask[p].any():
            continue                      # padding rows carry no information
        base = forward(params, seq, mask)
        blocked = np.nonzero(~mask[p])[0]
        blocked = blocked[blocked != p]
        if blocked.size:
            j = int(rng.choice(blocked))
            perturbed = seq.copy()
            perturbed[j] = int(rng.integers(8, 8 + 40))
            out = forward(params, perturbed, mask)
            assert np.array_equal(out[p], base[p]), (p, j)
        attended = np.nonzero(mask[p])[0]
        attended = attended[attended != p]
        if attended.size == 0:
            continue
        j = int(attended[-1])
        perturbed = seq.copy()
        perturbed[j] = 8 if perturbed[j] != 8 else 9
        out = forward(params, perturbed, mask)
        assert np.abs(out[p] - base[p]).max() > 1e-8, (p, j)
        probes += 1
    _report(3, "50 probes: logits invariant to masked-out positions, "
               "sensitive to attended ones")


# ---------------------------------------------------------------- criterion 4

def test_criterion_4_merging_identities():
    cfg = ModelConfig(vocab_size=40, max_seq_len=16, n_layers=1, n_heads=2,
                      d_model=8, rng_seed=4)
    ckpts = []
    for i in range(3):
        p = init_parameters(cfg)
        for t in p.tensors.values():
            t += 0.125 * i
        ckpts.append(p)

    wma = merge_wma(ckpts, np.ones(3))
    sma = merge_sma(ckpts)
    for k in sma.names():
        diff = np.max(np.abs(wma.tensors[k].astype(np.float64)
                             - sma.tensors[k].astype(np.float64)))
        assert diff < 1e-12

    ema1 = merge_ema(ckpts, alpha=1.0)
    assert all(np.array_equal(ema1.tensors[k], ckpts[-1].tensors[k])
               for k in ema1.names())

    same = merge_sma([ckpts[0], ckpts[0], ckpts[0]])
    assert all(np.array_equal(same.tensors[k], ckpts[0].tensors[k])
               for k in same.names())

    ema = merge_ema(ckpts, alpha=0.5)
    unrolled = merge_wma(ckpts, [0.25, 0.25, 0.5])
    for k in ema.names():
        diff = np.max(np.abs(ema.tensors[k].astype(np.float64)
                             - unrolled.tensors[k].astype(np.float64)))
        assert diff < 1e-12
    _report(4, "WMA(equal)=SMA, EMA(1)=last, SMA(identical)=identity, "
               "EMA(N=3, a=0.5) unrolls to [0.25, 0.25, 0.5]")


# ---------------------------------------------------------------- criterion 5

def test_criterion_5_metric_algebra(rng):
    v = np.array([0.6, 0.8])
    assert abs(clc_score([v, v], [v, v]) - 1.0) < 1e-9
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert abs(clc_score([a], [b])) < 1e-9
    assert abs(clc_score([a], [a, b]) - 0.5) < 1e-9
    ef, es = css_scores(v, [v], [v])
    assert abs(ef - 1.0) < 1e-9 and abs(es - 1.0) < 1e-9
    ef, es = css_scores(a, [b], [b])
    assert abs(ef) < 1e-9 and abs(es) < 1e-9
    ef, _ = css_scores(a, [a, b], [b])
    assert abs(ef - 0.5) < 1e-9

    refs = [rng.standard_normal(6) for _ in range(3)]
    targets = [rng.standard_normal(6) for _ in range(4)]
    base = clc_score(refs, targets)
    assert abs(clc_score([3.0 * r for r in refs],
                         [0.5 * t for t in targets]) - base) < 1e-9
    assert abs(clc_score(refs[::-1], targets[::-1]) - base) < 1e-12
    ref = rng.standard_normal(6)
    efs = [rng.standard_normal(6) for _ in range(3)]
    ess = [rng.standard_normal(6) for _ in range(3)]
    base_ef, base_es = css_scores(ref, efs, ess)
    got_ef, got_es = css_scores(2.0 * ref, efs[::-1], [4.0 * e for e in ess])
    assert abs(got_ef - base_ef) < 1e-9 and abs(got_es - base_es) < 1e-9
    _report(5, "CLC/CSS reproduce 1.0 / 0.0 / 0.5 hand values within 1e-9 and "
               "are invariant to rescaling and permutation")


# ---------------------------------------------------------------- criterion 6

def test_criterion_6_mask_law_and_mixing():
    rng = np.random.default_rng(0)
    ratios = MaskSchedule().sample_ratios(rng, 100_000)
    fractions = np.ceil(ratios * 256) / 256
    assert abs(fractions.mean() - 2 / math.pi) < 0.01

    for mix in ({"a": 60.0, "b": 30.0, "c": 10.0},
                {"a": 25.0, "b": 60.0, "c": 15.0}):
        stage = CurriculumStage(name=f"mix-{tuple(mix.values())}",
                                style_weights=mix, languages=("en",),
                                steps=10_000)
        seed_value = stage_seed(0, stage.name)
        counts = {s: 0 for s in mix}
        for step in range(10_000):
            counts[draw_style(step_rng(seed_value, step), stage)] += 1
        for style, weight in mix.items():
            assert abs(counts[style] / 10_000 - weight / 100) < 0.02, (mix, style)
    _report(6, "mean masked fraction within 0.01 of 2/pi; 60/30/10 and "
               "25/60/15 style frequencies within 2% over 10k batches")


# ---------------------------------------------------------------- criterion 7

def _pilot_summary() -> dict:
    env_dir = os.environ.get("GLOTGEN_PILOT_DIR")
    candidates = []
    if env_dir:
        candidates.append(Path(env_dir) / "pilot_summary.json")
    candidates.append(REPO / "reports" / "pilot" / "pilot_summary.json")
    for path in candidates:
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
    out = REPO / "reports" / "pilot"
    print(f"[acceptance] no pilot artifacts found; running the full pilot "
          f"into {out} (this takes hours on a small CPU)")
    subprocess.run([sys.executable, str(REPO / "scripts" / "run_pilot.py"),
                    "--out", str(out), "--preset", "full"], check=True)
    return json.loads((out / "pilot_summary.json").read_text(encoding="utf-8"))


def test_criterion_7_desk_scale_pilot():
    summary = _pilot_summary()
    # pilot shape: full curriculum, batch 32, 6 languages, >= 12k records
    assert summary["preset"] == "full"
    assert len(summary["stages"]) == 5
    assert summary["total_steps"] == 11_000
    assert summary["batch_size"] == 32
    assert summary["n_records"] >= 12_000
    assert len(summary["languages"]) == 6

    single = summary["single_object_by_language"]
    assert min(single.values()) >= 0.90, single                      # (a)
    assert summary["parity_gap"] <= 0.10, summary["parity_gap"]      # (b)
    assert summary["clc_final"] > summary["clc_random_init"]         # (c)
    assert summary["merged_overall_mean"] >= \
        summary["final_overall_mean"] - 0.02                         # (d)
    assert summary["wall_seconds"] < 7200, (
        f"pilot took {summary['wall_seconds']}s on "
        f"{summary.get('cpu_count')} CPUs; the 2-hour budget assumes "
        f"laptop-class hardware")
    _report(7, f"pilot: single-object min {min(single.values()):.3f} >= 0.90, "
               f"parity gap {summary['parity_gap']:.3f} <= 0.10, CLC "
               f"{summary['clc_final']:.3f} > random {summary['clc_random_init']:.3f}, "
               f"merged {summary['merged_overall_mean']:.3f} >= final - 0.02, "
               f"wall {summary['wall_seconds']:.0f}s < 7200s")


# ---------------------------------------------------------------- criterion 8

def test_criterion_8_constrained_generation(vocab):
    from glotgen.model import Workspace
    from glotgen.sampling import (GenerationRequest, SamplerConfig,
                                  extrapolate, generate, inpaint)
    from glotgen.vocab import TokenGrid, encode_text, grid_to_ids

    cfg = ModelConfig(vocab_size=vocab.size, max_seq_len=5 + 32 + 256,
                      n_layers=1, n_heads=2, d_model=32, rng_seed=8)
    params = init_parameters(cfg)
    rng = np.random.default_rng(0)
    prompt = np.asarray(encode_text("red square", vocab), dtype=np.int64)
    ws = Workspace()

    for trial in range(100):
        cells = rng.integers(0, 16, size=(16, 16)).astype(np.uint8)
        grid = TokenGrid(side=16, cells=cells)
        sampler = SamplerConfig(steps=3, rng_seed=trial)
        if trial % 2 == 0:
            region = np.zeros((16, 16), dtype=bool)
            r0, c0 = rng.integers(0, 10, size=2)
            region[r0:r0 + 6, c0:c0 + 6] = True
            res = inpaint(params, grid, region.reshape(-1), prompt, sampler,
                          vocab, ws=ws)
            frozen = ~region
            assert np.array_equal(res.grid.cells[frozen], grid.cells[frozen])
        else:
            n_cols = int(rng.integers(1, 8))
            direction = "right" if rng.random() < 0.5 else "left"
            res = extrapolate(params, grid, direction, n_cols, prompt,
                              sampler, vocab, ws=ws)
            if direction == "right":
                assert np.array_equal(res.grid.cells[:, :16 - n_cols],
                                      grid.cells[:, n_cols:])
            else:
                assert np.array_equal(res.grid.cells[:, n_cols:],
                                      grid.cells[:, :16 - n_cols])

    single = generate(params, GenerationRequest(prompt_ids=prompt),
                      SamplerConfig(steps=1, rng_seed=0), vocab, ws=ws)
    assert single.committed_per_step == [256]
    assert (single.grid.cells < 16).all()
    _report(8, "100 inpaint/extrapolate requests preserve frozen cells "
               "byte-exactly; T=1 single-shot decode is MASK-free")


# ---------------------------------------------------------------- criterion 9

def test_criterion_9_determinism_and_persistence(tmp_path, vocab, lexicons):
    from glotgen.checkpoint import load_checkpoint, save_checkpoint
    from glotgen.evaluation import EvalConfig, build_prompt_set, run_eval_suite
    from glotgen.sampling import SamplerConfig
    from glotgen.scene import build_dataset
    from glotgen.training import (AdamWState, CurriculumStage, TrainConfig,
                                  TrainingSet, run_stage)
    from glotgen.scene import load_records

    class _Stage:
        styles = ("label", "noisy", "detailed", "instruct")
        languages = ("en", "zh", "nl", "fr", "hi", "fa")

    shard_a, _ = build_dataset(_Stage(), 120, 5, tmp_path / "da", lexicons)
    shard_b, _ = build_dataset(_Stage(), 120, 5, tmp_path / "db", lexicons)
    assert shard_a[0].read_bytes() == shard_b[0].read_bytes()

    cfg = ModelConfig(vocab_size=vocab.size, max_seq_len=5 + 32 + 256,
                      n_layers=1, n_heads=2, d_model=32, rng_seed=9)
    dataset = TrainingSet.from_records(load_records(shard_a), vocab)
    stage = CurriculumStage(name="det", languages=_Stage.languages, steps=4,
                            style_weights={"label": 100.0})
    tc = TrainConfig(steps=4, warmup_steps=1, batch_size=8, rng_seed=2,
                     save_interval=4)
    for tag in ("ta", "tb"):
        run_stage(stage, tc, init_parameters(cfg), dataset, vocab,
                  tmp_path / tag, quiet=True)
    name = "det-000004.tensors.bin"
    assert (tmp_path / "ta" / name).read_bytes() == \
        (tmp_path / "tb" / name).read_bytes()

    params = init_parameters(cfg)
    save_checkpoint(params, tmp_path / "rt", step=3)
    loaded, _ = load_checkpoint(tmp_path / "rt")
    assert all(np.array_equal(loaded.tensors[k], params.tensors[k])
               for k in params.names())
    save_checkpoint(loaded, tmp_path / "rt2", step=3)
    assert (tmp_path / "rt.tensors.bin").read_bytes() == \
        (tmp_path / "rt2.tensors.bin").read_bytes()

    prompts = build_prompt_set(1, _Stage.languages, lexicons, rng_seed=0)
    eval_cfg = EvalConfig(languages=_Stage.languages, images_per_prompt=1,
                          sampler=SamplerConfig(steps=2, rng_seed=0), rng_seed=0)
    for tag in ("ea", "eb"):
        run_eval_suite(params, prompts, eval_cfg, vocab, lexicons,
                       tmp_path / tag)
    for name in ("summary.json", "per_prompt.jsonl", "compositional.csv"):
        assert (tmp_path / "ea" / name).read_bytes() == \
            (tmp_path / "eb" / name).read_bytes()
    _report(9, "dataset shards, training checkpoints, and evaluation reports "
               "are byte-identical across reruns; checkpoints round-trip "
               "bit-exactly")
