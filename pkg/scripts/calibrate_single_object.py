#!/usr/bin/env python3
"""Calibration probe: how does single-object accuracy grow with training?

Continues from a checkpoint, training in chunks and scoring the
single-object dimension after each chunk under a few sampler settings.
Writes a JSON curve used to pin pilot thresholds.
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from glotgen.checkpoint import load_checkpoint, save_checkpoint
from glotgen.evaluation import detect_objects, score_constraint, \
    sample_constraint, prompt_text
from glotgen.model import Workspace
from glotgen.sampling import GenerationRequest, SamplerConfig, generate_batch
from glotgen.scene import LANGUAGES, load_builtin_lexicons, load_records
from glotgen.training import CurriculumStage, TrainConfig, TrainingSet, run_stage
from glotgen.vocab import UnifiedVocab, encode_text


def single_object_accuracy(params, vocab, lexicons, languages, n_prompts,
                           sampler, k=2, zone=False):
    rng = np.random.default_rng(5)
    jobs, constraints = [], []
    for i in range(n_prompts):
        c = sample_constraint("single_object", rng)
        constraints.append(c)
        for lang in languages:
            text = prompt_text(c, lexicons[lang])
            if zone:
                # detailed-form variant pinning a zone
                zone_name = ["top_left", "top_right", "bottom_left",
                             "bottom_right"][i % 4]
                lex = lexicons[lang]
                joiner = "" if lang == "zh" else " "
                text = joiner.join([lex.surface("word.a"),
                                    lex.surface(f"color.{ {1:'red',2:'green',3:'blue',4:'yellow',5:'orange',6:'purple',7:'pink'}[c.objects[0][1]] }"),
                                    lex.surface(f"shape.{c.objects[0][0]}"),
                                    lex.surface("word.at"),
                                    lex.surface(f"zone.{zone_name}")])
            for kk in range(k):
                jobs.append((i, lang, kk, text))
    ws = Workspace()
    results = {}
    for start in range(0, len(jobs), 32):
        chunk = jobs[start:start + 32]
        reqs = [GenerationRequest(prompt_ids=np.asarray(
            encode_text(t, vocab, lang), dtype=np.int64))
            for (_i, lang, _k, t) in chunk]
        seeds = [hash((i, lang, kk)) & 0x7FFFFFFF for (i, lang, kk, _t) in chunk]
        outs = generate_batch(params, reqs, sampler, vocab, ws=ws, seeds=seeds)
        for (i, lang, kk, _t), res in zip(chunk, outs):
            results[(i, lang, kk)] = res.grid
    per_lang = {lang: [] for lang in languages}
    for (i, lang, kk), grid in results.items():
        ok = score_constraint(constraints[i], detect_objects(grid))
        per_lang[lang].append(ok)
    return {lang: float(np.mean(v)) for lang, v in per_lang.items()}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--dataset-dir", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--chunks", type=int, default=4)
    parser.add_argument("--chunk-steps", type=int, default=800)
    parser.add_argument("--style", default="label")
    parser.add_argument("--workers", type=int, default=2)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    lexicons = load_builtin_lexicons()
    vocab = UnifiedVocab.from_lexicons(lexicons.values())
    params, step0 = load_checkpoint(args.checkpoint)
    shards = sorted(Path(args.dataset_dir).glob("dataset-*.jsonl"))
    dataset = TrainingSet.from_records(load_records(shards), vocab)
    langs = ("en", "zh", "fr")

    curve = []
    weights = {"label": 70.0, "detailed": 20.0, "instruct": 10.0} \
        if args.style == "mixed" else {args.style: 100.0}
    for chunk in range(args.chunks):
        stage = CurriculumStage(name=f"cal{chunk}", style_weights=weights,
                                languages=LANGUAGES, steps=args.chunk_steps)
        tc = TrainConfig(steps=args.chunk_steps, warmup_steps=10, peak_lr=1e-3,
                         batch_size=32, cfg_dropout_p=0.1, rng_seed=chunk,
                         save_interval=args.chunk_steps, log_interval=100)
        t0 = time.time()
        params, _opt, summary = run_stage(stage, tc, params, dataset, vocab,
                                          out / "ck", quiet=True,
                                          workers=args.workers)
        row = {"steps_total": step0 + (chunk + 1) * args.chunk_steps,
               "train_loss": summary["final_loss"],
               "train_seconds": round(time.time() - t0, 1)}
        for label, sampler in (
                ("g1.75_t16_tp0.7", SamplerConfig(steps=16, guidance_scale=1.75, temperature=0.7)),
                ("g3_t16_tp0.7", SamplerConfig(steps=16, guidance_scale=3.0, temperature=0.7)),
                ("g1.75_t16_tp1", SamplerConfig(steps=16, guidance_scale=1.75))):
            row[label] = single_object_accuracy(params, vocab, lexicons, langs,
                                                6, sampler)
        row["zone_g1.75"] = single_object_accuracy(
            params, vocab, lexicons, langs, 6,
            SamplerConfig(steps=16, guidance_scale=1.75), zone=True)
        curve.append(row)
        print(json.dumps(row), flush=True)
        save_checkpoint(params, out / f"cal-{row['steps_total']}",
                        step=row["steps_total"])
    (out / "curve.json").write_text(json.dumps(curve, indent=2))


if __name__ == "__main__":
    main()
