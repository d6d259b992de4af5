#!/usr/bin/env python3
"""Run the desk-scale pilot: dataset, 5-stage curriculum, evaluations, merge.

Presets:
  full   2048 scenes x 6 languages (12288 records), 11,000 training steps
         (2500/2500/2500/2500/1000), then the evaluation suite on the final
         checkpoint, a random-init baseline, and an SMA merge of the last
         five checkpoints.
  mini   a ~10x smaller calibration run with the same structure.

Everything lands under --out; pilot_summary.json holds the numbers the
acceptance suite checks. Rerunning with the same seed reproduces every
artifact byte for byte (for a fixed worker count).
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from glotgen.checkpoint import load_checkpoint, save_checkpoint
from glotgen.evaluation import EvalConfig, build_prompt_set, run_eval_suite, \
    save_prompt_set
from glotgen.merging import MergeSpec, merge_to_file
from glotgen.model import ModelConfig, init_parameters
from glotgen.sampling import SamplerConfig
from glotgen.scene import LANGUAGES, build_dataset, load_builtin_lexicons, \
    load_records
from glotgen.training import CurriculumStage, TrainConfig, TrainingSet, run_stage
from glotgen.vocab import UnifiedVocab

PRESETS = {
    "full": {
        "n_scenes": 2048,
        "stages": [
            ("pretrain1", {"label": 100.0}, 2500, 1e-3, 500),
            ("pretrain2", {"noisy": 100.0}, 2500, 1e-3, 500),
            ("pretrain3", {"noisy": 50.0, "detailed": 50.0}, 2500, 1e-3, 500),
            ("instruct1", {"noisy": 60.0, "detailed": 30.0, "instruct": 10.0},
             2500, 2e-3, 500),
            ("instruct2", {"noisy": 25.0, "detailed": 60.0, "instruct": 15.0},
             1000, 5e-4, 200),
        ],
        "eval_n_per_dimension": 8,
        "eval_images_per_prompt": 4,
    },
    "mini": {
        "n_scenes": 1024,
        "stages": [
            ("pretrain1", {"label": 100.0}, 500, 1e-3, 250),
            ("pretrain2", {"noisy": 100.0}, 300, 1e-3, 150),
            ("pretrain3", {"noisy": 50.0, "detailed": 50.0}, 300, 1e-3, 150),
            ("instruct1", {"noisy": 60.0, "detailed": 30.0, "instruct": 10.0},
             300, 2e-3, 150),
            ("instruct2", {"noisy": 25.0, "detailed": 60.0, "instruct": 15.0},
             200, 5e-4, 40),
        ],
        "eval_n_per_dimension": 4,
        "eval_images_per_prompt": 2,
    },
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--preset", choices=sorted(PRESETS), default="full")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=2)
    parser.add_argument("--guidance", type=float, default=1.75)
    parser.add_argument("--sampler-steps", type=int, default=16)
    parser.add_argument("--temperature", type=float, default=1.0)
    args = parser.parse_args()
    preset = PRESETS[args.preset]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.time()

    lexicons = load_builtin_lexicons()
    vocab = UnifiedVocab.from_lexicons(lexicons.values())

    # ---------------- dataset
    class _AllStyles:
        styles = ("label", "noisy", "detailed", "instruct")
        languages = LANGUAGES

    print(f"[pilot] building dataset ({preset['n_scenes']} scenes x 6 languages)",
          flush=True)
    n_records = preset["n_scenes"] * len(LANGUAGES)
    shard_paths, report = build_dataset(_AllStyles(), n_records, args.seed,
                                        out / "dataset", lexicons)
    vocab.save(out / "dataset" / "vocab.txt")
    dataset = TrainingSet.from_records(load_records(shard_paths), vocab)
    print(f"[pilot] dataset: {report.kept} records kept, "
          f"{sum(report.rejected_by.values())} rejected", flush=True)

    # ---------------- curriculum
    model_cfg = ModelConfig(vocab_size=vocab.size, max_seq_len=5 + 32 + 256,
                            rng_seed=args.seed)
    params = init_parameters(model_cfg)
    random_init = params.copy()
    print(f"[pilot] model: {params.n_params()} parameters", flush=True)

    stage_summaries = []
    all_checkpoints: list[str] = []
    t_train = time.time()
    for name, weights, steps, peak_lr, save_interval in preset["stages"]:
        stage = CurriculumStage(name=name, style_weights=weights,
                                languages=LANGUAGES, steps=steps)
        tc = TrainConfig(steps=steps, warmup_steps=max(1, steps // 100),
                         peak_lr=peak_lr, batch_size=32, cfg_dropout_p=0.1,
                         rng_seed=args.seed, save_interval=save_interval,
                         log_interval=25)
        params, _opt, summary = run_stage(stage, tc, params, dataset, vocab,
                                          out / "checkpoints",
                                          workers=args.workers)
        stage_summaries.append(summary)
        all_checkpoints.extend(summary["checkpoints"])
    train_seconds = time.time() - t_train
    final_prefix = out / "checkpoints" / "final"
    save_checkpoint(params, final_prefix, step=sum(s["steps"]
                                                   for s in stage_summaries))
    print(f"[pilot] training done in {train_seconds:.0f}s", flush=True)

    # ---------------- evaluations
    prompts = build_prompt_set(preset["eval_n_per_dimension"], LANGUAGES,
                               lexicons, rng_seed=args.seed)
    save_prompt_set(prompts, out / "prompts.jsonl")
    eval_cfg = EvalConfig(
        languages=LANGUAGES,
        images_per_prompt=preset["eval_images_per_prompt"],
        sampler=SamplerConfig(steps=args.sampler_steps,
                              guidance_scale=args.guidance,
                              temperature=args.temperature),
        rng_seed=args.seed)

    print("[pilot] evaluating final checkpoint", flush=True)
    eval_final = run_eval_suite(params, prompts, eval_cfg, vocab, lexicons,
                                out / "eval_final")
    print(f"[pilot] final overall: {eval_final['overall_by_language']}",
          flush=True)

    print("[pilot] evaluating random-init baseline", flush=True)
    eval_random = run_eval_suite(random_init, prompts, eval_cfg, vocab,
                                 lexicons, out / "eval_random_init")

    last5 = all_checkpoints[-5:]
    merged_prefix = str(out / "checkpoints" / "sma-last5")
    merge_to_file(MergeSpec(checkpoints=tuple(last5), strategy="sma"),
                  merged_prefix)
    merged_params, _ = load_checkpoint(merged_prefix)
    print("[pilot] evaluating SMA merge of the last 5 checkpoints", flush=True)
    eval_merged = run_eval_suite(merged_params, prompts, eval_cfg, vocab,
                                 lexicons, out / "eval_merged")

    # ---------------- summary
    wall = time.time() - t_start
    overall = eval_final["overall_by_language"]
    single = {lang: eval_final["compositional"][lang]["single_object"]
              for lang in LANGUAGES}
    merged_overall = float(np.mean(list(
        eval_merged["overall_by_language"].values())))
    final_overall = float(np.mean(list(overall.values())))
    summary = {
        "preset": args.preset,
        "seed": args.seed,
        "workers": args.workers,
        "cpu_count": os.cpu_count(),
        "wall_seconds": round(wall, 1),
        "train_seconds": round(train_seconds, 1),
        "total_steps": sum(s["steps"] for s in stage_summaries),
        "batch_size": 32,
        "n_params": params.n_params(),
        "n_records": report.kept,
        "languages": list(LANGUAGES),
        "stages": stage_summaries,
        "dataset_filter_report": {"total": report.total, "kept": report.kept,
                                  "rejected_by": report.rejected_by},
        "final_checkpoint": str(final_prefix),
        "merged_checkpoints": last5,
        "single_object_by_language": single,
        "overall_by_language": overall,
        "parity_gap": max(overall.values()) - min(overall.values()),
        "clc_final": eval_final["clc"]["overall"],
        "clc_random_init": eval_random["clc"]["overall"],
        "css_final": {"ef": eval_final["css"]["css_ef"],
                      "es": eval_final["css"]["css_es"]},
        "final_overall_mean": final_overall,
        "merged_overall_mean": merged_overall,
        "guidance_scale": args.guidance,
        "sampler_steps": args.sampler_steps,
        "temperature": args.temperature,
    }
    with open(out / "pilot_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"[pilot] complete in {wall:.0f}s; summary -> "
          f"{out / 'pilot_summary.json'}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
