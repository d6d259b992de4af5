#!/usr/bin/env python3
"""Re-run the pilot evaluations from saved checkpoints.

Reuses the dataset, checkpoints, and prompt set of an existing pilot run,
re-evaluates under (possibly different) sampler settings, and rewrites
pilot_summary.json with the training fields carried over. Useful for
sampler calibration without re-training.
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from glotgen.checkpoint import load_checkpoint
from glotgen.evaluation import EvalConfig, load_prompt_set, run_eval_suite
from glotgen.merging import MergeSpec, merge_to_file
from glotgen.model import ModelConfig, init_parameters
from glotgen.sampling import SamplerConfig
from glotgen.scene import LANGUAGES, load_builtin_lexicons
from glotgen.vocab import UnifiedVocab


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--pilot-dir", required=True)
    parser.add_argument("--guidance", type=float, default=3.0)
    parser.add_argument("--temperature", type=float, default=0.7)
    parser.add_argument("--sampler-steps", type=int, default=16)
    parser.add_argument("--images-per-prompt", type=int, default=None)
    args = parser.parse_args()
    out = Path(args.pilot_dir)
    summary = json.loads((out / "pilot_summary.json").read_text())

    lexicons = load_builtin_lexicons()
    vocab = UnifiedVocab.from_lexicons(lexicons.values())
    prompts = load_prompt_set(out / "prompts.jsonl")
    k = args.images_per_prompt or summary.get("images_per_prompt") or 4
    eval_cfg = EvalConfig(
        languages=LANGUAGES, images_per_prompt=k,
        sampler=SamplerConfig(steps=args.sampler_steps,
                              guidance_scale=args.guidance,
                              temperature=args.temperature),
        rng_seed=summary["seed"])

    t0 = time.time()
    params, _ = load_checkpoint(out / "checkpoints" / "final")
    eval_final = run_eval_suite(params, prompts, eval_cfg, vocab, lexicons,
                                out / "eval_final")
    print("final:", eval_final["overall_by_language"], flush=True)

    random_init = init_parameters(ModelConfig(
        vocab_size=vocab.size, max_seq_len=5 + 32 + 256, rng_seed=summary["seed"]))
    eval_random = run_eval_suite(random_init, prompts, eval_cfg, vocab,
                                 lexicons, out / "eval_random_init")

    merged_prefix = out / "checkpoints" / "sma-last5"
    if not Path(str(merged_prefix) + ".manifest.json").exists():
        merge_to_file(MergeSpec(checkpoints=tuple(summary["merged_checkpoints"]),
                                strategy="sma"), merged_prefix)
    merged_params, _ = load_checkpoint(merged_prefix)
    eval_merged = run_eval_suite(merged_params, prompts, eval_cfg, vocab,
                                 lexicons, out / "eval_merged")

    overall = eval_final["overall_by_language"]
    summary.update({
        "single_object_by_language": {
            lang: eval_final["compositional"][lang]["single_object"]
            for lang in LANGUAGES},
        "overall_by_language": overall,
        "parity_gap": max(overall.values()) - min(overall.values()),
        "clc_final": eval_final["clc"]["overall"],
        "clc_random_init": eval_random["clc"]["overall"],
        "css_final": {"ef": eval_final["css"]["css_ef"],
                      "es": eval_final["css"]["css_es"]},
        "final_overall_mean": float(np.mean(list(overall.values()))),
        "merged_overall_mean": float(np.mean(list(
            eval_merged["overall_by_language"].values()))),
        "guidance_scale": args.guidance,
        "temperature": args.temperature,
        "sampler_steps": args.sampler_steps,
        "images_per_prompt": k,
        "eval_refresh_seconds": round(time.time() - t0, 1),
    })
    with open(out / "pilot_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"summary refreshed in {time.time() - t0:.0f}s")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
