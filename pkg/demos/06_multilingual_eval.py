#!/usr/bin/env python3
"""The multilingual evaluation suite on the small demo model.

Runs oracle compositional scoring across the six dimensions in all six
languages, then the cross-lingual consistency (CLC) and code-switching
(CSS) metrics. A small model trained for a few hundred steps will score
modestly; the point here is the machinery and the report formats.
"""

import json
from pathlib import Path

from glotgen.checkpoint import load_checkpoint
from glotgen.evaluation import (DIMENSIONS, EvalConfig, build_prompt_set,
                                make_code_switch_prompts, run_eval_suite)
from glotgen.sampling import SamplerConfig
from glotgen.scene import LANGUAGES, load_builtin_lexicons
from glotgen.vocab import UnifiedVocab

HERE = Path(__file__).parent
CKPT = HERE / "out" / "train_small" / "checkpoints" / "demo-final"
OUT = HERE / "out" / "eval"


def main():
    if not Path(str(CKPT) + ".manifest.json").exists():
        raise SystemExit("run demos/03_train_small.py first (checkpoint missing)")
    lexicons = load_builtin_lexicons()
    vocab = UnifiedVocab.from_lexicons(lexicons.values())
    params, _ = load_checkpoint(CKPT)

    prompts = build_prompt_set(2, LANGUAGES, lexicons, rng_seed=0)
    print(f"prompt set: {len(prompts)} prompts "
          f"({len(prompts) // len(DIMENSIONS)} per dimension)")
    example = prompts[0]
    for lang in LANGUAGES:
        print(f"  {lang}: {example.texts[lang]}")

    print("\ncode-switch variants of the English prompt:")
    for v in make_code_switch_prompts(example.texts["en"], ("en", "fa"),
                                      lexicons):
        print(f"  {v.variant} ({v.target_language}): {v.mixed_text}")

    cfg = EvalConfig(languages=LANGUAGES, images_per_prompt=2,
                     sampler=SamplerConfig(steps=12, guidance_scale=1.75),
                     rng_seed=0)
    print("\nrunning the suite (a minute or two on CPU)...")
    summary = run_eval_suite(params, prompts, cfg, vocab, lexicons, OUT)

    print("\nper-language compositional scores:")
    header = ["lang"] + [d[:9] for d in DIMENSIONS] + ["overall"]
    print("  " + "  ".join(f"{h:>9s}" for h in header))
    for lang in LANGUAGES:
        comp = summary["compositional"][lang]
        row = [f"{comp[d]:9.3f}" for d in DIMENSIONS] + [f"{comp['overall']:9.3f}"]
        print(f"  {lang:>9s}  " + "  ".join(row))

    print(f"\nCLC (histogram-moment): {summary['clc']['overall']:.4f} over "
          f"P={summary['clc']['P']} prompts, L={summary['clc']['L']}, "
          f"K={summary['clc']['K']}")
    print(f"CSS: EF={summary['css']['css_ef']:.4f} "
          f"ES={summary['css']['css_es']:.4f}")
    print(f"\nreports under {OUT}:")
    for name in ("summary.json", "per_prompt.jsonl", "compositional.csv"):
        print(f"  {name}")
    dist = summary["clc"]["distribution"]
    print(f"CLC distribution: min={dist['min']:.3f} q1={dist['q1']:.3f} "
          f"median={dist['median']:.3f} q3={dist['q3']:.3f} max={dist['max']:.3f}")


if __name__ == "__main__":
    main()
