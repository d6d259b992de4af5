#!/usr/bin/env python3
"""Checkpoint merging: SMA, EMA, and WMA over a training trajectory.

Uses the checkpoints written by 03_train_small.py, merges them three ways,
and verifies the algebraic identities that make merging trustworthy.
"""

from pathlib import Path

import numpy as np

from glotgen.checkpoint import load_checkpoint, read_manifest
from glotgen.merging import (MergeSpec, default_wma_weights, merge_ema,
                             merge_sma, merge_to_file, merge_wma,
                             normalize_weights)

HERE = Path(__file__).parent
CKPT_DIR = HERE / "out" / "train_small" / "checkpoints"
OUT = HERE / "out" / "merged"


def main():
    manifests = sorted(CKPT_DIR.glob("demo-mixed-*.manifest.json"))
    if len(manifests) < 3:
        raise SystemExit("run demos/03_train_small.py first (need checkpoints)")
    prefixes = [str(m)[:-len(".manifest.json")] for m in manifests[-3:]]
    print("merging trajectory checkpoints:")
    for p in prefixes:
        print(f"  {Path(p).name} (step {read_manifest(p)['step']})")

    ckpts = [load_checkpoint(p)[0] for p in prefixes]
    sma = merge_sma(ckpts)
    ema = merge_ema(ckpts, alpha=0.5)
    wma = merge_wma(ckpts, default_wma_weights(3))

    print("\nweights implied by each strategy over [M1, M2, M3]:")
    print("  sma:", [round(x, 4) for x in normalize_weights([1, 1, 1])])
    print("  ema(0.5) unrolled:", [0.25, 0.25, 0.5])
    print("  wma(w_i=i):", [round(x, 4) for x in normalize_weights([1, 2, 3])])

    name = "layer0.wq"
    stack = np.stack([c.tensors[name] for c in ckpts])
    for label, merged in (("sma", sma), ("ema", ema), ("wma", wma)):
        t = merged.tensors[name]
        inside = (t >= stack.min(0) - 1e-6).all() and (t <= stack.max(0) + 1e-6).all()
        drift = float(np.abs(t - ckpts[-1].tensors[name]).mean())
        print(f"  {label}: convex-envelope check {inside}, "
              f"mean |delta| vs last checkpoint {drift:.2e}")

    OUT.mkdir(parents=True, exist_ok=True)
    out_prefix = OUT / "demo-sma"
    merge_to_file(MergeSpec(checkpoints=tuple(prefixes), strategy="sma"),
                  out_prefix)
    manifest = read_manifest(out_prefix)
    print(f"\nwrote merged checkpoint {out_prefix}.manifest.json")
    print(f"provenance recorded: strategy={manifest['merge_spec']['strategy']}, "
          f"{len(manifest['merge_spec']['checkpoints'])} inputs")


if __name__ == "__main__":
    main()
