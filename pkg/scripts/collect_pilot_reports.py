#!/usr/bin/env python3
"""Copy the small pilot artifacts into reports/pilot for the repo record.

Checkpoint blobs, dataset shards, and generated-image stores stay out;
what lands here is everything needed to audit the run: the summary, the
prompt set, filter accounting, per-stage loss curves, and the evaluation
summaries.
"""

import argparse
import shutil
from pathlib import Path


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--pilot-dir", required=True)
    parser.add_argument("--dest", default="reports/pilot")
    args = parser.parse_args()
    src = Path(args.pilot_dir)
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)

    copied = []
    for name in ("pilot_summary.json", "prompts.jsonl"):
        if (src / name).exists():
            shutil.copy2(src / name, dest / name)
            copied.append(name)
    if (src / "dataset" / "filter_report.json").exists():
        shutil.copy2(src / "dataset" / "filter_report.json",
                     dest / "filter_report.json")
        copied.append("filter_report.json")

    stage_dir = dest / "stage_reports"
    stage_dir.mkdir(exist_ok=True)
    for path in sorted((src / "checkpoints").glob("*-report.csv")) + \
            sorted((src / "checkpoints").glob("*-summary.json")):
        shutil.copy2(path, stage_dir / path.name)
        copied.append(f"stage_reports/{path.name}")

    for eval_name in ("eval_final", "eval_random_init", "eval_merged"):
        eval_src = src / eval_name
        if not eval_src.exists():
            continue
        eval_dest = dest / f"{eval_name}_reports"
        eval_dest.mkdir(exist_ok=True)
        for fname in ("summary.json", "compositional.csv", "per_prompt.jsonl"):
            if (eval_src / fname).exists():
                shutil.copy2(eval_src / fname, eval_dest / fname)
                copied.append(f"{eval_name}_reports/{fname}")

    print(f"copied {len(copied)} artifacts into {dest}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
