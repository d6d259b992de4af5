"""Dataset shards: JSONL records of (scene, language, style, caption, grid).

Every sampled scene yields one record per language with an identical
concept sequence (the parallel-corpus property), and one style chosen by
cycling through the stage's styles. Candidates that fail a filter are
dropped and attributed in the FilterReport; the builder oversamples until
the kept quota is reached, so shards always contain exactly `n_samples`
records balanced across languages to within one record.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .captions import caption_scene
from .filters import FilterReport, run_filters
from .geometry import render_scene, sample_scene
from .lexicon import Lexicon

SHARD_NAME = "dataset-{index:05d}.jsonl"
REPORT_NAME = "filter_report.json"


class DatasetError(RuntimeError):
    """I/O or configuration failures during shard construction."""


def _record_line(scene_id: str, language: str, style: str, caption: str,
                 grid_flat: list[int]) -> str:
    rec = {"scene_id": scene_id, "language": language, "style": style,
           "caption": caption, "grid": grid_flat}
    return json.dumps(rec, ensure_ascii=False, separators=(",", ":"))


def build_dataset(stage, n_samples: int, rng_seed: int, out_dir,
                  lexicons: dict[str, Lexicon], n_shards: int = 1):
    """Build filtered, balanced shards for a curriculum stage.

    `stage` needs `.styles` and `.languages`. Returns (shard paths,
    FilterReport). Deterministic: same arguments -> byte-identical shards.
    """
    styles = tuple(stage.styles)
    languages = tuple(stage.languages)
    if not styles:
        raise DatasetError("stage defines no caption styles")
    missing = [l for l in languages if l not in lexicons]
    if missing:
        raise DatasetError(f"no lexicon for languages: {missing}")

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create dataset directory {out_dir}: {exc}") from exc

    report = FilterReport()
    lines: list[str] = []
    per_language = {l: 0 for l in languages}
    scene_index = 0
    kept_scenes = 0
    while len(lines) < n_samples:
        scene = sample_scene(rng_seed * 1_000_003 + scene_index)
        style = styles[kept_scenes % len(styles)]
        scene_index += 1

        grid_flat = render_scene(scene).flat()
        batch: list[tuple[str, str]] = []
        verdicts: list[str | None] = []
        for lang in languages:
            record = caption_scene(scene, lang, lexicons[lang], style)
            verdicts.append(run_filters(scene, record, lexicons[lang],
                                        skip_length=(style == "label")))
            batch.append((lang, record.text))
        group_verdict = next((v for v in verdicts if v is not None), None)
        if group_verdict is not None:
            # parallel captions share concepts, so the whole scene is dropped;
            # attribute every language record to the failing filter
            for v in verdicts:
                report.record(v or group_verdict)
            continue
        for _ in verdicts:
            report.record(None)
        kept_scenes += 1
        room = n_samples - len(lines)
        for lang, text in batch[:room]:
            lines.append(_record_line(scene.scene_id(), lang, style, text, grid_flat))
            per_language[lang] += 1
        # surplus records from the final scene are never written; keep the
        # report equal to what landed in the shards
        report.kept -= max(0, len(batch) - room)
        report.total -= max(0, len(batch) - room)

    counts = sorted(per_language.values())
    if counts[-1] - counts[0] > 1:
        raise DatasetError(f"language balance violated: {per_language}")

    paths: list[Path] = []
    for shard in range(n_shards):
        path = out_dir / SHARD_NAME.format(index=shard)
        chunk = lines[shard::n_shards]
        try:
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write("\n".join(chunk) + ("\n" if chunk else ""))
            os.replace(tmp, path)
        except OSError as exc:
            raise DatasetError(f"cannot write shard {path}: {exc}") from exc
        paths.append(path)

    report.check()
    report_path = out_dir / REPORT_NAME
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump({"total": report.total, "kept": report.kept,
                   "rejected_by": report.rejected_by}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths, report


def load_records(paths) -> list[dict]:
    """Read shard records back, in shard order."""
    records: list[dict] = []
    for path in paths:
        try:
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        records.append(json.loads(line))
        except OSError as exc:
            raise DatasetError(f"cannot read shard {path}: {exc}") from exc
    return records
