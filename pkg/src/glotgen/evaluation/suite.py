"""The full multilingual evaluation run: generation, compositional scoring,
CLC, CSS, and report files.

Every (prompt, language, sample) generation has a seed derived from the
suite seed and those coordinates, so reports are byte-reproducible. Reports
land as JSONL per-prompt records plus CSV aggregates; distribution
summaries (box-plot statistics) are recomputable from the per-prompt rows.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..model import Parameters, Workspace
from ..sampling import GenerationRequest, SamplerConfig, generate_batch
from ..scene.lexicon import Lexicon
from ..vocab import TokenGrid, UnifiedVocab, encode_text
from .compositional import (DIMENSIONS, CompositionalScore, PromptConstraint,
                            prompt_text, sample_constraint, score_constraint)
from .consistency import (CLCReport, CSSReport, clc_score, css_scores,
                          make_code_switch_prompts)
from .detector import detect_objects
from .embeddings import get_backend


class EvalError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvalPrompt:
    prompt_id: str
    dimension: str
    constraint: PromptConstraint
    texts: dict[str, str]          # language -> prompt text

    def to_dict(self) -> dict:
        return {"prompt_id": self.prompt_id, "dimension": self.dimension,
                "constraint": self.constraint.to_dict(), "texts": self.texts}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalPrompt":
        return cls(prompt_id=d["prompt_id"], dimension=d["dimension"],
                   constraint=PromptConstraint.from_dict(d["constraint"]),
                   texts=dict(d["texts"]))


def build_prompt_set(n_per_dimension: int, languages, lexicons: dict[str, Lexicon],
                     rng_seed: int = 0) -> list[EvalPrompt]:
    """Sampled constraints rendered into every language."""
    prompts: list[EvalPrompt] = []
    for dim_index, dimension in enumerate(DIMENSIONS):
        rng = np.random.default_rng(
            np.random.SeedSequence([0xE7A1, rng_seed, dim_index]))
        for i in range(n_per_dimension):
            constraint = sample_constraint(dimension, rng)
            texts = {lang: prompt_text(constraint, lexicons[lang])
                     for lang in languages}
            prompts.append(EvalPrompt(
                prompt_id=f"{dimension}-{i:03d}", dimension=dimension,
                constraint=constraint, texts=texts))
    return prompts


def save_prompt_set(prompts: list[EvalPrompt], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in prompts:
            fh.write(json.dumps(p.to_dict(), ensure_ascii=False,
                                separators=(",", ":")) + "\n")


def load_prompt_set(path) -> list[EvalPrompt]:
    prompts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                prompts.append(EvalPrompt.from_dict(json.loads(line)))
    return prompts


@dataclass(frozen=True)
class EvalConfig:
    languages: tuple[str, ...]
    images_per_prompt: int = 4             # K generations per (prompt, language)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    backend: str = "histogram-moment"
    external_embeddings: str | None = None
    rng_seed: int = 0
    batch_size: int = 32


def _gen_seed(base: int, prompt_id: str, language: str, k: int) -> int:
    digest = hashlib.sha256(f"{base}:{prompt_id}:{language}:{k}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _generate_all_batched(params: Parameters, jobs, config: EvalConfig,
                          vocab: UnifiedVocab) -> dict[tuple, TokenGrid]:
    """Generate grids for (prompt_id, language, k, text) jobs, batched.

    Each job carries its own coordinate-derived seed, so how jobs are
    grouped into batches never changes any job's randomness.
    """
    out: dict[tuple, TokenGrid] = {}
    ws = Workspace()
    for start in range(0, len(jobs), config.batch_size):
        chunk = jobs[start:start + config.batch_size]
        requests, seeds = [], []
        for (pid, lang, k, text) in chunk:
            ids = encode_text(text, vocab, lang)
            requests.append(GenerationRequest(
                prompt_ids=np.asarray(ids, dtype=np.int64), grid_side=16))
            seeds.append(_gen_seed(config.rng_seed, pid, lang, k))
        results = generate_batch(params, requests, config.sampler, vocab,
                                 ws=ws, seeds=seeds)
        for job, res in zip(chunk, results):
            out[(job[0], job[1], job[2])] = res.grid
    return out


def run_eval_suite(params: Parameters, prompts: list[EvalPrompt],
                   config: EvalConfig, vocab: UnifiedVocab,
                   lexicons: dict[str, Lexicon], out_dir) -> dict:
    """Generate, score, and persist the full report bundle.

    Returns the summary dict (also written to summary.json). Requires every
    configured language to be present on every prompt.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    languages = tuple(config.languages)
    if "en" not in languages:
        raise EvalError("the language set must include en (the CLC reference)")
    for p in prompts:
        missing = [l for l in languages if l not in p.texts]
        if missing:
            raise EvalError(f"prompt {p.prompt_id} lacks languages {missing}")

    backend = get_backend(config.backend, config.external_embeddings)
    k_images = config.images_per_prompt

    # ---- compositional + CLC images: K per (prompt, language)
    jobs = [(p.prompt_id, lang, k, p.texts[lang])
            for p in prompts for lang in languages for k in range(k_images)]
    grids = _generate_all_batched(params, jobs, config, vocab)

    # compositional rates per language x dimension
    per_lang_dim_pass: dict[str, dict[str, list[bool]]] = {
        lang: {d: [] for d in DIMENSIONS} for lang in languages}
    per_prompt_rows = []
    for p in prompts:
        for lang in languages:
            flags = []
            for k in range(k_images):
                detections = detect_objects(grids[(p.prompt_id, lang, k)])
                flags.append(score_constraint(p.constraint, detections))
            per_lang_dim_pass[lang][p.dimension].extend(flags)
            per_prompt_rows.append({
                "prompt_id": p.prompt_id, "language": lang,
                "dimension": p.dimension,
                "pass_rate": float(np.mean(flags)),
                "passes": [bool(f) for f in flags]})

    composition = {}
    for lang in languages:
        rates = {d: float(np.mean(per_lang_dim_pass[lang][d]))
                 for d in DIMENSIONS}
        composition[lang] = CompositionalScore(rates=rates).to_dict()

    # ---- CLC
    clc = CLCReport(backend=backend.name, n_languages=len(languages),
                    images_per_language=k_images)
    for p in prompts:
        refs = [backend.embed(grids[(p.prompt_id, "en", k)],
                              image_id=f"{p.prompt_id}:en:{k}")
                for k in range(k_images)]
        targets = [backend.embed(grids[(p.prompt_id, lang, k)],
                                 image_id=f"{p.prompt_id}:{lang}:{k}")
                   for lang in languages if lang != "en"
                   for k in range(k_images)]
        clc.per_prompt[p.prompt_id] = clc_score(refs, targets)

    # ---- CSS (reference = English k=0 image; one image per EF/ES variant)
    css = CSSReport(backend=backend.name)
    css_jobs = []
    variants_by_prompt: dict[str, list] = {}
    for p in prompts:
        variants = make_code_switch_prompts(p.texts["en"], languages, lexicons)
        variants_by_prompt[p.prompt_id] = variants
        for v in variants:
            css_jobs.append((p.prompt_id, f"{v.variant}:{v.target_language}", 0,
                             v.mixed_text))
    css_grids = _generate_all_batched(params, css_jobs, config, vocab)
    for p in prompts:
        ref_emb = backend.embed(grids[(p.prompt_id, "en", 0)],
                                image_id=f"{p.prompt_id}:en:0")
        ef_embs, es_embs = [], []
        for v in variants_by_prompt[p.prompt_id]:
            emb = backend.embed(css_grids[(p.prompt_id,
                                           f"{v.variant}:{v.target_language}", 0)],
                                image_id=f"{p.prompt_id}:{v.variant}:"
                                         f"{v.target_language}")
            (ef_embs if v.variant == "EF" else es_embs).append(emb)
        ef, es = css_scores(ref_emb, ef_embs, es_embs)
        css.per_prompt_ef[p.prompt_id] = ef
        css.per_prompt_es[p.prompt_id] = es

    # ---- reports
    with open(out_dir / "per_prompt.jsonl", "w", encoding="utf-8") as fh:
        for row in sorted(per_prompt_rows,
                          key=lambda r: (r["prompt_id"], r["language"])):
            fh.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")) + "\n")
    with open(out_dir / "compositional.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["language"] + list(DIMENSIONS) + ["overall"])
        for lang in languages:
            row = composition[lang]
            writer.writerow([lang] + [f"{row[d]:.6f}" for d in DIMENSIONS]
                            + [f"{row['overall']:.6f}"])
    summary = {
        "languages": list(languages),
        "images_per_prompt": k_images,
        "n_prompts": len(prompts),
        "backend": backend.name,
        "sampler": {"steps": config.sampler.steps,
                    "guidance_scale": config.sampler.guidance_scale,
                    "temperature": config.sampler.temperature},
        "rng_seed": config.rng_seed,
        "compositional": composition,
        "overall_by_language": {lang: composition[lang]["overall"]
                                for lang in languages},
        "clc": clc.to_dict(),
        "css": css.to_dict(),
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    return summary
