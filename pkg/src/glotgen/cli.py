"""Command-line entry point tying the pipeline together.

Subcommands: dataset, train, generate, inpaint, extrapolate, merge, eval.
Every run writes a resolved-config snapshot next to its outputs, errors
print as a single machine-parseable line, and exit codes follow the
contract 0 = success, 1 = runtime failure, 2 = usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .checkpoint import load_checkpoint
from .imaging import read_ppm_to_grid, write_ppm
from .merging import MergeSpec, merge_to_file
from .model import ModelConfig, Workspace, init_parameters
from .sampling import (GenerationRequest, SamplerConfig, extrapolate,
                       generate_batch, inpaint)
from .scene import LANGUAGES, build_dataset, load_builtin_lexicons, load_records
from .training import CurriculumStage, TrainConfig, TrainingSet, run_stage
from .vocab import TokenGrid, UnifiedVocab, encode_text

DEFAULT_STYLES = ("label", "noisy", "detailed", "instruct")


class CliError(RuntimeError):
    pass


def build_vocab() -> tuple[UnifiedVocab, dict]:
    lexicons = load_builtin_lexicons()
    return UnifiedVocab.from_lexicons(lexicons.values()), lexicons


def _snapshot(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfgmod.write_snapshot(cfg, out_dir / "resolved-config.toml")


def _load_cfg(args) -> dict:
    cfg = cfgmod.load_config(args.config) if args.config else {}
    cfg = cfgmod.apply_overrides(cfg, args.override or [])
    if getattr(args, "seed", None) is not None:
        cfg["run.seed"] = args.seed
    return cfg


class _StagePool:
    """Adapter giving build_dataset a stage-shaped view of the config."""

    def __init__(self, styles, languages):
        self.styles = tuple(styles)
        self.languages = tuple(languages)


# ------------------------------------------------------------------- commands

def cmd_dataset(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    _snapshot(cfg, out_dir)
    vocab, lexicons = build_vocab()
    styles = cfgmod.get(cfg, "dataset.styles", list(DEFAULT_STYLES))
    languages = cfgmod.get(cfg, "dataset.languages", list(LANGUAGES))
    n_samples = int(cfgmod.get(cfg, "dataset.n_samples", 12288))
    seed = int(cfgmod.get(cfg, "run.seed", 0))
    n_shards = int(cfgmod.get(cfg, "dataset.n_shards", 1))
    paths, report = build_dataset(_StagePool(styles, languages), n_samples,
                                  seed, out_dir, lexicons, n_shards=n_shards)
    vocab.save(out_dir / "vocab.txt")
    print(f"wrote {report.kept} records to {len(paths)} shard(s) under {out_dir}")
    print(f"filter report: total={report.total} kept={report.kept} "
          f"rejected={report.rejected_by}")
    return 0


def _stage_from_cfg(cfg: dict, name: str) -> tuple[CurriculumStage, TrainConfig]:
    prefix = f"stage.{name}."
    styles = cfgmod.get(cfg, prefix + "styles", required=True)
    weights = cfgmod.get(cfg, prefix + "weights", required=True)
    if len(styles) != len(weights):
        raise CliError(f"stage {name}: styles and weights differ in length")
    steps = int(cfgmod.get(cfg, prefix + "steps", required=True))
    stage = CurriculumStage(
        name=name,
        style_weights={s: float(w) for s, w in zip(styles, weights)},
        languages=tuple(cfgmod.get(cfg, prefix + "languages",
                                   cfgmod.get(cfg, "train.languages",
                                              list(LANGUAGES)))),
        steps=steps,
        max_text_len=int(cfgmod.get(cfg, "model.max_text_len", 32)),
    )
    train_cfg = TrainConfig(
        steps=steps,
        warmup_steps=int(cfgmod.get(cfg, prefix + "warmup_steps",
                                    max(1, steps // 100))),
        peak_lr=float(cfgmod.get(cfg, prefix + "peak_lr", 1e-4)),
        batch_size=int(cfgmod.get(cfg, "train.batch_size", 32)),
        cfg_dropout_p=float(cfgmod.get(cfg, "train.cfg_dropout_p", 0.1)),
        weight_decay=float(cfgmod.get(cfg, "train.weight_decay", 0.01)),
        rng_seed=int(cfgmod.get(cfg, "run.seed", 0)),
        save_interval=int(cfgmod.get(cfg, prefix + "save_interval",
                                     cfgmod.get(cfg, "train.save_interval", 500))),
        log_interval=int(cfgmod.get(cfg, "train.log_interval", 10)),
    )
    return stage, train_cfg


def model_config_from_cfg(cfg: dict, vocab: UnifiedVocab) -> ModelConfig:
    max_text_len = int(cfgmod.get(cfg, "model.max_text_len", 32))
    grid_side = int(cfgmod.get(cfg, "model.grid_side", 16))
    return ModelConfig(
        vocab_size=vocab.size,
        max_seq_len=5 + max_text_len + grid_side * grid_side,
        n_layers=int(cfgmod.get(cfg, "model.n_layers", 4)),
        n_heads=int(cfgmod.get(cfg, "model.n_heads", 4)),
        d_model=int(cfgmod.get(cfg, "model.d_model", 128)),
        rng_seed=int(cfgmod.get(cfg, "run.seed", 0)),
    )


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    _snapshot(cfg, out_dir)
    vocab, _lexicons = build_vocab()
    shards = sorted(Path(cfgmod.get(cfg, "train.dataset_dir",
                                    required=True)).glob("dataset-*.jsonl"))
    if not shards:
        raise CliError("no dataset shards found; run the dataset command first")
    dataset = TrainingSet.from_records(load_records(shards), vocab)
    model_cfg = model_config_from_cfg(cfg, vocab)
    params = init_parameters(model_cfg)
    stage_names = cfgmod.get(cfg, "train.stages", required=True)
    workers = args.workers
    t0 = time.time()
    summaries = []
    for name in stage_names:
        stage, train_cfg = _stage_from_cfg(cfg, name)
        params, _opt, summary = run_stage(stage, train_cfg, params, dataset,
                                          vocab, out_dir / "checkpoints",
                                          quiet=args.quiet, workers=workers)
        summaries.append(summary)
    wall = time.time() - t0
    run_summary = {
        "stages": summaries,
        "wall_seconds": round(wall, 3),
        "workers": workers,
        "n_params": params.n_params(),
        "n_records": len(dataset.languages),
    }
    with open(out_dir / "train-summary.json", "w", encoding="utf-8") as fh:
        json.dump(run_summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"trained {len(stage_names)} stage(s) in {wall:.1f}s; "
          f"checkpoints under {out_dir / 'checkpoints'}")
    return 0


def _sampler_from(args, cfg: dict) -> SamplerConfig:
    return SamplerConfig(
        steps=int(getattr(args, "steps", None)
                  or cfgmod.get(cfg, "sampler.steps", 16)),
        guidance_scale=float(args.guidance if args.guidance is not None
                             else cfgmod.get(cfg, "sampler.guidance_scale", 1.75)),
        temperature=float(cfgmod.get(cfg, "sampler.temperature", 1.0)),
        rng_seed=int(cfgmod.get(cfg, "run.seed", 0)),
        max_text_len=int(cfgmod.get(cfg, "model.max_text_len", 32)),
    )


def _load_grid(path: str) -> TokenGrid:
    path = Path(path)
    if path.suffix == ".ppm":
        return read_ppm_to_grid(path)
    rec = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    return TokenGrid.from_flat(16, rec["grid"])


def _write_generation(out_dir: Path, name: str, grid: TokenGrid, meta: dict) -> None:
    write_ppm(grid, out_dir / f"{name}.ppm")
    record = dict(meta)
    record["grid"] = grid.flat()
    with open(out_dir / "generations.jsonl", "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    _snapshot(cfg, out_dir)
    vocab, _ = build_vocab()
    params, _step = load_checkpoint(args.checkpoint)
    sampler = _sampler_from(args, cfg)
    prompt_ids = np.asarray(encode_text(args.prompt, vocab, args.language),
                            dtype=np.int64)
    requests = [GenerationRequest(prompt_ids=prompt_ids) for _ in range(args.count)]
    results = generate_batch(params, requests, sampler, vocab, ws=Workspace())
    prompt_tag = hashlib.sha1(args.prompt.encode("utf-8")).hexdigest()[:6]
    for i, res in enumerate(results):
        name = f"gen_{prompt_tag}_{args.language}_s{sampler.rng_seed}_{i:02d}"
        _write_generation(out_dir, name, res.grid, {
            "prompt": args.prompt, "language": args.language,
            "seed": sampler.rng_seed, "index": i,
            "guidance_scale": sampler.guidance_scale, "steps": sampler.steps,
            "warnings": res.warnings})
    print(f"wrote {len(results)} generation(s) under {out_dir}")
    return 0


def _parse_region(spec: str) -> np.ndarray:
    """'r0:r1,c0:c1' (half-open) -> boolean region mask on a 16x16 grid."""
    try:
        rows, cols = spec.split(",")
        r0, r1 = (int(v) for v in rows.split(":"))
        c0, c1 = (int(v) for v in cols.split(":"))
    except ValueError as exc:
        raise CliError(f"bad region {spec!r}, expected r0:r1,c0:c1") from exc
    mask = np.zeros((16, 16), dtype=bool)
    mask[r0:r1, c0:c1] = True
    return mask.reshape(-1)


def cmd_inpaint(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    _snapshot(cfg, out_dir)
    vocab, _ = build_vocab()
    params, _step = load_checkpoint(args.checkpoint)
    sampler = _sampler_from(args, cfg)
    grid = _load_grid(args.grid)
    region = _parse_region(args.region)
    prompt_ids = encode_text(args.prompt, vocab, args.language)
    result = inpaint(params, grid, region, prompt_ids, sampler, vocab)
    _write_generation(out_dir, f"inpaint_{args.language}_s{sampler.rng_seed}",
                      result.grid, {
                          "prompt": args.prompt, "language": args.language,
                          "seed": sampler.rng_seed, "region": args.region,
                          "warnings": result.warnings})
    print(f"inpainted region {args.region}; outputs under {out_dir}")
    return 0


def cmd_extrapolate(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    _snapshot(cfg, out_dir)
    vocab, _ = build_vocab()
    params, _step = load_checkpoint(args.checkpoint)
    sampler = _sampler_from(args, cfg)
    grid = _load_grid(args.grid)
    prompt_ids = encode_text(args.prompt, vocab, args.language)
    result = extrapolate(params, grid, args.direction, args.cols, prompt_ids,
                         sampler, vocab)
    _write_generation(out_dir,
                      f"extrapolate_{args.direction}_{args.language}"
                      f"_s{sampler.rng_seed}",
                      result.grid, {
                          "prompt": args.prompt, "language": args.language,
                          "seed": sampler.rng_seed, "direction": args.direction,
                          "cols": args.cols, "warnings": result.warnings})
    print(f"extrapolated {args.cols} column(s) {args.direction}; "
          f"outputs under {out_dir}")
    return 0


def cmd_merge(args) -> int:
    spec = MergeSpec(
        checkpoints=tuple(args.checkpoints),
        strategy=args.strategy,
        ema_alpha=args.ema_alpha,
        wma_weights=tuple(args.weights) if args.weights else None,
    )
    path = merge_to_file(spec, args.out)
    print(f"merged {len(args.checkpoints)} checkpoint(s) [{args.strategy}] "
          f"-> {path}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import EvalConfig, build_prompt_set, load_prompt_set, \
        run_eval_suite, save_prompt_set

    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    _snapshot(cfg, out_dir)
    vocab, lexicons = build_vocab()
    params, _step = load_checkpoint(args.checkpoint)
    languages = tuple(cfgmod.get(cfg, "eval.languages", list(LANGUAGES)))
    seed = int(cfgmod.get(cfg, "run.seed", 0))
    if args.prompts:
        prompts = load_prompt_set(args.prompts)
    else:
        prompts = build_prompt_set(int(cfgmod.get(cfg, "eval.n_per_dimension", 8)),
                                   languages, lexicons, rng_seed=seed)
        save_prompt_set(prompts, out_dir / "prompts.jsonl")
    eval_cfg = EvalConfig(
        languages=languages,
        images_per_prompt=int(cfgmod.get(cfg, "eval.images_per_prompt", 4)),
        sampler=_sampler_from(args, cfg),
        backend=cfgmod.get(cfg, "eval.backend", "histogram-moment"),
        external_embeddings=cfgmod.get(cfg, "eval.external_embeddings"),
        rng_seed=seed,
    )
    summary = run_eval_suite(params, prompts, eval_cfg, vocab, lexicons, out_dir)
    overall = summary["overall_by_language"]
    print(f"eval complete: per-language overall "
          f"{ {k: round(v, 4) for k, v in overall.items()} }; "
          f"CLC {summary['clc']['overall']:.4f}; reports under {out_dir}")
    return 0


# --------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glotgen",
        description="Multilingual masked-token text-to-image on a 16x16 "
                    "token-grid world")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="TOML-style config file")
        p.add_argument("--override", "-D", action="append", metavar="KEY=VALUE",
                       help="dotted-path config override (repeatable)")
        p.add_argument("--seed", type=int, help="global RNG seed")
        if needs_out:
            p.add_argument("--out", "-o", required=True, help="output directory")

    p = sub.add_parser("dataset", help="build filtered multilingual shards")
    common(p)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="run the staged curriculum")
    common(p)
    p.add_argument("--workers", type=int, default=1,
                   help="parallel gradient workers (default 1, bit-exact)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="text-to-image generation")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--language", default="en")
    p.add_argument("--count", "-n", type=int, default=1)
    p.add_argument("--steps", type=int)
    p.add_argument("--guidance", type=float)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("inpaint", help="regenerate a region under a prompt")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid", required=True, help="JSONL record or PPM image")
    p.add_argument("--region", required=True, help="r0:r1,c0:c1 (half-open)")
    p.add_argument("--prompt", required=True)
    p.add_argument("--language", default="en")
    p.add_argument("--steps", type=int)
    p.add_argument("--guidance", type=float)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("extrapolate", help="extend the canvas sideways")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--direction", choices=("left", "right"), required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--language", default="en")
    p.add_argument("--steps", type=int)
    p.add_argument("--guidance", type=float)
    p.set_defaults(func=cmd_extrapolate)

    p = sub.add_parser("merge", help="combine checkpoints (sma/ema/wma)")
    p.add_argument("checkpoints", nargs="+", help="manifest paths or prefixes, "
                   "oldest first")
    p.add_argument("--strategy", choices=("sma", "ema", "wma"), default="sma")
    p.add_argument("--ema-alpha", type=float, default=0.5)
    p.add_argument("--weights", type=float, nargs="+",
                   help="custom WMA weights (default w_i = i)")
    p.add_argument("--out", "-o", required=True, help="output checkpoint prefix")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("eval", help="run the multilingual evaluation suite")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompts", help="existing prompt-set JSONL")
    p.add_argument("--steps", type=int)
    p.add_argument("--guidance", type=float)
    p.set_defaults(func=cmd_eval)
    return parser


def dispatch(argv=None) -> int:
    """Parse and run; returns the process exit code (0/1/2)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:          # argparse uses 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (Exception,) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
