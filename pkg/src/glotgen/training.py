"""Masked-token training: objective, schedules, optimizer, staged curriculum.

The objective reconstructs image tokens at masked positions given the text
prefix and the partially masked image block; nothing is predicted for text
positions. Mask ratios follow the cosine law r = cos(pi*u/2) so that the
iterative unmasking sampler sees on-distribution inputs (a fixed-ratio mode
exists behind `MaskSchedule.mode` for the literal reading). The text
condition is dropped with probability `cfg_dropout_p` during training to
enable classifier-free guidance at inference.

Everything is deterministic given (seed, config, dataset): per-step RNG
streams are derived from (stage seed, step), so resuming from a checkpoint
replays exactly the batches a straight run would have seen.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .model import (Parameters, Workspace, backward, batch_attention_bias,
                    _forward_batch)
from .vocab import EOI, EOT, MASK, PAD, SOI, SOT, T2I, UnifiedVocab, encode_text

MEAN_MASK_FRACTION = 2.0 / math.pi   # E[cos(pi*u/2)] for u ~ U(0,1)


class TrainingError(RuntimeError):
    """Non-finite losses, empty pools, or inconsistent batch shapes."""


# ------------------------------------------------------------------ schedules

@dataclass(frozen=True)
class MaskSchedule:
    mode: str = "cosine"          # "cosine" (default) or "fixed"
    fixed_ratio: float = 0.5

    def sample_ratios(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.mode == "cosine":
            u = rng.random(n)
            return np.cos(np.pi * u / 2.0)
        if self.mode == "fixed":
            return np.full(n, self.fixed_ratio)
        raise TrainingError(f"unknown mask schedule mode {self.mode!r}")


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    warmup_steps: int = 0
    peak_lr: float = 1e-4
    batch_size: int = 32
    cfg_dropout_p: float = 0.1
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_reduction: str = "mean"   # "mean" (default) or "sum" over the mask set
    mask_schedule: MaskSchedule = field(default_factory=MaskSchedule)
    rng_seed: int = 0
    save_interval: int = 500
    log_interval: int = 10

    def __post_init__(self):
        if not self.warmup_steps < self.steps:
            raise TrainingError("warmup_steps must be below steps")
        if not 0.0 <= self.cfg_dropout_p <= 1.0:
            raise TrainingError("cfg_dropout_p must be in [0, 1]")


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear warmup 0 -> peak, then cosine decay peak -> 0 at `steps`."""
    if step < config.warmup_steps:
        return config.peak_lr * step / config.warmup_steps
    span = config.steps - config.warmup_steps
    progress = (step - config.warmup_steps) / span
    return config.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# ------------------------------------------------------------------- masking

def apply_mask(image_ids: np.ndarray, rng: np.random.Generator,
               schedule: MaskSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Mask ceil(r*M) positions per row, r drawn from the schedule.

    `image_ids` is (M,) or (B, M) of absolute image token ids. Returns
    (masked ids with MASK at the chosen positions, boolean mask set).
    The ceiling guarantees a nonempty mask set for r > 0; a zero draw is
    resampled.
    """
    ids = np.atleast_2d(np.asarray(image_ids))
    b, m = ids.shape
    ratios = schedule.sample_ratios(rng, b)
    for i in range(b):
        while math.ceil(ratios[i] * m) == 0:
            ratios[i] = schedule.sample_ratios(rng, 1)[0]
    counts = np.ceil(ratios * m).astype(np.int64)
    keys = rng.random((b, m))
    order = np.argsort(keys, axis=1, kind="stable")
    mask = np.zeros((b, m), dtype=bool)
    for i in range(b):
        mask[i, order[i, :counts[i]]] = True
    masked = np.where(mask, MASK, ids)
    if image_ids.ndim == 1:
        return masked[0], mask[0]
    return masked, mask


def cfg_dropout(prompt_ids, p: float, rng: np.random.Generator):
    """With probability p, replace the condition with the null (empty) prompt."""
    if not 0.0 <= p <= 1.0:
        raise TrainingError("dropout probability must be in [0, 1]")
    if rng.random() < p:
        return prompt_ids[:0]
    return prompt_ids


# ---------------------------------------------------------------------- loss

def masked_nll_loss(logits: np.ndarray, targets: np.ndarray,
                    mask_set: np.ndarray, layout, vocab: UnifiedVocab,
                    reduction: str = "mean") -> float:
    """Mean negative log-likelihood of targets at masked image positions.

    `logits` are full-vocabulary logits (T, V) or (B, T, V) from forward;
    the softmax is restricted to the image-vocabulary columns, and only
    rows at masked image positions contribute. `targets` are absolute
    image token ids, `mask_set` the boolean mask over image positions.
    """
    batched = logits.ndim == 3
    logits3 = logits if batched else logits[None]
    targets2 = np.atleast_2d(targets)
    mask2 = np.atleast_2d(mask_set)
    if not mask2.any(axis=1).all():
        raise TrainingError("empty mask set")
    im_s, im_e = layout.image_span
    cols = slice(vocab.image_offset, vocab.image_offset + vocab.image_k)
    image_logits = logits3[:, im_s:im_e, cols]
    rel_targets = targets2 - vocab.image_offset
    loss, _ = _loss_and_grad(image_logits, rel_targets, mask2, reduction,
                             want_grad=False)
    return loss


def _loss_and_grad(image_logits: np.ndarray, rel_targets: np.ndarray,
                   mask_set: np.ndarray, reduction: str, want_grad: bool = True):
    """Core objective over (B, M, K) image-slice logits and relative targets."""
    b, m, k = image_logits.shape
    z = image_logits - image_logits.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=-1)
    logp_target = np.take_along_axis(z, rel_targets[..., None], axis=-1)[..., 0] \
        - np.log(denom)
    counts = mask_set.sum(axis=1)
    per_sample = -(logp_target * mask_set).sum(axis=1)
    if reduction == "mean":
        per_sample = per_sample / counts
    elif reduction != "sum":
        raise TrainingError(f"unknown loss reduction {reduction!r}")
    loss = float(per_sample.mean())
    if not want_grad:
        return loss, None
    grad = ez / denom[..., None]
    rows = np.arange(b)[:, None]
    positions = np.arange(m)[None, :]
    grad[rows, positions, rel_targets] -= 1.0
    scale = (mask_set / (counts[:, None] * b)) if reduction == "mean" \
        else (mask_set / b)
    grad *= scale[..., None]
    return loss, grad.astype(image_logits.dtype)


# ------------------------------------------------------------------ optimizer

@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: Parameters) -> "AdamWState":
        return cls(m={k: np.zeros_like(p) for k, p in params.tensors.items()},
                   v={k: np.zeros_like(p) for k, p in params.tensors.items()},
                   t=0)

    def copy(self) -> "AdamWState":
        return AdamWState(m={k: a.copy() for k, a in self.m.items()},
                          v={k: a.copy() for k, a in self.v.items()}, t=self.t)


def adamw_update(params: Parameters, grads: dict[str, np.ndarray],
                 state: AdamWState, lr: float, config: TrainConfig) -> None:
    """One decoupled-weight-decay Adam step, in place.

    Decay applies to matrices and embeddings only, never to norm or gain
    offsets.
    """
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.tensors.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        update = (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)
        if config.weight_decay and p.ndim >= 2:
            update = update + config.weight_decay * p
        p -= lr * update


# ------------------------------------------------------------------- batches

@dataclass
class MaskedBatch:
    """A training batch: prompts, targets, the mask set, and masked inputs."""
    prompt_ids: list[np.ndarray]          # post condition-dropout, per sample
    target_image_ids: np.ndarray          # (B, M) absolute image token ids
    mask_set: np.ndarray                  # (B, M) bool, nonempty per row
    masked_image_ids: np.ndarray          # (B, M): MASK inside the mask set

    def check(self) -> None:
        off = ~self.mask_set
        if not np.array_equal(self.masked_image_ids[off], self.target_image_ids[off]):
            raise TrainingError("masked ids disagree with targets off the mask set")
        if not self.mask_set.any(axis=1).all():
            raise TrainingError("a sample has an empty mask set")


def make_masked_batch(prompt_rows: list[np.ndarray], image_ids: np.ndarray,
                      rng: np.random.Generator, schedule: MaskSchedule,
                      cfg_dropout_p: float) -> MaskedBatch:
    prompts = [cfg_dropout(np.asarray(p, dtype=np.int64), cfg_dropout_p, rng)
               for p in prompt_rows]
    masked, mask_set = apply_mask(np.asarray(image_ids), rng, schedule)
    batch = MaskedBatch(prompt_ids=prompts, target_image_ids=np.asarray(image_ids),
                        mask_set=mask_set, masked_image_ids=masked)
    batch.check()
    return batch


def assemble_batch(batch: MaskedBatch, vocab: UnifiedVocab, max_text_len: int):
    """Sequences (B, T) and attention bias for a masked batch."""
    b, m = batch.target_image_ids.shape
    total = 5 + max_text_len + m
    seq = np.full((b, total), PAD, dtype=np.int64)
    seq[:, 0] = T2I
    seq[:, 1] = SOT
    lens = np.zeros(b, dtype=np.int64)
    for i, prompt in enumerate(batch.prompt_ids):
        n = len(prompt)
        if n > max_text_len:
            raise TrainingError(f"prompt of length {n} exceeds max_text_len")
        seq[i, 2:2 + n] = prompt
        seq[i, 2 + n] = EOT
        lens[i] = n
    soi = 3 + max_text_len
    seq[:, soi] = SOI
    seq[:, soi + 1:soi + 1 + m] = batch.masked_image_ids
    seq[:, soi + 1 + m] = EOI
    bias = batch_attention_bias(lens, max_text_len, m, dtype=np.float32)
    return seq, bias, soi


def train_step(params: Parameters, opt_state: AdamWState, batch: MaskedBatch,
               config: TrainConfig, step: int, vocab: UnifiedVocab,
               max_text_len: int, ws: Workspace | None = None):
    """One forward/backward/AdamW update. Returns (params, opt_state, loss)."""
    seq, bias, soi = assemble_batch(batch, vocab, max_text_len)
    m = batch.target_image_ids.shape[1]
    rows = slice(soi + 1, soi + 1 + m)
    cols = slice(vocab.image_offset, vocab.image_offset + vocab.image_k)
    image_logits, cache = _forward_batch(params, seq, bias, want_cache=True,
                                         logit_rows=rows, logit_cols=cols, ws=ws)
    rel_targets = batch.target_image_ids - vocab.image_offset
    loss, d_logits = _loss_and_grad(image_logits, rel_targets, batch.mask_set,
                                    config.loss_reduction)
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite loss at step {step}")
    grads = backward(params, cache, d_logits, ws=ws)
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in {name!r} at step {step}")
    adamw_update(params, grads, opt_state, lr_at(step, config), config)
    return params, opt_state, loss


# ----------------------------------------------------------------- curriculum

@dataclass(frozen=True)
class CurriculumStage:
    """One training phase: a style mixture, languages, and a step budget."""
    name: str
    style_weights: dict[str, float]       # weights over caption styles, sum 100
    languages: tuple[str, ...]
    steps: int
    max_text_len: int = 32
    grid_side: int = 16

    def __post_init__(self):
        weights = np.array(list(self.style_weights.values()), dtype=float)
        if (weights < 0).any() or not np.isclose(weights.sum(), 100.0):
            raise TrainingError(f"stage {self.name!r}: style weights must be "
                                f"non-negative and sum to 100")

    @property
    def styles(self) -> tuple[str, ...]:
        return tuple(self.style_weights)


@dataclass
class TrainingSet:
    """Dataset records encoded once into flat arrays for fast batching."""
    prompt_ids: list[np.ndarray]
    grids: np.ndarray                     # (N, M) palette indices
    languages: list[str]
    styles: list[str]
    style_pools: dict[str, np.ndarray]

    @classmethod
    def from_records(cls, records: list[dict], vocab: UnifiedVocab) -> "TrainingSet":
        prompt_ids, languages, styles = [], [], []
        grids = []
        for rec in records:
            prompt_ids.append(np.asarray(
                encode_text(rec["caption"], vocab, rec["language"]), dtype=np.int64))
            grids.append(np.asarray(rec["grid"], dtype=np.int64))
            languages.append(rec["language"])
            styles.append(rec["style"])
        pools: dict[str, list[int]] = {}
        for i, style in enumerate(styles):
            pools.setdefault(style, []).append(i)
        return cls(prompt_ids=prompt_ids, grids=np.asarray(grids),
                   languages=languages, styles=styles,
                   style_pools={s: np.asarray(ix) for s, ix in pools.items()})


def stage_seed(base_seed: int, stage_name: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{stage_name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def step_rng(stage_seed_value: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([stage_seed_value, step]))


def draw_style(rng: np.random.Generator, stage: CurriculumStage) -> str:
    styles = stage.styles
    weights = np.array([stage.style_weights[s] for s in styles]) / 100.0
    return str(styles[rng.choice(len(styles), p=weights)])


def run_stage(stage: CurriculumStage, config: TrainConfig, params: Parameters,
              dataset: TrainingSet, vocab: UnifiedVocab, out_dir,
              opt_state: AdamWState | None = None, start_step: int = 0,
              quiet: bool = False, workers: int = 1):
    """Train one curriculum stage; persists checkpoints and a report.

    Batches draw a style per step from the stage mixture (seeded
    multinomial) and records uniformly from that style's pool. Checkpoints
    land every `config.save_interval` steps plus one at the end; the report
    CSV holds (step, loss, lr) rows and the summary JSON the per-language
    and per-style batch counts. Returns (params, opt_state, summary).

    `workers` > 1 forks extra processes that each compute gradients for one
    chunk of every batch; runs are deterministic for a fixed (seed, workers)
    pair but only workers=1 matches the sequential reference bit for bit.
    """
    from .parallel import GradientPool

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for style in stage.styles:
        if stage.style_weights[style] > 0 and \
                len(dataset.style_pools.get(style, ())) == 0:
            raise TrainingError(f"stage {stage.name!r}: no records for style "
                                f"{style!r}")
    opt_state = opt_state if opt_state is not None else AdamWState.init(params)
    seed_value = stage_seed(config.rng_seed, stage.name)

    curve: list[tuple[int, float, float]] = []
    lang_counts: dict[str, int] = {}
    style_counts: dict[str, int] = {}
    checkpoints: list[str] = []
    t_start = time.time()

    with GradientPool(params, dataset, stage, vocab, config, workers,
                      seed_value) as pool:
        for step in range(start_step, stage.steps):
            rng = step_rng(seed_value, step)
            style, idx, loss, grads = pool.step_gradients(step, rng)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at step {step}")
            for name, g in grads.items():
                if not np.isfinite(g).all():
                    raise TrainingError(f"non-finite gradient in {name!r} "
                                        f"at step {step}")
            adamw_update(params, grads, opt_state, lr_at(step, config), config)
            pool.publish_params()

            style_counts[style] = style_counts.get(style, 0) + 1
            for i in idx:
                lang = dataset.languages[int(i)]
                lang_counts[lang] = lang_counts.get(lang, 0) + 1

            if step % config.log_interval == 0 or step == stage.steps - 1:
                curve.append((step, loss, lr_at(step, config)))
                if not quiet and step % (config.log_interval * 20) == 0:
                    rate = (step - start_step + 1) / max(time.time() - t_start, 1e-9)
                    print(f"[{stage.name}] step {step}/{stage.steps} "
                          f"loss {loss:.4f} ({rate:.2f} steps/s)", flush=True)
            if (step + 1) % config.save_interval == 0 or step == stage.steps - 1:
                prefix = out_dir / f"{stage.name}-{step + 1:06d}"
                save_checkpoint(params, prefix, step=step + 1, opt_state=opt_state)
                checkpoints.append(str(prefix))

    report_path = out_dir / f"{stage.name}-report.csv"
    with open(report_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr"])
        for row in curve:
            writer.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.8g}"])
    summary = {
        "stage": stage.name,
        "steps": stage.steps,
        "language_batch_counts": dict(sorted(lang_counts.items())),
        "style_batch_counts": dict(sorted(style_counts.items())),
        "checkpoints": checkpoints,
        "final_loss": curve[-1][1] if curve else None,
        "wall_seconds": round(time.time() - t_start, 3),
    }
    with open(out_dir / f"{stage.name}-summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return params, opt_state, summary


def resume_stage(stage: CurriculumStage, config: TrainConfig,
                 checkpoint_prefix, dataset: TrainingSet, vocab: UnifiedVocab,
                 out_dir, quiet: bool = True):
    """Continue a stage from a saved checkpoint; replays the straight run."""
    params, step, opt = load_checkpoint(checkpoint_prefix, want_optimizer=True)
    if opt is None:
        raise TrainingError("checkpoint has no optimizer state; cannot resume")
    m, v, t = opt
    opt_state = AdamWState(m=m, v=v, t=t)
    return run_stage(stage, config, params, dataset, vocab, out_dir,
                     opt_state=opt_state, start_step=step, quiet=quiet)
