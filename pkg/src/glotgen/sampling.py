"""Iterative parallel unmasking with classifier-free guidance.

Generation starts from an all-MASK image block and runs a fixed number of
refinement steps. Each step runs the model twice (prompt and null prompt),
blends the logits with the guidance scale, samples candidate tokens at the
current temperature, and commits the most confident fraction dictated by a
cosine schedule; everything else is re-masked for the next step. Cells
marked frozen are never touched, which is all inpainting and extrapolation
need: they are plain generation with a partially frozen canvas.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import Parameters, Workspace, batch_attention_bias, _forward_batch
from .vocab import (EOI, EOT, MASK, PAD, SOI, SOT, T2I, TokenGrid,
                    UnifiedVocab, grid_to_ids, ids_to_grid)

logger = logging.getLogger(__name__)


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 16
    guidance_scale: float = 1.75
    temperature: float = 1.0        # anneal start; linear anneal to 0 at the last step
    rng_seed: int = 0
    max_text_len: int = 32

    def __post_init__(self):
        if self.steps < 1:
            raise SamplingError("sampler needs at least 1 step")
        if self.guidance_scale < 0:
            raise SamplingError("guidance scale must be >= 0")


@dataclass
class GenerationRequest:
    prompt_ids: np.ndarray                      # empty for unconditional
    frozen_mask: np.ndarray | None = None       # (M,) bool, True = preserved
    initial_ids: np.ndarray | None = None       # absolute image ids at frozen cells
    grid_side: int = 16

    def resolved(self, vocab: UnifiedVocab):
        m = self.grid_side * self.grid_side
        frozen = np.zeros(m, dtype=bool) if self.frozen_mask is None \
            else np.asarray(self.frozen_mask, dtype=bool).reshape(m)
        initial = np.full(m, MASK, dtype=np.int64)
        if frozen.any():
            if self.initial_ids is None:
                raise SamplingError("frozen cells need initial ids")
            ids = np.asarray(self.initial_ids, dtype=np.int64).reshape(m)
            lo, hi = vocab.image_offset, vocab.image_offset + vocab.image_k
            if ((ids[frozen] < lo) | (ids[frozen] >= hi)).any():
                raise SamplingError("frozen cells carry non-image token ids")
            initial[frozen] = ids[frozen]
        return frozen, initial


@dataclass
class GenerationResult:
    grid: TokenGrid
    seed: int
    steps_run: int
    committed_per_step: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def guided_logits(cond_logits: np.ndarray, uncond_logits: np.ndarray,
                  scale: float) -> np.ndarray:
    """uncond + scale * (cond - uncond); 1 -> conditional, 0 -> unconditional.

    The endpoints return their input exactly (no floating-point residue).
    """
    if cond_logits.shape != uncond_logits.shape:
        raise SamplingError("conditional/unconditional logit shapes differ")
    if scale == 1.0:
        return cond_logits.copy()
    if scale == 0.0:
        return uncond_logits.copy()
    return uncond_logits + scale * (cond_logits - uncond_logits)


def unmask_targets(total_free: int, steps: int) -> list[int]:
    """Cumulative commit counts: ceil((1 - cos(pi*t/(2T))) * M) for t = 1..T."""
    targets = [int(np.ceil((1.0 - np.cos(np.pi * t / (2 * steps))) * total_free))
               for t in range(1, steps + 1)]
    targets[-1] = total_free
    return targets


def _request_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([0x9E4, seed, index]))


def generate_batch(params: Parameters, requests: list[GenerationRequest],
                   config: SamplerConfig, vocab: UnifiedVocab,
                   ws: Workspace | None = None,
                   seeds: list[int] | None = None) -> list[GenerationResult]:
    """Generate one grid per request.

    Per-request RNG streams are independent, seeded from (config seed,
    request index) by default; `seeds` overrides the per-request seed
    (index 0 in its own stream), which lets callers batch arbitrary jobs
    without changing any job's randomness.
    """
    if not requests:
        return []
    side = requests[0].grid_side
    m = side * side
    n = len(requests)
    t_total = 5 + config.max_text_len + m
    if params.config.max_seq_len != t_total:
        raise SamplingError(f"model expects sequences of {params.config.max_seq_len}, "
                            f"sampler builds {t_total}")

    frozen = np.empty((n, m), dtype=bool)
    committed = np.empty((n, m), dtype=np.int64)
    prompt_lens = np.empty(n, dtype=np.int64)
    if seeds is not None and len(seeds) != n:
        raise SamplingError("seeds must match the number of requests")
    results = [GenerationResult(grid=None,
                                seed=(seeds[i] if seeds else config.rng_seed),
                                steps_run=0)
               for i in range(n)]
    rngs = [_request_rng(seeds[i], 0) if seeds else _request_rng(config.rng_seed, i)
            for i in range(n)]
    for i, req in enumerate(requests):
        if req.grid_side != side:
            raise SamplingError("mixed grid sides in one batch")
        fz, init = req.resolved(vocab)
        frozen[i], committed[i] = fz, init
        if len(req.prompt_ids) > config.max_text_len:
            raise SamplingError("prompt exceeds max_text_len")
        prompt_lens[i] = len(req.prompt_ids)

    committed_mask = frozen.copy()
    free_counts = (~frozen).sum(axis=1)
    all_frozen = free_counts == 0
    for i in np.nonzero(all_frozen)[0]:
        results[int(i)].warnings.append("all cells frozen; returning input unchanged")
        logger.warning("generation request %d is fully frozen", i)

    targets = {int(f): unmask_targets(int(f), config.steps)
               for f in np.unique(free_counts) if f > 0}
    trajectory = [[] for _ in range(n)]

    seq = np.full((2 * n, t_total), PAD, dtype=np.int64)
    seq[:, 0], seq[:, 1] = T2I, SOT
    soi = 3 + config.max_text_len
    seq[:, soi] = SOI
    seq[:, soi + 1 + m] = EOI
    for i, req in enumerate(requests):
        k = prompt_lens[i]
        seq[i, 2:2 + k] = np.asarray(req.prompt_ids, dtype=np.int64)
        seq[i, 2 + k] = EOT
    seq[n:, 2] = EOT                                 # null prompt rows
    lens = np.concatenate([prompt_lens, np.zeros(n, dtype=np.int64)])
    bias = batch_attention_bias(lens, config.max_text_len, m)
    rows = slice(soi + 1, soi + 1 + m)
    cols = slice(vocab.image_offset, vocab.image_offset + vocab.image_k)

    steps_run = 0
    for t in range(1, config.steps + 1):
        if bool(all_frozen.all()):
            break
        temp = config.temperature * (config.steps - t) / config.steps
        seq[:n, rows] = np.where(committed_mask, committed, MASK)
        seq[n:, rows] = seq[:n, rows]
        logits, _ = _forward_batch(params, seq, bias, logit_rows=rows,
                                   logit_cols=cols, ws=ws)
        guided = guided_logits(logits[:n], logits[n:], config.guidance_scale)
        steps_run += 1

        for i in range(n):
            if all_frozen[i]:
                continue
            open_cells = ~committed_mask[i]
            target = targets[int(free_counts[i])][t - 1]
            already = int(committed_mask[i].sum() - frozen[i].sum())
            k_commit = target - already
            if k_commit <= 0:
                continue
            g = guided[i]
            rng = rngs[i]
            if temp > 0:
                z = g / temp
                z = z - z.max(axis=-1, keepdims=True)
                probs = np.exp(z)
                probs /= probs.sum(axis=-1, keepdims=True)
                gumbel = rng.gumbel(size=g.shape)
                sampled = np.argmax(z + gumbel, axis=-1)
                conf = np.take_along_axis(probs, sampled[:, None], axis=1)[:, 0]
                conf = conf + temp * rng.gumbel(size=m)
            else:
                sampled = np.argmax(g, axis=-1)
                conf = np.take_along_axis(
                    g - g.max(axis=-1, keepdims=True), sampled[:, None], axis=1)[:, 0]
            conf = np.where(open_cells, conf, -np.inf)
            order = np.lexsort((np.arange(m), -conf))    # ties -> lower index first
            chosen = order[:k_commit]
            committed[i, chosen] = sampled[chosen] + vocab.image_offset
            committed_mask[i, chosen] = True
        for i in range(n):
            trajectory[i].append(int(committed_mask[i].sum() - frozen[i].sum()))

    for i in range(n):
        if not all_frozen[i] and not committed_mask[i].all():
            raise SamplingError("decoding finished with uncommitted cells")
        results[i].grid = ids_to_grid(committed[i], vocab, side=side)
        results[i].steps_run = 0 if all_frozen[i] else steps_run
        results[i].committed_per_step = trajectory[i]
    return results


def generate(params: Parameters, request: GenerationRequest,
             config: SamplerConfig, vocab: UnifiedVocab,
             ws: Workspace | None = None) -> GenerationResult:
    """Single-request convenience wrapper around generate_batch."""
    return generate_batch(params, [request], config, vocab, ws=ws)[0]


def inpaint(params: Parameters, grid: TokenGrid, region_mask: np.ndarray,
            prompt_ids, config: SamplerConfig, vocab: UnifiedVocab,
            ws: Workspace | None = None) -> GenerationResult:
    """Regenerate the masked region under the prompt; the rest is frozen."""
    m = grid.side * grid.side
    region = np.asarray(region_mask, dtype=bool).reshape(m)
    if not region.any():
        return GenerationResult(grid=grid, seed=config.rng_seed, steps_run=0,
                                warnings=["empty region; returning input unchanged"])
    request = GenerationRequest(prompt_ids=np.asarray(prompt_ids, dtype=np.int64),
                                frozen_mask=~region,
                                initial_ids=grid_to_ids(grid, vocab),
                                grid_side=grid.side)
    return generate(params, request, config, vocab, ws=ws)


def extrapolate(params: Parameters, grid: TokenGrid, direction: str,
                n_cols: int, prompt_ids, config: SamplerConfig,
                vocab: UnifiedVocab, ws: Workspace | None = None) -> GenerationResult:
    """Slide the canvas sideways and fill the vacated columns.

    The fixed image span cannot widen, so extending right keeps the original
    columns n_cols..side-1 (frozen, shifted left) and generates the final
    n_cols columns; left extension mirrors this.
    """
    if direction not in ("left", "right"):
        raise SamplingError(f"direction must be left or right, got {direction!r}")
    side = grid.side
    if n_cols >= side:
        raise SamplingError(f"extension of {n_cols} columns exceeds the trained "
                            f"image span ({side})")
    if n_cols == 0:
        return GenerationResult(grid=grid, seed=config.rng_seed, steps_run=0,
                                warnings=["zero-column extension; input unchanged"])
    cells = np.zeros((side, side), dtype=np.uint8)
    frozen = np.zeros((side, side), dtype=bool)
    if direction == "right":
        cells[:, :side - n_cols] = grid.cells[:, n_cols:]
        frozen[:, :side - n_cols] = True
    else:
        cells[:, n_cols:] = grid.cells[:, :side - n_cols]
        frozen[:, n_cols:] = True
    base = TokenGrid(side=side, cells=cells)
    request = GenerationRequest(prompt_ids=np.asarray(prompt_ids, dtype=np.int64),
                                frozen_mask=frozen.reshape(-1),
                                initial_ids=grid_to_ids(base, vocab),
                                grid_side=side)
    return generate(params, request, config, vocab, ws=ws)
