"""Data-parallel gradient computation over batch chunks.

Every process derives the *same* full batch from the per-step RNG stream,
then computes loss and gradients for its own contiguous chunk of rows; the
parent averages chunk gradients in a fixed order and applies the optimizer
update. Parameters live in an anonymous shared mmap so workers always see
the latest update without copies; a pipe token per step provides the
ordering barrier.

With `workers=1` nothing forks and training is bit-exact run to run. With
more workers the run is still deterministic for a fixed (seed, workers)
pair, but the floating-point summation order differs from the single
process path, so the two configurations drift apart numerically (documented
in the CLI: --workers defaults to 1 for bit-exact runs).
"""

from __future__ import annotations

import mmap
import multiprocessing as mp
import os

import numpy as np

from .model import Parameters, Workspace
from .training import (TrainConfig, TrainingError, make_masked_batch,
                       _loss_and_grad, assemble_batch)


def _limit_blas_threads(n: int) -> None:
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=n)
    except Exception:
        pass


class _SharedTensors:
    """Named float32 tensors backed by one anonymous shared mmap."""

    def __init__(self, shapes: dict[str, tuple[int, ...]]):
        self.shapes = shapes
        total = sum(int(np.prod(s, dtype=np.int64)) for s in shapes.values()) * 4
        self._mm = mmap.mmap(-1, max(total, 4))
        self.views: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in shapes.items():
            size = int(np.prod(shape, dtype=np.int64))
            view = np.frombuffer(self._mm, dtype=np.float32, count=size,
                                 offset=offset).reshape(shape)
            self.views[name] = view
            offset += size * 4

    def write(self, tensors: dict[str, np.ndarray]) -> None:
        for name, view in self.views.items():
            view[...] = tensors[name]


def chunk_bounds(batch_size: int, workers: int, rank: int) -> tuple[int, int]:
    base = batch_size // workers
    extra = batch_size % workers
    start = rank * base + min(rank, extra)
    return start, start + base + (1 if rank < extra else 0)


def compute_chunk_grads(params: Parameters, full_prompts, full_image_ids,
                        full_mask, full_masked, vocab, config: TrainConfig,
                        max_text_len: int, lo: int, hi: int, ws: Workspace):
    """Loss and gradients for rows [lo, hi) of the full batch."""
    from .model import backward, _forward_batch
    from .training import MaskedBatch

    chunk = MaskedBatch(prompt_ids=full_prompts[lo:hi],
                        target_image_ids=full_image_ids[lo:hi],
                        mask_set=full_mask[lo:hi],
                        masked_image_ids=full_masked[lo:hi])
    seq, bias, soi = assemble_batch(chunk, vocab, max_text_len)
    m = chunk.target_image_ids.shape[1]
    rows = slice(soi + 1, soi + 1 + m)
    cols = slice(vocab.image_offset, vocab.image_offset + vocab.image_k)
    logits, cache = _forward_batch(params, seq, bias, want_cache=True,
                                   logit_rows=rows, logit_cols=cols, ws=ws)
    rel_targets = chunk.target_image_ids - vocab.image_offset
    loss, d_logits = _loss_and_grad(logits, rel_targets, chunk.mask_set,
                                    config.loss_reduction)
    grads = backward(params, cache, d_logits, ws=ws)
    return loss, grads


def derive_full_batch(rng: np.random.Generator, dataset, stage, vocab,
                      config: TrainConfig):
    """The per-step batch, identical in every process that shares the rng."""
    from .training import draw_style
    style = draw_style(rng, stage)
    pool = dataset.style_pools[style]
    idx = pool[rng.integers(0, len(pool), size=config.batch_size)]
    prompts = [dataset.prompt_ids[int(i)] for i in idx]
    image_ids = dataset.grids[idx] + vocab.image_offset
    batch = make_masked_batch(prompts, image_ids, rng, config.mask_schedule,
                              config.cfg_dropout_p)
    return style, idx, batch


class GradientPool:
    """Parent + (workers-1) forked children, each owning one batch chunk."""

    def __init__(self, params: Parameters, dataset, stage, vocab,
                 config: TrainConfig, workers: int, stage_seed_value: int):
        if workers < 1:
            raise TrainingError("workers must be >= 1")
        self.workers = workers
        self.params = params
        self.dataset = dataset
        self.stage = stage
        self.vocab = vocab
        self.config = config
        self.stage_seed_value = stage_seed_value
        self.ws = Workspace()
        self._procs: list[mp.Process] = []
        self._pipes = []
        if workers > 1:
            shapes = {k: t.shape for k, t in params.tensors.items()}
            self._shared_params = _SharedTensors(shapes)
            self._shared_params.write(params.tensors)
            self._grad_blocks = [_SharedTensors(shapes) for _ in range(workers - 1)]
            ctx = mp.get_context("fork")
            for rank in range(1, workers):
                parent_end, child_end = ctx.Pipe()
                proc = ctx.Process(target=self._worker_main,
                                   args=(rank, child_end,
                                         self._grad_blocks[rank - 1]),
                                   daemon=True)
                proc.start()
                self._pipes.append(parent_end)
                self._procs.append(proc)
        _limit_blas_threads(1)

    def _worker_main(self, rank: int, pipe, grad_block: _SharedTensors) -> None:
        _limit_blas_threads(1)
        from .training import step_rng
        shared = self._shared_params
        worker_params = Parameters(self.params.config, dict(shared.views))
        ws = Workspace()
        lo, hi = chunk_bounds(self.config.batch_size, self.workers, rank)
        while True:
            msg = pipe.recv()
            if msg is None:
                return
            step = msg
            try:
                rng = step_rng(self.stage_seed_value, step)
                _style, _idx, batch = derive_full_batch(rng, self.dataset,
                                                        self.stage, self.vocab,
                                                        self.config)
                loss, grads = compute_chunk_grads(
                    worker_params, batch.prompt_ids, batch.target_image_ids,
                    batch.mask_set, batch.masked_image_ids, self.vocab,
                    self.config, self.stage.max_text_len, lo, hi, ws)
                grad_block.write(grads)
                pipe.send(loss)
            except Exception as exc:   # surface worker crashes to the parent
                pipe.send(("error", f"{type(exc).__name__}: {exc}"))
                return

    def step_gradients(self, step: int, rng: np.random.Generator):
        """Average gradients for one step across all chunks.

        Returns (style, idx, mean loss, averaged grads). The rng must be the
        canonical per-step generator; workers re-derive it from the step.
        """
        for pipe in self._pipes:
            pipe.send(step)
        style, idx, batch = derive_full_batch(rng, self.dataset, self.stage,
                                              self.vocab, self.config)
        lo, hi = chunk_bounds(self.config.batch_size, self.workers, 0)
        loss0, grads = compute_chunk_grads(
            self.params, batch.prompt_ids, batch.target_image_ids,
            batch.mask_set, batch.masked_image_ids, self.vocab, self.config,
            self.stage.max_text_len, lo, hi, self.ws)
        losses = [loss0]
        for rank, pipe in enumerate(self._pipes, start=1):
            reply = pipe.recv()
            if isinstance(reply, tuple) and reply and reply[0] == "error":
                raise TrainingError(f"worker {rank} failed at step {step}: {reply[1]}")
            losses.append(reply)
            block = self._grad_blocks[rank - 1]
            for name in grads:
                grads[name] += block.views[name]
        inv = 1.0 / self.workers
        for name in grads:
            grads[name] *= inv
        loss = float(np.mean(losses))
        return style, idx, loss, grads

    def publish_params(self) -> None:
        if self._procs:
            self._shared_params.write(self.params.tensors)

    def close(self) -> None:
        for pipe in self._pipes:
            try:
                pipe.send(None)
            except (BrokenPipeError, OSError):
                pass
        for proc in self._procs:
            proc.join(timeout=10)
            if proc.is_alive():
                proc.terminate()
        self._procs.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
