"""Convex checkpoint combination: SMA, EMA, and WMA.

Merging touches model tensors only; optimizer moments never participate,
so merged checkpoints are inference-ready but must be re-warmed before any
further training. The merge ops accept any iterable of Parameters and
accumulate in float64 while holding at most one checkpoint plus the
accumulator in memory; the output manifest records the merge recipe for
provenance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import load_checkpoint, read_manifest, save_checkpoint
from .model import Parameters


class MergeError(ValueError):
    pass


@dataclass(frozen=True)
class MergeSpec:
    checkpoints: tuple[str, ...]            # trajectory order, oldest first
    strategy: str = "sma"                   # sma | ema | wma
    ema_alpha: float = 0.5
    wma_weights: tuple[float, ...] | None = None   # default w_i = i

    def __post_init__(self):
        if len(self.checkpoints) < 1:
            raise MergeError("need at least one checkpoint")
        if self.strategy not in ("sma", "ema", "wma"):
            raise MergeError(f"unknown merge strategy {self.strategy!r}")
        if self.strategy == "ema" and not 0.0 < self.ema_alpha <= 1.0:
            raise MergeError("ema_alpha must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {"checkpoints": list(self.checkpoints), "strategy": self.strategy,
                "ema_alpha": self.ema_alpha,
                "wma_weights": list(self.wma_weights) if self.wma_weights else None}


def normalize_weights(weights) -> np.ndarray:
    """alpha_i = w_i / sum(w); rejects negative or all-zero weights."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise MergeError("weights must be a nonempty vector")
    if (w < 0).any():
        raise MergeError("weights must be non-negative")
    total = w.sum()
    if total == 0:
        raise MergeError("weights sum to zero")
    return w / total


def _check_shapes(shapes: dict[str, tuple], ckpt: Parameters, index: int) -> None:
    for name, shape in shapes.items():
        if name not in ckpt.tensors:
            raise MergeError(f"checkpoint {index} missing tensor {name!r}")
        if ckpt.tensors[name].shape != shape:
            raise MergeError(f"tensor {name!r} shape mismatch at checkpoint "
                             f"{index}: {ckpt.tensors[name].shape} vs {shape}")


def merge_wma(checkpoints, weights) -> Parameters:
    """Normalized weighted sum over the checkpoint sequence (streaming)."""
    alphas = normalize_weights(weights)
    acc: dict[str, np.ndarray] | None = None
    shapes: dict[str, tuple] = {}
    config = None
    count = 0
    for ckpt in checkpoints:
        if count >= len(alphas):
            raise MergeError("more checkpoints than weights")
        if acc is None:
            config = ckpt.config
            shapes = {name: t.shape for name, t in ckpt.tensors.items()}
            acc = {name: np.zeros(shape, dtype=np.float64)
                   for name, shape in shapes.items()}
        else:
            _check_shapes(shapes, ckpt, count)
        alpha = alphas[count]
        for name, tensor in ckpt.tensors.items():
            acc[name] += alpha * tensor.astype(np.float64)
        count += 1
    if count != len(alphas):
        raise MergeError(f"got {count} checkpoints for {len(alphas)} weights")
    return Parameters(config, {name: acc[name].astype(np.float32)
                               for name in shapes})


def merge_sma(checkpoints) -> Parameters:
    """Equal-weight average (elementwise mean of every tensor), streaming."""
    acc: dict[str, np.ndarray] | None = None
    shapes: dict[str, tuple] = {}
    config = None
    count = 0
    for ckpt in checkpoints:
        if acc is None:
            config = ckpt.config
            shapes = {name: t.shape for name, t in ckpt.tensors.items()}
            acc = {name: np.zeros(shape, dtype=np.float64)
                   for name, shape in shapes.items()}
        else:
            _check_shapes(shapes, ckpt, count)
        for name, tensor in ckpt.tensors.items():
            acc[name] += tensor.astype(np.float64)
        count += 1
    if count == 0:
        raise MergeError("no checkpoints to merge")
    return Parameters(config, {name: (acc[name] / count).astype(np.float32)
                               for name in shapes})


def merge_ema(checkpoints, alpha: float) -> Parameters:
    """Recursive exponential average seeded with the first checkpoint."""
    if not 0.0 < alpha <= 1.0:
        raise MergeError("ema alpha must lie in (0, 1]")
    acc: dict[str, np.ndarray] | None = None
    shapes: dict[str, tuple] = {}
    config = None
    count = 0
    for ckpt in checkpoints:
        if acc is None:
            config = ckpt.config
            shapes = {name: t.shape for name, t in ckpt.tensors.items()}
            acc = {name: t.astype(np.float64) for name, t in ckpt.tensors.items()}
        else:
            _check_shapes(shapes, ckpt, count)
            for name, tensor in ckpt.tensors.items():
                acc[name] *= (1.0 - alpha)
                acc[name] += alpha * tensor.astype(np.float64)
        count += 1
    if count == 0:
        raise MergeError("no checkpoints to merge")
    return Parameters(config, {name: acc[name].astype(np.float32)
                               for name in shapes})


def default_wma_weights(n: int) -> np.ndarray:
    """w_i = i (1-based), emphasizing later checkpoints."""
    return np.arange(1, n + 1, dtype=np.float64)


def merge(spec: MergeSpec) -> Parameters:
    """Merge checkpoint files per the spec, loading one at a time."""
    stream = (load_checkpoint(prefix)[0] for prefix in spec.checkpoints)
    if spec.strategy == "sma":
        return merge_sma(stream)
    if spec.strategy == "ema":
        return merge_ema(stream, spec.ema_alpha)
    weights = spec.wma_weights if spec.wma_weights is not None \
        else default_wma_weights(len(spec.checkpoints))
    return merge_wma(stream, weights)


def merge_to_file(spec: MergeSpec, out_prefix) -> str:
    """Merge and persist; the output manifest embeds the MergeSpec."""
    merged = merge(spec)
    step = max(int(read_manifest(p)["step"]) for p in spec.checkpoints)
    path = save_checkpoint(merged, out_prefix, step=step,
                           merge_spec=spec.to_dict())
    return str(path)
