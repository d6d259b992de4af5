"""Decoder transformer over the unified vocabulary, in plain NumPy.

Pre-norm residual blocks with RMS normalization, qk-normalized attention
(L2 + learned per-head gain, no extra 1/sqrt(d) rescale), SiLU feed-forward,
and an output head weight-tied to the token embedding. Forward and backward
passes are hand-written; gradients are checked against central finite
differences in the test suite.

Attention is modality-aware: text positions attend causally within the text
region, image positions attend to the whole text region and to every image
position, padding neither attends nor is attended.

The hot path is engineered for small-core CPUs: activations flow through
2-D GEMMs on (batch*time, features) views, per-(batch, head) attention
matmuls run slice-wise (several times faster than NumPy's stacked matmul
here), and a Workspace recycles the large scratch buffers across steps.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .vocab import SequenceLayout

NEG_INF = np.float32(-1e9)   # large enough that exp underflows to exactly 0
RMS_EPS = 1e-6


class ModelError(RuntimeError):
    """Non-finite activations or malformed inputs."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    max_seq_len: int
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 128
    d_ff: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        if self.d_model % self.n_heads:
            raise ModelError("d_model must be divisible by n_heads")
        for name in ("vocab_size", "max_seq_len", "n_layers", "n_heads",
                     "d_model", "d_ff"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {"vocab_size": self.vocab_size, "max_seq_len": self.max_seq_len,
                "n_layers": self.n_layers, "n_heads": self.n_heads,
                "d_model": self.d_model, "d_ff": self.d_ff,
                "rng_seed": self.rng_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class Parameters:
    """Named tensor table with a deterministic iteration order."""
    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "Parameters":
        return Parameters(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "Parameters":
        return Parameters(self.config,
                          {k: v.astype(dtype) for k, v in self.tensors.items()})

    def check_finite(self) -> None:
        for name, t in self.tensors.items():
            if not np.isfinite(t).all():
                raise ModelError(f"non-finite values in parameter {name!r}")


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """The full tensor table, in checkpoint order."""
    d, f, h = config.d_model, config.d_ff, config.n_heads
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (config.vocab_size, d),
        "pos_emb": (config.max_seq_len, d),
    }
    for i in range(config.n_layers):
        p = f"layer{i}."
        shapes[p + "attn_norm"] = (d,)
        shapes[p + "wq"] = (d, d)
        shapes[p + "wk"] = (d, d)
        shapes[p + "wv"] = (d, d)
        shapes[p + "wo"] = (d, d)
        shapes[p + "q_gain"] = (h,)
        shapes[p + "k_gain"] = (h,)
        shapes[p + "ff_norm"] = (d,)
        shapes[p + "w1"] = (d, f)
        shapes[p + "w2"] = (f, d)
    shapes["final_norm"] = (d,)
    return shapes


def _tensor_rng(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def init_parameters(config: ModelConfig, dtype=np.float32) -> Parameters:
    """Seeded init: scaled normals for projections, zeros for norm/gain offsets.

    Each tensor's random stream depends only on (seed, tensor name), so the
    same seed gives identical tensors regardless of construction order.
    """
    params = Parameters(config)
    residual_scale = 1.0 / np.sqrt(2 * config.n_layers)
    for name, shape in parameter_shapes(config).items():
        rng = _tensor_rng(config.rng_seed, name)
        base = name.split(".")[-1]
        if base in ("attn_norm", "ff_norm", "final_norm", "q_gain", "k_gain"):
            t = np.zeros(shape, dtype=dtype)   # offset around the implicit 1 / base gain
        elif base in ("tok_emb", "pos_emb"):
            # 1/sqrt(d): keeps tied-head logits O(1) and the input scale sane
            t = (rng.standard_normal(shape) / np.sqrt(shape[-1])).astype(dtype)
        else:
            std = 1.0 / np.sqrt(shape[0])
            if base in ("wo", "w2"):
                std *= residual_scale
            t = (rng.standard_normal(shape) * std).astype(dtype)
        params.tensors[name] = t
    return params


# ---------------------------------------------------------------- attention mask

def _region_flags(total: int, text_end: int, im_s: int, im_e: int):
    """Classify positions into text-like / image-like from span boundaries.

    The specials bracketing a span follow that span's rule: [SOI]/[EOI] are
    image-like when present, [T2I][SOT]...[EOT] text-like. Whatever remains
    (the padding between [EOT] and [SOI]) belongs to neither.
    """
    pos = np.arange(total)
    is_img = (pos >= im_s) & (pos < im_e)
    if im_s - 1 > text_end:
        is_img |= pos == im_s - 1
    if im_e < total:
        is_img |= pos == im_e
    is_txt = (pos <= text_end) & ~is_img
    return is_txt, is_img


def build_attention_mask(layout: SequenceLayout) -> np.ndarray:
    """Boolean (total, total) matrix; True = row position may attend to column."""
    total = layout.total_len
    is_txt, is_img = _region_flags(total, layout.text_span[1],
                                   layout.image_span[0], layout.image_span[1])
    causal = np.tril(np.ones((total, total), dtype=bool))
    mask = (is_txt[:, None] & is_txt[None, :] & causal) \
        | (is_img[:, None] & (is_txt | is_img)[None, :])
    return mask


def mask_to_bias(mask: np.ndarray) -> np.ndarray:
    """Boolean mask (T,T) or (B,T,T) -> additive float32 bias (B, 1, T, T)."""
    bias = np.where(mask, np.float32(0.0), NEG_INF).astype(np.float32)
    if bias.ndim == 2:
        return bias[None, None, :, :]
    if bias.ndim == 3:
        return bias[:, None, :, :]
    return bias


def batch_attention_bias(prompt_lens: np.ndarray, max_text_len: int,
                         image_len: int, dtype=np.float32) -> np.ndarray:
    """Additive bias (B, 1, T, T) for assembled sequences.

    Only the prompt length varies between samples; the image block is fixed,
    so the mask is assembled from per-sample text flags and shared causal /
    image flags.
    """
    prompt_lens = np.asarray(prompt_lens, dtype=np.int64)
    total = 5 + max_text_len + image_len
    pos = np.arange(total)
    soi = 3 + max_text_len
    is_img = pos >= soi                                    # [SOI] image [EOI]
    is_txt = (pos[None, :] <= 2 + prompt_lens[:, None]) & ~is_img[None, :]
    causal = pos[None, :] <= pos[:, None]
    mask = (is_txt[:, :, None] & is_txt[:, None, :] & causal[None, :, :]) \
        | (is_img[None, :, None] & (is_txt | is_img[None, :])[:, None, :])
    return np.where(mask, dtype(0.0), dtype(NEG_INF))[:, None, :, :]


# --------------------------------------------------------------------- scratch

_ALLOCATOR_TUNED = False


def _tune_allocator() -> None:
    """Keep big scratch blocks on the heap instead of mmap/munmap churn.

    NumPy temporaries at this scale otherwise pay ~100k page faults per
    training step. Best-effort; silently skipped off glibc.
    """
    global _ALLOCATOR_TUNED
    if _ALLOCATOR_TUNED:
        return
    _ALLOCATOR_TUNED = True
    try:
        import ctypes
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 28)   # M_MMAP_THRESHOLD = -3
    except Exception:
        pass


class Workspace:
    """Recycles large scratch arrays across steps, keyed by (tag, shape, dtype).

    One workspace belongs to one serial computation stream; the training and
    sampling loops each own their own instance.
    """

    def __init__(self):
        self._pool: dict = {}
        _tune_allocator()

    def take(self, tag: str, shape: tuple, dtype) -> np.ndarray:
        key = (tag, shape, np.dtype(dtype))
        buf = self._pool.get(key)
        if buf is None:
            buf = np.empty(shape, dtype=dtype)
            self._pool[key] = buf
        return buf


def _take(ws: Workspace | None, tag: str, shape, dtype):
    if ws is None:
        return np.empty(shape, dtype=dtype)
    return ws.take(tag, tuple(shape), dtype)


# ------------------------------------------------------------------- primitives

def _rms_norm(x, offset, xhat_out=None, y_out=None):
    var = np.mean(np.square(x), axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + RMS_EPS)
    xhat = np.multiply(x, inv, out=xhat_out)
    y = np.multiply(xhat, (1.0 + offset), out=y_out)
    return y, (xhat, inv)


def _rms_norm_backward(dy, cache, offset, d_offset_out, out=None):
    xhat, inv = cache
    d_offset_out += np.einsum("...d,...d->d", dy, xhat, optimize=True)
    dxhat = np.multiply(dy, (1.0 + offset), out=out)
    dot = np.einsum("...d,...d->...", dxhat, xhat, optimize=True)[..., None]
    dot /= xhat.shape[-1]
    dxhat -= xhat * dot
    dxhat *= inv
    return dxhat


def _silu(pre, sig_out, act_out):
    """act = pre * sigmoid(pre), computed in place into the given buffers."""
    np.negative(pre, out=sig_out)
    np.exp(sig_out, out=sig_out)
    sig_out += 1.0
    np.reciprocal(sig_out, out=sig_out)
    np.multiply(pre, sig_out, out=act_out)
    return act_out, sig_out


def _batched_matmul(a: np.ndarray, b: np.ndarray, out: np.ndarray | None = None):
    """Slice-wise matmul; the explicit loop keeps each slice on the fast
    2-D BLAS path, several times quicker here than NumPy's stacked matmul."""
    if out is None:
        out = np.empty(a.shape[:-1] + (b.shape[-1],), dtype=np.result_type(a, b))
    a2 = a.reshape(-1, a.shape[-2], a.shape[-1])
    b2 = b.reshape(-1, b.shape[-2], b.shape[-1])
    o2 = out.reshape(-1, a.shape[-2], b.shape[-1])
    for i in range(a2.shape[0]):
        np.matmul(a2[i], b2[i], out=o2[i])
    return out


def _split_heads_into(x2d: np.ndarray, out: np.ndarray, b, t, h, dh) -> np.ndarray:
    """(B*T, D) -> contiguous (B, H, T, dh)."""
    src = x2d.reshape(b, t, h, dh).transpose(0, 2, 1, 3)
    out[...] = src
    return out


def _merge_heads_into(x: np.ndarray, out2d: np.ndarray, b, t, h, dh) -> np.ndarray:
    """Contiguous (B, H, T, dh) -> (B*T, D)."""
    out2d.reshape(b, t, h, dh)[...] = x.transpose(0, 2, 1, 3)
    return out2d


def _qk_normalize_heads(x, gain_offset, head_dim, inplace: bool = False):
    """L2-normalize each head vector, then scale by head_dim**0.25 * (1 + offset).

    Zero vectors normalize to zero (documented edge case). With `inplace`,
    `x` itself becomes the normalized-and-scaled output (the caller's buffer
    doubles as the cache).
    """
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.where(norm > 0, norm, x.dtype.type(1.0))
    gain = ((head_dim ** 0.25) * (1.0 + np.asarray(gain_offset))).astype(x.dtype)
    y = np.divide(x, safe, out=x if inplace else None)
    y *= gain[None, :, None, None]
    return y, (y, safe, gain)


def _qk_normalize_backward(dy, cache, head_dim, d_gain_out, out=None):
    """Backward through qk-norm, recovering the unit vectors from the cached
    scaled output (y = xhat * gain)."""
    y, safe, gain = cache
    g4 = gain[None, :, None, None]
    # dot[b,h,t] = g * (dy . xhat); also yields the gain gradient for free
    dot = np.einsum("bhtd,bhtd->bht", dy, y, optimize=True)
    d_gain_out += (head_dim ** 0.25) * (dot.sum(axis=(0, 2)) / gain)
    dot = dot[..., None] / g4
    dx = np.multiply(dy, g4, out=out)
    dx -= y * dot
    dx /= safe
    return dx


def qk_normalize(q: np.ndarray, k: np.ndarray, q_gain_offset: np.ndarray,
                 k_gain_offset: np.ndarray, head_dim: int):
    """Public qk-norm over (B, H, T, dh) query/key tensors."""
    qn, _ = _qk_normalize_heads(q, np.asarray(q_gain_offset), head_dim)
    kn, _ = _qk_normalize_heads(k, np.asarray(k_gain_offset), head_dim)
    return qn, kn


def _masked_softmax_inplace(scores: np.ndarray, bias: np.ndarray,
                            dead_rows: tuple | None, score_bound: float) -> np.ndarray:
    """Softmax over attended columns, in place on `scores`.

    Rows whose bias forbids every column (padding) come out all-zero, so
    they contribute nothing downstream. Softmax is shift-invariant, so the
    usual row-max subtraction is skipped whenever qk-norm bounds the scores
    safely below exp overflow.
    """
    scores += bias
    if not score_bound < 60.0:
        scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    denom = scores.sum(axis=-1, keepdims=True)
    np.maximum(denom, np.finfo(scores.dtype).tiny, out=denom)
    scores /= denom
    if dead_rows is None:
        alive = ~(bias <= NEG_INF / 2).all(axis=-1, keepdims=True)
        scores *= alive
    elif dead_rows[0].size:
        scores[dead_rows[0], :, dead_rows[1], :] = 0.0
    return scores


# ------------------------------------------------------------- forward/backward

def _forward_batch(params: Parameters, sequences: np.ndarray, bias: np.ndarray,
                   *, want_cache: bool = False, logit_rows=None, logit_cols=None,
                   ws: Workspace | None = None):
    cfg = params.config
    b, t = sequences.shape
    if t != cfg.max_seq_len:
        raise ModelError(f"sequence length {t} != configured {cfg.max_seq_len}")
    d, h, dh, f = cfg.d_model, cfg.n_heads, cfg.head_dim, cfg.d_ff
    bt = b * t
    emb = params["tok_emb"]
    dtype = emb.dtype
    bias = np.ascontiguousarray(bias, dtype=dtype)
    dead = (bias <= NEG_INF / 2).all(axis=-1)            # (B, 1, T)
    dead_rows = np.nonzero(dead[:, 0, :]) if bias.shape[0] == b \
        else np.nonzero(np.broadcast_to(dead[:, 0, :], (b, t)))

    x = _take(ws, "x", (b, t, d), dtype)
    np.take(emb, sequences, axis=0, out=x)
    x += params["pos_emb"][None, :, :]
    x2d = x.reshape(bt, d)
    cache: dict | None = (
        {"seq": sequences, "layers": [], "bias": bias}
        if want_cache else None)

    for i in range(cfg.n_layers):
        p = f"layer{i}."
        a_in, norm1 = _rms_norm(x, params[p + "attn_norm"],
                                xhat_out=_take(ws, f"l{i}.xhat1", (b, t, d), dtype),
                                y_out=_take(ws, f"l{i}.a_in", (b, t, d), dtype))
        a2d = a_in.reshape(bt, d)
        qf = np.matmul(a2d, params[p + "wq"], out=_take(ws, "qf", (bt, d), dtype))
        kf = np.matmul(a2d, params[p + "wk"], out=_take(ws, "kf", (bt, d), dtype))
        vf = np.matmul(a2d, params[p + "wv"], out=_take(ws, "vf", (bt, d), dtype))
        q = _split_heads_into(qf, _take(ws, f"l{i}.q", (b, h, t, dh), dtype), b, t, h, dh)
        k = _split_heads_into(kf, _take(ws, f"l{i}.k", (b, h, t, dh), dtype), b, t, h, dh)
        v = _split_heads_into(vf, _take(ws, f"l{i}.v", (b, h, t, dh), dtype), b, t, h, dh)
        qn, q_cache = _qk_normalize_heads(q, params[p + "q_gain"], dh, inplace=True)
        kn, k_cache = _qk_normalize_heads(k, params[p + "k_gain"], dh, inplace=True)
        score_bound = float(np.max(np.abs(q_cache[2])) * np.max(np.abs(k_cache[2])))
        scores = _batched_matmul(qn, kn.swapaxes(-1, -2),
                                 out=_take(ws, f"l{i}.probs", (b, h, t, t), dtype))
        probs = _masked_softmax_inplace(scores, bias, dead_rows, score_bound)
        ctx = _batched_matmul(probs, v, out=_take(ws, "ctx", (b, h, t, dh), dtype))
        ctx2d = _merge_heads_into(ctx, _take(ws, f"l{i}.ctx2d", (bt, d), dtype),
                                  b, t, h, dh)
        attn = np.matmul(ctx2d, params[p + "wo"], out=_take(ws, "attn", (bt, d), dtype))
        x2d += attn
        f_in, norm2 = _rms_norm(x, params[p + "ff_norm"],
                                xhat_out=_take(ws, f"l{i}.xhat2", (b, t, d), dtype),
                                y_out=_take(ws, f"l{i}.f_in", (b, t, d), dtype))
        f2d = f_in.reshape(bt, d)
        pre = np.matmul(f2d, params[p + "w1"], out=_take(ws, f"l{i}.pre", (bt, f), dtype))
        act, sig = _silu(pre, _take(ws, f"l{i}.sig", (bt, f), dtype),
                         _take(ws, f"l{i}.act", (bt, f), dtype))
        ff_out = np.matmul(act, params[p + "w2"], out=_take(ws, "ffo", (bt, d), dtype))
        if not np.isfinite(ff_out).all():
            raise ModelError(f"non-finite activations in layer {i}")
        x2d += ff_out
        if want_cache:
            cache["layers"].append({
                "norm1": norm1, "a_in": a_in, "q_cache": q_cache,
                "k_cache": k_cache, "qn": qn, "kn": kn, "v": v,
                "probs": probs, "ctx2d": ctx2d, "norm2": norm2, "f_in": f_in,
                "pre": pre, "sig": sig, "act": act,
            })

    h_out, final = _rms_norm(x, params["final_norm"],
                             xhat_out=_take(ws, "xhatf", (b, t, d), dtype),
                             y_out=_take(ws, "h_out", (b, t, d), dtype))
    rows = logit_rows if logit_rows is not None else slice(None)
    cols = logit_cols if logit_cols is not None else slice(None)
    h_rows = np.ascontiguousarray(h_out[:, rows, :])
    n_rows = h_rows.shape[1]
    head = emb[cols]
    logits = (h_rows.reshape(b * n_rows, d) @ head.T).reshape(b, n_rows, -1)
    if not np.isfinite(logits).all():
        raise ModelError("non-finite logits at the output head")
    if want_cache:
        cache.update({"h": h_out, "h_rows": h_rows, "final": final,
                      "rows": rows, "cols": cols})
    return logits, cache


def forward(params: Parameters, sequence: np.ndarray, mask: np.ndarray,
            *, logit_rows=None, logit_cols=None) -> np.ndarray:
    """Full-vocabulary logits for one sequence (or a batch) under a boolean mask.

    Pure in all arguments; bit-stable across calls. Raises ModelError naming
    the layer when non-finite values appear.
    """
    seqs = np.asarray(sequence, dtype=np.int64)
    single = seqs.ndim == 1
    if single:
        seqs = seqs[None, :]
    bias = mask if (isinstance(mask, np.ndarray) and mask.dtype != bool) \
        else mask_to_bias(mask)
    if bias.shape[0] not in (1, seqs.shape[0]):
        raise ModelError("mask batch dimension does not match sequences")
    logits, _ = _forward_batch(params, seqs, bias,
                               logit_rows=logit_rows, logit_cols=logit_cols)
    return logits[0] if single else logits


def _scatter_rows_sum(ids: np.ndarray, rows: np.ndarray, out: np.ndarray) -> None:
    """out[ids[i]] += rows[i], via sort + reduceat (much faster than add.at)."""
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    sorted_rows = rows[order]
    boundaries = np.flatnonzero(np.concatenate(([True],
                                                sorted_ids[1:] != sorted_ids[:-1])))
    sums = np.add.reduceat(sorted_rows, boundaries, axis=0)
    out[sorted_ids[boundaries]] += sums


def backward(params: Parameters, cache: dict, d_logits: np.ndarray,
             ws: Workspace | None = None) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter tensor.

    `d_logits` must match the (possibly sliced) logits produced by the
    forward call that built `cache`.
    """
    cfg = params.config
    d, h, dh, f = cfg.d_model, cfg.n_heads, cfg.head_dim, cfg.d_ff
    emb = params["tok_emb"]
    rows, cols = cache["rows"], cache["cols"]
    grads = {name: np.zeros_like(t) for name, t in params.tensors.items()}

    h_out = cache["h"]
    b, t, _ = h_out.shape
    bt = b * t
    dtype = h_out.dtype
    dl2 = np.ascontiguousarray(d_logits.reshape(-1, d_logits.shape[-1]))
    dh_out = _take(ws, "g.dh", (b, t, d), dtype)
    dh_out[...] = 0.0
    dh_out[:, rows, :] = (dl2 @ emb[cols]).reshape(b, -1, d)
    grads["tok_emb"][cols] += dl2.T @ cache["h_rows"].reshape(-1, d)

    dx = _rms_norm_backward(dh_out, cache["final"], params["final_norm"],
                            grads["final_norm"], out=_take(ws, "g.dx", (b, t, d), dtype))
    dx2d = dx.reshape(bt, d)

    for i in reversed(range(cfg.n_layers)):
        p = f"layer{i}."
        c = cache["layers"][i]
        # feed-forward branch (dx flows through the residual unchanged)
        np.matmul(c["act"].T, dx2d, out=grads[p + "w2"])
        d_act = np.matmul(dx2d, params[p + "w2"].T,
                          out=_take(ws, "g.dact", (bt, f), dtype))
        sig, pre = c["sig"], c["pre"]
        # silu'(pre) = sig * (1 + pre * (1 - sig)), built in a scratch buffer
        dsig = _take(ws, "g.dsilu", (bt, f), dtype)
        np.subtract(1.0, sig, out=dsig)
        dsig *= pre
        dsig += 1.0
        dsig *= sig
        d_pre = d_act
        d_pre *= dsig
        f2d = c["f_in"].reshape(bt, d)
        np.matmul(f2d.T, d_pre, out=grads[p + "w1"])
        d_f_in = np.matmul(d_pre, params[p + "w1"].T,
                           out=_take(ws, "g.dfin", (bt, d), dtype))
        dx += _rms_norm_backward(d_f_in.reshape(b, t, d), c["norm2"],
                                 params[p + "ff_norm"], grads[p + "ff_norm"],
                                 out=_take(ws, "g.dnorm", (b, t, d), dtype))

        # attention branch
        ctx2d = c["ctx2d"]
        np.matmul(ctx2d.T, dx2d, out=grads[p + "wo"])
        d_ctx2d = np.matmul(dx2d, params[p + "wo"].T,
                            out=_take(ws, "g.dctx2d", (bt, d), dtype))
        d_ctx = _split_heads_into(d_ctx2d, _take(ws, "g.dctx", (b, h, t, dh), dtype),
                                  b, t, h, dh)
        probs = c["probs"]
        d_probs = _batched_matmul(d_ctx, c["v"].swapaxes(-1, -2),
                                  out=_take(ws, "g.dprobs", (b, h, t, t), dtype))
        d_v = _batched_matmul(probs.swapaxes(-1, -2), d_ctx,
                              out=_take(ws, "g.dv", (b, h, t, dh), dtype))
        # softmax backward, in place on d_probs (einsum avoids a (B,H,T,T) temp)
        rowdot = np.einsum("bhts,bhts->bht", d_probs, probs, optimize=True)
        d_probs -= rowdot[..., None]
        d_probs *= probs
        d_scores = d_probs
        d_qn = _batched_matmul(d_scores, c["kn"],
                               out=_take(ws, "g.dqn", (b, h, t, dh), dtype))
        d_kn = _batched_matmul(d_scores.swapaxes(-1, -2), c["qn"],
                               out=_take(ws, "g.dkn", (b, h, t, dh), dtype))
        d_q = _qk_normalize_backward(d_qn, c["q_cache"], dh, grads[p + "q_gain"],
                                     out=_take(ws, "g.dq", (b, h, t, dh), dtype))
        d_k = _qk_normalize_backward(d_kn, c["k_cache"], dh, grads[p + "k_gain"],
                                     out=_take(ws, "g.dk", (b, h, t, dh), dtype))
        d_qf = _merge_heads_into(d_q, _take(ws, "g.dqf", (bt, d), dtype), b, t, h, dh)
        d_kf = _merge_heads_into(d_k, _take(ws, "g.dkf", (bt, d), dtype), b, t, h, dh)
        d_vf = _merge_heads_into(d_v, _take(ws, "g.dvf", (bt, d), dtype), b, t, h, dh)
        a2d = c["a_in"].reshape(bt, d)
        np.matmul(a2d.T, d_qf, out=grads[p + "wq"])
        np.matmul(a2d.T, d_kf, out=grads[p + "wk"])
        np.matmul(a2d.T, d_vf, out=grads[p + "wv"])
        d_a2d = np.matmul(d_qf, params[p + "wq"].T,
                          out=_take(ws, "g.dain", (bt, d), dtype))
        d_a2d += d_kf @ params[p + "wk"].T
        d_a2d += d_vf @ params[p + "wv"].T
        dx += _rms_norm_backward(d_a2d.reshape(b, t, d), c["norm1"],
                                 params[p + "attn_norm"], grads[p + "attn_norm"],
                                 out=_take(ws, "g.dnorm", (b, t, d), dtype))

    grads["pos_emb"] += dx.sum(axis=0)
    _scatter_rows_sum(cache["seq"].reshape(-1), dx2d, grads["tok_emb"])
    return grads
