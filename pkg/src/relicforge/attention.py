"""Small float64 attention engine used to check the cache and conditioning contracts.

Shapes follow ``(heads, tokens, head_dim)`` for per-head tensors and
``(tokens, d_model)`` for hidden states.  Every token of a latent frame
shares one temporal RoPE position, the latent index.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .cache import CompressionSchedule, StreamingCache, compress_token_grid
from .errors import ContractError, ShapeError
from .masks import build_block_causal_mask

TEMPORAL_GROUP = 4


@dataclass(frozen=True)
class ToyConfig:
    d_model: int = 32
    n_heads: int = 4
    rope_base: float = 10000.0
    pose_before_rope: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.head_dim % 2:
            raise ValueError(f"head_dim {self.head_dim} must be even for rotary embedding")

    @property
    def head_dim(self):
        return self.d_model // self.n_heads


def split_heads(x, n_heads):
    n, d = x.shape
    return x.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2)


def merge_heads(x):
    h, n, hd = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * hd)


def rope_angles(positions, head_dim, base=10000.0):
    k = np.arange(head_dim // 2)
    theta = base ** (-2.0 * k / head_dim)
    return np.asarray(positions, dtype=float)[:, None] * theta[None, :]


def apply_rope(x, positions, base=10000.0):
    """Rotate consecutive feature pairs of ``x[..., n, head_dim]`` by position-dependent angles."""
    x = np.asarray(x, dtype=float)
    hd = x.shape[-1]
    if hd % 2:
        raise ValueError(f"rotary embedding needs an even head_dim, got {hd}")
    ang = rope_angles(positions, hd, base)
    c, s = np.cos(ang), np.sin(ang)
    x0, x1 = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = x0 * c - x1 * s
    out[..., 1::2] = x0 * s + x1 * c
    return out


def _l2_normalize(x):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(n == 0, 1.0, n)


def attend(q, k, v, mask=None, qk_norm=True):
    """Masked softmax attention; rows with nothing to attend to output zeros."""
    q, k, v = (np.asarray(a, dtype=float) for a in (q, k, v))
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2] or q.shape[:-2] != k.shape[:-2]:
        raise ShapeError(f"incompatible shapes q{q.shape} k{k.shape} v{v.shape}")
    nq, nk = q.shape[-2], k.shape[-2]
    if mask is None:
        mask = np.ones((nq, nk), dtype=bool)
    if mask.shape != (nq, nk):
        raise ShapeError(f"mask {mask.shape} does not cover ({nq}, {nk})")
    if qk_norm:
        q, k = _l2_normalize(q), _l2_normalize(k)
    scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])
    scores = np.where(mask, scores, -np.inf)
    row_max = scores.max(axis=-1, keepdims=True)
    live = np.isfinite(row_max)
    weights = np.where(mask, np.exp(scores - np.where(live, row_max, 0.0)), 0.0)
    denom = weights.sum(axis=-1, keepdims=True)
    weights = weights / np.where(denom == 0, 1.0, denom)
    return weights @ v


# --------------------------------------------------------------------------
# conditioning

def latent_groups(n_frames):
    """Frame index ranges per latent: the first frame alone, then groups of four."""
    groups = [(0, 1)]
    start = 1
    while start < n_frames:
        groups.append((start, min(start + TEMPORAL_GROUP, n_frames)))
        start += TEMPORAL_GROUP
    return groups


def group_actions(actions):
    actions = np.asarray(getattr(actions, "actions", actions), dtype=float)
    return np.stack([actions[a:b].mean(axis=0) for a, b in latent_groups(len(actions))])


def _lift(n_in, d_model, seed):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n_in, d_model)) / np.sqrt(n_in)


def encode_actions(seq, d_model, seed=0):
    """One embedding per latent: group-mean of the 13-slot actions, linearly lifted."""
    means = group_actions(seq)
    return means @ _lift(means.shape[1], d_model, seed)


def pose_features(positions, quats, n_freqs=4):
    vals = np.concatenate([np.asarray(positions, float), np.asarray(quats, float)], axis=1)
    freqs = 2.0 ** np.arange(n_freqs)
    ang = vals[:, :, None] * freqs
    return np.concatenate([vals, np.sin(ang).reshape(len(vals), -1),
                           np.cos(ang).reshape(len(vals), -1)], axis=1)


def encode_poses(traj, d_model, seed=1):
    """One embedding per latent from the absolute pose at the latent's last frame."""
    idx = [b - 1 for _, b in latent_groups(len(traj))]
    feats = pose_features(traj.positions[idx], traj.quats[idx])
    return feats @ _lift(feats.shape[1], d_model, seed)


@dataclass
class ConditioningEmbeddings:
    pose_embedding: np.ndarray = None     # (latents, d_model)
    action_embedding: np.ndarray = None   # (latents, d_model)

    def __post_init__(self):
        arrs = [a for a in (self.pose_embedding, self.action_embedding) if a is not None]
        for a in arrs:
            if not np.all(np.isfinite(a)):
                raise ValueError("conditioning embeddings must be finite")
        if len(arrs) == 2 and self.pose_embedding.shape != self.action_embedding.shape:
            raise ShapeError("pose and action embeddings must cover the same latents")


class Stage(str, enum.Enum):
    PRE_ATTENTION_QK = "pre-attention-qk"
    POST_ATTENTION = "post-attention"


def inject_conditioning(tensors, embeddings, stage, token_latent):
    """Add conditioning at one of the two injection points.

    ``pre-attention-qk``: ``tensors`` is ``(q, k, v)``; the pose embedding of
    each token's latent is added to q and k, and v is returned untouched
    (the same object).  ``post-attention``: ``tensors`` is the hidden state
    after attention and receives the action embedding.
    """
    try:
        stage = Stage(stage)
    except ValueError:
        raise ContractError(f"unknown injection stage {stage!r}; expected one of "
                            f"{[s.value for s in Stage]}") from None
    token_latent = np.asarray(token_latent)
    if stage is Stage.PRE_ATTENTION_QK:
        if embeddings.pose_embedding is None:
            raise ContractError("pre-attention-qk injection needs a pose embedding")
        if not (isinstance(tensors, (tuple, list)) and len(tensors) == 3):
            raise ContractError("pre-attention-qk injection takes a (q, k, v) triple")
        q, k, v = tensors
        e = embeddings.pose_embedding[token_latent]
        return q + e, k + e, v
    if embeddings.action_embedding is None:
        raise ContractError("post-attention injection needs an action embedding")
    if isinstance(tensors, (tuple, list)):
        raise ContractError("post-attention injection takes the attention output, not q/k/v")
    return tensors + embeddings.action_embedding[token_latent]


class ToyBlock:
    """One self-attention block with both conditioning pathways."""

    def __init__(self, config: ToyConfig, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.d_model
        self.wq, self.wk, self.wv, self.wo = (rng.normal(size=(d, d)) / np.sqrt(d) for _ in range(4))

    def project(self, x):
        return x @ self.wq, x @ self.wk, x @ self.wv

    def forward(self, x, token_latent, embeddings, mask):
        cfg = self.config
        token_latent = np.asarray(token_latent)
        q, k, v = self.project(x)
        pos = token_latent.astype(float)
        if cfg.pose_before_rope:
            q, k, v = inject_conditioning((q, k, v), embeddings, Stage.PRE_ATTENTION_QK, token_latent)
        qh = apply_rope(split_heads(q, cfg.n_heads), pos, cfg.rope_base)
        kh = apply_rope(split_heads(k, cfg.n_heads), pos, cfg.rope_base)
        vh = split_heads(v, cfg.n_heads)
        if not cfg.pose_before_rope:
            e = split_heads(embeddings.pose_embedding[token_latent], cfg.n_heads)
            qh, kh = qh + e, kh + e
        h = x + merge_heads(attend(qh, kh, vh, mask)) @ self.wo
        return inject_conditioning(h, embeddings, Stage.POST_ATTENTION, token_latent)


# --------------------------------------------------------------------------
# streaming

class StreamingAttention:
    """Block-by-block attention over a compressed KV cache.

    Each :meth:`step` takes one latent's projected ``q, k, v`` as
    ``(H, W, d_model)`` grids, attends over every cached latent plus itself,
    then stores the block's keys/values and advances the cache, pooling
    whichever latent leaves the window.
    """

    def __init__(self, config: ToyConfig, schedule: CompressionSchedule):
        self.config = config
        self.cache = StreamingCache(schedule, d_model=config.d_model)
        self.keys = []      # per latent, (h, w, d_model) after RoPE, pooled once in memory
        self.values = []

    def _heads(self, grid):
        return split_heads(grid.reshape(-1, self.config.d_model), self.config.n_heads)

    def _rope_grid(self, grid, position):
        cfg = self.config
        h = apply_rope(self._heads(grid), np.full(grid.shape[0] * grid.shape[1], float(position)),
                       cfg.rope_base)
        return merge_heads(h).reshape(grid.shape)

    def step(self, q, k, v):
        cfg = self.config
        q, k, v = (np.asarray(a, dtype=float) for a in (q, k, v))
        if not (q.shape == k.shape == v.shape and q.ndim == 3 and q.shape[2] == cfg.d_model):
            raise ShapeError(f"expected matching (H, W, {cfg.d_model}) blocks, got {q.shape}, {k.shape}, {v.shape}")
        if self.cache.descriptors and self.cache.descriptors[0].source_grid != q.shape[:2]:
            raise ShapeError(f"block grid {q.shape[:2]} differs from earlier blocks")
        idx = len(self.cache)
        qr = self._rope_grid(q, idx)
        kr = self._rope_grid(k, idx)
        keys = self.keys + [kr]
        values = self.values + [v]
        counts = [g.shape[0] * g.shape[1] for g in keys]
        mask = build_block_causal_mask(counts)[-counts[-1]:]
        k_all = self._heads(np.concatenate([g.reshape(-1, cfg.d_model) for g in keys]))
        v_all = self._heads(np.concatenate([g.reshape(-1, cfg.d_model) for g in values]))
        out = attend(self._heads(qr), k_all, v_all, mask)

        self.keys.append(kr)
        self.values.append(v)
        report = self.cache.advance(q.shape[:2])
        if report.compressed_index is not None:
            j = report.compressed_index
            self.keys[j] = compress_token_grid(self.keys[j], report.factor)
            self.values[j] = compress_token_grid(self.values[j], report.factor)
        return merge_heads(out).reshape(q.shape)
