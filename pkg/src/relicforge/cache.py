"""Streaming KV-cache bookkeeping: a rolling uncompressed window plus a
spatially compressed long-horizon memory.

Latents leaving the window are pooled by a per-axis factor taken from a
recurrent schedule, ``s_i = factors[i % len(factors)]``, so a latent of
``H x W`` tokens keeps ``ceil(H/s) * ceil(W/s)`` of them.  Nothing is ever
evicted.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

DEFAULT_SCHEDULE = (1, 4, 2, 4, 4, 4, 2, 4, 4, 2, 4, 4, 4, 2, 4, 4, 2, 4)
DEFAULT_WINDOW = 9
DEFAULT_GRID = (30, 52)        # 480x832 frames, 8x VAE, 2x2 patches
DEFAULT_D_MODEL = 5120
ALLOWED_FACTORS = (1, 2, 4)


@dataclass(frozen=True)
class CompressionSchedule:
    factors: tuple = DEFAULT_SCHEDULE
    window: int = DEFAULT_WINDOW

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(int(f) for f in self.factors))
        if not self.factors:
            raise ValueError("compression schedule must not be empty")
        bad = [f for f in self.factors if f not in ALLOWED_FACTORS]
        if bad:
            raise ValueError(f"compression factors must be in {ALLOWED_FACTORS}, got {bad}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")

    def factor(self, index):
        return self.factors[index % len(self.factors)]


class LatentState(enum.Enum):
    WINDOW = "window-uncompressed"
    MEMORY = "memory"


def pooled_grid(grid, factor):
    h, w = grid
    return -(-h // factor), -(-w // factor)


@dataclass
class LatentDescriptor:
    index: int
    grid: tuple                 # current (possibly pooled) token grid
    state: LatentState = LatentState.WINDOW
    factor: int = 1
    bytes_per_element: int = 2
    source_grid: tuple = None

    def __post_init__(self):
        if self.source_grid is None:
            self.source_grid = self.grid
        if min(self.grid) < 1:
            raise ShapeError(f"grid dims must be >= 1, got {self.grid}")
        if self.state is LatentState.WINDOW and self.factor != 1:
            raise ValueError("window latents are uncompressed")

    @property
    def tokens(self):
        return self.grid[0] * self.grid[1]


@dataclass
class TransitionReport:
    step: int
    appended_index: int
    compressed_index: int = None
    factor: int = None
    tokens_before: int = None
    tokens_after: int = None


@dataclass
class StreamingCache:
    """Single-writer cache state; ``advance`` is the only mutator."""
    schedule: CompressionSchedule = field(default_factory=CompressionSchedule)
    d_model: int = DEFAULT_D_MODEL
    bytes_per_element: int = 2
    descriptors: list = field(default_factory=list)
    tokens: int = 0
    bytes: int = 0

    def __post_init__(self):
        if self.bytes_per_element not in (1, 2):
            raise ValueError("bytes_per_element must be 1 (FP8) or 2 (BF16)")

    def __len__(self):
        return len(self.descriptors)

    def _token_bytes(self, tokens):
        return tokens * 2 * self.d_model * self.bytes_per_element

    @property
    def window(self):
        return [d for d in self.descriptors if d.state is LatentState.WINDOW]

    @property
    def memory(self):
        return [d for d in self.descriptors if d.state is LatentState.MEMORY]

    def advance(self, new_grid):
        """Append one latent frame; compress whatever falls out of the window."""
        new_grid = tuple(int(v) for v in new_grid)
        if len(new_grid) != 2 or min(new_grid) < 1:
            raise ShapeError(f"grid must be two positive ints, got {new_grid}")
        if self.descriptors and self.descriptors[0].source_grid != new_grid:
            raise ShapeError(f"grid {new_grid} differs from earlier latents "
                             f"{self.descriptors[0].source_grid}")
        index = len(self.descriptors)
        desc = LatentDescriptor(index, new_grid, bytes_per_element=self.bytes_per_element)
        self.descriptors.append(desc)
        self.tokens += desc.tokens
        self.bytes += self._token_bytes(desc.tokens)
        report = TransitionReport(step=index, appended_index=index)

        w = self.schedule.window
        if index >= w:
            old = self.descriptors[index - w]
            s = self.schedule.factor(old.index)
            before = old.tokens
            old.state = LatentState.MEMORY
            old.factor = s
            old.grid = pooled_grid(old.source_grid, s)
            self.tokens += old.tokens - before
            self.bytes += self._token_bytes(old.tokens - before)
            report.compressed_index = old.index
            report.factor = s
            report.tokens_before = before
            report.tokens_after = old.tokens
        return report

    def recount(self):
        """Token and byte totals recomputed from the descriptors."""
        tokens = sum(d.tokens for d in self.descriptors)
        return tokens, self._token_bytes(tokens)

    def check(self):
        """Assert every structural invariant; used by tests and ``simulate``."""
        tokens, nbytes = self.recount()
        assert (tokens, nbytes) == (self.tokens, self.bytes), "running counters drifted"
        n = len(self.descriptors)
        n_window = min(self.schedule.window, n)
        for d in self.descriptors[: n - n_window]:
            assert d.state is LatentState.MEMORY and d.factor == self.schedule.factor(d.index)
            assert d.grid == pooled_grid(d.source_grid, d.factor)
        for d in self.descriptors[n - n_window:]:
            assert d.state is LatentState.WINDOW and d.factor == 1 and d.grid == d.source_grid


def account(cache, query_tokens=None):
    """``(tokens, bytes, attention_flops_per_step)`` for the current cache.

    Bytes count K and V at ``bytes_per_element``; the FLOP model is
    ``4 * d_model * query_tokens * kv_tokens`` with the query defaulting to
    one uncompressed latent.
    """
    if not cache.descriptors:
        return 0, 0, 0
    if query_tokens is None:
        query_tokens = cache.descriptors[-1].source_grid[0] * cache.descriptors[-1].source_grid[1]
    flops = 4 * cache.d_model * query_tokens * cache.tokens
    return cache.tokens, cache.bytes, flops


def compress_token_grid(grid, factor):
    """Area-average pooling of an ``(H, W, D)`` token grid by ``factor`` per axis.

    Boundary windows are truncated, so the output is ``(ceil(H/s), ceil(W/s), D)``
    and each token is the mean of the inputs it covers.
    """
    if factor not in ALLOWED_FACTORS:
        raise ValueError(f"factor must be in {ALLOWED_FACTORS}, got {factor}")
    grid = np.asarray(grid)
    if factor == 1:
        return grid
    h, w = grid.shape[:2]
    rows = np.arange(0, h, factor)
    cols = np.arange(0, w, factor)
    summed = np.add.reduceat(np.add.reduceat(grid, rows, axis=0), cols, axis=1)
    nr = np.minimum(rows + factor, h) - rows
    nc = np.minimum(cols + factor, w) - cols
    counts = (nr[:, None] * nc[None, :]).reshape(len(rows), len(cols), *([1] * (grid.ndim - 2)))
    return summed / counts


# --------------------------------------------------------------------------
# simulation

@dataclass(frozen=True)
class CacheConfig:
    factors: tuple = DEFAULT_SCHEDULE
    window: int = DEFAULT_WINDOW
    grid: tuple = DEFAULT_GRID
    bytes_per_element: int = 2
    d_model: int = DEFAULT_D_MODEL

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in ("factors", "window", "grid", "bytes_per_element", "d_model") if k in d}
        for k in ("factors", "grid"):
            if k in known:
                known[k] = tuple(known[k])
        return cls(**known)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def schedule(self):
        return CompressionSchedule(self.factors, self.window)


@dataclass
class SimulationRow:
    step: int
    tokens: int
    bytes: int
    flops: int
    compressed_index: int
    factor: int
    uncompressed_tokens: int

    @property
    def ratio(self):
        return self.uncompressed_tokens / self.tokens


def simulate(config: CacheConfig, steps):
    """Advance a fresh cache ``steps`` times and record the accounting per step."""
    cache = StreamingCache(config.schedule(), d_model=config.d_model,
                           bytes_per_element=config.bytes_per_element)
    per_latent = config.grid[0] * config.grid[1]
    rows = []
    for _ in range(steps):
        rep = cache.advance(config.grid)
        tokens, nbytes, flops = account(cache)
        rows.append(SimulationRow(rep.step, tokens, nbytes, flops, rep.compressed_index,
                                  rep.factor, per_latent * len(cache)))
    cache.check()
    return rows, cache

