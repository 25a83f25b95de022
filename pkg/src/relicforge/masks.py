"""Boolean attention masks over token blocks (``True`` = may attend)."""
from __future__ import annotations

import numpy as np


def _block_ids(block_token_counts):
    counts = [int(c) for c in block_token_counts]
    if not counts:
        raise ValueError("need at least one block")
    if any(c < 1 for c in counts):
        raise ValueError(f"block token counts must be positive, got {counts}")
    return np.repeat(np.arange(len(counts)), counts)


def build_block_causal_mask(block_token_counts):
    """Tokens of block ``i`` attend to every token of blocks ``j <= i``."""
    ids = _block_ids(block_token_counts)
    return ids[:, None] >= ids[None, :]


def build_hybrid_forcing_mask(B, K, block_token_counts):
    """Clean prefix of ``B - K`` blocks plus a noisy suffix of ``K`` blocks.

    Prefix rows attend bidirectionally within the prefix only; suffix rows
    attend to the whole prefix and block-causally within the suffix.
    """
    if not 0 <= K <= B:
        raise ValueError(f"need 0 <= K <= B, got K={K}, B={B}")
    if len(block_token_counts) != B:
        raise ValueError(f"expected {B} block sizes, got {len(block_token_counts)}")
    ids = _block_ids(block_token_counts)
    clean = ids < B - K
    causal = ids[:, None] >= ids[None, :]
    prefix_rows = clean[:, None] & clean[None, :]
    suffix_rows = ~clean[:, None] & (clean[None, :] | causal)
    return prefix_rows | suffix_rows


def render_text(mask):
    return "\n".join("".join("#" if v else "." for v in row) for row in mask)


def render_csv(mask):
    return "\n".join(",".join("1" if v else "0" for v in row) for row in mask) + "\n"
