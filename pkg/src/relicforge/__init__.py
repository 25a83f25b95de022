"""Desk-scale machinery for an action-conditioned, streaming video world model."""

__version__ = "0.1.0"

from .actions import (  # noqa: E402
    ActionSequence,
    StaticThresholds,
    extract_actions,
    integrate_poses,
    multihot_from_keys,
)
from .cache import CompressionSchedule, StreamingCache, account, compress_token_grid  # noqa: E402
from .evaluation import rpe, umeyama_sim3  # noqa: E402
from .masks import build_block_causal_mask, build_hybrid_forcing_mask  # noqa: E402
from .trajectory import CameraPose, Trajectory, euler_decompose, parse_annotation, relative_pose  # noqa: E402

__all__ = [
    "ActionSequence", "StaticThresholds", "extract_actions", "integrate_poses", "multihot_from_keys",
    "CompressionSchedule", "StreamingCache", "account", "compress_token_grid",
    "rpe", "umeyama_sim3", "build_block_causal_mask", "build_hybrid_forcing_mask",
    "CameraPose", "Trajectory", "euler_decompose", "parse_annotation", "relative_pose",
]
