"""Dataset curation: pose-based filter scores, time-reverse augmentation,
action balancing, caption selection and per-clip metadata."""
from __future__ import annotations

import bisect
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .actions import N_SLOTS, SLOT_INDEX, SLOTS, extract_actions
from .errors import RelicError
from .trajectory import relative_motion_batch, rotation_angle

SEGMENT_SECONDS = 5.0


@dataclass(frozen=True)
class FilterScores:
    jitter_score: float
    velocity_cv: float
    max_angular_speed: float   # rad/s
    degenerate: bool = False


def filter_scores(traj):
    """Smoothness heuristics for one trajectory.

    ``jitter_score`` is the RMS norm of second differences of position over
    the mean nonzero step length; ``velocity_cv`` is stddev/mean of nonzero
    step lengths; ``max_angular_speed`` is the largest per-frame rotation
    angle times the frame rate.  A clip without any motion scores zero and
    is flagged degenerate.
    """
    P = traj.positions
    steps = np.linalg.norm(np.diff(P, axis=0), axis=1)
    _, dR = relative_motion_batch(P, traj.rotations)
    angles = rotation_angle(dR)
    moving = steps > 0
    if not moving.any() and not np.any(angles > 0):
        return FilterScores(0.0, 0.0, 0.0, degenerate=True)
    max_ang = float(angles.max() * traj.frame_rate)
    if not moving.any():
        return FilterScores(0.0, 0.0, max_ang)
    d_bar = steps[moving].mean()
    second = P[2:] - 2 * P[1:-1] + P[:-2]
    jitter = math.sqrt(np.mean(np.sum(second ** 2, axis=1))) / d_bar if len(second) else 0.0
    cv = float(steps[moving].std() / d_bar)
    return FilterScores(float(jitter), cv, max_ang)


# --------------------------------------------------------------------------
# time-reverse augmentation

def pivot_range(T):
    """Inclusive range of admissible pivots for a clip of ``T`` frames.

    The reversed tail ends at frame ``2*pivot - T``, which must be >= 1, so
    for even ``T`` the lower end is ``T/2 + 1`` rather than ``T/2``.
    """
    return T // 2 + 1, T


def palindrome_indices(T, pivot):
    """1-based frame indices ``1..pivot`` followed by ``pivot-1`` down to ``2*pivot - T``."""
    lo, hi = pivot_range(T)
    if not lo <= pivot <= hi:
        raise ValueError(f"pivot {pivot} outside [{lo}, {hi}] for T={T}")
    forward = np.arange(1, pivot + 1)
    back = np.arange(pivot - 1, 2 * pivot - T - 1, -1)
    return np.concatenate([forward, back])


def time_reverse_augment(T, rng_seed=None, pivot=None):
    """Palindrome-style index sequence of length ``T`` with a random pivot.

    ``rng_seed`` may be an int, ``None`` or a ``numpy.random.Generator``.
    The pivot frame appears once.
    """
    if T < 4:
        raise ValueError(f"clip too short for time-reverse augmentation: T={T} < 4")
    if pivot is None:
        rng = np.random.default_rng(rng_seed)
        lo, hi = pivot_range(T)
        pivot = int(rng.integers(lo, hi + 1))
    return palindrome_indices(T, pivot)


# --------------------------------------------------------------------------
# clip metadata

@dataclass
class ClipMetadata:
    clip_id: str
    duration: float
    action_histogram: list = field(default_factory=lambda: [0] * N_SLOTS)
    jitter_score: float = 0.0
    velocity_cv: float = 0.0
    caption_segments: list = field(default_factory=list)

    def __post_init__(self):
        if not self.duration > 0:
            raise RelicError(f"clip {self.clip_id}: duration must be positive")
        if len(self.action_histogram) != N_SLOTS or any(c < 0 for c in self.action_histogram):
            raise RelicError(f"clip {self.clip_id}: histogram needs 13 non-negative counts")
        if self.velocity_cv < 0:
            raise RelicError(f"clip {self.clip_id}: velocity_cv must be >= 0")
        self.caption_segments = [(float(s), str(t)) for s, t in self.caption_segments]

    def to_json(self):
        d = asdict(self)
        d["caption_segments"] = [list(s) for s in self.caption_segments]
        return json.dumps(d)

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))


def action_histogram(seq):
    """Number of frames in which each slot is active."""
    return [int(c) for c in np.count_nonzero(seq.actions > 0, axis=0)]


def clip_metadata(traj, captions=(), thresholds=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        seq = extract_actions(traj, thresholds)
    scores = filter_scores(traj)
    return ClipMetadata(traj.clip_id, traj.duration, action_histogram(seq),
                        scores.jitter_score, scores.velocity_cv, list(captions))


def read_manifest(path):
    with open(path) as fh:
        return [ClipMetadata.from_json(ln) for ln in fh if ln.strip()]


def write_manifest(clips, path):
    with open(path, "w") as fh:
        for c in clips:
            fh.write(c.to_json() + "\n")


# --------------------------------------------------------------------------
# balancing

@dataclass
class BalanceResult:
    selected: list
    achieved: np.ndarray
    l1: float


def _as_target(target):
    if target is None:
        return np.full(N_SLOTS, 1.0 / N_SLOTS)
    if isinstance(target, dict):
        vec = np.zeros(N_SLOTS)
        for name, p in target.items():
            vec[SLOT_INDEX[name]] = p
    else:
        vec = np.asarray(target, dtype=float)
    if vec.shape != (N_SLOTS,) or np.any(vec < 0) or not math.isclose(vec.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("target must be 13 non-negative proportions summing to 1")
    return vec


def _l1(counts, target):
    total = counts.sum()
    if total == 0:
        return float(np.abs(target).sum())
    return float(np.abs(counts / total - target).sum())


def _l1_rows(counts, target):
    totals = counts.sum(axis=1, keepdims=True)
    props = counts / np.where(totals == 0, 1.0, totals)
    return np.abs(props - target).sum(axis=1)


def _spread(counts, target):
    """max/min proportion over slots the target asks for (inf if one is empty)."""
    c = counts[target > 0]
    return np.inf if c.min() == 0 else c.max() / c.min()


def balance_sample(clips, target=None, rng_seed=None):
    """Greedy subset whose pooled action histogram approaches ``target``.

    Clips are ordered greedily, each step adding the clip that most lowers
    the L1 distance between the normalised cumulative histogram and the
    target.  The returned subset is the lowest-L1 prefix of that order whose
    max/min slot spread is no worse than the whole pool's, so the result is
    never less balanced than doing nothing.  The seed only fixes the order
    in which tied candidates are considered.
    """
    if not clips:
        raise ValueError("balance_sample needs at least one clip")
    target = _as_target(target)
    hists = np.array([c.action_histogram for c in clips], dtype=float)
    remaining = np.random.default_rng(rng_seed).permutation(len(clips))
    pool_spread = _spread(hists.sum(axis=0), target)
    order = []
    counts = np.zeros(N_SLOTS)
    best, best_k = math.inf, len(clips)
    while len(remaining):
        scores = _l1_rows(counts + hists[remaining], target)
        j = int(np.argmin(scores))
        order.append(int(remaining[j]))
        counts += hists[remaining[j]]
        remaining = np.delete(remaining, j)
        if scores[j] < best and _spread(counts, target) <= pool_spread:
            best, best_k = float(scores[j]), len(order)
    chosen = sorted(order[:best_k])
    counts = hists[chosen].sum(axis=0)
    total = counts.sum()
    achieved = counts / total if total else counts
    return BalanceResult([clips[i] for i in chosen], achieved, _l1(counts, target))


# --------------------------------------------------------------------------
# captions

def select_caption(segments, sample_start, segment_length=SEGMENT_SECONDS):
    """Caption of the segment that contains ``sample_start`` (seconds)."""
    if not segments:
        raise ValueError("no caption segments")
    starts = [float(s) for s, _ in segments]
    end = starts[-1] + segment_length
    if sample_start < starts[0] or sample_start >= end:
        raise ValueError(f"sample start {sample_start}s outside caption coverage "
                         f"[{starts[0]}, {end})")
    i = bisect.bisect_right(starts, sample_start) - 1
    return segments[i][1]


def histogram_rows(clips):
    """``(slot name, total count)`` rows across a manifest."""
    total = np.zeros(N_SLOTS, dtype=int)
    for c in clips:
        total += np.asarray(c.action_histogram, dtype=int)
    return list(zip(SLOTS, total.tolist()))


def duration_rows(clips, bin_seconds=15.0):
    """``(bin start seconds, count)`` rows of the clip-duration distribution."""
    if not clips:
        return []
    bins = np.floor(np.array([c.duration for c in clips]) / bin_seconds).astype(int)
    return [(float(b * bin_seconds), int(n)) for b, n in zip(*np.unique(bins, return_counts=True))]
