"""Replayed back-propagation for distribution-matching distillation on a toy generator.

The generator produces ``L`` blocks autoregressively,
``x_l = a * ctx_l + b * eps_l + c`` (elementwise), where ``ctx_1 = 0`` and
``ctx_l`` is the gradient-stopped previous block.  Scores are analytic
Gaussians, so the distillation gradient
``sum_l -ds_l . dx_l/dtheta`` can be computed two ways and compared:

* :func:`replay_accumulate` re-runs one block at a time on a fresh tape,
  back-propagates that block's cached score difference, frees the tape and
  moves on;
* :func:`monolithic_gradient` records the whole rollout on one tape and
  back-propagates the surrogate loss once.

Both share the stop-gradient on the context, so they agree to rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ShapeError

TIMESTEPS = (0.0, 0.25, 0.5, 0.75)


# --------------------------------------------------------------------------
# a minimal reverse-mode tape for elementwise vector ops

class Tape:
    def __init__(self):
        self.nodes = []
        self.peak = 0

    def _push(self, node):
        self.nodes.append(node)
        self.peak = max(self.peak, len(self.nodes))
        return node

    def leaf(self, value):
        return self._push(Node(self, np.asarray(value, dtype=float), ()))

    def constant(self, value):
        return Node(None, np.asarray(value, dtype=float), ())

    def backward(self, output, seed):
        grads = {id(output): np.asarray(seed, dtype=float)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            for parent, local in node.parents:
                contrib = local(g)
                key = id(parent)
                grads[key] = contrib if key not in grads else grads[key] + contrib

    def release(self):
        self.nodes.clear()


class Node:
    __slots__ = ("tape", "value", "parents", "grad")

    def __init__(self, tape, value, parents):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.grad = None

    def _tracked(self):
        return self.tape is not None

    def __mul__(self, other):
        tape = self.tape or other.tape
        parents = []
        if self._tracked():
            parents.append((self, lambda g, o=other.value: g * o))
        if other._tracked():
            parents.append((other, lambda g, s=self.value: g * s))
        node = Node(tape, self.value * other.value, tuple(parents))
        return tape._push(node) if tape and parents else node

    def __add__(self, other):
        tape = self.tape or other.tape
        parents = []
        if self._tracked():
            parents.append((self, lambda g: g))
        if other._tracked():
            parents.append((other, lambda g: g))
        node = Node(tape, self.value + other.value, tuple(parents))
        return tape._push(node) if tape and parents else node


# --------------------------------------------------------------------------
# generator and scores

@dataclass
class ToyGenerator:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.a, self.b, self.c = (np.atleast_1d(np.asarray(v, dtype=float)).copy()
                                  for v in (self.a, self.b, self.c))
        if not (self.a.shape == self.b.shape == self.c.shape):
            raise ShapeError("generator parameters must share one shape")
        if not all(np.all(np.isfinite(v)) for v in (self.a, self.b, self.c)):
            raise ValueError("generator parameters must be finite")

    @property
    def theta(self):
        return np.concatenate([self.a, self.b, self.c])

    @theta.setter
    def theta(self, value):
        self.a, self.b, self.c = np.split(np.asarray(value, dtype=float), 3)

    @property
    def dim(self):
        return len(self.a)

    def block(self, ctx, eps):
        return self.a * ctx + self.b * eps + self.c


def gaussian_score(x, mu, sigma):
    """Score ``-(x - mu) / sigma**2`` of a normal law."""
    if not np.all(np.asarray(sigma) > 0):
        raise ValueError("sigma must be positive")
    return -(np.asarray(x, dtype=float) - mu) / np.asarray(sigma, dtype=float) ** 2


def alpha(u):
    """Signal scale of the variance-preserving forward process at ``u`` in [0, 1]."""
    return math.cos(0.5 * math.pi * u)


def forward_diffuse(x, u):
    return np.asarray(x, dtype=float) * alpha(u)


def self_rollout(G: ToyGenerator, noises):
    """Generate every block with no gradient tracking."""
    out = []
    ctx = np.zeros(G.dim)
    for eps in noises:
        x = G.block(ctx, np.asarray(eps, dtype=float))
        out.append(x)
        ctx = x
    return out


def score_diff_maps(samples, real, fake, u=0.0):
    """Per-block ``real(psi(x, u)) - fake(psi(x, u))``."""
    diffs = []
    for x in samples:
        z = forward_diffuse(x, u)
        diffs.append(np.asarray(real(z), dtype=float) - np.asarray(fake(z), dtype=float))
    return diffs


# --------------------------------------------------------------------------
# gradients

def _contexts(G, noises):
    samples = self_rollout(G, noises)
    return [np.zeros(G.dim)] + samples[:-1]


def _check(noises, diff):
    if len(noises) != len(diff):
        raise ShapeError(f"{len(noises)} noise blocks but {len(diff)} score-difference maps")


def replay_accumulate(G, noises, diff, stats=None):
    """Block-wise replay of the distillation gradient; returns ``d/dtheta`` as (3*dim,).

    Contexts come from a gradient-free rollout; each block is recomputed on
    its own tape, seeded with ``-diff[l]`` and released before the next.
    If ``stats`` is a dict it receives ``peak_tape`` (largest tape length
    seen) and ``blocks``.
    """
    _check(noises, diff)
    ctxs = _contexts(G, noises)
    grad = np.zeros(3 * G.dim)
    peak = 0
    for ctx, eps, ds in zip(ctxs, noises, diff):
        tape = Tape()
        a, b, c = tape.leaf(G.a), tape.leaf(G.b), tape.leaf(G.c)
        x = a * tape.constant(ctx) + b * tape.constant(eps) + c
        tape.backward(x, -np.asarray(ds, dtype=float))
        grad += np.concatenate([p.grad if p.grad is not None else np.zeros(G.dim) for p in (a, b, c)])
        peak = max(peak, tape.peak)
        tape.release()
    if stats is not None:
        stats.update(peak_tape=peak, blocks=len(noises))
    return grad


def monolithic_gradient(G, noises, diff, stats=None):
    """The same gradient from one tape over the full rollout."""
    _check(noises, diff)
    tape = Tape()
    a, b, c = tape.leaf(G.a), tape.leaf(G.b), tape.leaf(G.c)
    ctx = tape.constant(np.zeros(G.dim))
    loss = None
    for eps, ds in zip(noises, diff):
        x = a * ctx + b * tape.constant(eps) + c
        term = x * tape.constant(-np.asarray(ds, dtype=float))
        loss = term if loss is None else loss + term
        ctx = tape.constant(x.value)
    if loss is not None:
        tape.backward(loss, np.ones(G.dim))
    if stats is not None:
        stats.update(peak_tape=tape.peak, blocks=len(noises))
    return np.concatenate([p.grad if p.grad is not None else np.zeros(G.dim) for p in (a, b, c)])


def surrogate_loss(G, noises, diff):
    """``sum_l -diff_l . x_l(theta)`` with contexts frozen at the current rollout."""
    total = 0.0
    for ctx, eps, ds in zip(_contexts(G, noises), noises, diff):
        total += float(np.dot(-np.asarray(ds), G.block(ctx, np.asarray(eps))))
    return total


# --------------------------------------------------------------------------
# demo

@dataclass
class DemoStep:
    step: int
    theta_c: float
    sample_mean: float
    grad_norm: float


def dmd_fit_demo(target_mu, steps=500, lr=0.1, blocks=4, dim=16, seed=0, u=0.0,
                 tol=None, generator=None, train=("c",)):
    """Fit the toy generator to ``N(target_mu, 1)`` with replayed DMD gradients.

    The noise is drawn once from ``seed`` and reused, the fake score is the
    unit-variance Gaussian centred on the current sample mean, and the
    parameter groups named in ``train`` (default: the bias only) take plain
    gradient steps.  Training ``a`` as well couples the blocks through the
    context and overshoots at lr=0.1.  Returns one :class:`DemoStep`
    per step (the initial state included), ``theta_c`` being the mean bias.
    Stops early once the sample mean is within ``tol`` of the target, if
    given.  Raises :class:`DivergenceError` when ``|theta_c|`` exceeds 1e6.
    """
    rng = np.random.default_rng(seed)
    noises = [rng.standard_normal(dim) for _ in range(blocks)]
    G = generator or ToyGenerator(np.zeros(dim), np.ones(dim), np.zeros(dim))
    real = lambda z: gaussian_score(z, target_mu, 1.0)  # noqa: E731
    mask = np.concatenate([np.full(G.dim, name in train) for name in "abc"]).astype(float)
    history = []
    for step in range(steps + 1):
        samples = self_rollout(G, noises)
        mean = float(np.mean(samples))
        fake = lambda z, m=mean: gaussian_score(z, m, 1.0)  # noqa: E731
        grad = replay_accumulate(G, noises, score_diff_maps(samples, real, fake, u))
        theta_c = float(np.mean(G.c))
        history.append(DemoStep(step, theta_c, mean, float(np.linalg.norm(grad))))
        if abs(theta_c) > 1e6 or not math.isfinite(theta_c):
            raise DivergenceError(f"theta_c diverged to {theta_c:.3g} at step {step} (lr={lr})")
        if step == steps or (tol is not None and abs(mean - target_mu) < tol):
            break
        G.theta = G.theta - lr * mask * grad
    return history
