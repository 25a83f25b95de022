"""``relicforge`` command line: thin wrappers over the library modules.

Exit codes: 0 success, 1 validation error, 2 I/O error, 64 usage error.
Data goes to ``--out`` (or stdout); warnings go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .actions import SLOTS, StaticThresholds, dumps_actions, extract_actions, integrate_poses, loads_actions
from .cache import CacheConfig, simulate
from .curation import (
    balance_sample,
    clip_metadata,
    duration_rows,
    histogram_rows,
    read_manifest,
    time_reverse_augment,
)
from .distill import DivergenceError, dmd_fit_demo
from .evaluation import rpe
from .masks import build_block_causal_mask, build_hybrid_forcing_mask, render_csv, render_text
from .trajectory import CameraPose, load_trajectory, serialize_trajectory

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_USAGE = 0, 1, 2, 64


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _UsageError(message)


def _threads():
    try:
        return max(1, int(os.environ.get("RELICFORGE_THREADS", "1")))
    except ValueError:
        return 1


def _fmt(x):
    x = float(x)
    if abs(x) < 1e-12:
        return "0"
    return format(x, ".10g")


def _require_inputs(*paths):
    for p in paths:
        if p is not None and not os.path.isfile(p):
            raise FileNotFoundError(f"input file not found: {p}")


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# --------------------------------------------------------------------------
# subcommands

def cmd_extract_actions(args):
    _require_inputs(args.input)
    traj = load_trajectory(args.input)
    thresholds = StaticThresholds(args.trans_threshold, np.radians(args.rot_threshold_deg))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        seq = extract_actions(traj, thresholds)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    _emit(dumps_actions(seq, args.gamma), args.out)


def cmd_integrate(args):
    _require_inputs(args.input, args.initial)
    with open(args.input) as fh:
        seq, header_gamma = loads_actions(fh.read())
    gamma = args.gamma if args.gamma is not None else header_gamma
    initial = load_trajectory(args.initial)[0] if args.initial else CameraPose.identity()
    traj = integrate_poses(seq, gamma, initial)
    data = serialize_trajectory(traj)
    if args.out is None:
        sys.stdout.write(data.decode() + "\n")
    else:
        with open(args.out, "wb") as fh:
            fh.write(data)


def cmd_augment(args):
    rng = np.random.default_rng(args.seed)
    lines = []
    for _ in range(args.count):
        idx = time_reverse_augment(args.length, rng)
        lines.append(json.dumps({"pivot": int(idx.max()), "indices": idx.tolist()}))
    _emit("\n".join(lines) + "\n", args.out)


def _metadata_for(paths):
    def one(path):
        return clip_metadata(load_trajectory(path))

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        clips = list(pool.map(one, paths))
    return sorted(clips, key=lambda c: c.clip_id)


def cmd_stats(args):
    _require_inputs(args.manifest, *(args.traj or []))
    if args.manifest:
        clips = read_manifest(args.manifest)
    elif args.traj:
        clips = _metadata_for(args.traj)
    else:
        raise _UsageError("stats needs --manifest or --traj")
    clips = sorted(clips, key=lambda c: c.clip_id)
    _emit(_csv(["bin", "count"], histogram_rows(clips)), args.out)
    if args.durations:
        _emit(_csv(["bin", "count"], duration_rows(clips, args.duration_bin)), args.durations)
    if args.emit_manifest:
        _emit("".join(c.to_json() + "\n" for c in clips), args.emit_manifest)


def cmd_balance(args):
    _require_inputs(args.manifest, args.target)
    clips = sorted(read_manifest(args.manifest), key=lambda c: c.clip_id)
    target = None
    if args.target:
        with open(args.target) as fh:
            target = json.load(fh)
    result = balance_sample(clips, target, args.seed)
    _emit("".join(c.to_json() + "\n" for c in result.selected), args.out)
    rows = [(name, _fmt(p)) for name, p in zip(SLOTS, result.achieved)]
    _emit(_csv(["slot", "proportion"], rows), args.report)


def cmd_simulate_cache(args):
    _require_inputs(args.config)
    config = CacheConfig.load(args.config) if args.config else CacheConfig()
    rows, _ = simulate(config, args.steps)
    header = ["step", "tokens", "bytes", "flops", "compressed_index", "factor",
              "uncompressed_tokens", "ratio"]
    body = [(r.step, r.tokens, r.bytes, r.flops,
             "" if r.compressed_index is None else r.compressed_index,
             "" if r.factor is None else r.factor,
             r.uncompressed_tokens, f"{r.ratio:.6f}") for r in rows]
    _emit(_csv(header, body), args.out)


def cmd_masks(args):
    try:
        blocks = [int(v) for v in args.blocks.split(",")]
    except ValueError:
        raise _UsageError(f"--blocks must be comma-separated integers, got {args.blocks!r}") from None
    if args.kind == "block-causal":
        mask = build_block_causal_mask(blocks)
    else:
        noisy = len(blocks) if args.noisy is None else args.noisy
        mask = build_hybrid_forcing_mask(len(blocks), noisy, blocks)
    text = render_text(mask) + "\n" if args.format == "text" else render_csv(mask)
    _emit(text, args.out)


def cmd_distill_demo(args):
    history = dmd_fit_demo(args.target_mu, steps=args.steps, lr=args.lr, blocks=args.blocks,
                           dim=args.dim, seed=args.seed)
    rows = [(h.step, _fmt(h.theta_c), _fmt(h.sample_mean), _fmt(h.grad_norm)) for h in history]
    _emit(_csv(["step", "theta_c", "sample_mean", "grad_norm"], rows), args.out)


def cmd_eval_rpe(args):
    _require_inputs(args.reference, args.estimate)
    report = rpe(load_trajectory(args.reference), load_trajectory(args.estimate),
                 align=not args.no_align)
    line = " ".join(_fmt(v) for v in (report.rpe_trans, report.rpe_rot, report.scale,
                                       report.residual_rms))
    _emit(line + "\n", args.out)


# --------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="relicforge", description="Camera-action, cache and distillation toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("extract-actions", help="trajectory document -> per-frame action labels (JSONL)")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out")
    s.add_argument("--trans-threshold", type=float, default=StaticThresholds.translation,
                   help="static threshold on normalised displacement (default %(default)s)")
    s.add_argument("--rot-threshold-deg", type=float, default=0.1,
                   help="static threshold on per-frame rotation, degrees (default %(default)s)")
    s.add_argument("--gamma", type=float, help="gamma recorded in the header (default: mean displacement)")
    s.set_defaults(func=cmd_extract_actions)

    s = sub.add_parser("integrate", help="action labels (JSONL) -> trajectory document")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out")
    s.add_argument("--gamma", type=float, help="scene units per unit action (default: header gamma)")
    s.add_argument("--initial", help="trajectory document whose first pose starts the integration")
    s.set_defaults(func=cmd_integrate)

    s = sub.add_parser("augment", help="sample time-reverse (palindrome) index sequences")
    s.add_argument("--length", type=int, required=True)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("stats", help="action / duration histograms as CSV (bin,count)")
    s.add_argument("--manifest", help="clip metadata manifest (JSONL)")
    s.add_argument("--traj", nargs="+", help="trajectory documents to summarise")
    s.add_argument("--out")
    s.add_argument("--durations", help="also write the duration histogram here")
    s.add_argument("--duration-bin", type=float, default=15.0)
    s.add_argument("--emit-manifest", help="write the computed clip manifest here")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("balance", help="greedy action-balanced clip subset")
    s.add_argument("--manifest", required=True)
    s.add_argument("--target", help="JSON list of 13 proportions or {slot: proportion}; default uniform")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--report", help="write the achieved distribution (CSV) here; default stdout")
    s.set_defaults(func=cmd_balance)

    s = sub.add_parser("simulate-cache", help="per-step token/byte/FLOP accounting of the streaming cache")
    s.add_argument("--config", help="JSON with factors, window, grid, bytes_per_element[, d_model]")
    s.add_argument("--steps", type=int, default=80)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate_cache)

    s = sub.add_parser("masks", help="render block-causal or hybrid-forcing attention masks")
    s.add_argument("--kind", choices=["block-causal", "hybrid"], default="block-causal")
    s.add_argument("--blocks", required=True, help="comma-separated tokens per block, e.g. 3,2,4")
    s.add_argument("--noisy", type=int, help="number of noisy suffix blocks K (hybrid only)")
    s.add_argument("--format", choices=["text", "csv"], default="text")
    s.add_argument("--out")
    s.set_defaults(func=cmd_masks)

    s = sub.add_parser("distill-demo", help="fit the toy generator with replayed DMD gradients")
    s.add_argument("--target-mu", type=float, default=3.0)
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--lr", type=float, default=0.1)
    s.add_argument("--blocks", type=int, default=4)
    s.add_argument("--dim", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_distill_demo)

    s = sub.add_parser("eval-rpe", help="RPE of an estimated trajectory against a reference")
    s.add_argument("reference")
    s.add_argument("estimate")
    s.add_argument("--no-align", action="store_true", help="skip the Sim(3) alignment")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval_rpe)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return EXIT_USAGE
    try:
        args.func(args)
    except _UsageError as exc:
        print(f"relicforge: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"relicforge: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, DivergenceError) as exc:
        print(f"relicforge: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
