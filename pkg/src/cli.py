"""Command-line surface: one subcommand per pipeline stage.

Every artifact gets a ``.config.json`` sidecar holding the effective
configuration that produced it. Failures print a single line
``error code=<module>.<code> message="..."`` on stderr and exit with the
error's status.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np
from PIL import Image

from src import __version__
from src.config import DEFAULT_CONFIG_PATH, parse_config, setup_logging
from src.core import Frame, derive_stream
from src.degrade import DegradationChain, apply_chain, degrade_clips, sample_chain
from src.errors import InvalidArgumentError, NegMixError, StorageError
from src.metrics import bank_report, evaluate, window_statistics_report
from src.negmix import P_GRID, fit_noise, mix_noise, neg_augment, sweep_grid
from src.noise_extract import extract_noise_bank_many
from src.sequence_io import (
    load_manifest, load_sequence, quantize, read_noise_bank, save_sequence, write_json,
    write_noise_bank,
)
from src.synthetic import natural_frame
from src.toy_restorer import ToyRestorer, demo_bank, demo_dataset, train_toy, write_trace_csv
from src.workers import ClipPool

CONFIG_SIDECAR = ".config.json"


def _sidecar(cfg, artifact):
    """Effective config next to ``artifact`` (inside it for directories)"""
    if os.path.isdir(artifact):
        path = os.path.join(artifact, "config.json")
    else:
        path = artifact + CONFIG_SIDECAR
    write_json(path, cfg.to_dict())


def _ensure_parent(path):
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create {directory}: {e}", module="cli")


def _load_clips(paths):
    if not paths:
        raise InvalidArgumentError("no input manifests given (use --input or paths.inputs)",
                                   module="cli", field="inputs")
    return [load_sequence(load_manifest(p)) for p in paths]


def _inputs(args, cfg):
    return list(args.input or cfg.paths.inputs)


def _bank(args, cfg, required=True):
    path = getattr(args, "bank", None) or cfg.paths.noise_bank
    if path is None:
        if required:
            raise InvalidArgumentError("no noise bank given (use --bank or paths.noise_bank)",
                                       module="cli", field="noise_bank")
        return None
    return read_noise_bank(path)


# Subcommands

def cmd_extract_noise(args, cfg):
    videos = _load_clips(_inputs(args, cfg))
    noise = cfg.noise
    with ClipPool(cfg.workers) as pool:
        bank = extract_noise_bank_many(
            videos, tuple(noise.window), noise.thresholds,
            stride=None if noise.stride is None else tuple(noise.stride),
            residual=noise.residual, pool=pool,
        )
    write_noise_bank(bank, args.out)
    _sidecar(cfg, args.out)
    print(f"Extracted {bank.count} noise sequences to {args.out}")
    return 0


def cmd_calibrate(args, cfg):
    video = _load_clips(_inputs(args, cfg))[0]
    noise = cfg.noise
    report = window_statistics_report(
        video, tuple(noise.window), noise.thresholds,
        stride=None if noise.stride is None else tuple(noise.stride),
    )
    _ensure_parent(args.out)
    write_json(args.out, report)
    _sidecar(cfg, args.out)
    print(f"{report['accepted']} of {report['sequences']} window sequences pass; report in {args.out}")
    return 0


def cmd_degrade(args, cfg):
    clips = _load_clips(_inputs(args, cfg))
    if args.chain:
        chain = DegradationChain.from_dict(_read_json(args.chain))
        stream = derive_stream(cfg.seed, ("degrade", 0)).child("apply")
        results = [(apply_chain(clips[0], chain, stream), chain)]
    else:
        with ClipPool(cfg.workers) as pool:
            results = degrade_clips(clips[:1], cfg.degradation.template, cfg.degradation.order,
                                    cfg.seed, pool=pool)
    lr, chain = results[0]
    save_sequence(lr, args.out)
    _sidecar(cfg, args.out)
    dump = args.dump_chain or os.path.join(args.out, "chain.json")
    _ensure_parent(dump)
    write_json(dump, chain.to_dict())
    print(f"Degraded {lr.n} frames to {lr.height}x{lr.width} in {args.out}; chain in {dump}")
    return 0


def _write_negmix(mixed, cfg, pick, out, dump):
    v_neg, decisions = neg_augment(mixed, cfg.negmix, derive_stream(cfg.seed, ("negmix",)))
    save_sequence(v_neg, out)
    _sidecar(cfg, out)
    _ensure_parent(dump)
    write_json(dump, {
        "noise_entry": pick,
        "p": cfg.negmix.p,
        "patch_scale": cfg.negmix.patch_scale,
        "decisions": [d.to_dict() for d in decisions],
    })
    return v_neg, decisions


def cmd_negmix(args, cfg):
    v_lr = _load_clips(_inputs(args, cfg))[0]
    bank = _bank(args, cfg)
    if bank.count == 0:
        raise InvalidArgumentError("noise bank is empty", module="negmix", field="noise_bank")
    pick = derive_stream(cfg.seed, ("negmix-noise",)).next_choice(bank.count)
    nsq = fit_noise(bank.entry(pick), v_lr.shape)
    mixed = mix_noise(v_lr, nsq, cfg.negmix.m)
    if args.p_grid:
        # one output per grid P, all drawn from the same decision stream
        for p in P_GRID:
            cell = dataclasses.replace(cfg, negmix=dataclasses.replace(cfg.negmix, p=p))
            out = os.path.join(args.out, f"p{p:.1f}")
            _write_negmix(mixed, cell, pick, out, os.path.join(out, "decisions.json"))
        _sidecar(cfg, args.out)
        print(f"NegMix wrote {len(P_GRID)} P values x {v_lr.n} frames to {args.out}")
        return 0
    dump = args.decisions or os.path.join(args.out, "decisions.json")
    v_neg, decisions = _write_negmix(mixed, cfg, pick, args.out, dump)
    rotated = sum(1 for d in decisions if d.rotate)
    print(f"NegMix wrote {v_neg.n} frames to {args.out}; {rotated}/{len(decisions)} patches rotated")
    return 0


def _grid_noise(frame, bank, seed):
    if bank is not None and bank.count:
        entry = bank.entry(0)
        return fit_noise(entry, (1,) + frame.shape).frame(0)
    stream = derive_stream(seed, ("demo-grid-noise",))
    return Frame(np.clip(0.5 + 0.05 * stream.normal(frame.shape), 0.0, 1.0))


def cmd_demo_grid(args, cfg):
    paths = _inputs(args, cfg)
    if paths:
        clip = _load_clips(paths)[0]
        if not 0 <= args.frame < clip.n:
            raise InvalidArgumentError(f"--frame {args.frame} is outside 0..{clip.n - 1}",
                                       module="cli", field="frame")
        frame = clip.frame(args.frame)
    else:
        frame = natural_frame(3, 64, 64, derive_stream(cfg.seed, ("demo-grid-frame",)))
    noise = _grid_noise(frame, _bank(args, cfg, required=False), cfg.seed)
    canvas = sweep_grid(frame, noise, cfg.negmix, derive_stream(cfg.seed, ("demo-grid",)),
                        ms=args.m_sweep, ps=P_GRID)
    codes = quantize(canvas, 8)
    image = Image.fromarray(codes[0]) if codes.shape[0] == 1 else Image.fromarray(
        np.ascontiguousarray(codes.transpose(1, 2, 0)))
    _ensure_parent(args.out)
    try:
        image.save(args.out, format="PNG")
    except OSError as e:
        raise StorageError(f"cannot write {args.out}: {e}", module="cli")
    _sidecar(cfg, args.out)
    print(f"Wrote {len(args.m_sweep or [cfg.negmix.m])}x{len(P_GRID)} grid to {args.out}")
    return 0


def cmd_train_toy(args, cfg):
    train = cfg.train
    bank = _bank(args, cfg, required=False)
    paths = _inputs(args, cfg)
    template, order = cfg.degradation.template, cfg.degradation.order
    if paths:
        clips = _load_clips(paths)
        bank = bank if bank is not None else demo_bank(train, clips[0].channels, cfg.seed)
        dataset = [(hr, sample_chain(template, order, derive_stream(cfg.seed, ("train-chain", i))), bank)
                   for i, hr in enumerate(clips)]
    else:
        dataset = demo_dataset(train, template, order, cfg.seed, bank=bank)
    model = ToyRestorer.create(dataset[0][0].channels, train.init)
    with ClipPool(cfg.workers) as pool:
        model, trace = train_toy(model, dataset, train, cfg.loss, cfg.negmix, cfg.seed, pool=pool)
    _ensure_parent(args.out)
    write_trace_csv(args.out, trace)
    _sidecar(cfg, args.out)
    first, last = trace[0].total, trace[-1].total
    print(f"Trained {len(trace)} steps: total loss {first:.6f} -> {last:.6f}; trace in {args.out}")
    return 0


def cmd_eval(args, cfg):
    report = {}
    if args.restored or args.reference:
        if not (args.restored and args.reference):
            raise InvalidArgumentError("eval needs both --restored and --reference",
                                       module="cli", field="restored")
        restored = load_sequence(load_manifest(args.restored))
        reference = load_sequence(load_manifest(args.reference))
        # variance-map tiles never exceed the frame
        win = (min(cfg.noise.window[0], restored.height), min(cfg.noise.window[1], restored.width))
        report["metrics"] = evaluate(restored, reference, win).to_dict()
    bank = _bank(args, cfg, required=False)
    if bank is not None:
        report["bank"] = bank_report(bank)
    if not report:
        raise InvalidArgumentError("nothing to evaluate: give clips and/or a noise bank",
                                   module="cli")
    _ensure_parent(args.out)
    write_json(args.out, report)
    _sidecar(cfg, args.out)
    print(f"Evaluation written to {args.out}")
    return 0


COMMANDS = {
    "extract-noise": cmd_extract_noise,
    "calibrate": cmd_calibrate,
    "degrade": cmd_degrade,
    "negmix": cmd_negmix,
    "demo-grid": cmd_demo_grid,
    "train-toy": cmd_train_toy,
    "eval": cmd_eval,
}


def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}", module="cli")
    except json.JSONDecodeError as e:
        raise InvalidArgumentError(f"{path} is not valid JSON (line {e.lineno})", module="cli")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"YAML or JSON config file (default: {DEFAULT_CONFIG_PATH} if present)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int, help="worker processes for per-clip work")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(
        prog="negmix-toolkit",
        description="Sequential noise extraction, degradation and NegMix augmentation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-noise", parents=[common], help="video(s) -> noise bank")
    p.add_argument("--input", action="append", help="sequence manifest (repeatable)")
    p.add_argument("--window", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--stride", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--residual", action="store_true", default=None,
                   help="store windows minus their mean")
    p.add_argument("--out", required=True, help="noise bank path")

    p = sub.add_parser("calibrate", parents=[common], help="window statistics report")
    p.add_argument("--input", action="append", help="sequence manifest")
    p.add_argument("--window", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--stride", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--out", required=True, help="report JSON path")

    p = sub.add_parser("degrade", parents=[common], help="HR clip -> LR clip + chain")
    p.add_argument("--input", action="append", help="HR sequence manifest")
    p.add_argument("--order", type=int, choices=(1, 2))
    p.add_argument("--chain", help="replay a dumped chain instead of sampling one")
    p.add_argument("--dump-chain", help="chain JSON path (default <out>/chain.json)")
    p.add_argument("--out", required=True, help="output sequence directory")

    p = sub.add_parser("negmix", parents=[common], help="LR clip + noise bank -> V_neg")
    p.add_argument("--input", action="append", help="LR sequence manifest")
    p.add_argument("--bank", help="noise bank path")
    p.add_argument("--m", type=float, help="mixing weight M")
    choice = p.add_mutually_exclusive_group()
    choice.add_argument("--p", type=float, help="rotation probability P")
    choice.add_argument("--p-grid", action="store_true",
                        help="write one V_neg per P in 0.0, 0.1, ..., 1.0 under <out>/p<P>")
    choice.add_argument("--p-random", action="store_true",
                        help="draw P per clip from the 0.1-step grid")
    p.add_argument("--patch-scale", type=int, help="patch grid size s")
    p.add_argument("--temporal-lock", action="store_true", default=None,
                   help="share decisions across frames")
    p.add_argument("--decisions", help="decision dump path (default <out>/decisions.json)")
    p.add_argument("--out", required=True, help="output sequence directory")

    p = sub.add_parser("demo-grid", parents=[common], help="P-sweep grid image")
    p.add_argument("--input", action="append", help="sequence manifest (default: synthetic frame)")
    p.add_argument("--frame", type=int, default=0, help="frame index to use")
    p.add_argument("--bank", help="noise bank path (default: synthetic noise)")
    p.add_argument("--m", type=float, help="mixing weight M")
    p.add_argument("--patch-scale", type=int, help="patch grid size s")
    p.add_argument("--m-sweep", type=float, nargs="+", help="one grid row per M value")
    p.add_argument("--out", required=True, help="PNG path")

    p = sub.add_parser("train-toy", parents=[common], help="toy restorer training demo")
    p.add_argument("--input", action="append", help="HR sequence manifest (default: synthetic)")
    p.add_argument("--bank", help="noise bank path (default: synthetic)")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", required=True, help="loss trace CSV path")

    p = sub.add_parser("eval", parents=[common], help="metrics and bank report as JSON")
    p.add_argument("--restored", help="restored sequence manifest")
    p.add_argument("--reference", help="reference sequence manifest")
    p.add_argument("--bank", help="noise bank path")
    p.add_argument("--out", required=True, help="report JSON path")
    return parser


def _flags(args):
    """Dedicated flags as dotted config keys"""
    flags = {
        "seed": args.seed,
        "workers": args.workers,
        "logging.level": args.log_level,
    }

    def get(name):
        return getattr(args, name, None)

    for name in ("window", "stride"):
        if get(name) is not None:
            flags[f"noise.{name}"] = list(get(name))
    flags["noise.residual"] = get("residual")
    flags["degradation.order"] = get("order")
    flags["negmix.m"] = get("m")
    flags["negmix.p"] = get("p")
    flags["negmix.patch_scale"] = get("patch_scale")
    flags["negmix.temporal_lock"] = get("temporal_lock")
    flags["train.steps"] = get("steps")
    flags["train.lr"] = get("lr")
    return flags


def _config_path(args):
    if args.config is not None:
        return args.config
    return DEFAULT_CONFIG_PATH if os.path.isfile(DEFAULT_CONFIG_PATH) else None


def run(command, cfg, args):
    """Dispatch one subcommand; returns the exit status"""
    logging.info(f"Running {command} with seed {cfg.seed}")
    return COMMANDS[command](args, cfg)


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    flags = _flags(args)
    if getattr(args, "p_random", False):
        overrides.append("negmix.p=null")
        flags.pop("negmix.p")
    try:
        cfg = parse_config(_config_path(args), overrides=overrides, flags=flags)
        setup_logging(cfg)
        return run(args.command, cfg, args)
    except NegMixError as e:
        print(e.one_line(), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logging.exception(f"Unexpected failure in {args.command}")
        text = " ".join(str(e).split()).replace('"', "'")
        print(f'error code=cli.internal message="{text}"', file=sys.stderr)
        return 1
