"""
Command Router — argument parsing and the subcommand handlers.

Subcommands: synth, train, enhance, eval, laic. Every configuration key is
also a flag (`--dim-gain 0.2`), accepted before or after the subcommand.
Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, TextIO

import numpy as np

from engines.dequant_engine import dequantize, generator_from_checkpoint
from engines.laic_engine import build_lp, laic_enhance, linear_stretch, lp_luma
from engines.synth_engine import make_training_pair, pair_rng, sample_params
from engines.training_engine import loss_ema, log_path_for, train
from models.degrade import ManifestEntry
from models.laic import AUTO
from models.pipeline_config import PipelineConfig, parse_float
from models.raster import QuantSpec, Raster, psnr
from services import report_service
from services.checkpoint_service import load_checkpoint
from services.config_service import PRESETS, dump_config, resolve_config
from services.image_service import load_image, save_image
from services.lp_format_service import write_lp_text
from services.manifest_service import (
    find_eval_pairs, pair_paths, pair_stem, read_manifest, write_sidecar,
)
from utils.errors import ConfigError, DequantError, UsageError
from utils.parallel import failures, map_items

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _common_options() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", default=S, help="flat key = value configuration file")
    common.add_argument("--preset", default=S, choices=sorted(PRESETS), help="low-light experiment preset")
    common.add_argument("--dump-config", action="store_true", default=S,
                        help="print the resolved configuration and exit")
    common.add_argument("-v", "--verbose", action="store_true", default=S, help="debug logging")
    common.add_argument("-q", "--quiet", action="store_true", default=S, help="warnings only")
    keys = common.add_argument_group("configuration keys")
    for key in PipelineConfig.keys():
        keys.add_argument(_flag(key), dest=f"cfg_{key}", default=S, metavar="VALUE")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = _Parser(
        prog="dequant",
        description="Low-light enhancement with LAIC tone mapping and learned dequantization.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="synthesize (ground truth, low-light) pairs")
    p.add_argument("manifest")
    p.add_argument("out_dir")

    p = sub.add_parser("train", parents=[common], help="train the dequantization network")
    p.add_argument("manifest")
    p.add_argument("checkpoint", help="output checkpoint path")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")

    p = sub.add_parser("enhance", parents=[common], help="tone-map and dequantize one image")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--linear-stretch", default=None, metavar="GAIN",
                   help="uniform gain instead of LAIC ('auto' maps the brightest luma to 1)")
    p.add_argument("--skip-network", action="store_true", help="stop after tone mapping")

    p = sub.add_parser("eval", parents=[common], help="PSNR table over a directory of pairs")
    p.add_argument("pairs_dir")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--tone", choices=("stretch", "laic"), default="stretch")
    p.add_argument("--output", default=None, help="also write the table to this file")

    p = sub.add_parser("laic", parents=[common], help="LAIC tone mapping only")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--dump-lp", default=None, metavar="PATH", help="write the LP in CPLEX-LP text")
    return parser


def _cli_values(args: argparse.Namespace) -> Dict[str, str]:
    return {
        name[len("cfg_"):]: value
        for name, value in vars(args).items()
        if name.startswith("cfg_")
    }


# ---------------------------------------------------------------------------
# Handlers
# ---------------------------------------------------------------------------

def _parse_stretch(raw: str):
    if raw.strip().lower() == AUTO:
        return AUTO
    try:
        gain = parse_float(raw)
    except ValueError as e:
        raise UsageError(f"--linear-stretch expects a positive number or 'auto', got {raw!r}") from e
    if gain <= 0:
        raise UsageError(f"--linear-stretch must be positive, got {raw!r}")
    return gain


def _tone_map(image: Raster, cfg: PipelineConfig, stretch: Optional[str]) -> Raster:
    if stretch is not None:
        return linear_stretch(image, _parse_stretch(stretch))
    return laic_enhance(image, cfg.laic_options())


def _load_generator(path: Optional[str], command: str):
    if not path:
        raise UsageError(f"{command} needs --checkpoint (or --skip-network for enhance)")
    return generator_from_checkpoint(load_checkpoint(path))


def cmd_synth(args: argparse.Namespace, cfg: PipelineConfig, out: TextIO) -> int:
    entries = read_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = cfg.degrade_params()
    ranges = cfg.param_ranges()

    def work(indexed):
        index, entry = indexed
        image = load_image(entry.path)
        rng = pair_rng(cfg.seed, index)
        if entry.has_params:
            params = entry.params_or(base)
            if entry.seed is not None:
                rng = np.random.default_rng(entry.seed)
        elif cfg.param_sampling:
            params = sample_params(ranges, rng, seed=cfg.seed)
        else:
            params = base
        sample = make_training_pair(image, params, (image.height, image.width), rng)
        stem = pair_stem(index, entry.path)
        paths = pair_paths(out_dir, stem)
        save_image(sample.ground_truth, paths["gt"])
        save_image(sample.capture, paths["lowlight"])
        save_image(sample.degraded, paths["degraded"])
        write_sidecar(paths["meta"], sample, entry.path, index)
        logger.info(f"Synthesized {stem} (dim_gain {params.dim_gain:.4g})")
        return params

    outcomes = map_items(work, list(enumerate(entries)), cfg.jobs)
    failed = failures(outcomes)
    for (index, entry), err in failed:
        logger.warning(f"synth failed for {entry.path}: {err}")
    done = [res for _, res in outcomes if not isinstance(res, BaseException)]

    out.write(f"pairs written: {len(done)} of {len(entries)}\n")
    if done:
        for name in ("dim_gain", "gamma_ratio", "noise_sigma"):
            values = [getattr(p, name) for p in done]
            out.write(f"{name}: {min(values):.6g} .. {max(values):.6g}\n")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_train(args: argparse.Namespace, cfg: PipelineConfig, out: TextIO) -> int:
    entries: List[ManifestEntry] = read_manifest(args.manifest)
    train_cfg = cfg.train_config()
    resume = load_checkpoint(args.resume) if args.resume else None
    ckpt = train(train_cfg, entries, args.checkpoint, resume=resume)

    df = report_service.read_loss_log(log_path_for(args.checkpoint))
    out.write(f"checkpoint: {args.checkpoint} (iteration {ckpt.iteration})\n")
    if len(df):
        ema = loss_ema(df["l_inf"].tolist())
        out.write(f"l_inf EMA: {ema[0]:.6g} -> {ema[-1]:.6g}\n")
    return EXIT_OK


def cmd_enhance(args: argparse.Namespace, cfg: PipelineConfig, out: TextIO) -> int:
    G = None if args.skip_network else _load_generator(args.checkpoint, "enhance")
    image = load_image(args.input)
    result = _tone_map(image, cfg, args.linear_stretch)
    if G is not None:
        result = dequantize(G, result, cfg.tile, cfg.tile_overlap)
    save_image(result, args.output, QuantSpec(cfg.q))
    out.write(f"wrote {args.output} ({result.height}x{result.width})\n")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, cfg: PipelineConfig, out: TextIO) -> int:
    pairs = find_eval_pairs(args.pairs_dir)
    G = _load_generator(args.checkpoint, "eval")
    opts = cfg.laic_options()

    def work(pair):
        stem, gt_path, low_path = pair
        gt = load_image(gt_path)
        low = load_image(low_path)
        toned = laic_enhance(low, opts) if args.tone == "laic" else linear_stretch(low, AUTO)
        full = dequantize(G, toned, cfg.tile, cfg.tile_overlap)
        return {
            "image": stem,
            "psnr_input": psnr(low, gt),
            "psnr_tone": psnr(toned, gt),
            "psnr_full": psnr(full, gt),
        }

    outcomes = map_items(work, pairs, cfg.jobs)
    failed = failures(outcomes)
    for (stem, _, _), err in failed:
        logger.warning(f"eval failed for {stem}: {err}")
    rows = [res for _, res in outcomes if not isinstance(res, BaseException)]

    df = report_service.eval_frame(rows)
    report_service.write_eval_table(df, out)
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            report_service.write_eval_table(df, fh)
    if rows:
        gain = df["psnr_full"].iloc[-1] - df["psnr_tone"].iloc[-1]
        logger.info(f"Full pipeline vs {args.tone} only: {gain:+.3f} dB mean PSNR")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_laic(args: argparse.Namespace, cfg: PipelineConfig, out: TextIO) -> int:
    image = load_image(args.input)
    opts = cfg.laic_options()
    if args.dump_lp:
        write_lp_text(build_lp(lp_luma(image, opts), opts), args.dump_lp)
    result = laic_enhance(image, opts)
    save_image(result, args.output, QuantSpec(cfg.q))
    out.write(f"wrote {args.output} ({result.height}x{result.width})\n")
    return EXIT_OK


HANDLERS: Dict[str, Callable[[argparse.Namespace, PipelineConfig, TextIO], int]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "enhance": cmd_enhance,
    "eval": cmd_eval,
    "laic": cmd_laic,
}


# ---------------------------------------------------------------------------
# Entry
# ---------------------------------------------------------------------------

def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def run(argv: Optional[Sequence[str]] = None, out: Optional[TextIO] = None) -> int:
    """Parse, resolve the configuration, dispatch; returns the process exit code."""
    out = out if out is not None else sys.stdout
    try:
        args = parse_args(argv)
    except UsageError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)

    try:
        cfg = resolve_config(
            getattr(args, "config", None), getattr(args, "preset", None), _cli_values(args)
        )
    except ConfigError as e:
        logger.error(f"configuration error: {e}")
        return EXIT_USAGE

    if getattr(args, "dump_config", False):
        out.write(dump_config(cfg))
        return EXIT_OK
    if not args.command:
        logger.error("no command given (choose from synth, train, enhance, eval, laic)")
        return EXIT_USAGE

    handler = HANDLERS[args.command]
    try:
        return handler(args, cfg, out)
    except (ConfigError, UsageError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (DequantError, OSError) as e:
        logger.exception(f"{args.command} failed: {e}")
        return EXIT_RUNTIME
