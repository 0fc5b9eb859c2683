"""Command-line entry point.

Exit codes: 0 success, 2 usage, 3 IO, 4 config/architecture mismatch,
5 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import os
import subprocess
import sys
from typing import Optional

import numpy as np

from . import tensor as T
from .config import RunConfig
from .gradcheck import grad_check
from .losses import edge_loss, feature_perceptual, masked_mse, patch_perceptual, total_loss
from .metrics import eval_stack, format_table, mean_tables, self_consistency, table_records
from .model import ConfigError, ModelConfig, format_trace, receptive_field, shape_trace
from .params import FormatError, ParamStore, load_checkpoint, load_ntf, save_ntf
from .synthetic import PASS_FILES, IntrinsicStack, generate, load_dataset, read_split, rerender, write_dataset
from .trainer import (
    Pipeline,
    TrainingDiverged,
    config_diff,
    model_config_from_entries,
    stage12_checkpoint,
    to_pm1,
    train_stage12,
    train_stage3,
    translator_config_from_entries,
)
from .translator import TranslatorConfig

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4, 5
JITTER_SHIFT_PX = 5
JITTER_PHOTOMETRIC = 0.05
CONTACT_LIGHT = ((0.0, 0.0, 1.0), 1.0, 0.2)

log = logging.getLogger("maginet")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def version_string() -> str:
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"], cwd=here, capture_output=True, text=True, timeout=5
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:
        return "unknown"


def write_manifest(path: str, args: argparse.Namespace, config: Optional[dict], outputs: list, started: str) -> None:
    manifest = {
        "command": args.command,
        "argv": list(args.argv),
        "config": config,
        "seeds": {"seed": args.seed},
        "version": version_string(),
        "outputs": outputs,
        "started": started,
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_run_config(path: Optional[str], seed: Optional[int]) -> RunConfig:
    cfg = RunConfig.load(path) if path else RunConfig()
    if seed is not None:
        from dataclasses import replace

        cfg.train = replace(cfg.train, master_seed=seed)
    return cfg


def read_image(path: str) -> np.ndarray:
    """[3, H, W] float32 in [0, 1] from an 8-bit image file or an NTF1 tensor."""
    if path.lower().endswith(".ntf"):
        arr = load_ntf(path)
        if arr.ndim == 4 and arr.shape[0] == 1:
            arr = arr[0]
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise FormatError(f"{path}: expected a [3, H, W] tensor, got {arr.shape}")
        return arr.astype(np.float32)
    from PIL import Image

    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(rgb.transpose(2, 0, 1))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return (np.clip(np.asarray(img, np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)


def write_png(path: str, img: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(img)).save(path)


def contact_sheet(image: np.ndarray, stack: IntrinsicStack) -> np.ndarray:
    """Input, re-render from the predicted passes, then each pass, left to right."""
    render = rerender(stack, *CONTACT_LIGHT)
    tiles = [image, render] + [getattr(stack, name) for name in PASS_FILES]
    return np.concatenate([np.asarray(t, np.float32) for t in tiles], axis=2)


def load_pipeline(path: str) -> Pipeline:
    return Pipeline.from_entries(load_checkpoint(path))


def make_oracle_checkpoint(path: str, seed: int, res: int) -> None:
    """Debug checkpoint whose ``decompose`` returns the ground-truth stack of
    ``generate(seed, res)``; exercises file IO without a trained model."""
    levels = 2
    mc = ModelConfig.scaled(64, levels=levels, input_res=res // 2)
    pipe = Pipeline.create(mc)
    pipe.oracle = (seed, res)
    pipe.save(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> tuple:
    if args.n < 20:
        raise UsageError("--n must be >= 20 (90/5/5 split)")
    if args.res < 16 or args.res % 2:
        raise UsageError("--res must be an even number >= 16")
    seed = args.seed if args.seed is not None else 0
    if args.dry_run:
        print(f"would write {args.n} samples at {args.res}px to {args.out}")
        return None, []
    split = write_dataset(args.out, args.n, args.res, seed)
    if not args.quiet:
        print(f"wrote {args.n} samples to {args.out} (train {len(split['train'])} / val {len(split['val'])} / test {len(split['test'])})")
    return {"n": args.n, "res": args.res, "seed": seed}, [args.out]


def _check_ckpt_against_config(entries, cfg: RunConfig, stage: str) -> None:
    diffs = config_diff(model_config_from_entries(entries).to_dict(), cfg.model().to_dict())
    if stage == "3" and translator_config_from_entries(entries) is not None:
        diffs += config_diff(translator_config_from_entries(entries).to_dict(), cfg.translator().to_dict())
    if diffs:
        raise ConfigError("checkpoint does not match --config:\n  " + "\n  ".join(diffs))


def cmd_train(args) -> tuple:
    if args.stage == "3" and not args.init_from:
        raise UsageError("--stage 3 requires --init-from <stage-12 checkpoint>")
    if args.dry_run:
        cfg = RunConfig.load(args.config) if args.config else None
        mc = cfg.model() if cfg else ModelConfig()
        print(dry_run_trace(mc, cfg.translator() if cfg else None))
        return None, []
    if not args.data or not args.out:
        raise UsageError("train needs --data and --out")
    cfg = load_run_config(args.config, args.seed)
    split = read_split(args.data)
    if split["resolution"] != cfg.model().output_res:
        raise ConfigError(
            f"data resolution {split['resolution']} does not match model (input_res {cfg.model().input_res} -> "
            f"{cfg.model().output_res}px images)"
        )
    train = load_dataset(args.data, split["train"])
    val = load_dataset(args.data, split["val"])
    log_path = args.log or args.out + ".log.jsonl"
    quiet = args.quiet

    def progress(rec):
        if not quiet and ("val_mse" in rec or "val_g" in rec):
            print(json.dumps({k: (round(v, 5) if isinstance(v, float) else v) for k, v in rec.items()}))

    with open(log_path, "w") as logfile:
        if args.stage == "12":
            resume = None
            if args.init_from:
                resume = load_checkpoint(args.init_from)
                _check_ckpt_against_config(resume, cfg, "12")
            try:
                result = train_stage12(
                    train, val, cfg.model(), cfg.train, logfile, resume=resume, on_step=progress, checkpoint_path=args.out
                )
            except TrainingDiverged as exc:
                print(f"error: {exc}; last good checkpoint kept at {args.out}", file=sys.stderr)
                return _numeric_failure(cfg)
            from .params import save_checkpoint

            save_checkpoint(args.out, stage12_checkpoint(result))
        else:
            entries = load_checkpoint(args.init_from)
            _check_ckpt_against_config(entries, cfg, "3")
            pipe = Pipeline.from_entries(entries)
            try:
                result = train_stage3(
                    train, val, pipe, cfg.translator(), cfg.train, logfile, on_step=progress, checkpoint_path=args.out
                )
            except TrainingDiverged as exc:
                print(f"error: {exc}", file=sys.stderr)
                return _numeric_failure(cfg)
            result.pipeline.save(args.out)
    if not quiet:
        print(f"checkpoint written to {args.out} (best validation {result.best_val:.5f})")
    return cfg.to_dict(), [args.out, log_path]


class _NumericFailure(Exception):
    def __init__(self, config):
        self.config = config


def _numeric_failure(cfg):
    raise _NumericFailure(cfg.to_dict())


def dry_run_trace(mc: ModelConfig, tc=None) -> str:
    trace = shape_trace(mc)
    width = mc.refine_channels
    r = mc.input_res
    trace.append(dict(stage="ref", level=None, op="Upsample", cin=None, cout=None, res_in=r, res_out=2 * r, skip=None))
    trace.append(dict(stage="ref", level=None, op="Conv 3x3+ReLU", cin=3, cout=width, res_in=2 * r, res_out=2 * r, skip=None))
    trace.append(dict(stage="ref", level=None, op="Conv 3x3+ReLU", cin=width, cout=width, res_in=2 * r, res_out=2 * r, skip=None))
    trace.append(dict(stage="ref", level=None, op="Conv 1x1", cin=width, cout=3, res_in=2 * r, res_out=2 * r, skip=None))
    tc = tc or TranslatorConfig()
    op = f"Gen {tc.num_downsamples}dn/{tc.num_res_blocks}res"
    trace.append(dict(stage="p2h", level=None, op=op, cin=3, cout=15, res_in=2 * r, res_out=2 * r, skip=None))
    lines = [format_trace(trace), f"receptive field: {receptive_field(mc)}"]
    return "\n".join(lines)


def cmd_decompose(args) -> tuple:
    pipe = load_pipeline(args.ckpt)
    image = read_image(args.input)
    pipe.check_input(image)
    if args.dry_run:
        print(f"would decompose {args.input} ({image.shape[-1]}px) into {args.out}")
        return None, []
    stack = pipe.decompose(image)
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for name in PASS_FILES:
        arr = getattr(stack, name)
        save_ntf(os.path.join(args.out, f"{name}.ntf"), arr)
        write_png(os.path.join(args.out, f"{name}.png"), arr)
        outputs += [f"{name}.ntf", f"{name}.png"]
    write_png(os.path.join(args.out, "contact_sheet.png"), contact_sheet(image, stack))
    outputs.append("contact_sheet.png")
    if not args.quiet:
        print(f"wrote {len(outputs)} files to {args.out}")
    return {"ckpt": args.ckpt, "input": args.input}, [os.path.join(args.out, o) for o in outputs]


def _split_samples(data_dir: str, split_name: str):
    split = read_split(data_dir)
    if split_name not in ("train", "val", "test"):
        raise UsageError(f"unknown split {split_name!r}")
    idx = split[split_name]
    return idx, load_dataset(data_dir, idx)


def cmd_eval(args) -> tuple:
    pipe = load_pipeline(args.ckpt)
    idx, samples = _split_samples(args.data, args.split)
    if args.limit:
        samples = samples.subset(np.arange(min(args.limit, len(samples))))
    pipe.check_input(samples.inputs)
    if args.dry_run:
        print(f"would evaluate {len(samples)} samples")
        return None, []
    tables = [eval_stack(pipe.decompose(samples.inputs[i]), samples.stack(i)) for i in range(len(samples))]
    table = mean_tables(tables)
    print(format_table(table))
    outputs = []
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "results.json")
        with open(path, "w") as fh:
            json.dump({"split": args.split, "count": len(samples), "records": table_records(table)}, fh, indent=1)
        outputs.append(path)
    return {"ckpt": args.ckpt, "split": args.split}, outputs


def cmd_selfcheck(args) -> tuple:
    if args.jitter < 0:
        raise UsageError("--jitter must be >= 0")
    pipe = load_pipeline(args.ckpt)
    _, samples = _split_samples(args.data, args.split)
    if args.limit:
        samples = samples.subset(np.arange(min(args.limit, len(samples))))
    pipe.check_input(samples.inputs)
    if args.dry_run:
        print(f"would self-check {len(samples)} samples")
        return None, []
    shift = int(round(JITTER_SHIFT_PX * args.jitter))
    report = self_consistency(
        pipe.decompose,
        list(samples.inputs),
        max_shift_px=shift,
        photometric_frac=JITTER_PHOTOMETRIC * args.jitter,
        seed=args.seed or 0,
    )
    print(report.to_json())
    outputs = []
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "selfcheck.json")
        with open(path, "w") as fh:
            fh.write(report.to_json())
        outputs.append(path)
    return {"ckpt": args.ckpt, "jitter": args.jitter}, outputs


def gradcheck_suite(cfg: RunConfig, seed: int = 0, max_elements: int = 3) -> list:
    """(label, GradCheckReport) for each loss term and the albedo composite."""
    mc = cfg.model()
    res = mc.output_res
    rng = np.random.default_rng([seed, 9])
    img, stack, _ = generate(seed, res)
    gt = to_pm1(stack.albedo)[None]
    mask = stack.mask[None]
    reports = []

    pred = ParamStore()
    pred.add("pred", np.clip(gt + 0.3 * rng.standard_normal(gt.shape), -1, 1).astype(np.float32))
    weights = cfg.train.loss_weights
    terms = {
        "masked_mse": lambda p: masked_mse(p["pred"], gt, mask),
        "feature_perceptual": lambda p: feature_perceptual(p["pred"], gt),
        "edge": lambda p: edge_loss(p["pred"], gt),
        "patch_perceptual": lambda p: patch_perceptual(p["pred"], gt, np.random.default_rng(seed)),
        "total": lambda p: total_loss(p["pred"], gt, mask, weights, np.random.default_rng(seed))[0],
    }
    for label, f in terms.items():
        reports.append((label, grad_check(f, pred, max_elements=max_elements * 8, seed=seed)))

    pipe = Pipeline.create(mc, seed)
    # zero-initialised biases leave whole regions of units exactly on a ReLU
    # hinge, where no derivative exists; step off it to a generic point
    for _, t in pipe.params.items():
        t.data = t.data + rng.normal(0.0, 0.02, t.shape).astype(np.float32)
    x = img[None]

    def composite(params):
        pipe.params = params
        out = pipe.albedo(x)
        return total_loss(out, gt, mask, weights, np.random.default_rng(seed))[0]

    reports.append(("maginet+refine", grad_check(composite, pipe.params, max_elements=max_elements, seed=seed)))
    return reports


def cmd_gradcheck(args) -> tuple:
    cfg = RunConfig.load(args.config) if args.config else RunConfig(scale_div=16, levels=4, input_res=32)
    if args.dry_run:
        print(f"would grad-check model with {Pipeline.create(cfg.model()).params.num_parameters()} parameters")
        return None, []
    reports = gradcheck_suite(cfg, args.seed or 0, args.max_elements)
    ok = True
    for label, rep in reports:
        if not args.quiet:
            print(f"[{label}]")
            print("\n".join("  " + line for line in rep.lines()))
        print(f"{label}: max relative error {rep.worst:.3e} {'PASS' if rep.passed else 'FAIL'}")
        ok &= rep.passed
    if not ok:
        raise _NumericFailure(cfg.to_dict())
    return cfg.to_dict(), []


def cmd_rf(args) -> tuple:
    mc = RunConfig.load(args.config).model() if args.config else ModelConfig()
    print(receptive_field(mc))
    return mc.to_dict(), []


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--dry-run", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--manifest", default=argparse.SUPPRESS, help="manifest path (default: next to outputs)")

    p = argparse.ArgumentParser(prog="maginet", description="Facial intrinsic decomposition toolkit", parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--res", type=int, required=True)

    t = sub.add_parser("train", parents=[common], help="train stage 12 or 3")
    t.add_argument("--stage", choices=["12", "3"], required=True)
    t.add_argument("--data")
    t.add_argument("--config")
    t.add_argument("--out")
    t.add_argument("--init-from")
    t.add_argument("--log")

    d = sub.add_parser("decompose", parents=[common], help="decompose one image")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--out", required=True)

    for name, helptext in (("eval", "per-pass metrics on a split"), ("selfcheck", "perturb-and-render consistency")):
        e = sub.add_parser(name, parents=[common], help=helptext)
        e.add_argument("--ckpt", required=True)
        e.add_argument("--data", required=True)
        e.add_argument("--split", default="test")
        e.add_argument("--out")
        e.add_argument("--limit", type=int, default=0)
        if name == "selfcheck":
            e.add_argument("--jitter", type=float, default=1.0, help="scale of the 5px / 5%% jitter recipe; 0 disables")

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    gc.add_argument("--config")
    gc.add_argument("--max-elements", type=int, default=3)

    r = sub.add_parser("rf", parents=[common], help="print the encoder receptive field")
    r.add_argument("--config")
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "decompose": cmd_decompose,
    "eval": cmd_eval,
    "selfcheck": cmd_selfcheck,
    "gradcheck": cmd_gradcheck,
    "rf": cmd_rf,
}


def default_manifest_path(args) -> str:
    out = getattr(args, "out", None)
    if out and args.command == "train":
        return out + ".manifest.json"
    if out:
        return os.path.join(out, "manifest.json")
    return "manifest.json"


def main(argv: Optional[list] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("seed", None), ("quiet", False), ("dry_run", False), ("manifest", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    args.argv = argv
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    config = None
    try:
        config, outputs = COMMANDS[args.command](args)
        code = EXIT_OK
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"maginet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config mismatch: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except _NumericFailure as exc:
        config, outputs, code = exc.config, [], EXIT_NUMERIC
    except (T.NonFiniteError, TrainingDiverged) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if not args.dry_run:
        write_manifest(args.manifest or default_manifest_path(args), args, config, outputs, started)
    return code


if __name__ == "__main__":
    sys.exit(main())
