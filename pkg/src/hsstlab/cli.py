"""``hsstlab`` command line.

Exit status: 0 on success, 2 for usage or configuration problems, 1 for
failures while running.  Errors are reported as a single line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import masksynth
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data import Dataset, build_dataset
from .errors import ConfigError, HSSTError
from .evaluation import (
    EvalReport,
    evaluate_fold,
    format_table,
    kfold_report,
    plot_training_log,
    write_report,
)
from .experiments import run_table_one
from .training import plain_train, pretrain, train

log = logging.getLogger("hsstlab")


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser, out_dir: bool = True):
    p.add_argument("--config", help="run config file (.json or .toml)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config field (repeatable)")
    if out_dir:
        p.add_argument("--out", help="output directory (config: output_dir; default $HSST_OUT/<command>)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsstlab",
        description="Masked NIR-VIS face matching: synthetic data, HSST training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen-data", help="generate the synthetic NIR/VIS corpus")
    _common(p)
    p.add_argument("--root", help="corpus directory (data.root)")
    p.add_argument("--identities", type=int, help="number of identities (data.identities)")
    p.add_argument("--seed", type=int, help="generator seed (data.seed)")

    p = sub.add_parser("synth-mask", help="put a mask template on a face through its UV maps")
    _common(p, out_dir=False)
    p.add_argument("--texture", help="UV texture PNG")
    p.add_argument("--posmap", help="UV position map (.uva, 3 or 4 channels); default identity map")
    p.add_argument("--template", help="template .uva file or procedural kind (surgical, cloth, n95)")
    p.add_argument("--bg", help="background colour r,g,b in [0,1], e.g. 0,0,0")
    p.add_argument("--size", help="output size HxW; default texture size")
    p.add_argument("--out", dest="image_out", help="output PNG (masksynth.out)")

    p = sub.add_parser("train", help="fine-tune with HSST or plain training")
    _common(p)
    p.add_argument("--mode", choices=("hsst", "plain"), help="training method (train.mode)")
    p.add_argument("--data", help="corpus directory (data.root)")
    p.add_argument("--init", help="initial checkpoint (train.init_checkpoint); default: pretrain")
    p.add_argument("--steps", type=int, help="training steps (train.steps)")
    p.add_argument("--seed", type=int, help="run seed")

    p = sub.add_parser("eval", help="rank-1 and VR@FAR of a checkpoint's probe-net")
    _common(p)
    p.add_argument("--checkpoint", help="checkpoint file (eval.checkpoint)")
    p.add_argument("--data", help="corpus directory (data.root)")
    p.add_argument("--fold", type=int, action="append", help="fold to evaluate (repeatable)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--masked", dest="probe_masked", action="store_true", default=None,
                   help="masked NIR probes (default)")
    g.add_argument("--non-masked", dest="probe_masked", action="store_false",
                   help="non-masked NIR probes")

    p = sub.add_parser("report", help="fold table and training curves of a run directory")
    p.add_argument("run", help="directory holding train_log.jsonl and/or eval.json")
    p.add_argument("--out", help="where to write the plots (default: the run directory)")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("repro-tableI", help="plain vs HSST over the train/test masking combinations")
    _common(p)
    p.add_argument("--seed", type=int, help="seed for corpus and training")
    return parser


# ------------------------------------------------------------------ helpers

def _config(args, extra: dict) -> RunConfig:
    overrides = list(args.overrides)
    for key, value in extra.items():
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    if getattr(args, "out", None):
        overrides.append(f"output_dir={json.dumps(args.out)}")
    return load_config(args.config, overrides)


def _load_dataset(cfg: RunConfig) -> Dataset:
    if not cfg.data.root:
        raise ConfigError("data.root is required (path to a corpus made by gen-data)")
    if not (Path(cfg.data.root) / "manifest.json").exists():
        raise ConfigError(f"data.root={cfg.data.root!r} holds no manifest.json")
    return Dataset.load(cfg.data.root)


def _parse_floats(text: str, n: int, name: str) -> list:
    try:
        vals = [float(v) for v in text.replace("x", ",").split(",")]
    except ValueError:
        raise UsageError(f"{name} expects {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{name} expects {n} comma-separated numbers, got {text!r}")
    return vals


# ------------------------------------------------------------------ commands

def cmd_gen_data(args) -> int:
    cfg = _config(args, {"data.root": args.root, "data.identities": args.identities,
                         "data.seed": args.seed})
    if not cfg.data.root:
        raise ConfigError("data.root is required (use --root)")
    manifest = build_dataset(cfg.data)
    cfg.write_resolved(cfg.data.root, "gen-data")
    print(f"wrote {len(manifest.samples)} samples of {manifest.identity_count} identities to {cfg.data.root}")
    return 0


def cmd_synth_mask(args) -> int:
    extra = {"masksynth.texture": args.texture, "masksynth.posmap": args.posmap,
             "masksynth.template": args.template, "masksynth.out": args.image_out}
    if args.bg is not None:
        extra["masksynth.background"] = _parse_floats(args.bg, 3, "--bg")
    if args.size is not None:
        extra["masksynth.out_size"] = [int(v) for v in _parse_floats(args.size, 2, "--size")]
    cfg = _config(args, extra)
    ms = cfg.masksynth
    if not ms.texture:
        raise ConfigError("masksynth.texture is required (use --texture)")
    if not ms.out:
        raise ConfigError("masksynth.out is required (use --out)")
    texture = masksynth.read_png(ms.texture)
    hu, wu = texture.shape[:2]
    if ms.posmap:
        position, validity = masksynth.read_position_map(ms.posmap)
    else:
        position, validity = masksynth.identity_position_map(hu, wu), np.ones((hu, wu), bool)
    if ms.template in masksynth.TEMPLATE_KINDS:
        if hu != wu:
            raise ConfigError(f"procedural masksynth.template needs a square texture, got {hu}x{wu}")
        template = masksynth.procedural_template(ms.template, hu)
    else:
        template = masksynth.read_template(ms.template)
    out_size = tuple(ms.out_size) if ms.out_size else (hu, wu)
    assets = masksynth.UVAssets(texture, position, validity)
    image = masksynth.synthesize_masked(assets, template, out_size, background=tuple(ms.background))
    masksynth.write_png(ms.out, image)
    out = Path(ms.out)
    cfg.write_resolved(out.parent, "synth-mask").replace(out.with_suffix(".config.json"))
    print(f"wrote {out} ({out_size[0]}x{out_size[1]})")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args, {"train.mode": args.mode, "data.root": args.data,
                         "train.init_checkpoint": args.init, "train.steps": args.steps,
                         "seed": args.seed})
    dataset = _load_dataset(cfg)
    out = cfg.resolve_output("train")
    out.mkdir(parents=True, exist_ok=True)
    tcfg = cfg.train
    if tcfg.init_checkpoint:
        init = load_checkpoint(tcfg.init_checkpoint).inference_params
        if init.arch != cfg.arch:
            raise ConfigError(f"train.init_checkpoint architecture {init.arch} differs from arch section")
    elif tcfg.pretrain_steps > 0:
        log.info("pretraining for %d steps", tcfg.pretrain_steps)
        init = pretrain(cfg.seed, tcfg, cfg.arch)
        save_checkpoint(out / "pretrain.hsst", Checkpoint(probe=init, kind="pretrain",
                                                          meta={"seed": cfg.seed}))
    else:
        init = None
    cfg.write_resolved(out, "train")
    fn = train if tcfg.mode == "hsst" else plain_train
    result = fn(cfg.seed, tcfg, cfg.loss, dataset, cfg.arch, init=init, out_dir=out)
    last = result.log[-1] if result.log else {}
    print(f"{tcfg.mode}: {tcfg.steps} steps, final loss {last.get('loss')}, checkpoint {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    extra = {"eval.checkpoint": args.checkpoint, "data.root": args.data, "eval.folds": args.fold,
             "eval.probe_masked": args.probe_masked}
    cfg = _config(args, extra)
    if not cfg.eval.checkpoint:
        raise ConfigError("eval.checkpoint is required (use --checkpoint)")
    if not Path(cfg.eval.checkpoint).exists():
        raise ConfigError(f"eval.checkpoint={cfg.eval.checkpoint!r} does not exist")
    dataset = _load_dataset(cfg)
    params = load_checkpoint(cfg.eval.checkpoint).inference_params
    folds = cfg.eval.folds if cfg.eval.folds is not None else [cfg.train.fold]
    reports = [evaluate_fold(params, dataset, int(f), cfg.eval.probe_masked, fars=cfg.eval.fars,
                             gallery_per_identity=cfg.eval.gallery_per_identity) for f in folds]
    report = kfold_report(reports)
    out = cfg.resolve_output("eval")
    write_report(report, out)
    cfg.write_resolved(out, "eval")
    print(format_table(report))
    return 0


def cmd_report(args) -> int:
    run = Path(args.run)
    if not run.is_dir():
        raise ConfigError(f"run directory {run} does not exist")
    out = Path(args.out) if args.out else run
    found = False
    log_path = run / "train_log.jsonl"
    if log_path.exists():
        records = [json.loads(line) for line in log_path.read_text().splitlines() if line.strip()]
        for p in plot_training_log(records, out):
            print(f"plot {p}")
        found = True
    eval_path = run / "eval.json"
    if eval_path.exists():
        print(format_table(EvalReport.from_dict(json.loads(eval_path.read_text()))))
        found = True
    if not found:
        raise ConfigError(f"{run} has neither train_log.jsonl nor eval.json")
    return 0


def cmd_repro(args) -> int:
    cfg = _config(args, {"seed": args.seed})
    out = cfg.resolve_output("repro-tableI")
    cfg.write_resolved(out, "repro-tableI")
    table = run_table_one(cfg, cfg.seed, out_dir=out)
    print(table.format())
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "synth-mask": cmd_synth_mask,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
    "repro-tableI": cmd_repro,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on bad flags, 0 on --help
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"hsstlab {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (HSSTError, OSError, ValueError) as exc:
        print(f"hsstlab {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
