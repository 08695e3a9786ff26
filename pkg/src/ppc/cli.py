"""Command-line entry point: ``ppc synth|hpr|train|align|eval|report``.

Exit status: 0 on success, 2 on usage errors, 1 on runtime errors.

``--config FILE`` reads key=value defaults from INI-style sections::

    [corpus]    classes, instances, test_instances, views, points, model_points, seed, mesh_dir
    [camera]    fx, fy, cx, cy, width, height
    [grid]      width, height
    [training]  task, loss, alpha, lambda, epochs, batch_size, lr, momentum, grad_clip,
                seed, n_points, augment, detach_align, conv_channels, dense_widths,
                point_widths, cls_dense_widths

Command-line flags override config values.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DatasetConfig, align_dataset, build_dataset, load_manifest, load_split, read_cloud, write_cloud
from .geometry import PointCloud
from .hpr import hidden_point_removal
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.models import ClassifierConfig, ModelConfig, PoseRegressorConfig
from .nn.train import LOSSES, TASKS, TrainConfig, pose_predictor, train
from .pipeline import (
    METRICS,
    Method,
    evaluate,
    method_predictions,
    report_rows,
    run_loss_ablation,
    write_ablation_csv,
    write_predictions,
    write_report,
)
from .render import PinholeCamera

log = logging.getLogger("ppc")


class UsageError(Exception):
    pass


def _ints(text: str) -> tuple:
    try:
        return tuple(int(x) for x in str(text).replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _bool(text: str) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# ---------------------------------------------------------------------------
# Config file
# ---------------------------------------------------------------------------

CAMERA_KEYS = {"fx": float, "fy": float, "cx": float, "cy": float, "width": int, "height": int}
# config key -> argparse dest, per section
SECTION_DESTS = {
    "corpus": {"classes": "classes", "instances": "instances", "test_instances": "test_instances",
               "views": "views", "points": "points", "model_points": "model_points", "seed": "seed",
               "mesh_dir": "mesh_dir"},
    "grid": {"width": "grid_w", "height": "grid_h"},
    "training": {"task": "task", "loss": "loss", "alpha": "alpha", "lambda": "lam", "epochs": "epochs",
                 "batch_size": "batch_size", "lr": "lr", "momentum": "momentum", "grad_clip": "grad_clip",
                 "seed": "seed", "n_points": "n_points", "augment": "augment",
                 "detach_align": "detach_align", "conv_channels": "conv_channels",
                 "dense_widths": "dense_widths", "point_widths": "point_widths",
                 "cls_dense_widths": "cls_dense_widths"},
}


def read_config(path) -> dict:
    cp = configparser.ConfigParser()
    try:
        if not cp.read(path):
            raise UsageError(f"cannot read config file {path}")
    except configparser.Error as e:
        raise UsageError(f"{path}: {e}") from None
    out = {}
    for section in cp.sections():
        known = CAMERA_KEYS if section == "camera" else SECTION_DESTS.get(section)
        if known is None:
            raise UsageError(f"{path}: unknown section [{section}]")
        for key in cp[section]:
            if key not in known:
                raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
        out[section] = dict(cp[section])
    return out


def _apply_config(sub: argparse.ArgumentParser, cfg: dict, sections) -> None:
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for section in (s for s in sections if s in SECTION_DESTS):
        for key, text in cfg.get(section, {}).items():
            dest = SECTION_DESTS[section][key]
            action = actions.get(dest)
            if action is None:
                continue
            try:
                if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                    value = _bool(text)     # the config names the dest, not the flag
                else:
                    value = action.type(text) if action.type else text
            except (argparse.ArgumentTypeError, ValueError) as e:
                raise UsageError(f"config [{section}] {key}: {e}") from None
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"config [{section}] {key}: {value!r} not in {list(action.choices)}")
            defaults[dest] = value
    if "camera" in sections and "camera" in cfg:
        try:
            defaults["camera"] = {k: CAMERA_KEYS[k](v) for k, v in cfg["camera"].items()}
        except ValueError as e:
            raise UsageError(f"config [camera]: {e}") from None
    sub.set_defaults(**defaults)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_training_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=TASKS, default="joint")
    p.add_argument("--loss", choices=LOSSES, default="reg")
    p.add_argument("--lambda", dest="lam", type=float, default=10.0, help="classification loss weight")
    p.add_argument("--alpha", type=float, default=10.0, help="translation weight in the pose loss")
    p.add_argument("--detach-align", action="store_true",
                   help="stop classification gradients from reaching the pose regressor")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-points", type=int, default=None, help="points per classifier input")
    p.add_argument("--no-augment", dest="augment", action="store_false")
    p.add_argument("--grid", nargs=2, type=int, metavar=("W", "H"), default=None)
    p.add_argument("--grid-w", type=int, default=64, help=argparse.SUPPRESS)
    p.add_argument("--grid-h", type=int, default=64, help=argparse.SUPPRESS)
    p.add_argument("--conv-channels", type=_ints, default=(8, 16, 32))
    p.add_argument("--dense-widths", type=_ints, default=(128,))
    p.add_argument("--point-widths", type=_ints, default=(64, 128))
    p.add_argument("--cls-dense-widths", type=_ints, default=(64,))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps a subcommand's unset flags from clobbering ones given before it.
    common.add_argument("--config", default=argparse.SUPPRESS, help="key=value config file")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="ppc", parents=[common],
                                     description="Partial point cloud pose alignment and classification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = subs.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--instances", type=int, default=40, help="train instances per class")
    p.add_argument("--test-instances", type=int, default=10, help="held-out instances per class")
    p.add_argument("--views", type=int, default=5, help="views per train instance")
    p.add_argument("--points", type=int, default=1024)
    p.add_argument("--model-points", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mesh-dir", default=None, help="directory of <class>/<split>/*.off meshes")
    p.add_argument("--out", required=True)
    p.set_defaults(camera={})

    p = subs.add_parser("hpr", parents=[common], help="keep the points visible from a viewpoint")
    p.add_argument("--input", required=True, help=".ppc or whitespace-separated text cloud")
    p.add_argument("--viewpoint", nargs=3, type=float, required=True, metavar=("X", "Y", "Z"))
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.add_argument("--mask", action="store_true", help="write a 0/1 mask per point instead of the subset")

    p = subs.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    _add_training_args(p)

    p = subs.add_parser("align", parents=[common], help="write a classifier-ready aligned copy of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--pose-source", choices=("predicted", "oracle", "none"), required=True)
    p.add_argument("--ckpt", help="pose checkpoint for --pose-source predicted")
    p.add_argument("--out", required=True)

    p = subs.add_parser("eval", parents=[common], help="score predictions on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--metric", choices=("pose", "cls"), required=True)
    p.add_argument("--split", default="test")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--pred", help="checkpoint or predictions file")
    src.add_argument("--pose-source", choices=("oracle", "random"),
                     help="score ground-truth or random predictions instead")
    p.add_argument("--seed", type=int, default=0, help="seed for --pose-source random")
    p.add_argument("--write-pred", help="also write the scored predictions as JSON lines")
    p.add_argument("--out", help="write metrics JSON here")

    p = subs.add_parser("report", parents=[common], help="emit CSV and gnuplot data files")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--data", help="default dataset for --run entries")
    p.add_argument("--run", action="append", default=[], metavar="NAME=SOURCE[,DATA]",
                   help="method to report: checkpoint, predictions file, 'oracle' or 'random'")
    p.add_argument("--splits", nargs="+", default=["test"])
    p.add_argument("--metrics", nargs="+", default=list(METRICS), choices=METRICS)
    p.add_argument("--ablate-losses", action="store_true",
                   help="train pose-only under reg/geo/pm and write ablation.csv")
    _add_training_args(p)
    return parser


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        cfg = read_config(known.config)
        subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices
        _apply_config(subs["synth"], cfg, ("corpus", "camera"))
        _apply_config(subs["train"], cfg, ("grid", "training"))
        _apply_config(subs["report"], cfg, ("grid", "training"))
    args = parser.parse_args(argv)
    return parser, args


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def model_config(args, num_classes: int) -> ModelConfig:
    w, h = args.grid if args.grid else (args.grid_w, args.grid_h)
    return ModelConfig(
        PoseRegressorConfig(grid_w=w, grid_h=h, conv_channels=tuple(args.conv_channels),
                            dense_widths=tuple(args.dense_widths)),
        ClassifierConfig(num_classes=num_classes, point_widths=tuple(args.point_widths),
                         dense_widths=tuple(args.cls_dense_widths)),
    )


def train_config(args) -> TrainConfig:
    return TrainConfig(task=args.task, loss=args.loss, alpha=args.alpha, lam=args.lam,
                       detach_align=args.detach_align, epochs=args.epochs, batch_size=args.batch_size,
                       lr=args.lr, momentum=args.momentum, grad_clip=args.grad_clip, seed=args.seed,
                       augment=args.augment, n_points=args.n_points)


def cmd_synth(args) -> int:
    cfg = DatasetConfig(n_classes=args.classes, instances=args.instances, test_instances=args.test_instances,
                        views=args.views, points=args.points, model_points=args.model_points, seed=args.seed,
                        camera=PinholeCamera(**args.camera), mesh_dir=args.mesh_dir)
    path = build_dataset(cfg, args.out)
    man = load_manifest(path)
    print(f"wrote {path}: {len(man.split('train'))} train, {len(man.split('test'))} test samples")
    return 0


def cmd_hpr(args) -> int:
    pts = read_cloud(args.input)
    mask = hidden_point_removal(PointCloud(pts), np.array(args.viewpoint), args.gamma)
    if args.mask:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(args.out, mask.astype(int), fmt="%d")
    else:
        write_cloud(args.out, pts[mask])
    print(f"{int(mask.sum())} of {len(pts)} points visible")
    return 0


def cmd_train(args) -> int:
    data = load_split(args.data, "train")
    mcfg, tcfg = model_config(args, data.num_classes), train_config(args)

    def progress(rec):
        log.info("epoch %d loss %.4f", rec["epoch"], rec["loss"])
    model, history = train(mcfg, data, tcfg, progress=progress)
    save_checkpoint(args.out, model, tcfg.to_dict(), history)
    print(f"wrote {args.out}: final loss {history[-1]['loss']:.4f}" if history else f"wrote {args.out}")
    return 0


def cmd_align(args) -> int:
    predictor = None
    if args.pose_source == "predicted":
        if not args.ckpt:
            raise UsageError("--pose-source predicted needs --ckpt")
        model, meta = load_checkpoint(args.ckpt)
        if meta["config"]["train"]["task"] == "cls":
            raise UsageError(f"{args.ckpt} holds a classifier-only model, not a pose regressor")
        predictor = pose_predictor(model)
    path = align_dataset(args.data, args.out, args.pose_source, predictor)
    print(f"wrote {path}")
    return 0


def cmd_eval(args) -> int:
    data = load_split(args.data, args.split)
    source = args.pred or args.pose_source
    preds = method_predictions(Method("eval", source, args.data), data, args.split, args.seed)
    res = evaluate(data, preds)
    if args.metric == "pose":
        if preds.poses is None:
            raise UsageError(f"{source} carries no pose predictions")
        out = {k: res[k] for k in ("pose_acc10", "rot_median", "trans_median")}
    else:
        if preds.labels is None:
            raise UsageError(f"{source} carries no class predictions")
        out = {"cls_acc": res["cls_acc"], "confusion": res["confusion"]}
    out = {"split": args.split, "n": len(data), **out}
    if args.write_pred:
        write_predictions(args.write_pred, data, args.split, preds)
    text = json.dumps(out, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _parse_run(text: str, default_data: str | None) -> Method:
    name, sep, rest = text.partition("=")
    if not sep or not name or not rest:
        raise UsageError(f"--run expects NAME=SOURCE[,DATA], got {text!r}")
    source, _, data = rest.partition(",")
    data = data or default_data
    if not data:
        raise UsageError(f"--run {name}: no dataset given and no --data default")
    return Method(name, source, data)


def cmd_report(args) -> int:
    if not args.run and not args.ablate_losses:
        raise UsageError("report needs at least one --run or --ablate-losses")
    if args.run:
        methods = [_parse_run(r, args.data) for r in args.run]
        names = [m.name for m in methods]
        if len(set(names)) != len(names):
            raise UsageError("duplicate --run names")
        rows = report_rows(methods, args.splits, args.metrics, args.seed)
        path = write_report(rows, args.out)
        print(f"wrote {path}: {len(rows)} rows")
    if args.ablate_losses:
        if not args.data:
            raise UsageError("--ablate-losses needs --data")
        num_classes = len(load_manifest(args.data).classes)
        results = run_loss_ablation(args.data, model_config(args, num_classes), train_config(args))
        path = Path(args.out) / "ablation.csv"
        write_ablation_csv(results, path)
        print(f"wrote {path}: " + ", ".join(f"{r['rank']}. {r['loss']} {r['pose_acc10']:.4f}" for r in results))
    return 0


COMMANDS = {"synth": cmd_synth, "hpr": cmd_hpr, "train": cmd_train, "align": cmd_align,
            "eval": cmd_eval, "report": cmd_report}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        parser, args = parse_args(argv)
    except UsageError as e:
        print(f"ppc: error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"ppc: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - report any runtime failure as exit 1
        log.debug("failure", exc_info=True)
        print(f"ppc: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
