"""Evaluation, baselines, loss ablation and report emission.

Predictions files are JSON lines, one per sample::

    {"split": "test", "instance_id": 12, "view_id": 0, "label": 3,
     "q": [w, x, y, z], "t": [x, y, z]}

``label`` or ``q``/``t`` may be absent when a method predicts only one of them.
Poses are camera-from-canonical, in scene units, like the manifest.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import SplitData, load_split
from .geometry import RigidPose, sample_pose
from .metrics import classification_accuracy, confusion_matrix, pose_accuracy, pose_error, write_report_csv
from .nn.checkpoint import MAGIC as CKPT_MAGIC, load_checkpoint
from .nn.models import AlgClsModel, ModelConfig
from .nn.train import TrainConfig, predict, train

METRICS = ("cls_acc", "pose_acc10", "rot_median", "trans_median")


class PipelineError(RuntimeError):
    pass


@dataclass
class SplitPredictions:
    labels: np.ndarray | None
    poses: list | None


# ---------------------------------------------------------------------------
# Predictions
# ---------------------------------------------------------------------------

def oracle_predictions(data: SplitData) -> SplitPredictions:
    return SplitPredictions(data.labels.copy(), [data.pose(i) for i in range(len(data))])


def random_predictions(data: SplitData, seed: int, ranges=None) -> SplitPredictions:
    """Uniform rotations and translations drawn from the synthesis ranges."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    kw = {} if ranges is None else {"ranges": ranges}
    poses = [sample_pose(rng, **kw) for _ in range(len(data))]
    return SplitPredictions(rng.integers(0, data.num_classes, len(data)), poses)


def model_predictions(model: AlgClsModel, data: SplitData, task: str, n_points=None) -> SplitPredictions:
    if data.aligned and task != "cls":
        raise PipelineError("pose-predicting checkpoints need an unaligned dataset")
    p = predict(model, data, task, n_points=n_points)
    return SplitPredictions(p.labels, p.poses)


def write_predictions(path, data: SplitData, split: str, preds: SplitPredictions) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for i in range(len(data)):
            d = {"split": split, "instance_id": int(data.instance_ids[i]), "view_id": int(data.view_ids[i])}
            if preds.labels is not None:
                d["label"] = int(preds.labels[i])
            if preds.poses is not None:
                d["q"] = [float(x) for x in preds.poses[i].rotation]
                d["t"] = [float(x) for x in preds.poses[i].translation]
            fh.write(json.dumps(d, sort_keys=True) + "\n")


def read_predictions(path, data: SplitData, split: str) -> SplitPredictions:
    """Match predictions to ``data`` by (instance_id, view_id); every sample must be covered."""
    rows = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        if d.get("split", split) == split:
            rows[(d["instance_id"], d["view_id"])] = d
    picked = []
    for iid, vid in zip(data.instance_ids, data.view_ids):
        d = rows.get((int(iid), int(vid)))
        if d is None:
            raise PipelineError(f"{path}: no prediction for split {split} instance {iid} view {vid}")
        picked.append(d)
    labels = np.array([d["label"] for d in picked]) if all("label" in d for d in picked) else None
    poses = [RigidPose(d["q"], d["t"]) for d in picked] if all("q" in d for d in picked) else None
    if labels is None and poses is None:
        raise PipelineError(f"{path}: predictions carry neither labels nor poses")
    return SplitPredictions(labels, poses)


def is_checkpoint(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(len(CKPT_MAGIC)) == CKPT_MAGIC


def load_predictions(path, data: SplitData, split: str) -> SplitPredictions:
    """Predictions from a checkpoint (run on ``data``) or a predictions file."""
    if is_checkpoint(path):
        model, meta = load_checkpoint(path)
        tcfg = meta["config"]["train"]
        return model_predictions(model, data, tcfg["task"], tcfg.get("n_points"))
    return read_predictions(path, data, split)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def pose_metrics(data: SplitData, poses) -> dict:
    errs = [pose_error(data.pose(i), poses[i], data.symmetry[i]) for i in range(len(data))]
    rot = np.array([e.rot_deg for e in errs])
    trans = np.array([e.trans for e in errs])
    return {"pose_acc10": pose_accuracy(errs), "rot_median": float(np.median(rot)),
            "trans_median": float(np.median(trans))}


def cls_metrics(data: SplitData, labels) -> dict:
    return {"cls_acc": classification_accuracy(labels, data.labels),
            "confusion": confusion_matrix(labels, data.labels, data.num_classes).tolist()}


def evaluate(data: SplitData, preds: SplitPredictions) -> dict:
    """Every metric the predictions support; missing ones are NaN."""
    out = dict.fromkeys(METRICS, math.nan)
    if preds.poses is not None:
        out.update(pose_metrics(data, preds.poses))
    if preds.labels is not None:
        out.update(cls_metrics(data, preds.labels))
    return out


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class Method:
    name: str
    source: str                 # checkpoint, predictions file, "oracle" or "random"
    data: str                   # dataset root the method is evaluated on


def method_predictions(m: Method, data: SplitData, split: str, seed: int = 0) -> SplitPredictions:
    if m.source == "oracle":
        return oracle_predictions(data)
    if m.source == "random":
        return random_predictions(data, seed)
    return load_predictions(m.source, data, split)


def report_rows(methods, splits, metrics, seed: int = 0) -> list[tuple]:
    """One ``(method, split, metric, value)`` row per requested combination."""
    bad = [k for k in metrics if k not in METRICS]
    if bad:
        raise PipelineError(f"unknown metrics {bad}; choose from {list(METRICS)}")
    rows = []
    for m in methods:
        for split in splits:
            data = load_split(m.data, split)
            res = evaluate(data, method_predictions(m, data, split, seed))
            rows.extend((m.name, split, k, float(res[k])) for k in metrics)
    return rows


def write_gnuplot(rows, out_dir) -> list[Path]:
    """One ``<metric>.dat`` per metric: a row per method, a column per split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    methods = list(dict.fromkeys(r[0] for r in rows))
    splits = list(dict.fromkeys(r[1] for r in rows))
    table = {(r[0], r[1], r[2]): r[3] for r in rows}
    paths = []
    for metric in dict.fromkeys(r[2] for r in rows):
        path = out_dir / f"{metric}.dat"
        lines = ["# method " + " ".join(splits)]
        for m in methods:
            vals = " ".join(repr(table.get((m, s, metric), math.nan)) for s in splits)
            lines.append(f'"{m}" {vals}')
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return paths


def write_report(rows, out_dir) -> Path:
    out_dir = Path(out_dir)
    path = out_dir / "report.csv"
    write_report_csv(rows, path)
    write_gnuplot(rows, out_dir)
    return path


# ---------------------------------------------------------------------------
# Loss ablation
# ---------------------------------------------------------------------------

ABLATION_FIELDS = ("rank", "loss", "pose_acc10", "rot_median", "trans_median")


def run_loss_ablation(data_root, model_cfg: ModelConfig, train_cfg: TrainConfig,
                      losses=("reg", "geo", "pm"), split: str = "test") -> list[dict]:
    """Train pose-only under each loss with one shared config; rank by 10cm10 accuracy."""
    train_data, eval_data = load_split(data_root, "train"), load_split(data_root, split)
    results = []
    for loss in losses:
        cfg = replace(train_cfg, task="pose", loss=loss)
        model, _ = train(model_cfg, train_data, cfg)
        res = pose_metrics(eval_data, model_predictions(model, eval_data, "pose").poses)
        results.append({"loss": loss, **res})
    results.sort(key=lambda r: (-r["pose_acc10"], r["rot_median"], r["loss"]))
    for i, r in enumerate(results):
        r["rank"] = i + 1
    return results


def write_ablation_csv(results, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in results:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in ABLATION_FIELDS})
