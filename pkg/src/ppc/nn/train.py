"""Training and inference for the pose, classification and joint regimes."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..dataset import SplitData, derive_alignment_target, target_to_camera_pose
from ..geometry import (
    PointCloud,
    RigidPose,
    normalize_unit_sphere,
    quat_canonical,
    quat_multiply,
    quat_to_matrix,
    sample_uniform_rotation,
)
from ..metrics import symmetry_canonicalize
from ..spherical import SphericalGrid, encode_signal
from .layers import align_forward, softmax_cross_entropy
from .losses import geo_loss, pm_loss, reg_loss
from .models import AlgClsModel, ModelConfig

log = logging.getLogger(__name__)

TASKS = ("pose", "cls", "joint")
LOSSES = ("reg", "geo", "pm")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    task: str = "joint"
    loss: str = "reg"
    alpha: float = 10.0
    lam: float = 10.0
    detach_align: bool = False
    double_cover: bool = True
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    momentum: float = 0.9
    grad_clip: float | None = None
    seed: int = 0
    augment: bool = True
    rotate: bool = True
    shift: float = 0.1
    jitter_sigma: float = 0.01
    jitter_clip: float = 0.05
    n_points: int | None = None     # classifier subsample; None keeps every point
    symmetric_labels: bool = True

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("alpha and lambda must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class SGD:
    """Momentum SGD: ``v = mu * v + g``, ``p -= lr * v``."""

    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr, self.momentum = lr, momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, model: AlgClsModel, names=None) -> None:
        grads = model.gradients()
        for n, layer in model.named_layers():
            for k in layer.params:
                key = f"{n}.{k}"
                if names is not None and key not in names:
                    continue
                v = self.velocity.get(key)
                v = grads[key].copy() if v is None else self.momentum * v + grads[key]
                self.velocity[key] = v
                layer.params[k] = layer.params[k] - self.lr * v


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    labels: np.ndarray
    cls_points: np.ndarray                     # (B, N, 3) classifier input (normalized or pre-aligned)
    signals: np.ndarray | None = None          # (B, 1, H, W)
    q_target: np.ndarray | None = None         # (B, 4) alignment targets
    t_target: np.ndarray | None = None
    model_points: np.ndarray | None = None
    centroids: np.ndarray | None = None
    scales: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def _subsample(pts, n, rng):
    if n is None or n >= len(pts):
        return pts
    return pts[np.sort(rng.choice(len(pts), size=n, replace=False))]


HALF_TURN_X = np.array([0.0, 1.0, 0.0, 0.0])


def label_rotation(q, spec, flip: bool = False) -> np.ndarray:
    """Symmetry representative of ``q`` nearest the identity, optionally also over a half turn about x."""
    best = symmetry_canonicalize(q, spec)
    if flip:
        other = symmetry_canonicalize(quat_multiply(q, HALF_TURN_X), spec)
        if abs(other[0]) > abs(best[0]):
            best = other
    return best


def make_batch(data: SplitData, idx, grid: SphericalGrid, cfg: TrainConfig,
               rng: np.random.Generator | None) -> Batch:
    """Assemble a batch; ``rng=None`` disables augmentation and subsampling randomness."""
    augment = cfg.augment and rng is not None
    sub_rng = rng if rng is not None else np.random.default_rng(0)
    cls_pts, signals, qs, ts, cents, scales = [], [], [], [], [], []
    for i in idx:
        pts = data.points[i]
        if data.aligned:
            if augment:
                pts = pts + np.clip(rng.normal(0, cfg.jitter_sigma, pts.shape), -cfg.jitter_clip, cfg.jitter_clip)
            cls_pts.append(_subsample(pts, cfg.n_points, sub_rng))
            continue
        q, t = data.q[i], data.t[i]
        if augment:
            if cfg.rotate:
                a = sample_uniform_rotation(rng)
                ra = quat_to_matrix(a)
                pts = pts @ ra.T
                q, t = quat_multiply(a, q), ra @ t
            s = rng.uniform(-cfg.shift, cfg.shift, 3)
            pts = pts + s
            t = t + s
            pts = pts + np.clip(rng.normal(0, cfg.jitter_sigma, pts.shape), -cfg.jitter_clip, cfg.jitter_clip)
        norm, c, sc = normalize_unit_sphere(PointCloud(pts))
        if cfg.symmetric_labels:
            flip = data.label_flip is not None and bool(data.label_flip[i])
            q = label_rotation(q, data.symmetry[i], flip)
        target = derive_alignment_target(RigidPose(quat_canonical(q), t), c, sc)
        signals.append(encode_signal(norm, grid).as_image())
        qs.append(target.rotation)
        ts.append(target.translation)
        cents.append(c)
        scales.append(sc)
        cls_pts.append(_subsample(norm.points, cfg.n_points, sub_rng))
    batch = Batch(labels=data.labels[idx], cls_points=np.stack(cls_pts))
    if signals:
        batch.signals = np.stack(signals)[:, None]
        batch.q_target, batch.t_target = np.array(qs), np.array(ts)
        batch.model_points = data.model_points[idx]
        batch.centroids, batch.scales = np.array(cents), np.array(scales)
    return batch


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _pose_loss(cfg: TrainConfig, batch: Batch, q_hat, t_hat):
    if cfg.loss == "reg":
        return reg_loss(batch.q_target, batch.t_target, q_hat, t_hat, cfg.alpha, cfg.double_cover)
    if cfg.loss == "geo":
        return geo_loss(batch.q_target, batch.t_target, q_hat, t_hat, cfg.alpha)
    return pm_loss(batch.q_target, batch.t_target, q_hat, t_hat, batch.model_points)


def train_step(model: AlgClsModel, batch: Batch, cfg: TrainConfig) -> dict:
    """Forward and backward for one batch; gradients are left in the model."""
    model.zero_grad()
    out = {}
    if cfg.task == "cls":
        logits = model.classifier.forward(batch.cls_points)
        l_cls, d_logits = softmax_cross_entropy(logits, batch.labels)
        model.classifier.backward(d_logits)
        out.update(loss=l_cls, cls=l_cls, logits=logits)
        return out
    q_hat, t_hat = model.pose.forward(batch.signals)
    l_pos, d_q, d_t = _pose_loss(cfg, batch, q_hat, t_hat)
    out.update(pos=l_pos)
    if cfg.task == "joint":
        logits = model.classify_aligned(batch.cls_points, q_hat, t_hat)
        l_cls, d_logits = softmax_cross_entropy(logits, batch.labels)
        dq_c, dt_c = model.backward_aligned(cfg.lam * d_logits)
        if not cfg.detach_align:
            d_q, d_t = d_q + dq_c, d_t + dt_c
        out.update(cls=l_cls, logits=logits, loss=l_pos + cfg.lam * l_cls)
    else:
        out.update(loss=l_pos)
    model.pose.backward(d_q, d_t)
    return out


def _trainable(model: AlgClsModel, task: str) -> set[str]:
    prefixes = {"pose": ("pose.",), "cls": ("cls.",), "joint": ("pose.", "cls.")}[task]
    return {k for k in model.parameters() if k.startswith(prefixes)}


def _clip(model: AlgClsModel, names, max_norm):
    grads = model.gradients()
    # Sum in a fixed order: set iteration follows the per-process string hash seed.
    total = np.sqrt(sum(float((grads[k] ** 2).sum()) for k in sorted(names)))
    if total > max_norm:
        for n, layer in model.named_layers():
            for k in layer.grads:
                if f"{n}.{k}" in names:
                    layer.grads[k] = layer.grads[k] * (max_norm / total)


def grid_for(model_cfg: ModelConfig) -> SphericalGrid:
    return SphericalGrid(model_cfg.pose.grid_w, model_cfg.pose.grid_h)


def train(model_cfg: ModelConfig, data: SplitData, cfg: TrainConfig, model: AlgClsModel | None = None,
          progress=None) -> tuple[AlgClsModel, list[dict]]:
    """Train ``model`` (fresh from ``cfg.seed`` if None); returns it with a per-epoch log."""
    if data.aligned and cfg.task != "cls":
        raise TrainingError("pre-aligned datasets carry no pose input; train with task=cls")
    if model is None:
        model = AlgClsModel(model_cfg, cfg.seed)
    grid = grid_for(model_cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    opt = SGD(cfg.lr, cfg.momentum)
    names = _trainable(model, cfg.task)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        sums = {"loss": 0.0, "pos": 0.0, "cls": 0.0}
        correct = 0
        for b0 in range(0, len(order), cfg.batch_size):
            idx = order[b0:b0 + cfg.batch_size]
            batch = make_batch(data, idx, grid, cfg, rng)
            out = train_step(model, batch, cfg)
            if not np.isfinite(out["loss"]):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b0 // cfg.batch_size}: "
                                    f"pos={out.get('pos')} cls={out.get('cls')}")
            if cfg.grad_clip:
                _clip(model, names, cfg.grad_clip)
            opt.step(model, names)
            for k in sums:
                sums[k] += out.get(k, 0.0) * len(idx)
            if "logits" in out:
                correct += int((out["logits"].argmax(axis=1) == batch.labels).sum())
        rec = {"epoch": epoch, **{k: v / len(data) for k, v in sums.items()}}
        if cfg.task != "pose":
            rec["train_acc"] = correct / len(data)
        history.append(rec)
        log.info("epoch %d %s", epoch, rec)
        if progress is not None:
            progress(rec)
    return model, history


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

@dataclass
class Predictions:
    labels: np.ndarray | None          # predicted classes
    targets: list | None               # predicted alignment targets (normalized frame)
    poses: list | None                 # predicted camera-frame poses


def predict(model: AlgClsModel, data: SplitData, task: str, batch_size: int = 64,
            n_points: int | None = None) -> Predictions:
    """Deterministic inference over a whole split (no augmentation)."""
    cfg = TrainConfig(task=task, augment=False, n_points=n_points)
    grid = grid_for(model.cfg)
    labels, targets, poses = [], [], []
    for b0 in range(0, len(data), batch_size):
        idx = np.arange(b0, min(b0 + batch_size, len(data)))
        batch = make_batch(data, idx, grid, cfg, None)
        if task == "cls":
            labels.append(model.classifier.forward(batch.cls_points).argmax(axis=1))
            continue
        q_hat, t_hat = model.pose.forward(batch.signals)
        for k in range(len(idx)):
            tgt = RigidPose(q_hat[k], t_hat[k])
            targets.append(tgt)
            poses.append(target_to_camera_pose(tgt, batch.centroids[k], batch.scales[k]))
        if task == "joint":
            logits = model.classifier.forward(align_forward(batch.cls_points, q_hat, t_hat))
            labels.append(logits.argmax(axis=1))
    return Predictions(
        labels=np.concatenate(labels) if labels else None,
        targets=targets or None,
        poses=poses or None,
    )


def pose_predictor(model: AlgClsModel):
    """Callable mapping a normalized ``(N, 3)`` cloud to its predicted alignment."""
    grid = grid_for(model.cfg)

    def run(norm_points):
        sig = encode_signal(norm_points, grid).as_image()[None, None]
        q, t = model.pose.forward(sig)
        return RigidPose(q[0], t[0])
    return run
