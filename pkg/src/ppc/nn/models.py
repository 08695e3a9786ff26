"""Pose regressor over spherical signals, PointNet-style classifier, and the
alignment-classification model that chains them."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import (
    Conv2d,
    Dense,
    Flatten,
    Layer,
    MaxPoolPoints,
    QuatNormalize,
    ReLU,
    Sequential,
    align_backward,
    align_forward,
)


@dataclass(frozen=True)
class PoseRegressorConfig:
    grid_w: int = 64
    grid_h: int = 64
    conv_channels: tuple = (8, 16, 32)
    kernel: int = 3
    stride: int = 2
    dense_widths: tuple = (128,)
    head_widths: tuple = (64, 64)


@dataclass(frozen=True)
class ClassifierConfig:
    num_classes: int = 8
    point_widths: tuple = (64, 128)
    dense_widths: tuple = (64,)


def _mlp(widths, n_in, rng, prefix, final_relu=True):
    layers, d = [], n_in
    for i, w in enumerate(widths):
        layers.append((f"{prefix}{i}", Dense(d, w, rng)))
        if final_relu or i < len(widths) - 1:
            layers.append((f"{prefix}{i}.relu", ReLU()))
        d = w
    return layers, d


def _conv_out(n, kernel, stride):
    return (n + 2 * (kernel // 2) - kernel) // stride + 1


class PoseRegressor:
    """Conv trunk over the ``(1, H, W)`` signal image, then quaternion and translation heads."""

    def __init__(self, cfg: PoseRegressorConfig, rng: np.random.Generator):
        self.cfg = cfg
        layers, c, h, w = [], 1, cfg.grid_h, cfg.grid_w
        for i, ch in enumerate(cfg.conv_channels):
            layers.append((f"conv{i}", Conv2d(c, ch, cfg.kernel, cfg.stride, rng)))
            layers.append((f"conv{i}.relu", ReLU()))
            c, h, w = ch, _conv_out(h, cfg.kernel, cfg.stride), _conv_out(w, cfg.kernel, cfg.stride)
        layers.append(("flatten", Flatten()))
        dense, d = _mlp(cfg.dense_widths, c * h * w, rng, "fc")
        self.trunk = Sequential(layers + dense)
        qh, dq = _mlp(cfg.head_widths, d, rng, "q_fc")
        th, dt = _mlp(cfg.head_widths, d, rng, "t_fc")
        self.q_head = Sequential(qh + [("q_out", Dense(dq, 4, rng))])
        self.t_head = Sequential(th + [("t_out", Dense(dt, 3, rng))])
        self.normalize = QuatNormalize()

    def modules(self):
        return [("trunk", self.trunk), ("qhead", self.q_head), ("thead", self.t_head)]

    def forward(self, signals: np.ndarray):
        """``signals``: ``(B, 1, H, W)`` -> unit quaternions ``(B, 4)``, translations ``(B, 3)``."""
        feat = self.trunk.forward(signals)
        raw = self.q_head.forward(feat)
        return self.normalize.forward(raw), self.t_head.forward(feat)

    def backward(self, d_q: np.ndarray, d_t: np.ndarray) -> None:
        d_feat = self.q_head.backward(self.normalize.backward(d_q))
        d_feat = d_feat + self.t_head.backward(d_t)
        self.trunk.backward(d_feat)


class PointNetClassifier:
    """Shared per-point MLP, max-pool over points, dense layers, logits."""

    def __init__(self, cfg: ClassifierConfig, rng: np.random.Generator):
        self.cfg = cfg
        point, d = _mlp(cfg.point_widths, 3, rng, "mlp")
        dense, d2 = _mlp(cfg.dense_widths, d, rng, "fc")
        self.net = Sequential(point + [("pool", MaxPoolPoints())] + dense
                              + [("out", Dense(d2, cfg.num_classes, rng))])

    def modules(self):
        return [("net", self.net)]

    def forward(self, points: np.ndarray) -> np.ndarray:
        if points.ndim != 3 or points.shape[1] == 0:
            raise ValueError(f"classifier expects non-empty (B, N, 3) points, got {points.shape}")
        return self.net.forward(points)

    def backward(self, d_logits: np.ndarray) -> np.ndarray:
        return self.net.backward(d_logits)


@dataclass(frozen=True)
class ModelConfig:
    pose: PoseRegressorConfig = field(default_factory=PoseRegressorConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    def to_dict(self) -> dict:
        return {"pose": asdict(self.pose), "classifier": asdict(self.classifier)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        def tup(x):
            return {k: tuple(v) if isinstance(v, list) else v for k, v in x.items()}
        return cls(PoseRegressorConfig(**tup(d["pose"])), ClassifierConfig(**tup(d["classifier"])))


class AlgClsModel:
    """Pose regression, rigid alignment of the cloud, then classification."""

    def __init__(self, cfg: ModelConfig, seed: int):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.pose = PoseRegressor(cfg.pose, rng)
        self.classifier = PointNetClassifier(cfg.classifier, rng)

    def named_layers(self) -> list[tuple[str, Layer]]:
        out = []
        for prefix, model in (("pose", self.pose), ("cls", self.classifier)):
            for mname, seq in model.modules():
                for lname, layer in seq.named_layers():
                    out.append((f"{prefix}.{mname}.{lname}", layer))
        return out

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, layer in self.named_layers() for k, v in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": layer.grads[k] for n, layer in self.named_layers() for k in layer.params}

    def zero_grad(self) -> None:
        for _, layer in self.named_layers():
            layer.zero_grad()

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        own = self.parameters()
        missing = set(own) - set(params)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:3]}")
        for n, layer in self.named_layers():
            for k in layer.params:
                v = np.asarray(params[f"{n}.{k}"], dtype=np.float64)
                if v.shape != layer.params[k].shape:
                    raise ValueError(f"shape mismatch for {n}.{k}: {v.shape} vs {layer.params[k].shape}")
                layer.params[k] = v.copy()

    # Forward / backward through the aligned classifier.
    def classify_aligned(self, points, q, t):
        self._pts, self._q = points, q
        return self.classifier.forward(align_forward(points, q, t))

    def backward_aligned(self, d_logits):
        d_aligned = self.classifier.backward(d_logits)
        d_q, d_t, _ = align_backward(self._pts, self._q, d_aligned)
        return d_q, d_t
