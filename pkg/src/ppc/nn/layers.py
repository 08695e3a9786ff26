"""Layers with hand-written backward passes (float64 numpy).

Each layer caches what its backward pass needs during ``forward`` and writes
parameter gradients into ``self.grads`` during ``backward``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


class Dense(Layer):
    """Affine map over the last axis: ``y = x @ W + b``."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.params["weight"] = glorot_uniform(rng, (n_in, n_out), n_in, n_out)
        self.params["bias"] = np.zeros(n_out)
        self.zero_grad()

    def forward(self, x):
        if x.shape[-1] != self.params["weight"].shape[0]:
            raise ShapeError(f"Dense expects last axis {self.params['weight'].shape[0]}, got {x.shape}")
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dy):
        x2 = self._x.reshape(-1, self._x.shape[-1])
        d2 = dy.reshape(-1, dy.shape[-1])
        self.grads["weight"] = x2.T @ d2
        self.grads["bias"] = d2.sum(axis=0)
        return dy @ self.params["weight"].T


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)


class Flatten(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Conv2d(Layer):
    """Cross-correlation over ``(B, C, H, W)`` inputs on an equirectangular grid.

    The W (longitude) axis wraps around circularly; the H (colatitude) axis is
    zero-padded. Padding is ``k // 2`` on each side.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, rng: np.random.Generator):
        super().__init__()
        if kernel < 1 or stride < 1:
            raise ShapeError("kernel and stride must be >= 1")
        self.kernel, self.stride, self.pad = kernel, stride, kernel // 2
        fan_in, fan_out = c_in * kernel * kernel, c_out * kernel * kernel
        self.params["weight"] = glorot_uniform(rng, (c_out, c_in, kernel, kernel), fan_in, fan_out)
        self.params["bias"] = np.zeros(c_out)
        self.zero_grad()

    def _pad(self, x):
        p = self.pad
        if p == 0:
            return x
        x = np.concatenate([x[..., -p:], x, x[..., :p]], axis=-1)
        return np.pad(x, ((0, 0), (0, 0), (p, p), (0, 0)))

    def forward(self, x):
        w = self.params["weight"]
        if x.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ShapeError(f"Conv2d expects (B, {w.shape[1]}, H, W), got {x.shape}")
        if self.pad > x.shape[-1]:
            raise ShapeError("longitude axis narrower than the padding")
        k, s = self.kernel, self.stride
        xp = self._pad(x)
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]  # B, C, Ho, Wo, k, k
        b, c, ho, wo = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
        out = cols @ w.reshape(w.shape[0], -1).T + self.params["bias"]
        self._cols, self._xshape, self._oshape = cols, x.shape, (b, ho, wo)
        return out.reshape(b, ho, wo, -1).transpose(0, 3, 1, 2)

    def backward(self, dy):
        w = self.params["weight"]
        k, s, p = self.kernel, self.stride, self.pad
        b, ho, wo = self._oshape
        c_out = w.shape[0]
        d2 = dy.transpose(0, 2, 3, 1).reshape(-1, c_out)
        self.grads["weight"] = (d2.T @ self._cols).reshape(w.shape)
        self.grads["bias"] = d2.sum(axis=0)

        dcols = (d2 @ w.reshape(c_out, -1)).reshape(b, ho, wo, w.shape[1], k, k)
        _, c, h, wd = self._xshape
        dxp = np.zeros((b, c, h + 2 * p, wd + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p == 0:
            return dxp
        dx = dxp[:, :, p:p + h, p:p + wd].copy()
        dx[..., -p:] += dxp[:, :, p:p + h, :p]
        dx[..., :p] += dxp[:, :, p:p + h, p + wd:]
        return dx


class MaxPoolPoints(Layer):
    """Max over the point axis: ``(B, N, C) -> (B, C)``."""

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] == 0:
            raise ShapeError(f"MaxPoolPoints expects non-empty (B, N, C), got {x.shape}")
        self._arg = x.argmax(axis=1)
        self._n = x.shape[1]
        return x.max(axis=1)

    def backward(self, dy):
        b, c = dy.shape
        dx = np.zeros((b, self._n, c))
        bi, ci = np.meshgrid(np.arange(b), np.arange(c), indexing="ij")
        dx[bi, self._arg, ci] = dy
        return dx


class QuatNormalize(Layer):
    """Project raw 4-vectors onto the unit sphere."""

    MIN_NORM = 1e-8

    def forward(self, x):
        n = np.linalg.norm(x, axis=-1, keepdims=True)
        if np.any(n < self.MIN_NORM):
            raise FloatingPointError("degenerate quaternion head output (norm < 1e-8)")
        self._n, self._q = n, x / n
        return self._q

    def backward(self, dy):
        q = self._q
        return (dy - q * (dy * q).sum(-1, keepdims=True)) / self._n


class Sequential(Layer):
    def __init__(self, layers: list[tuple[str, Layer]]):
        super().__init__()
        self.layers = layers

    def forward(self, x):
        for _, layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for _, layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def named_layers(self):
        return [(n, l) for n, l in self.layers if l.params]


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


# ---------------------------------------------------------------------------
# Rigid alignment
# ---------------------------------------------------------------------------

def quat_to_matrix_batch(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], axis=1)


def quat_matrix_jacobian(q: np.ndarray) -> np.ndarray:
    """``dR/dq`` for the unit-quaternion formula: shape ``(B, 4, 3, 3)``."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    o = np.zeros_like(w)
    dw = np.stack([np.stack([o, -z, y], -1), np.stack([z, o, -x], -1), np.stack([-y, x, o], -1)], 1)
    dx = np.stack([np.stack([o, y, z], -1), np.stack([y, -2 * x, -w], -1), np.stack([z, w, -2 * x], -1)], 1)
    dy = np.stack([np.stack([-2 * y, x, w], -1), np.stack([x, o, z], -1), np.stack([-w, z, -2 * y], -1)], 1)
    dz = np.stack([np.stack([-2 * z, -w, x], -1), np.stack([w, -2 * z, y], -1), np.stack([x, y, o], -1)], 1)
    return 2.0 * np.stack([dw, dx, dy, dz], axis=1)


def align_forward(points: np.ndarray, q: np.ndarray, t: np.ndarray) -> np.ndarray:
    """``p' = R(q) p + t`` for ``(B, N, 3)`` points."""
    return np.einsum("bij,bnj->bni", quat_to_matrix_batch(q), points) + t[:, None, :]


def align_backward(points: np.ndarray, q: np.ndarray, d_aligned: np.ndarray):
    """Gradients of a scalar loss w.r.t. ``q``, ``t`` and the input points."""
    d_t = d_aligned.sum(axis=1)
    d_r = np.einsum("bni,bnj->bij", d_aligned, points)
    d_q = np.einsum("bkij,bij->bk", quat_matrix_jacobian(q), d_r)
    d_points = np.einsum("bij,bni->bnj", quat_to_matrix_batch(q), d_aligned)
    return d_q, d_t, d_points
