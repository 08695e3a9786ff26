"""Batched pose losses returning ``(mean loss, d/dq_hat, d/dt_hat)``."""

from __future__ import annotations

import numpy as np

from .layers import quat_matrix_jacobian, quat_to_matrix_batch

_TINY = 1e-12


def _norm_and_grad(v: np.ndarray):
    n = np.linalg.norm(v, axis=-1)
    g = v / np.maximum(n, _TINY)[..., None]
    return n, g


def _translation_term(t, t_hat, alpha):
    n, g = _norm_and_grad(t_hat - t)
    return alpha * n, alpha * g


def reg_loss(q, t, q_hat, t_hat, alpha: float = 10.0, double_cover: bool = True):
    if double_cover:
        flip = np.linalg.norm(q_hat + q, axis=1) < np.linalg.norm(q_hat - q, axis=1)
        q = np.where(flip[:, None], -q, q)
    rot, d_q = _norm_and_grad(q_hat - q)
    tr, d_t = _translation_term(t, t_hat, alpha)
    b = len(q)
    return float((rot + tr).mean()), d_q / b, d_t / b


def geo_loss(q, t, q_hat, t_hat, alpha: float = 10.0):
    """Geodesic rotation angle plus the weighted translation term."""
    d = (q * q_hat).sum(axis=1)
    c = np.clip(2.0 * d * d - 1.0, -1.0, 1.0)
    angle = np.arccos(c)
    # d/dc arccos(c) is unbounded at c = ±1; clamp the slope there.
    slope = -1.0 / np.sqrt(np.maximum(1.0 - c * c, 1e-12))
    d_q = (slope * 4.0 * d)[:, None] * q
    tr, d_t = _translation_term(t, t_hat, alpha)
    b = len(q)
    return float((angle + tr).mean()), d_q / b, d_t / b


def pm_loss(q, t, q_hat, t_hat, model_points):
    """Mean point-matching distance; ``model_points`` is ``(B, M, 3)``."""
    r, r_hat = quat_to_matrix_batch(q), quat_to_matrix_batch(q_hat)
    a = np.einsum("bij,bmj->bmi", r, model_points) + t[:, None]
    p = np.einsum("bij,bmj->bmi", r_hat, model_points) + t_hat[:, None]
    n, g = _norm_and_grad(p - a)          # (B, M), (B, M, 3)
    m = model_points.shape[1]
    per = n.mean(axis=1)
    g = g / m
    d_t = g.sum(axis=1)
    d_r = np.einsum("bmi,bmj->bij", g, model_points)
    d_q = np.einsum("bkij,bij->bk", quat_matrix_jacobian(q_hat), d_r)
    b = len(q)
    return float(per.mean()), d_q / b, d_t / b
