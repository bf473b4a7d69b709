"""Loss functions and their logit gradients.

All public single-sample functions take 1-D logit vectors and return
(loss, grad_wrt_local_logits).  Teacher logits are always treated as
constants: no gradient flows to them.  `batch_loss_and_grad` is the
vectorized entry point used during local training.

Distillation terms use KL(teacher || student).  Softmaxes subtract the
row max before exponentiation; teacher probabilities below 1e-15
contribute zero to KL sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

METHODS = ("fedavg", "fedprox", "fedntd", "fedntd_mse", "kd", "kd_ntd_interp")
_TEACHER_METHODS = frozenset({"fedntd", "fedntd_mse", "kd", "kd_ntd_interp"})
_KL_TEACHER_FLOOR = 1e-15


@dataclass(frozen=True)
class LossConfig:
    method: str = "fedavg"
    beta: float = 1.0
    tau: float = 1.0
    mu: float = 0.1
    interp_lambda: float = 0.5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if not (self.beta >= 0.0 and np.isfinite(self.beta)):
            raise ValueError(f"beta must be finite and >= 0, got {self.beta}")
        if not (self.tau > 0.0 and np.isfinite(self.tau)):
            raise ValueError(f"tau must be finite and > 0, got {self.tau}")
        if not (self.mu >= 0.0 and np.isfinite(self.mu)):
            raise ValueError(f"mu must be finite and >= 0, got {self.mu}")
        if not (0.0 <= self.interp_lambda <= 1.0):
            raise ValueError(f"interp_lambda must be in [0, 1], got {self.interp_lambda}")

    @property
    def needs_teacher(self) -> bool:
        return self.method in _TEACHER_METHODS


def _rows(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return z[None, :] if z.ndim == 1 else z


def _log_softmax(z: np.ndarray, tau: float) -> np.ndarray:
    s = z / tau
    s = s - s.max(axis=1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def softmax_temp(z, tau: float):
    """Temperature softmax q(c) = exp(z_c/tau) / sum_i exp(z_i/tau)."""
    if not (tau > 0.0):
        raise ValueError(f"tau must be > 0, got {tau}")
    z = np.asarray(z, dtype=np.float64)
    q = np.exp(_log_softmax(_rows(z), tau))
    return q[0] if z.ndim == 1 else q


def _ce_rows(z: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, c = z.shape
    if np.any(y < 0) or np.any(y >= c):
        raise ValueError(f"labels out of range [0, {c})")
    logp = _log_softmax(z, 1.0)
    loss = -logp[np.arange(n), y]
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    return loss, grad


def ce_loss_and_grad(z, y: int) -> tuple[float, np.ndarray]:
    """Cross-entropy against a one-hot label; grad = softmax(z) - onehot(y)."""
    loss, grad = _ce_rows(_rows(z), np.asarray([y]))
    return float(loss[0]), grad[0]


def _kl_rows(z_l: np.ndarray, z_g: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """KL(teacher || student) per row on full softened softmaxes; grad wrt z_l."""
    logp_l = _log_softmax(z_l, tau)
    logp_g = _log_softmax(z_g, tau)
    q_g = np.exp(logp_g)
    terms = np.where(q_g >= _KL_TEACHER_FLOOR, q_g * (logp_g - logp_l), 0.0)
    loss = terms.sum(axis=1)
    grad = (np.exp(logp_l) - q_g) / tau
    return loss, grad


def kd_loss_and_grad(z_l, z_g, tau: float) -> tuple[float, np.ndarray]:
    """Softened-softmax KL distillation over all classes (teacher held fixed).

    Returns the raw KL; any tau**2 rescaling is the caller's business.
    """
    if not (tau > 0.0):
        raise ValueError(f"tau must be > 0, got {tau}")
    z_l, z_g = _rows(z_l), _rows(z_g)
    if z_l.shape != z_g.shape:
        raise ValueError(f"logit shapes differ: {z_l.shape} vs {z_g.shape}")
    loss, grad = _kl_rows(z_l, z_g, tau)
    return float(loss[0]), grad[0]


def _not_true_mask(n: int, c: int, y: np.ndarray) -> np.ndarray:
    if c < 2:
        raise ValueError("need at least 2 classes to exclude the true one")
    if np.any(y < 0) or np.any(y >= c):
        raise ValueError(f"labels out of range [0, {c})")
    mask = np.ones((n, c), dtype=bool)
    mask[np.arange(n), y] = False
    return mask


def not_true_softmax(z, y: int, tau: float) -> np.ndarray:
    """Softmax over the classes other than y.

    Returned vector has length C with the true-class slot set to exactly
    0.0; the remaining entries sum to 1.
    """
    if not (tau > 0.0):
        raise ValueError(f"tau must be > 0, got {tau}")
    z = _rows(z)
    n, c = z.shape
    mask = _not_true_mask(n, c, np.asarray([y]))
    out = np.zeros((n, c))
    out[mask] = np.exp(_log_softmax(z[mask].reshape(n, c - 1), tau)).ravel()
    return out[0]


def _ntd_rows(
    z_l: np.ndarray, z_g: np.ndarray, y: np.ndarray, tau: float
) -> tuple[np.ndarray, np.ndarray]:
    """Not-true distillation: KL(teacher || student) on the reduced softmaxes.

    The gradient at the true-class coordinate is exactly 0.0 because that
    logit never enters the expression.
    """
    n, c = z_l.shape
    mask = _not_true_mask(n, c, y)
    loss, grad_nt = _kl_rows(z_l[mask].reshape(n, c - 1), z_g[mask].reshape(n, c - 1), tau)
    grad = np.zeros((n, c))
    grad[mask] = grad_nt.ravel()
    return loss, grad


def ntd_loss_and_grad(z_l, z_g, y: int, tau: float) -> tuple[float, np.ndarray]:
    if not (tau > 0.0):
        raise ValueError(f"tau must be > 0, got {tau}")
    z_l, z_g = _rows(z_l), _rows(z_g)
    if z_l.shape != z_g.shape:
        raise ValueError(f"logit shapes differ: {z_l.shape} vs {z_g.shape}")
    loss, grad = _ntd_rows(z_l, z_g, np.asarray([y]), tau)
    return float(loss[0]), grad[0]


def _ntd_mse_rows(z_l: np.ndarray, z_g: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, c = z_l.shape
    mask = _not_true_mask(n, c, y)
    diff = np.where(mask, z_l - z_g, 0.0)
    loss = (diff * diff).sum(axis=1) / (c - 1)
    grad = 2.0 * diff / (c - 1)
    return loss, grad


def ntd_mse_loss_and_grad(z_l, z_g, y: int) -> tuple[float, np.ndarray]:
    """Mean squared logit mismatch over the not-true classes only."""
    z_l, z_g = _rows(z_l), _rows(z_g)
    if z_l.shape != z_g.shape:
        raise ValueError(f"logit shapes differ: {z_l.shape} vs {z_g.shape}")
    loss, grad = _ntd_mse_rows(z_l, z_g, np.asarray([y]))
    return float(loss[0]), grad[0]


def fedntd_objective(z_l, z_g, y: int, beta: float, tau: float) -> tuple[float, np.ndarray]:
    """Cross-entropy plus beta times the not-true distillation term.

    beta == 0 short-circuits to plain cross-entropy, bit for bit.
    """
    if beta < 0.0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    ce, ce_grad = ce_loss_and_grad(z_l, y)
    if beta == 0.0:
        return ce, ce_grad
    ntd, ntd_grad = ntd_loss_and_grad(z_l, z_g, y, tau)
    return ce + beta * ntd, ce_grad + beta * ntd_grad


def kd_ntd_interp_objective(
    z_l, z_g, y: int, lam: float, tau: float
) -> tuple[float, np.ndarray]:
    """CE + (1-lam) * full-class KL + lam * not-true KL.

    lam = 0 keeps the full-class distillation; lam = 1 keeps only the
    not-true term.
    """
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    ce, grad = ce_loss_and_grad(z_l, y)
    loss = ce
    if lam < 1.0:
        kd, kd_grad = kd_loss_and_grad(z_l, z_g, tau)
        loss += (1.0 - lam) * kd
        grad = grad + (1.0 - lam) * kd_grad
    if lam > 0.0:
        ntd, ntd_grad = ntd_loss_and_grad(z_l, z_g, y, tau)
        loss += lam * ntd
        grad = grad + lam * ntd_grad
    return loss, grad


def fedprox_penalty(w, w_g, mu: float) -> tuple[float, np.ndarray]:
    """(mu/2) * ||w - w_g||^2 and its gradient mu * (w - w_g)."""
    if mu < 0.0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    w = np.asarray(w, dtype=np.float64)
    w_g = np.asarray(w_g, dtype=np.float64)
    if w.shape != w_g.shape:
        raise ValueError(f"parameter shapes differ: {w.shape} vs {w_g.shape}")
    diff = w - w_g
    return 0.5 * mu * float(diff @ diff), mu * diff


def batch_loss_and_grad(
    cfg: LossConfig, z_l: np.ndarray, y: np.ndarray, z_g: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and logit gradients for a batch under `cfg`.

    The proximal term of fedprox acts on parameters, not logits, and is
    applied by the trainer; here fedprox is plain cross-entropy.
    """
    z_l = np.asarray(z_l, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if cfg.needs_teacher:
        if z_g is None:
            raise ValueError(f"method {cfg.method!r} requires teacher logits")
        z_g = np.asarray(z_g, dtype=np.float64)
        if z_g.shape != z_l.shape:
            raise ValueError(f"logit shapes differ: {z_l.shape} vs {z_g.shape}")

    ce, ce_grad = _ce_rows(z_l, y)
    if cfg.method in ("fedavg", "fedprox"):
        return ce, ce_grad
    if cfg.method == "fedntd":
        if cfg.beta == 0.0:
            return ce, ce_grad
        ntd, ntd_grad = _ntd_rows(z_l, z_g, y, cfg.tau)
        return ce + cfg.beta * ntd, ce_grad + cfg.beta * ntd_grad
    if cfg.method == "fedntd_mse":
        if cfg.beta == 0.0:
            return ce, ce_grad
        mse, mse_grad = _ntd_mse_rows(z_l, z_g, y)
        return ce + cfg.beta * mse, ce_grad + cfg.beta * mse_grad
    if cfg.method == "kd":
        kl, kl_grad = _kl_rows(z_l, z_g, cfg.tau)
        scale = cfg.beta * cfg.tau * cfg.tau
        return (1.0 - cfg.beta) * ce + scale * kl, (1.0 - cfg.beta) * ce_grad + scale * kl_grad
    if cfg.method == "kd_ntd_interp":
        lam = cfg.interp_lambda
        loss, grad = ce.copy(), ce_grad.copy()
        if lam < 1.0:
            kl, kl_grad = _kl_rows(z_l, z_g, cfg.tau)
            loss += (1.0 - lam) * kl
            grad += (1.0 - lam) * kl_grad
        if lam > 0.0:
            ntd, ntd_grad = _ntd_rows(z_l, z_g, y, cfg.tau)
            loss += lam * ntd
            grad += lam * ntd_grad
        return loss, grad
    raise AssertionError(f"unhandled method {cfg.method!r}")
