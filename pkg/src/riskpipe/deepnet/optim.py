"""Focal loss and AdamW."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_FLOOR = np.log(1e-12)


def _log_sigmoid(z):
    # ln sigmoid(z), stable for large |z|
    return -np.logaddexp(0.0, -z)


def focal_loss(logits, labels, gamma: float = 2.0, alpha: float = 0.25):
    """Per-example focal loss and its derivative with respect to the logit.

    loss = -alpha_t (1 - p_t)^gamma ln p_t with p = sigmoid(logit),
    p_t = p for label 1 and 1 - p for label 0, alpha_t likewise.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels).astype(np.float64)
    log_p = np.maximum(_log_sigmoid(z), LOG_FLOOR)
    log_q = np.maximum(_log_sigmoid(-z), LOG_FLOOR)
    p = np.exp(_log_sigmoid(z))
    q = np.exp(_log_sigmoid(-z))
    pos = alpha * q**gamma * -log_p
    neg = (1.0 - alpha) * p**gamma * -log_q
    loss = np.where(y == 1, pos, neg)
    # d/dz for y=1: alpha (1-p)^g [g p ln p - (1-p)]; y=0: (1-alpha) p^g [p - g (1-p) ln(1-p)]
    dpos = alpha * q**gamma * (gamma * p * log_p - q)
    dneg = (1.0 - alpha) * p**gamma * (p - gamma * q * log_q)
    grad = np.where(y == 1, dpos, dneg)
    return loss, grad


@dataclass
class AdamWState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self) -> "AdamWState":
        return AdamWState(self.t, {k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()})


def adamw_step(
    params: dict,
    grads: dict,
    state: AdamWState,
    lr: float,
    weight_decay: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict:
    """One decoupled-weight-decay Adam step; returns the new parameter dict.

    ``state`` is advanced in place (t, first and second moments).
    """
    state.t += 1
    t = state.t
    out = {}
    for k, w in params.items():
        g = grads[k]
        m = state.m.get(k)
        v = state.v.get(k)
        if m is None:
            m = np.zeros_like(w)
            v = np.zeros_like(w)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        state.m[k], state.v[k] = m, v
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        out[k] = (w - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * w)).astype(w.dtype)
    return out
