"""Central finite-difference checks for the network and the focal loss."""

import numpy as np

from riskpipe.deepnet import LEARNABLE, NetConfig, backward, dropout_masks, focal_loss, forward, init_params

FLOOR = 1e-6  # absolute scale below which a gradient entry counts as zero


def random_config(rng):
    k = tuple(int(v) for v in rng.integers(1, 5, 3))
    s = tuple(int(v) for v in rng.integers(1, 3, 3))
    L = 1
    for kk, ss in zip(k[::-1], s[::-1]):
        L = (L - 1) * ss + kk
    L += int(rng.integers(2, 8))
    return NetConfig(
        channels=int(rng.integers(1, 4)),
        feature_maps=int(rng.integers(1, 4)),
        kernel_sizes=k,
        strides=s,
        dropout=float(rng.choice([0.0, 0.3])),
        window_length=L,
        n_windows=int(rng.integers(1, 3)),
    )


def rel_error(a, n):
    a, n = np.asarray(a, np.float64), np.asarray(n, np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), FLOOR)))


def network_gradient_error(cfg, seed=0, h=1e-5):
    """Worst relative error over every learnable tensor for a focal-loss objective."""
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed=seed, dtype=np.float64)
    for i in range(3):
        params[f"bn{i}.gamma"] = rng.uniform(0.5, 1.5, cfg.feature_maps)
        params[f"bn{i}.beta"] = rng.normal(0, 0.2, cfg.feature_maps)
    B = 3
    X = rng.normal(size=(B, cfg.n_windows, cfg.channels, cfg.window_length))
    y = np.array([0, 1, 1])
    M = B * cfg.n_windows
    masks = [dropout_masks(M, cfg.feature_maps, cfg.dropout, rng, np.float64) for _ in range(3)]

    def objective():
        logits, st = forward(params, X, "train", masks=masks)
        loss, dl = focal_loss(logits, y, 2.0, 0.4)
        return loss.mean(), st, dl / B

    _, st, dl = objective()
    grads = backward(params, st, dl)
    worst = 0.0
    for name in LEARNABLE:
        w = params[name]
        num = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + h
            up = objective()[0]
            w[idx] = old - h
            down = objective()[0]
            w[idx] = old
            num[idx] = (up - down) / (2 * h)
        worst = max(worst, rel_error(grads[name], num))
    return worst


def focal_gradient_error(rng, n=200, h=1e-6):
    z = rng.normal(0, 3, n)
    y = rng.integers(0, 2, n)
    gamma, alpha = float(rng.uniform(0, 3)), float(rng.uniform(0.05, 0.95))
    _, g = focal_loss(z, y, gamma, alpha)
    num = (focal_loss(z + h, y, gamma, alpha)[0] - focal_loss(z - h, y, gamma, alpha)[0]) / (2 * h)
    return rel_error(g, num)
