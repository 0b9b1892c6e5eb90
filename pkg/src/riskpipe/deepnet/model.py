"""Three-block 1-D convolutional network over multi-window examples.

Each window passes through (valid conv -> batch norm -> ELU -> spatial
dropout) three times, is averaged over time, then the example's window
vectors are averaged and mapped to one logit by an affine head.

Tensors inside a block are laid out [M, F, T] with M = batch * windows.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError

LAYERS = 3


@dataclass(frozen=True)
class NetConfig:
    channels: int = 6
    feature_maps: int = 10
    kernel_sizes: tuple[int, ...] = (31, 8, 4)
    strides: tuple[int, ...] = (2, 2, 1)
    dropout: float = 0.57
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    window_length: int = 3600
    n_windows: int = 60

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if len(self.kernel_sizes) != LAYERS or len(self.strides) != LAYERS:
            raise ConfigError(f"need {LAYERS} kernel sizes and strides")
        if min(self.kernel_sizes) < 1 or min(self.strides) < 1:
            raise ConfigError("kernel sizes and strides must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.channels < 1 or self.feature_maps < 1:
            raise ConfigError("channels and feature_maps must be >= 1")
        self.lengths()

    def lengths(self, L: int | None = None) -> list[int]:
        """Sequence length entering and leaving each conv layer."""
        out = [self.window_length if L is None else int(L)]
        for k, s in zip(self.kernel_sizes, self.strides):
            n = (out[-1] - k) // s + 1
            if out[-1] < k or n < 1:
                raise ConfigError(f"window length {out[0]} too short for kernels {self.kernel_sizes}")
            out.append(n)
        return out

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "NetConfig":
        return cls(**obj)


def conv_out_length(L: int, k: int, s: int) -> int:
    return (L - k) // s + 1


LEARNABLE = tuple(
    [f"conv{i}.{p}" for i in range(LAYERS) for p in ("weight", "bias")]
    + [f"bn{i}.{p}" for i in range(LAYERS) for p in ("gamma", "beta")]
    + ["head.weight", "head.bias"]
)
BUFFERS = tuple(
    [f"bn{i}.{p}" for i in range(LAYERS) for p in ("running_mean", "running_var")] + ["input.mean", "input.std"]
)


@dataclass
class NetParams:
    config: NetConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, key):
        return self.tensors[key]

    def __setitem__(self, key, value):
        self.tensors[key] = value

    @property
    def dtype(self):
        return self.tensors["head.weight"].dtype

    def copy(self) -> "NetParams":
        return NetParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "NetParams":
        return NetParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def learnable(self) -> dict[str, np.ndarray]:
        return {k: self.tensors[k] for k in LEARNABLE}


def init_params(config: NetConfig, seed: int = 0, dtype=np.float32) -> NetParams:
    """Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights; BN gamma=1, beta=0."""
    rng = np.random.default_rng(seed)
    t = {}
    c_in = config.channels
    F = config.feature_maps
    for i, k in enumerate(config.kernel_sizes):
        bound = np.sqrt(1.0 / (c_in * k))
        t[f"conv{i}.weight"] = rng.uniform(-bound, bound, (F, c_in, k))
        t[f"conv{i}.bias"] = rng.uniform(-bound, bound, F)
        t[f"bn{i}.gamma"] = np.ones(F)
        t[f"bn{i}.beta"] = np.zeros(F)
        t[f"bn{i}.running_mean"] = np.zeros(F)
        t[f"bn{i}.running_var"] = np.ones(F)
        c_in = F
    bound = np.sqrt(1.0 / F)
    t["head.weight"] = rng.uniform(-bound, bound, F)
    t["head.bias"] = rng.uniform(-bound, bound, 1)
    t["input.mean"] = np.zeros(config.channels)
    t["input.std"] = np.ones(config.channels)
    return NetParams(config, {k: np.asarray(v, dtype=dtype) for k, v in t.items()})


# layers


def conv1d(x, W, b, stride):
    """Valid strided convolution: out[m,f,j] = b[f] + sum_c,u W[f,c,u] x[m,c,j*s+u]."""
    M, C, L = x.shape
    F, _, k = W.shape
    n = conv_out_length(L, k, stride)
    out = np.empty((M, F, n), dtype=x.dtype)
    out[...] = b[None, :, None]
    span = stride * (n - 1) + 1
    for u in range(k):
        out += np.matmul(W[:, :, u], x[:, :, u : u + span : stride])
    return out


def conv1d_backward(dout, x, W, stride):
    M, C, L = x.shape
    F, _, k = W.shape
    n = dout.shape[2]
    span = stride * (n - 1) + 1
    dW = np.empty_like(W)
    dx = np.zeros_like(x)
    for u in range(k):
        xs = x[:, :, u : u + span : stride]
        dW[:, :, u] = np.tensordot(dout, xs, axes=([0, 2], [0, 2]))
        dx[:, :, u : u + span : stride] += np.matmul(W[:, :, u].T, dout)
    db = dout.sum(axis=(0, 2))
    return dx, dW, db


def batchnorm_train(z, gamma, beta, eps):
    mean = z.mean(axis=(0, 2))
    var = z.var(axis=(0, 2))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (z - mean[None, :, None]) * inv[None, :, None]
    return gamma[None, :, None] * xhat + beta[None, :, None], xhat, inv, mean, var


def batchnorm_eval(z, gamma, beta, mean, var, eps):
    inv = 1.0 / np.sqrt(var + eps)
    return gamma[None, :, None] * (z - mean[None, :, None]) * inv[None, :, None] + beta[None, :, None]


def batchnorm_backward(dy, xhat, inv, gamma):
    n = dy.shape[0] * dy.shape[2]
    dgamma = (dy * xhat).sum(axis=(0, 2))
    dbeta = dy.sum(axis=(0, 2))
    dxhat = dy * gamma[None, :, None]
    dz = (inv[None, :, None] / n) * (
        n * dxhat - dxhat.sum(axis=(0, 2))[None, :, None] - xhat * (dxhat * xhat).sum(axis=(0, 2))[None, :, None]
    )
    return dz, dgamma, dbeta


def elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0)))


def dropout_masks(M: int, F: int, p: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Spatial dropout mask [M, F]: whole maps zeroed, survivors scaled by 1/(1-p)."""
    if p <= 0:
        return np.ones((M, F), dtype=dtype)
    keep = rng.random((M, F)) >= p
    return (keep / (1.0 - p)).astype(dtype)


# network


@dataclass
class ForwardState:
    x: np.ndarray
    cache: list
    pooled: np.ndarray
    batch_stats: list
    shape: tuple


def _prepare(params: NetParams, batch) -> tuple[np.ndarray, tuple]:
    cfg = params.config
    x = np.asarray(batch)
    if x.ndim != 4 or x.shape[2] != cfg.channels:
        raise ValueError(f"batch must be [B, N, {cfg.channels}, L], got {x.shape}")
    B, N, C, L = x.shape
    cfg.lengths(L)
    x = x.astype(params.dtype, copy=False)
    x = (x - params["input.mean"][None, None, :, None]) / params["input.std"][None, None, :, None]
    return x.reshape(B * N, C, L), (B, N, C, L)


def forward(params: NetParams, batch, mode: str = "eval", rng=None, masks=None):
    """Logits [B] for a batch [B, N, C, L].

    In train mode batch statistics are used and returned in the state (the
    caller updates running statistics); dropout masks are drawn from
    ``rng`` unless given explicitly as a list of [M, F] arrays.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = params.config
    h, shape = _prepare(params, batch)
    B, N = shape[:2]
    M = h.shape[0]
    x0 = h
    cache, stats = [], []
    for i in range(LAYERS):
        W, b = params[f"conv{i}.weight"], params[f"conv{i}.bias"]
        z = conv1d(h, W, b, cfg.strides[i])
        g, be = params[f"bn{i}.gamma"], params[f"bn{i}.beta"]
        if mode == "train":
            y, xhat, inv, mean, var = batchnorm_train(z, g, be, cfg.bn_eps)
            stats.append((mean, var, z.shape[0] * z.shape[2]))
        else:
            y = batchnorm_eval(z, g, be, params[f"bn{i}.running_mean"], params[f"bn{i}.running_var"], cfg.bn_eps)
            xhat = inv = None
        a = elu(y)
        if mode == "train":
            mask = masks[i] if masks is not None else dropout_masks(M, cfg.feature_maps, cfg.dropout, rng, a.dtype)
            out = a * mask[:, :, None]
        else:
            mask = None
            out = a
        cache.append((h, xhat, inv, a, mask))
        h = out
    pooled = h.mean(axis=2).reshape(B, N, -1).mean(axis=1)
    logits = pooled @ params["head.weight"] + params["head.bias"][0]
    return logits, ForwardState(x0, cache, pooled, stats, shape)


def backward(params: NetParams, state: ForwardState, dlogits) -> dict[str, np.ndarray]:
    """Gradients of sum(dlogits * logits) w.r.t. every learnable tensor.

    ``state`` must come from a train-mode forward pass.
    """
    if state is None or not state.batch_stats:
        raise ValueError("backward needs the state of a train-mode forward pass")
    cfg = params.config
    B, N = state.shape[:2]
    dlogits = np.asarray(dlogits, dtype=params.dtype)
    grads = {
        "head.weight": state.pooled.T @ dlogits,
        "head.bias": np.array([dlogits.sum()], dtype=params.dtype),
    }
    dpooled = dlogits[:, None] * params["head.weight"][None, :]
    T = state.cache[-1][3].shape[2]
    dwin = np.repeat(dpooled / N, N, axis=0)
    dh = np.broadcast_to((dwin / T)[:, :, None], state.cache[-1][3].shape)
    for i in reversed(range(LAYERS)):
        h_in, xhat, inv, a, mask = state.cache[i]
        da = dh * mask[:, :, None]
        dy = da * np.where(a > 0, 1.0, a + 1.0).astype(a.dtype)
        dz, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = batchnorm_backward(dy, xhat, inv, params[f"bn{i}.gamma"])
        dh, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = conv1d_backward(
            dz, h_in, params[f"conv{i}.weight"], cfg.strides[i]
        )
    return grads


def update_running_stats(params: NetParams, state: ForwardState) -> None:
    """Exponential running averages; variance stored unbiased."""
    mom = params.config.bn_momentum
    for i, (mean, var, n) in enumerate(state.batch_stats):
        unbiased = var * n / max(n - 1, 1)
        params[f"bn{i}.running_mean"] = ((1 - mom) * params[f"bn{i}.running_mean"] + mom * mean).astype(params.dtype)
        params[f"bn{i}.running_var"] = ((1 - mom) * params[f"bn{i}.running_var"] + mom * unbiased).astype(params.dtype)


def predict_logits(params: NetParams, X, batch_size: int = 64) -> np.ndarray:
    out = [forward(params, X[i : i + batch_size], "eval")[0] for i in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=params.dtype)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
