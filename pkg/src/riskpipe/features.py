"""Per-channel time-series features, relevance tests and FDR selection.

Every example contributes one series per model channel (its windows
concatenated in time order); 45 features are computed per series, giving
a 270-column matrix for six channels. Relevance is scored per column with
Mann-Whitney U (real-valued) or Fisher's exact test (binary), and columns
are kept by the Benjamini-Yekutieli step-up rule.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .core import MODEL_CHANNELS, Example

log = logging.getLogger(__name__)

QUANTILES = (0.1, 0.25, 0.75, 0.9)
AUTOCORR_LAGS = (1, 2, 5, 10, 60)
PEAK_SUPPORTS = (1, 5, 10)
SIGMA_RATIOS = (1, 2, 3)
N_BANDS = 4
ENTROPY_BINS = 10


def _catalog() -> tuple[str, ...]:
    names = ["mean", "variance", "std", "skewness", "kurtosis", "min", "max", "median"]
    names += [f"quantile.{q}" for q in QUANTILES]
    names += [
        "abs_energy",
        "mean_abs_change",
        "mean_change",
        "mean_crossings",
        "count_above_mean",
        "count_below_mean",
        "longest_strike_above_mean",
        "longest_strike_below_mean",
    ]
    names += [f"autocorrelation.{lag}" for lag in AUTOCORR_LAGS]
    names += [f"number_peaks.{w}" for w in PEAK_SUPPORTS]
    names += ["spectral_centroid"]
    names += [f"band_energy.{b}" for b in range(N_BANDS)]
    names += ["trend_slope", "trend_intercept", "binned_entropy", "c3", "cid_ce"]
    names += [f"ratio_beyond_sigma.{r}" for r in SIGMA_RATIOS]
    names += ["first_location_max", "last_location_max", "first_location_min", "last_location_min"]
    return tuple(names)


SERIES_FEATURES = _catalog()


def feature_names(channels=MODEL_CHANNELS) -> list[str]:
    return [f"{c}.{f}" for c in channels for f in SERIES_FEATURES]


def _longest_run(mask: np.ndarray) -> np.ndarray:
    """Longest run of True per row."""
    c = np.cumsum(mask, axis=1, dtype=np.int64)
    # value of the running count at the most recent False, carried forward
    reset = np.maximum.accumulate(np.where(mask, 0, c), axis=1)
    return (c - reset).max(axis=1)


def _count_peaks(x: np.ndarray, w: int) -> np.ndarray:
    n = x.shape[1]
    if n < 2 * w + 1:
        return np.zeros(x.shape[0])
    mid = x[:, w : n - w]
    ok = np.ones_like(mid, dtype=bool)
    for s in range(1, w + 1):
        ok &= mid > x[:, w - s : n - w - s]
        ok &= mid > x[:, w + s : n - w + s]
    return ok.sum(axis=1).astype(np.float64)


def series_features(x: np.ndarray) -> np.ndarray:
    """Feature catalog for each row of ``x`` ([M, n]); may contain NaN.

    Moment-normalised features of zero-variance rows come out as NaN and
    are imputed by the caller.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    M, n = x.shape
    if n < 3:
        raise ValueError(f"series too short for features: n={n}")
    out = np.empty((M, len(SERIES_FEATURES)))
    col = iter(range(len(SERIES_FEATURES)))

    def put(v):
        out[:, next(col)] = v

    mu = x.mean(axis=1)
    d = x - mu[:, None]
    m2 = (d**2).mean(axis=1)
    sd = np.sqrt(m2)
    flat = m2 <= 1e-24 * np.maximum(1.0, mu**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        safe_m2 = np.where(flat, np.nan, m2)
        put(mu)
        put(m2)
        put(sd)
        put((d**3).mean(axis=1) / safe_m2**1.5)
        put((d**4).mean(axis=1) / safe_m2**2 - 3.0)
        put(x.min(axis=1))
        put(x.max(axis=1))
        put(np.median(x, axis=1))
        for q in np.quantile(x, QUANTILES, axis=1):
            put(q)
        put((x**2).sum(axis=1))
        dx = np.diff(x, axis=1)
        put(np.abs(dx).mean(axis=1))
        put((x[:, -1] - x[:, 0]) / (n - 1))
        above = d > 0
        below = d < 0
        put((d[:, :-1] * d[:, 1:] < 0).sum(axis=1))
        put(above.sum(axis=1))
        put(below.sum(axis=1))
        put(_longest_run(above))
        put(_longest_run(below))
        for lag in AUTOCORR_LAGS:
            if lag < n:
                put((d[:, :-lag] * d[:, lag:]).sum(axis=1) / ((n - lag) * safe_m2))
            else:
                put(np.full(M, np.nan))
        for w in PEAK_SUPPORTS:
            put(_count_peaks(x, w))

        spec = np.abs(np.fft.rfft(x, axis=1))
        freqs = np.arange(spec.shape[1]) / n
        put((spec * freqs).sum(axis=1) / spec.sum(axis=1))
        power = spec**2
        band = np.minimum((freqs * 2 * N_BANDS).astype(np.int64), N_BANDS - 1)
        total = power.sum(axis=1)
        for b in range(N_BANDS):
            put(power[:, band == b].sum(axis=1) / total)

        t = np.arange(n, dtype=np.float64)
        tc = t - t.mean()
        slope = (d * tc).sum(axis=1) / (tc**2).sum()
        put(slope)
        put(mu - slope * t.mean())

        lo = x.min(axis=1, keepdims=True)
        span = x.max(axis=1, keepdims=True) - lo
        idx = np.where(span > 0, np.floor((x - lo) / np.where(span > 0, span, 1.0) * ENTROPY_BINS), 0)
        idx = np.clip(idx, 0, ENTROPY_BINS - 1).astype(np.int64)
        counts = np.stack([(idx == b).sum(axis=1) for b in range(ENTROPY_BINS)], axis=1) / n
        put(np.maximum(0.0, 0.0 - special.xlogy(counts, counts).sum(axis=1)))

        put((x[:, 2:] * x[:, 1:-1] * x[:, :-2]).sum(axis=1) / (n - 2))
        z = d / np.sqrt(safe_m2)[:, None]
        put(np.sqrt((np.diff(z, axis=1) ** 2).sum(axis=1)))
        for r in SIGMA_RATIOS:
            put((np.abs(d) > r * sd[:, None]).mean(axis=1))

        rev = x[:, ::-1]
        put(np.argmax(x, axis=1) / n)
        put(1.0 - np.argmax(rev, axis=1) / n)
        put(np.argmin(x, axis=1) / n)
        put(1.0 - np.argmin(rev, axis=1) / n)
    return out


def _impute(F: np.ndarray) -> int:
    bad = ~np.isfinite(F)
    F[bad] = 0.0
    return int(bad.sum())


def example_series(data: np.ndarray) -> np.ndarray:
    """[N, C, L] example tensor -> [C, N*L] concatenated channel series."""
    data = np.asarray(data)
    N, C, L = data.shape
    return data.transpose(1, 0, 2).reshape(C, N * L)


def extract_features(example: Example | np.ndarray) -> np.ndarray:
    """Feature row (length 45 * channels) for one example, imputed."""
    data = example.data if isinstance(example, Example) else example
    row = series_features(example_series(data)).reshape(-1)
    _impute(row)
    return row


@dataclass
class FeatureMatrix:
    ids: list[str]
    names: list[str]
    values: np.ndarray
    n_imputed: int = 0

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        if self.values.shape != (len(self.ids), len(self.names)):
            raise ValueError(f"values shape {self.values.shape} != ({len(self.ids)}, {len(self.names)})")

    def take(self, mask) -> "FeatureMatrix":
        mask = np.asarray(mask, dtype=bool)
        return FeatureMatrix(self.ids, [n for n, m in zip(self.names, mask) if m], self.values[:, mask], self.n_imputed)


def extract_matrix(
    X: np.ndarray, ids: list[str] | None = None, channels=MODEL_CHANNELS, n_jobs: int = 1, chunk_rows: int = 4096
) -> FeatureMatrix:
    """Features for a stacked batch ``X`` of shape [E, N, C, L]."""
    X = np.asarray(X)
    E, N, C, L = X.shape
    if C != len(channels):
        raise ValueError(f"expected {len(channels)} channels, got {C}")
    series = X.transpose(0, 2, 1, 3).reshape(E * C, N * L)
    rows = max(1, min(chunk_rows, 4_000_000 // max(N * L, 1)))
    bounds = [(s, min(s + rows, E * C)) for s in range(0, E * C, rows)]
    F = np.empty((E * C, len(SERIES_FEATURES)))

    def work(b):
        F[b[0] : b[1]] = series_features(series[b[0] : b[1]])

    if n_jobs > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            list(pool.map(work, bounds))
    else:
        for b in bounds:
            work(b)
    F = F.reshape(E, C * len(SERIES_FEATURES))
    n_bad = _impute(F)
    if n_bad:
        log.info("imputed %d non-finite feature values", n_bad)
    ids = list(ids) if ids is not None else [str(i) for i in range(E)]
    return FeatureMatrix(ids, feature_names(channels), F, n_bad)


# relevance tests


def mann_whitney_u(pos, neg) -> tuple[float, float]:
    """U statistic of ``pos`` over ``neg`` and its two-sided p-value.

    U counts pairs with pos > neg plus half the ties. The p-value uses the
    tie-corrected normal approximation with continuity correction.
    """
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    n1, n2 = len(pos), len(neg)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be non-empty")
    allv = np.concatenate([pos, neg])
    ranks = stats.rankdata(allv)
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    n = n1 + n2
    _, t = np.unique(allv, return_counts=True)
    tie = (t**3 - t).sum() / (n * (n - 1)) if n > 1 else 0.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie)
    if var <= 0:
        return float(u), 1.0
    z = (abs(u - n1 * n2 / 2.0) - 0.5) / np.sqrt(var)
    p = 2.0 * stats.norm.sf(z)
    return float(u), float(min(1.0, max(0.0, p)))


def relevance_pvalue(feature, labels) -> float:
    """Two-sided p-value for association between one feature column and binary labels."""
    x = np.asarray(feature, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if x.shape != y.shape:
        raise ValueError("feature and labels must have the same length")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise ValueError("labels must contain both classes")
    values = np.unique(x)
    if len(values) == 1:
        return 1.0
    if len(values) == 2:
        hi = x == values[1]
        table = [[int(np.sum(hi & (y == 1))), int(np.sum(~hi & (y == 1)))],
                 [int(np.sum(hi & (y == 0))), int(np.sum(~hi & (y == 0)))]]
        return float(stats.fisher_exact(table, alternative="two-sided")[1])
    return mann_whitney_u(x[y == 1], x[y == 0])[1]


def relevance_pvalues(F: np.ndarray, labels, n_jobs: int = 1) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    y = np.asarray(labels)
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            return np.array(list(pool.map(lambda j: relevance_pvalue(F[:, j], y), range(F.shape[1]))))
    return np.array([relevance_pvalue(F[:, j], y) for j in range(F.shape[1])])


def benjamini_yekutieli(pvalues, q: float = 0.05) -> np.ndarray:
    """Boolean mask of p-values kept by the BY step-up rule at FDR level ``q``.

    Every p-value tied with the largest accepted one is kept as well.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must be in (0, 1)")
    p = np.asarray(pvalues, dtype=np.float64)
    m = len(p)
    if m == 0:
        return np.zeros(0, dtype=bool)
    c_m = np.sum(1.0 / np.arange(1, m + 1))
    ps = np.sort(p)
    ok = ps <= np.arange(1, m + 1) * q / (m * c_m)
    if not ok.any():
        return np.zeros(m, dtype=bool)
    k = int(np.flatnonzero(ok)[-1])
    return p <= ps[k]


@dataclass
class PValueTable:
    names: list[str]
    pvalues: np.ndarray
    q: float
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        self.pvalues = np.asarray(self.pvalues, dtype=np.float64)
        self.mask = benjamini_yekutieli(self.pvalues, self.q)

    @property
    def selected(self) -> list[str]:
        return [n for n, m in zip(self.names, self.mask) if m]

    def to_json(self) -> dict:
        return {
            "q": self.q,
            "features": [
                {"name": n, "pvalue": float(p), "selected": bool(m)}
                for n, p, m in zip(self.names, self.pvalues, self.mask)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PValueTable":
        feats = obj["features"]
        return cls([f["name"] for f in feats], [f["pvalue"] for f in feats], obj["q"])


def select_features(fm: FeatureMatrix, labels, q: float = 0.05, rows=None, n_jobs: int = 1) -> PValueTable:
    """p-values and BY mask computed on ``rows`` only (the training part)."""
    X = fm.values if rows is None else fm.values[np.asarray(rows)]
    y = np.asarray(labels) if rows is None else np.asarray(labels)[np.asarray(rows)]
    return PValueTable(list(fm.names), relevance_pvalues(X, y, n_jobs=n_jobs), q)
