"""Driver-grouped, label-stratified train/test splits and k-fold partitions.

Drivers are assigned whole. Each restart shuffles drivers, orders them by
example count (largest first) and greedily puts each one in the part whose
projected size and positive rate end up closest to target; a short
local search (single moves, then pairwise swaps) polishes the result. The
best of ``restarts`` runs wins, ties going to the lowest restart index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class SplitAssignment:
    """Driver -> part. For a train/test split parts are "train"/"test"; for
    k-fold the part is the validation fold index."""

    parts: dict[str, str | int]
    fraction: dict = field(default_factory=dict)
    positive_rate: dict = field(default_factory=dict)
    within_tolerance: bool = True

    def members(self, part) -> list[str]:
        return sorted(d for d, p in self.parts.items() if p == part)

    def mask(self, driver_ids: np.ndarray, part) -> np.ndarray:
        chosen = set(self.members(part))
        return np.array([d in chosen for d in driver_ids], dtype=bool)

    def to_json(self) -> dict:
        return {
            "parts": {d: self.parts[d] for d in sorted(self.parts)},
            "fraction": {str(k): v for k, v in self.fraction.items()},
            "positive_rate": {str(k): v for k, v in self.positive_rate.items()},
            "within_tolerance": self.within_tolerance,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SplitAssignment":
        def key(k):
            return int(k) if k.lstrip("-").isdigit() else k

        return cls(
            parts=dict(obj["parts"]),
            fraction={key(k): v for k, v in obj["fraction"].items()},
            positive_rate={key(k): v for k, v in obj["positive_rate"].items()},
            within_tolerance=obj["within_tolerance"],
        )


def driver_table(driver_ids, labels) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Sorted driver ids with their example and positive counts."""
    driver_ids = np.asarray(driver_ids)
    labels = np.asarray(labels).astype(np.int64)
    drivers, inverse = np.unique(driver_ids, return_inverse=True)
    counts = np.bincount(inverse, minlength=len(drivers)).astype(np.float64)
    pos = np.bincount(inverse, weights=labels, minlength=len(drivers)).astype(np.float64)
    return [str(d) for d in drivers], counts, pos


# Below this many candidate assignments the search is exhaustive and exact.
EXACT_MAX_ASSIGNMENTS = 1 << 16


class _Partitioner:
    def __init__(self, counts, pos, targets, use_rate):
        self.counts = counts
        self.pos = pos
        self.targets = np.asarray(targets, dtype=np.float64)
        self.n = counts.sum()
        self.rate = pos.sum() / self.n
        self.use_rate = use_rate

    def part_cost(self, size, npos, target):
        """Per-part squared deviation; broadcasts over arrays."""
        size = np.asarray(size, dtype=np.float64)
        c = (size / self.n - target) ** 2
        if self.use_rate:
            with np.errstate(invalid="ignore", divide="ignore"):
                rate = np.where(size > 0, npos / np.where(size > 0, size, 1.0), 0.0)
            c = c + (rate - self.rate) ** 2
        return c

    def cost(self, size, npos) -> float:
        return float(np.sum(self.part_cost(size, npos, self.targets)))

    def deviations(self, assign) -> tuple[np.ndarray, np.ndarray]:
        k = len(self.targets)
        size = np.bincount(assign, weights=self.counts, minlength=k)
        npos = np.bincount(assign, weights=self.pos, minlength=k)
        frac_dev = np.abs(size / self.n - self.targets)
        rate = np.where(size > 0, npos / np.maximum(size, 1e-12), np.inf)
        rate_dev = np.abs(rate - self.rate) if self.use_rate else np.zeros(k)
        return frac_dev, rate_dev

    def full_cost(self, assign) -> float:
        k = len(self.targets)
        size = np.bincount(assign, weights=self.counts, minlength=k)
        npos = np.bincount(assign, weights=self.pos, minlength=k)
        return self.cost(size, npos)

    def greedy(self, order) -> np.ndarray:
        k = len(self.targets)
        assign = np.full(len(self.counts), -1, dtype=np.int64)
        size = np.zeros(k)
        npos = np.zeros(k)
        rem_size = self.counts.sum()
        rem_pos = self.pos.sum()
        eye = np.eye(k)
        for d in order:
            rem_size -= self.counts[d]
            rem_pos -= self.pos[d]
            # row p: driver d placed in part p; unassigned drivers spread by target share
            s = size + eye * self.counts[d] + self.targets * rem_size
            q = npos + eye * self.pos[d] + self.targets * rem_pos
            best = int(np.argmin(self.part_cost(s, q, self.targets).sum(axis=1)))
            assign[d] = best
            size[best] += self.counts[d]
            npos[best] += self.pos[d]
        return assign

    def polish(self, assign, max_rounds: int = 200) -> np.ndarray:
        """Best-improvement local search over single moves and pairwise swaps."""
        k = len(self.targets)
        assign = assign.copy()
        for _ in range(max_rounds):
            size = np.bincount(assign, weights=self.counts, minlength=k)
            npos = np.bincount(assign, weights=self.pos, minlength=k)
            base = self.part_cost(size, npos, self.targets)
            best_gain, best_move = 1e-15, None
            members = [np.flatnonzero(assign == p) for p in range(k)]
            for a in range(k):
                D = members[a]
                if len(D) == 0:
                    continue
                for b in range(k):
                    if b == a:
                        continue
                    # move d from a to b
                    if len(D) > 1:
                        ca = self.part_cost(size[a] - self.counts[D], npos[a] - self.pos[D], self.targets[a])
                        cb = self.part_cost(size[b] + self.counts[D], npos[b] + self.pos[D], self.targets[b])
                        gain = base[a] + base[b] - ca - cb
                        i = int(np.argmax(gain))
                        if gain[i] > best_gain:
                            best_gain, best_move = gain[i], ("move", D[i], b)
                    # swap d in a with e in b
                    if b > a and len(members[b]):
                        E = members[b]
                        dc = self.counts[E][None, :] - self.counts[D][:, None]
                        dp = self.pos[E][None, :] - self.pos[D][:, None]
                        ca = self.part_cost(size[a] + dc, npos[a] + dp, self.targets[a])
                        cb = self.part_cost(size[b] - dc, npos[b] - dp, self.targets[b])
                        gain = base[a] + base[b] - ca - cb
                        i, j = np.unravel_index(int(np.argmax(gain)), gain.shape)
                        if gain[i, j] > best_gain:
                            best_gain, best_move = gain[i, j], ("swap", D[i], E[j])
            if best_move is None:
                break
            if best_move[0] == "move":
                assign[best_move[1]] = best_move[2]
            else:
                d, e = best_move[1], best_move[2]
                assign[d], assign[e] = assign[e], assign[d]
        return assign

    def exhaustive(self) -> np.ndarray:
        """Exact minimiser of (worst deviation, cost) over every assignment."""
        k, D = len(self.targets), len(self.counts)
        codes = np.arange(k**D, dtype=np.int64)
        A = (codes[:, None] // k ** np.arange(D)[None, :]) % k
        onehot = A[:, :, None] == np.arange(k)[None, None, :]
        size = np.einsum("adp,d->ap", onehot, self.counts)
        npos = np.einsum("adp,d->ap", onehot, self.pos)
        worst = np.abs(size / self.n - self.targets).max(axis=1)
        if self.use_rate:
            with np.errstate(invalid="ignore", divide="ignore"):
                rate = np.where(size > 0, npos / np.maximum(size, 1e-12), np.inf)
            worst = np.maximum(worst, np.abs(rate - self.rate).max(axis=1))
        cost = self.part_cost(size, npos, self.targets).sum(axis=1)
        best = np.lexsort((codes, cost, worst))[0]
        return A[best].copy()

    def run(self, seed: int, restarts: int) -> np.ndarray:
        if len(self.targets) ** len(self.counts) <= EXACT_MAX_ASSIGNMENTS:
            return self.exhaustive()
        rng = np.random.default_rng(seed)
        best, best_key = None, None
        for r in range(restarts):
            perm = rng.permutation(len(self.counts))
            order = perm[np.argsort(-self.counts[perm], kind="stable")]
            assign = self.polish(self.greedy(order))
            frac_dev, rate_dev = self.deviations(assign)
            worst = max(float(frac_dev.max()), float(rate_dev.max()))
            key = (worst, self.full_cost(assign), r)
            if best_key is None or key < best_key:
                best, best_key = assign, key
        return best


def _summary(part_names, assign, counts, pos, tol, use_rate):
    n = counts.sum()
    rate = pos.sum() / n
    fraction, positive_rate = {}, {}
    ok = True
    for i, name in enumerate(part_names):
        size = counts[assign == i].sum()
        npos = pos[assign == i].sum()
        fraction[name] = float(size / n)
        positive_rate[name] = float(npos / size) if size > 0 else float("nan")
        if use_rate and not abs(positive_rate[name] - rate) <= tol:
            ok = False
    return fraction, positive_rate, ok


def grouped_stratified_split(
    driver_ids,
    labels,
    test_fraction: float = 0.30,
    tol: float = 0.05,
    seed: int = 0,
    restarts: int = 32,
) -> SplitAssignment:
    """Train/test split by driver with the test positive rate kept near the global rate.

    ``within_tolerance`` is False when no assignment met both tolerances
    (best effort is returned anyway).
    """
    drivers, counts, pos = driver_table(driver_ids, labels)
    if len(drivers) < 2:
        raise DataError("need at least 2 drivers to split")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    use_rate = 0 < pos.sum() < counts.sum()
    part = _Partitioner(counts, pos, [1.0 - test_fraction, test_fraction], use_rate)
    assign = part.run(seed, restarts)
    fraction, positive_rate, ok = _summary(["train", "test"], assign, counts, pos, tol, use_rate)
    ok = ok and abs(fraction["test"] - test_fraction) <= tol
    return SplitAssignment(
        parts={d: ("test" if a == 1 else "train") for d, a in zip(drivers, assign)},
        fraction=fraction,
        positive_rate=positive_rate,
        within_tolerance=ok,
    )


def grouped_stratified_kfold(
    driver_ids, labels, k: int = 5, seed: int = 0, tol: float = 0.05, restarts: int = 32
) -> list[SplitAssignment]:
    """k folds of drivers; fold i's SplitAssignment has fold i as "test"."""
    if k < 2:
        raise ValueError("k must be >= 2")
    drivers, counts, pos = driver_table(driver_ids, labels)
    if len(drivers) < k:
        raise DataError(f"need at least k={k} drivers, got {len(drivers)}")
    use_rate = 0 < pos.sum() < counts.sum()
    part = _Partitioner(counts, pos, np.full(k, 1.0 / k), use_rate)
    assign = part.run(seed, restarts)
    # every fold needs at least one driver
    for f in range(k):
        if not np.any(assign == f):
            donor = int(np.argmax(np.bincount(assign, minlength=k)))
            idx = np.flatnonzero(assign == donor)
            assign[idx[np.argmin(counts[idx])]] = f
    fraction, positive_rate, ok = _summary(list(range(k)), assign, counts, pos, tol, use_rate)
    folds = []
    for f in range(k):
        folds.append(
            SplitAssignment(
                parts={d: ("test" if a == f else "train") for d, a in zip(drivers, assign)},
                fraction={"train": 1.0 - fraction[f], "test": fraction[f]},
                positive_rate={
                    "test": positive_rate[f],
                    "train": float(pos[assign != f].sum() / counts[assign != f].sum()),
                },
                within_tolerance=ok,
            )
        )
    return folds


def fold_index(folds: list[SplitAssignment]) -> dict[str, int]:
    """Driver -> validation fold."""
    out = {}
    for i, f in enumerate(folds):
        for d in f.members("test"):
            out[d] = i
    return out
