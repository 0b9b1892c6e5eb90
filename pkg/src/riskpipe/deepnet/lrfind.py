"""Learning-rate range test."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Protocol

import numpy as np

from ..errors import NumericalError

log = logging.getLogger(__name__)


class Trainable(Protocol):
    def state(self): ...

    def restore(self, state) -> None: ...

    def step(self, batch, lr: float) -> float: ...


@dataclass
class LRFinderResult:
    lrs: np.ndarray
    losses: np.ndarray
    smoothed: np.ndarray
    suggestion: float
    fallback: bool


def lr_finder(
    model: Trainable,
    batches: Iterable,
    lr_min: float = 1e-7,
    lr_max: float = 10.0,
    iters: int = 100,
    beta: float = 0.98,
    diverge_factor: float = 4.0,
    skip_start: int = 10,
    skip_end: int = 5,
) -> LRFinderResult:
    """Train with a geometrically growing learning rate and suggest one.

    The loss is smoothed with a bias-corrected moving average; the sweep
    stops once it exceeds ``diverge_factor`` times the best value. The
    suggestion is the rate at the steepest descent of the smoothed loss
    against log(lr), or the rate at its minimum when it never descends.
    The first ``skip_start`` and last ``skip_end`` points are ignored when
    looking for the steepest descent, where the average is still warming up
    or already diverging.
    The model is restored to its starting state afterwards.
    """
    if not 0 < lr_min < lr_max:
        raise ValueError("need 0 < lr_min < lr_max")
    if iters < 2:
        raise ValueError("iters must be >= 2")
    start = model.state()
    ratio = (lr_max / lr_min) ** (1.0 / (iters - 1))
    batches = iter(batches)
    lrs, losses, smoothed = [], [], []
    avg, best = 0.0, np.inf
    try:
        for i in range(iters):
            lr = lr_min * ratio**i
            try:
                batch = next(batches)
            except StopIteration:
                raise ValueError(f"lr_finder needs {iters} batches, got {i}") from None
            loss = float(model.step(batch, lr))
            if not np.isfinite(loss):
                if i == 0:
                    raise NumericalError(f"loss is {loss} at the first step (lr={lr:.3g}); check inputs and initialisation")
                break
            avg = beta * avg + (1 - beta) * loss
            s = avg / (1 - beta ** (i + 1))
            lrs.append(lr)
            losses.append(loss)
            smoothed.append(s)
            if s > diverge_factor * best:
                break
            best = min(best, s)
    finally:
        model.restore(start)

    lrs, losses, smoothed = np.array(lrs), np.array(losses), np.array(smoothed)
    fallback = True
    suggestion = float(lrs[int(np.argmin(smoothed))])
    if len(lrs) >= 3:
        slope = np.gradient(smoothed, np.log(lrs))
        lo, hi = min(skip_start, len(lrs) - 1), max(len(lrs) - skip_end, 1)
        if hi <= lo:
            lo, hi = 0, len(lrs)
        k = lo + int(np.argmin(slope[lo:hi]))
        # rounding in the moving average must not count as a descent
        if slope[k] < -1e-9 * float(np.max(np.abs(smoothed))):
            suggestion, fallback = float(lrs[k]), False
    log.info("lr finder: %d steps, suggestion %.3g%s", len(lrs), suggestion, " (fallback)" if fallback else "")
    return LRFinderResult(lrs, losses, smoothed, suggestion, fallback)
