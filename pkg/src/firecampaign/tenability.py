"""Visibility time-averaging and the scalar "badness" score of a fire run.

For bin ``i`` of the history the score adds

    fraction of eye-level cells with visibility < low_vis_threshold
    + alpha * max(1 - i / decay_bins, 0) * mean(max(deficit_reference - vis, 0))

with counts and means pooled over the cells of all floors (or taken per
floor and averaged, with ``per_floor=True``). Void cells (NaN) are skipped.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from ._io import atomic_write_text


class IncompleteHistory(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TenabilityConfig:
    alpha: float = 10.0
    low_vis_threshold: float = 10.0
    deficit_reference: float = 20.0
    decay_bins: int = 80
    n_bins: int = 120
    bin_width: float = 15.0
    vis_cap: float = 30.0

    def __post_init__(self):
        for name in ("alpha", "low_vis_threshold", "deficit_reference", "decay_bins",
                     "n_bins", "bin_width", "vis_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.decay_bins > self.n_bins:
            raise ValueError("decay_bins must not exceed n_bins")

    @property
    def max_score(self) -> float:
        weights = sum(max(self.decay_bins - i, 0) for i in range(self.n_bins)) / self.decay_bins
        return self.n_bins + self.alpha * self.deficit_reference * weights

    def rescaled(self, duration: float) -> "TenabilityConfig":
        """Same bin counts stretched over a shorter or longer run."""
        from dataclasses import replace

        return replace(self, bin_width=duration / self.n_bins)


@dataclass
class VisibilityHistory:
    bins: np.ndarray  # (n_bins, floors, ny, nx); NaN marks void cells

    def validate(self, config: TenabilityConfig) -> None:
        if self.bins.ndim != 4:
            raise ShapeMismatch(f"expected (bins, floors, ny, nx), got shape {self.bins.shape}")
        if self.bins.shape[0] != config.n_bins:
            raise ShapeMismatch(f"history has {self.bins.shape[0]} bins, expected {config.n_bins}")
        finite = self.bins[~np.isnan(self.bins)]
        if finite.size and (finite.min() < 0 or finite.max() > config.vis_cap):
            raise ValueError(f"visibility outside [0, {config.vis_cap}]")


def bin_time_average(raw: np.ndarray, dt_out: float | None = None, config: TenabilityConfig | None = None,
                     times: np.ndarray | None = None) -> VisibilityHistory:
    """Average raw slices into ``n_bins`` windows of ``bin_width`` seconds.

    Sample ``k`` is taken at ``times[k]`` (default ``k * dt_out``) and is
    assumed to stand for ``[t_k, t_k + dt_out)``. Bin ``i`` is the cell-wise
    mean of samples with ``i*w <= t < (i+1)*w``.
    """
    config = config or TenabilityConfig()
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 4:
        raise ShapeMismatch(f"expected raw slices of shape (samples, floors, ny, nx), got {raw.shape}")
    if times is None:
        if dt_out is None:
            raise ValueError("give either dt_out or times")
        times = np.arange(raw.shape[0]) * dt_out
    times = np.asarray(times, dtype=np.float64)
    if times.shape != (raw.shape[0],):
        raise ShapeMismatch("times must have one entry per sample")
    step = dt_out if dt_out is not None else (np.min(np.diff(times)) if len(times) > 1 else 0.0)
    w = config.bin_width
    span = (times[-1] + step) if len(times) else 0.0
    needed = config.n_bins * w
    if span < needed - 1e-9 * needed:
        raise IncompleteHistory(f"history spans {span:g} s, need {needed:g} s")
    idx = np.floor(times / w + 1e-9).astype(np.int64)
    out = np.empty((config.n_bins,) + raw.shape[1:])
    for i in range(config.n_bins):
        sel = idx == i
        if not sel.any():
            raise IncompleteHistory(f"no samples fall in bin {i}")
        out[i] = raw[sel].mean(axis=0)
    return VisibilityHistory(out)


@dataclass
class BadnessResult:
    score: float
    term1: np.ndarray
    term2: np.ndarray


def _weights(config: TenabilityConfig) -> np.ndarray:
    i = np.arange(config.n_bins)
    return np.maximum(config.decay_bins - i, 0).astype(np.float64)


def badness(history: VisibilityHistory, config: TenabilityConfig | None = None,
            per_floor: bool = False) -> BadnessResult:
    config = config or TenabilityConfig()
    history.validate(config)
    vis = history.bins
    n = vis.shape[0]
    valid = ~np.isnan(vis)
    low = (vis < config.low_vis_threshold) & valid
    deficit = np.where(valid, np.maximum(config.deficit_reference - vis, 0.0), 0.0)
    if per_floor:
        cells = valid.reshape(n, vis.shape[1], -1).sum(axis=2)
        frac = low.reshape(n, vis.shape[1], -1).sum(axis=2) / cells
        mdef = deficit.reshape(n, vis.shape[1], -1).sum(axis=2) / cells
        frac, mdef = frac.mean(axis=1), mdef.mean(axis=1)
    else:
        cells = valid.reshape(n, -1).sum(axis=1)
        frac = low.reshape(n, -1).sum(axis=1) / cells
        mdef = deficit.reshape(n, -1).sum(axis=1) / cells
    # alpha * (decay - i) * mean / decay keeps integer-valued fields exact
    term2 = config.alpha * _weights(config) * mdef / config.decay_bins
    score = math.fsum(np.concatenate([frac, term2]))
    return BadnessResult(score, frac, term2)


def score_slices(raw: np.ndarray, dt_out: float, config: TenabilityConfig | None = None,
                 per_floor: bool = False) -> float:
    config = config or TenabilityConfig()
    return badness(bin_time_average(raw, dt_out, config), config, per_floor).score


def breakdown_csv(result: BadnessResult) -> str:
    buf = io.StringIO()
    buf.write("bin,term1,term2,cumulative\n")
    total = 0.0
    for i, (a, b) in enumerate(zip(result.term1.tolist(), result.term2.tolist())):
        total += a + b
        buf.write(f"{i},{a!r},{b!r},{total!r}\n")
    return buf.getvalue()


def write_breakdown(path, result: BadnessResult):
    return atomic_write_text(path, breakdown_csv(result))
