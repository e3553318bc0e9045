"""Feed-forward lookahead limiter with an exact per-frame gain trace.

The detector takes the running maximum of ``|x|`` (linked over channels)
over ``[n, n + lookahead]``.  The target gain ``min(1, T / env)`` is
followed by a one-pole smoother (attack coefficient while the gain falls,
release coefficient while it recovers).  A final per-sample clamp to
``T / |x[n]|`` makes the ceiling exact.  The lookahead delay is compensated,
so ``output[c, n] == gain[n] * x[c, n]``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numba
import numpy as np

from .audio_io import AudioClip
from .errors import ConfigurationError, ConsistencyError, DataError, SearchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LimiterParams:
    threshold: float = 0.0
    attack: float = 1.0
    release: float = 100.0
    lookahead: float | None = None
    stereo_link: bool = True

    def __post_init__(self):
        if self.lookahead is None:
            object.__setattr__(self, "lookahead", self.attack)
        if not self.release > 0:
            raise ConfigurationError(f"release must be positive, got {self.release}")
        if self.attack < 0:
            raise ConfigurationError(f"attack must be non-negative, got {self.attack}")
        if self.lookahead < self.attack:
            raise ConfigurationError("lookahead must be at least the attack time")

    @property
    def ceiling(self) -> float:
        return 10.0 ** (self.threshold / 20.0)


@dataclass(frozen=True, eq=False)
class GainTrace:
    """Per-frame gain multipliers, shape ``(n_frames,)`` (or per channel)."""

    gain: np.ndarray
    params: LimiterParams | None = None

    def __post_init__(self):
        g = np.asarray(self.gain, dtype=np.float64)
        if not (np.all(g > 0) and np.all(g <= 1)):
            raise DataError("gain trace values must lie in (0, 1]")
        object.__setattr__(self, "gain", g)

    def __len__(self):
        return self.gain.shape[-1]

    def max_reduction_db(self) -> float:
        return float(-20.0 * np.log10(np.min(self.gain)))


def _coefficient(time_ms: float, sample_rate: int) -> float:
    if time_ms <= 0:
        return 0.0
    return math.exp(-1.0 / (time_ms * 1e-3 * sample_rate))


@numba.njit(cache=True, nogil=True)
def _running_max_ahead(x, span):
    """out[n] = max(x[n : n + span + 1]) using a monotonic deque."""
    n = x.size
    out = np.empty(n)
    dq = np.empty(n, dtype=np.int64)
    head = 0
    tail = 0
    j = 0
    for i in range(n):
        stop = min(n - 1, i + span)
        while j <= stop:
            while tail > head and x[dq[tail - 1]] <= x[j]:
                tail -= 1
            dq[tail] = j
            tail += 1
            j += 1
        while dq[head] < i:
            head += 1
        out[i] = x[dq[head]]
    return out


@numba.njit(cache=True, nogil=True)
def _gain_recursion(peak, env, threshold, attack_coef, release_coef):
    n = peak.size
    gain = np.empty(n)
    g = 1.0
    for i in range(n):
        target = threshold / env[i] if env[i] > threshold else 1.0
        coef = attack_coef if target < g else release_coef
        g = target + coef * (g - target)
        if peak[i] > threshold:
            inst = threshold / peak[i]
            if g > inst:
                g = inst
        gain[i] = g
    return gain


def _detector_gain(magnitude: np.ndarray, params: LimiterParams, sample_rate: int) -> np.ndarray:
    span = int(round(params.lookahead * 1e-3 * sample_rate))
    env = _running_max_ahead(magnitude, span)
    return _gain_recursion(
        magnitude, env, params.ceiling,
        _coefficient(params.attack, sample_rate),
        _coefficient(params.release, sample_rate),
    )


def limit(clip: AudioClip, params: LimiterParams) -> tuple[AudioClip, GainTrace]:
    """Limit ``clip`` and return the time-aligned output and gain trace."""
    x = clip.samples
    if not np.all(np.isfinite(x)):
        raise DataError("limiter input contains NaN or Inf")
    if clip.n_channels not in (1, 2):
        raise ConfigurationError(f"limiter supports 1 or 2 channels, got {clip.n_channels}")
    if clip.n_frames == 0:
        return clip.replace(x.copy()), GainTrace(np.ones(0), params)

    mag = np.abs(x)
    if params.stereo_link or clip.n_channels == 1:
        gain = _detector_gain(np.ascontiguousarray(mag.max(axis=0)), params, clip.sample_rate)
        out = x * gain
    else:
        gain = np.stack([_detector_gain(np.ascontiguousarray(m), params, clip.sample_rate) for m in mag])
        out = x * gain
    return clip.replace(out), GainTrace(gain, params)


def max_reduction_db(clip: AudioClip, params: LimiterParams) -> float:
    return limit(clip, params)[1].max_reduction_db()


def find_threshold_for_reduction(
    clip: AudioClip,
    reduction_range: tuple[float, float],
    params_template: LimiterParams | None = None,
    *,
    min_threshold: float = -30.0,
    search_span: float = 24.0,
    tolerance: float = 0.25,
    max_iter: int = 40,
) -> float:
    """Bisect the threshold until the maximum gain reduction lands in the band.

    The search bracket is ``[max(peak_db - search_span, min_threshold), peak_db]``.
    No makeup gain is involved.  Raises :class:`SearchError` when the band is
    out of reach inside the bracket.
    """
    lo_db, hi_db = reduction_range
    if not lo_db < hi_db:
        raise ConfigurationError(f"invalid reduction range {reduction_range}")
    template = params_template or LimiterParams()
    peak = clip.peak()
    if peak <= 0:
        raise SearchError("clip is silent; no threshold produces gain reduction")
    peak_db = 20 * math.log10(peak)
    low_thr = max(peak_db - search_span, min_threshold)
    high_thr = peak_db
    if low_thr >= high_thr:
        raise SearchError(
            f"peak {peak_db:.2f} dBFS lies below the threshold floor {min_threshold:.2f} dBFS",
            bracket=(low_thr, high_thr), achieved=0.0,
        )

    def reduction(thr):
        return max_reduction_db(clip, replace(template, threshold=thr))

    deepest = reduction(low_thr)
    if deepest < lo_db - tolerance:
        raise SearchError(
            f"at most {deepest:.2f} dB reduction reachable in bracket "
            f"[{low_thr:.2f}, {high_thr:.2f}] dBFS, wanted {lo_db}-{hi_db} dB",
            bracket=(low_thr, high_thr), achieved=deepest,
        )

    best = None
    for _ in range(max_iter):
        mid = 0.5 * (low_thr + high_thr)
        red = reduction(mid)
        err = max(lo_db - red, red - hi_db, 0.0)
        if best is None or err < best[1]:
            best = (mid, err, red)
        if err == 0.0:
            return mid
        if red > hi_db:
            low_thr = mid
        else:
            high_thr = mid
    if best[1] <= tolerance:
        return best[0]
    raise SearchError(
        f"bisection ended {best[1]:.3f} dB outside the band after {max_iter} iterations",
        bracket=(low_thr, high_thr), achieved=best[2],
    )


def frame_ratio(original: AudioClip, limited: AudioClip, epsilon: float = 1e-8) -> np.ndarray:
    """Unclamped per-frame ratio limited/original on the linked magnitude.

    Each frame is divided on the channel where ``|original|`` is largest;
    frames whose largest ``|original|`` is below ``epsilon`` get ratio 1.
    """
    if not original.same_layout(limited):
        raise ConsistencyError(f"shape mismatch: {original.shape} vs {limited.shape}")
    x = original.samples
    y = limited.samples
    idx = np.argmax(np.abs(x), axis=0)
    cols = np.arange(x.shape[1])
    num = y[idx, cols]
    den = x[idx, cols]
    ratio = np.ones(x.shape[1])
    live = np.abs(den) >= epsilon
    ratio[live] = num[live] / den[live]
    return ratio


def sample_ratio(original: AudioClip, limited: AudioClip, epsilon: float = 1e-8) -> GainTrace:
    """Divide-based gain recovery, clamped to (0, 1]."""
    ratio = frame_ratio(original, limited, epsilon)
    return GainTrace(np.clip(ratio, np.finfo(np.float64).tiny, 1.0))


def apply_trace(clip: AudioClip, trace: GainTrace | np.ndarray) -> AudioClip:
    gain = trace.gain if isinstance(trace, GainTrace) else np.asarray(trace, dtype=np.float64)
    if gain.shape[-1] != clip.n_frames:
        raise ConsistencyError(f"trace has {gain.shape[-1]} frames, clip has {clip.n_frames}")
    return clip.replace(clip.samples * gain)
