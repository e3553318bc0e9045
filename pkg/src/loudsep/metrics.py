"""SI-SDR and windowed distortion-filter SDR.

The framewise SDR projects each estimate window onto ``filter_len`` delayed
copies of the (zero-padded) reference window.  Because the reference is
zero outside the window, the Gram matrix of those copies is the symmetric
Toeplitz matrix of the reference autocorrelation, solved here by Levinson
recursion.  Each channel gets its own filter; energies are summed over
channels before taking the ratio.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numba
import numpy as np
import scipy.linalg

from .audio_io import STEM_NAMES, AudioClip, StemSet
from .errors import ConfigurationError, ConsistencyError, InsufficientDurationError

SDR_CAP = 300.0
_SINGULAR_MARGIN = 1e-9


@dataclass(frozen=True)
class ProjectionConfig:
    filter_len: int = 512
    window: float = 1.0
    hop: float = 1.0

    def __post_init__(self):
        if self.filter_len < 1:
            raise ConfigurationError("filter_len must be at least 1")
        if not (self.hop > 0 and self.window >= self.hop):
            raise ConfigurationError("need window >= hop > 0")

    def frames(self, sample_rate: int) -> tuple[int, int]:
        win = int(round(self.window * sample_rate))
        hop = int(round(self.hop * sample_rate))
        if win <= self.filter_len:
            raise ConfigurationError(
                f"window of {win} samples must exceed filter_len {self.filter_len}"
            )
        return win, hop


@dataclass
class FramewiseScore:
    per_window: list[float]
    median: float
    mean: float
    n_excluded: int

    @classmethod
    def from_windows(cls, values: Sequence[float]) -> "FramewiseScore":
        finite = [float(v) for v in values if math.isfinite(v)]
        excluded = len(values) - len(finite)
        if finite:
            return cls(finite, statistics.median(finite), statistics.fmean(finite), excluded)
        return cls([], math.nan, math.nan, excluded)

    def to_json(self) -> dict:
        return {"per_window": self.per_window, "median": self.median,
                "mean": self.mean, "n_excluded": self.n_excluded}


@dataclass
class EvalResult:
    track_id: str
    sdr: dict[str, FramewiseScore] = field(default_factory=dict)
    si_sdr: dict[str, float] = field(default_factory=dict)

    def avg(self) -> dict[str, float]:
        """Mean over stems of the median SDR, mean SDR and SI-SDR."""
        return {
            "median": statistics.fmean(s.median for s in self.sdr.values()),
            "mean": statistics.fmean(s.mean for s in self.sdr.values()),
            "si_sdr": statistics.fmean(self.si_sdr.values()),
        }

    def to_json(self) -> dict:
        return {
            "track_id": self.track_id,
            "sdr": {k: v.to_json() for k, v in self.sdr.items()},
            "si_sdr": dict(self.si_sdr),
            "avg": self.avg(),
        }


def _db(num: float, den: float) -> float:
    if den <= 0:
        return SDR_CAP
    if num <= 0:
        return -math.inf
    return min(SDR_CAP, 10.0 * math.log10(num / den))


def si_sdr(reference: AudioClip, estimate: AudioClip) -> float:
    """Scale-invariant SDR in dB, channels concatenated; capped at 300 dB."""
    if not reference.same_layout(estimate):
        raise ConsistencyError(f"shape mismatch: {reference.shape} vs {estimate.shape}")
    ref = reference.samples.ravel()
    est = estimate.samples.ravel()
    ref_energy = float(np.dot(ref, ref))
    if ref_energy <= 0:
        raise ValueError("reference has zero energy")
    scale = float(np.dot(est, ref)) / ref_energy
    target = scale * ref
    noise = est - target
    return _db(float(np.dot(target, target)), float(np.dot(noise, noise)))


@numba.njit(cache=True)
def levinson_solve(r, b):
    """Solve ``toeplitz(r) @ x = b`` for symmetric Toeplitz ``r``.

    Returns ``(x, ok)``; ``ok`` is False when a reflection coefficient
    reaches ``1 - 1e-9`` in magnitude (near-singular system).
    """
    n = r.size
    x = np.zeros(n)
    a = np.zeros(n)
    tmp = np.zeros(n)
    if r[0] <= 0.0:
        return x, False
    a[0] = 1.0
    err = r[0]
    x[0] = b[0] / r[0]
    for m in range(1, n):
        acc = r[m]
        for i in range(1, m):
            acc += a[i] * r[m - i]
        k = -acc / err
        if abs(k) >= 1.0 - 1e-9:
            return x, False
        for i in range(m + 1):
            tmp[i] = a[i]
        for i in range(1, m + 1):
            a[i] = tmp[i] + k * tmp[m - i]
        err *= 1.0 - k * k
        if err <= 0.0:
            return x, False
        gamma = 0.0
        for i in range(m):
            gamma += x[i] * r[m - i]
        mu = (b[m] - gamma) / err
        for i in range(m + 1):
            x[i] += mu * a[m - i]
    return x, True


def solve_toeplitz(r: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Levinson solve with a dense least-squares fallback near singularity."""
    r = np.ascontiguousarray(r, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    x, ok = levinson_solve(r, b)
    if ok:
        return x
    return np.linalg.lstsq(scipy.linalg.toeplitz(r), b, rcond=None)[0]


def _xcorr(ref: np.ndarray, sig: np.ndarray, lags: int, nfft: int) -> np.ndarray:
    """c[k] = sum_n ref[n] * sig[n + k] for k in [0, lags)."""
    rf = np.fft.rfft(ref, nfft)
    sf = np.fft.rfft(sig, nfft)
    return np.fft.irfft(np.conj(rf) * sf, nfft)[:lags]


def project_window(ref: np.ndarray, est: np.ndarray, filter_len: int) -> tuple[float, float] | None:
    """Target and distortion energies of one single-channel window.

    Returns ``None`` when the reference is silent (singular system).
    """
    if not np.any(ref):
        return None
    n = ref.size
    nfft = 1 << int(math.ceil(math.log2(n + filter_len - 1)))
    autocorr = _xcorr(ref, ref, filter_len, nfft)
    cross = _xcorr(ref, est, filter_len, nfft)
    taps = solve_toeplitz(autocorr, cross)
    target = np.convolve(ref, taps)
    distortion = -target
    distortion[:n] += est
    return float(np.dot(target, target)), float(np.dot(distortion, distortion))


def window_starts(n_frames: int, win: int, hop: int) -> range:
    if n_frames < win:
        raise InsufficientDurationError(f"{n_frames} frames is shorter than one {win}-frame window")
    return range(0, n_frames - win + 1, hop)


def framewise_sdr(reference: AudioClip, estimate: AudioClip,
                  config: ProjectionConfig | None = None) -> FramewiseScore:
    config = config or ProjectionConfig()
    if not reference.same_layout(estimate):
        raise ConsistencyError(f"shape mismatch: {reference.shape} vs {estimate.shape}")
    win, hop = config.frames(reference.sample_rate)
    values = []
    for start in window_starts(reference.n_frames, win, hop):
        target_energy = 0.0
        distortion_energy = 0.0
        live = False
        for c in range(reference.n_channels):
            ref = reference.samples[c, start:start + win]
            est = estimate.samples[c, start:start + win]
            energies = project_window(ref, est, config.filter_len)
            if energies is None:
                distortion_energy += float(np.dot(est, est))
                continue
            live = True
            target_energy += energies[0]
            distortion_energy += energies[1]
        values.append(_db(target_energy, distortion_energy) if live else math.nan)
    return FramewiseScore.from_windows(values)


def evaluate_stemsets(reference: StemSet, estimate: StemSet,
                      config: ProjectionConfig | None = None,
                      track_id: str = "", stems: Sequence[str] = STEM_NAMES) -> EvalResult:
    result = EvalResult(track_id)
    for name in stems:
        if name not in reference.stems or name not in estimate.stems:
            raise ConsistencyError(f"{track_id}: stem {name!r} missing from reference or estimate")
        ref = reference.stems[name]
        est = estimate.stems[name]
        result.sdr[name] = framewise_sdr(ref, est, config)
        result.si_sdr[name] = si_sdr(ref, est)
    return result


def aggregate_tracks(results: Sequence[EvalResult]) -> dict[str, dict[str, float]]:
    """Median of track medians and mean of track means per stem, plus ``avg``."""
    if not results:
        raise ValueError("aggregate_tracks needs at least one result")
    stems = list(results[0].sdr)
    summary = {}
    for name in stems:
        medians = [r.sdr[name].median for r in results if math.isfinite(r.sdr[name].median)]
        means = [r.sdr[name].mean for r in results if math.isfinite(r.sdr[name].mean)]
        summary[name] = {
            "median": statistics.median(medians) if medians else math.nan,
            "mean": statistics.fmean(means) if means else math.nan,
            "si_sdr": statistics.fmean(r.si_sdr[name] for r in results),
        }
    summary["avg"] = {
        key: statistics.fmean(summary[name][key] for name in stems)
        for key in ("median", "mean", "si_sdr")
    }
    return summary


def summary_csv(summary: Mapping[str, Mapping[str, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["stem", "median", "mean", "si_sdr"])
    for name, row in summary.items():
        writer.writerow([name, f"{row['median']:.4f}", f"{row['mean']:.4f}", f"{row['si_sdr']:.4f}"])
    return buf.getvalue()


def _json_safe(value):
    # NaN marks "no scorable window"; strict JSON has no NaN, so write null
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def results_json(results: Sequence[EvalResult], summary) -> str:
    doc = {"tracks": [r.to_json() for r in results], "summary": summary}
    return json.dumps(_json_safe(doc), indent=2, sort_keys=True, allow_nan=False)
