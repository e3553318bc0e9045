"""BS.1770 / EBU R128 integrated loudness and loudness-matching gains."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal

from .audio_io import AudioClip
from .errors import ConfigurationError, InsufficientDurationError, SilenceError

SUPPORTED_RATES = (44100, 48000)

# Analog prototype of the K-weighting pre-filter (high shelf) and RLB high-pass,
# fitted so that the bilinear transform at 48 kHz reproduces the published table.
_SHELF_GAIN_DB = 3.999843853973347
_SHELF_Q = 0.7071752369554196
_SHELF_FC = 1681.974450955533
_SHELF_VB_EXP = 0.4996667741545416
_HP_Q = 0.5003270373238773
_HP_FC = 38.13547087602444

_OFFSET = -0.691


@dataclass(frozen=True)
class Biquad:
    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    @property
    def b(self) -> np.ndarray:
        return np.array([self.b0, self.b1, self.b2])

    @property
    def a(self) -> np.ndarray:
        return np.array([1.0, self.a1, self.a2])

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(np.roots(self.a)) < 1.0))


@dataclass(frozen=True)
class KWeighting:
    stage1: Biquad
    stage2: Biquad
    sample_rate: int

    def sos(self) -> np.ndarray:
        return np.array([np.r_[s.b, s.a] for s in (self.stage1, self.stage2)])

    def gain_db(self, freq: float) -> float:
        """Magnitude response of the cascade at ``freq`` Hz."""
        _, h = signal.sosfreqz(self.sos(), worN=[2 * math.pi * freq / self.sample_rate])
        return float(20 * np.log10(np.abs(h[0])))


@dataclass(frozen=True)
class GatingConfig:
    block_length: float = 0.400
    overlap: float = 0.75
    absolute_gate: float = -70.0
    relative_gate: float = -10.0
    channel_weights: tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self):
        if not 0 <= self.overlap < 1:
            raise ConfigurationError(f"overlap must be in [0, 1), got {self.overlap}")
        if self.block_length <= 0:
            raise ConfigurationError("block_length must be positive")
        if self.relative_gate >= 0:
            raise ConfigurationError("relative_gate must be negative")


@dataclass(frozen=True)
class LoudnessReading:
    lufs: float
    n_blocks_total: int
    n_blocks_gated: int


@dataclass(frozen=True)
class LoudnessStats:
    min: float
    max: float
    median: float
    mean: float
    std: float
    n_tracks: int

    def to_json(self) -> dict:
        return {
            "min": self.min, "max": self.max, "median": self.median,
            "mean": self.mean, "std": self.std, "n_tracks": self.n_tracks,
        }


def k_weight_coeffs(sample_rate: int) -> KWeighting:
    """K-weighting biquads by bilinear transform of the analog prototype."""
    if sample_rate not in SUPPORTED_RATES:
        raise ConfigurationError(
            f"unsupported sample rate {sample_rate}; supported: {SUPPORTED_RATES}"
        )
    k = math.tan(math.pi * _SHELF_FC / sample_rate)
    vh = 10 ** (_SHELF_GAIN_DB / 20)
    vb = vh ** _SHELF_VB_EXP
    a0 = 1 + k / _SHELF_Q + k * k
    shelf = Biquad(
        b0=(vh + vb * k / _SHELF_Q + k * k) / a0,
        b1=2 * (k * k - vh) / a0,
        b2=(vh - vb * k / _SHELF_Q + k * k) / a0,
        a1=2 * (k * k - 1) / a0,
        a2=(1 - k / _SHELF_Q + k * k) / a0,
    )
    k = math.tan(math.pi * _HP_FC / sample_rate)
    a0 = 1 + k / _HP_Q + k * k
    highpass = Biquad(
        b0=1.0, b1=-2.0, b2=1.0,
        a1=2 * (k * k - 1) / a0,
        a2=(1 - k / _HP_Q + k * k) / a0,
    )
    return KWeighting(shelf, highpass, sample_rate)


def _block_powers(clip: AudioClip, gating: GatingConfig) -> np.ndarray:
    """Channel-weighted mean-square power of every gating block."""
    if clip.n_channels not in (1, 2):
        raise ConfigurationError(f"loudness supports 1 or 2 channels, got {clip.n_channels}")
    fs = clip.sample_rate
    block = int(round(gating.block_length * fs))
    hop = int(round(gating.block_length * (1 - gating.overlap) * fs))
    if clip.n_frames < block:
        raise InsufficientDurationError(
            f"clip has {clip.n_frames} frames, one gating block needs {block}"
        )
    weights = gating.channel_weights
    if len(weights) < clip.n_channels:
        raise ConfigurationError("fewer channel weights than channels")

    kw = k_weight_coeffs(fs)
    z = signal.sosfilt(kw.sos(), clip.samples, axis=-1)
    n_blocks = (clip.n_frames - block) // hop + 1
    powers = np.zeros(n_blocks)
    for c in range(clip.n_channels):
        zc = z[c]
        sq = np.empty(n_blocks)
        for j in range(n_blocks):
            seg = zc[j * hop: j * hop + block]
            sq[j] = np.dot(seg, seg) / block
        powers += weights[c] * sq
    return powers


def _power_to_lufs(p):
    with np.errstate(divide="ignore"):
        return _OFFSET + 10 * np.log10(p)


def integrated_lufs(clip: AudioClip, gating: GatingConfig | None = None) -> LoudnessReading:
    """Gated integrated loudness of a mono or stereo clip."""
    gating = gating or GatingConfig()
    powers = _block_powers(clip, gating)
    block_lufs = _power_to_lufs(powers)

    above_abs = block_lufs > gating.absolute_gate
    if not np.any(above_abs):
        raise SilenceError("no block exceeds the absolute gate")
    relative = _power_to_lufs(np.mean(powers[above_abs])) + gating.relative_gate
    kept = above_abs & (block_lufs > relative)
    if not np.any(kept):
        raise SilenceError("no block exceeds the relative gate")
    lufs = float(_power_to_lufs(np.mean(powers[kept])))
    return LoudnessReading(lufs, len(powers), int(np.count_nonzero(kept)))


def measure(clip: AudioClip, gating: GatingConfig | None = None) -> float:
    """Shorthand for ``integrated_lufs(clip).lufs``."""
    return integrated_lufs(clip, gating).lufs


def gain_db_to_target(clip: AudioClip, target: float, gating: GatingConfig | None = None) -> float:
    return target - integrated_lufs(clip, gating).lufs


def db_to_amp(db):
    return 10.0 ** (np.asarray(db, dtype=np.float64) / 20.0)


def amp_to_db(amp):
    return 20.0 * np.log10(amp)


def apply_gain_db(clip: AudioClip, gain: float) -> AudioClip:
    if not math.isfinite(gain):
        raise ConfigurationError(f"gain must be finite, got {gain}")
    if gain == 0:
        return clip.replace(clip.samples.copy())
    return clip.replace(clip.samples * (10.0 ** (gain / 20.0)))


def loudness_stats(readings: Sequence[float]) -> LoudnessStats:
    """Min/max/median/mean and sample std (n-1) over a collection of LUFS values."""
    values = [float(v) for v in readings]
    if not values:
        raise ValueError("loudness_stats needs at least one reading")
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return LoudnessStats(
        min=min(values),
        max=max(values),
        median=statistics.median(values),
        mean=statistics.fmean(values),
        std=std,
        n_tracks=len(values),
    )
