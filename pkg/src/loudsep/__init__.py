"""Loudness metering, limiting with stem ground truth, LimitAug and separation metrics."""

__version__ = "0.1.0"

from .audio_io import AudioClip, StemSet, TrackManifest, load_stem_set, read_wav, write_wav
from .limiter import GainTrace, LimiterParams, apply_trace, limit, sample_ratio
from .loudness import apply_gain_db, gain_db_to_target, integrated_lufs, loudness_stats
from .metrics import ProjectionConfig, framewise_sdr, si_sdr

__all__ = [
    "AudioClip", "StemSet", "TrackManifest", "load_stem_set", "read_wav", "write_wav",
    "GainTrace", "LimiterParams", "apply_trace", "limit", "sample_ratio",
    "apply_gain_db", "gain_db_to_target", "integrated_lufs", "loudness_stats",
    "ProjectionConfig", "framewise_sdr", "si_sdr",
]
