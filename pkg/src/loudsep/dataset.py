"""Limited evaluation datasets built with L / XL gain-reduction recipes, and their verification."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .audio_io import (
    ADDITIVITY_TOL, USE_STEM_SUM, StemSet, TrackManifest, discover_tracks,
    load_stem_set, stem_sum, write_stem_set,
)
from .errors import ConfigurationError, ConsistencyError, LoudsepError
from .limiter import LimiterParams, find_threshold_for_reduction, frame_ratio, limit
from .loudness import LoudnessStats, integrated_lufs, loudness_stats

logger = logging.getLogger(__name__)

CEILING_SLACK = 1e-6


@dataclass(frozen=True)
class DatasetRecipe:
    name: str
    reduction_range: tuple[float, float]
    limiter_template: LimiterParams = field(default_factory=LimiterParams)
    ceiling_db: float = 0.0
    makeup: str = "to_ceiling"

    def __post_init__(self):
        if not self.name:
            raise ConfigurationError("recipe name must not be empty")
        lo, hi = self.reduction_range
        if not 0 <= lo < hi:
            raise ConfigurationError(f"invalid reduction range {self.reduction_range}")
        if self.makeup != "to_ceiling":
            raise ConfigurationError(f"unknown makeup mode {self.makeup!r}")

    @classmethod
    def preset(cls, name: str, release: float = 100.0) -> "DatasetRecipe":
        ranges = {"L": (3.0, 4.0), "XL": (6.0, 7.0)}
        if name not in ranges:
            raise ConfigurationError(f"no preset recipe {name!r}; choose L or XL")
        return cls(name, ranges[name], LimiterParams(release=release))


class LimitedTrack(NamedTuple):
    stems: StemSet
    threshold_db: float
    max_reduction_db: float
    makeup_db: float
    lufs_in: float
    lufs_out: float
    multiplier: np.ndarray


def build_limited_track(track: StemSet, recipe: DatasetRecipe) -> LimitedTrack:
    """Limit the mixture and apply the same per-frame multiplier to every stem.

    The limiter runs on the stem sum so the output is additive to rounding
    error; the multiplier is the limiter gain trace times the makeup gain
    that lifts the limited peak to the recipe ceiling.
    """
    if not track.additive:
        raise ConsistencyError(
            f"track is not additive (residual {track.residual():.2e}); rebuild its mixture from stems"
        )
    mixture = track.mixture.replace(stem_sum(track.stems.values()))
    threshold = find_threshold_for_reduction(mixture, recipe.reduction_range, recipe.limiter_template)
    limited, trace = limit(mixture, replace(recipe.limiter_template, threshold=threshold))
    peak = limited.peak()
    makeup = 10.0 ** (recipe.ceiling_db / 20.0) / peak
    multiplier = trace.gain * makeup
    stems = {name: clip.replace(clip.samples * multiplier) for name, clip in track.stems.items()}
    out = StemSet(mixture.replace(mixture.samples * multiplier), stems, additive=True)
    return LimitedTrack(
        stems=out,
        threshold_db=threshold,
        max_reduction_db=trace.max_reduction_db(),
        makeup_db=20.0 * math.log10(makeup),
        lufs_in=integrated_lufs(mixture).lufs,
        lufs_out=integrated_lufs(out.mixture).lufs,
        multiplier=multiplier,
    )


@dataclass
class TrackRow:
    track_id: str
    threshold_db: float
    max_reduction_db: float
    lufs_in: float
    lufs_out: float


@dataclass
class DatasetReport:
    recipe: str
    rows: list[TrackRow]
    failures: dict[str, str]
    stats_in: LoudnessStats | None
    stats_out: LoudnessStats | None

    def to_json(self) -> dict:
        return {
            "recipe": self.recipe,
            "tracks": [asdict(r) for r in self.rows],
            "failures": self.failures,
            "stats_in": None if self.stats_in is None else self.stats_in.to_json(),
            "stats_out": None if self.stats_out is None else self.stats_out.to_json(),
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")


def _load_additive(manifest: TrackManifest) -> StemSet:
    track = load_stem_set(manifest)
    if not track.additive:
        logger.warning("%s: file mixture differs from stem sum (residual %.2e); using stem sum",
                       manifest.track_id, track.residual())
        track = load_stem_set(replace(manifest, mixture_path=None, mixture_policy=USE_STEM_SUM))
    return track


def build_dataset(library: Sequence[TrackManifest], recipe: DatasetRecipe, out_dir,
                  jobs: int = 1, format: str = "float32") -> DatasetReport:
    """Build every track into ``out_dir/<track_id>/``; failures are reported, not raised."""
    library = list(library)
    if not library:
        raise ValueError("build_dataset needs at least one track")
    out_dir = Path(out_dir)

    def one(manifest: TrackManifest):
        try:
            built = build_limited_track(_load_additive(manifest), recipe)
            write_stem_set(built.stems, out_dir / manifest.track_id, format)
        except LoudsepError as exc:
            logger.warning("%s: skipped (%s)", manifest.track_id, exc)
            return manifest.track_id, None, str(exc)
        logger.info("%s: threshold %.2f dBFS, reduction %.2f dB, %.2f -> %.2f LUFS",
                    manifest.track_id, built.threshold_db, built.max_reduction_db,
                    built.lufs_in, built.lufs_out)
        row = TrackRow(manifest.track_id, built.threshold_db, built.max_reduction_db,
                       built.lufs_in, built.lufs_out)
        return manifest.track_id, row, None

    if jobs <= 1:
        outcomes = [one(m) for m in library]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, library))

    rows = [row for _, row, _ in outcomes if row is not None]
    failures = {tid: err for tid, _, err in outcomes if err is not None}
    return DatasetReport(
        recipe=recipe.name,
        rows=rows,
        failures=failures,
        stats_in=loudness_stats([r.lufs_in for r in rows]) if rows else None,
        stats_out=loudness_stats([r.lufs_out for r in rows]) if rows else None,
    )


# --------------------------------------------------------------------------
# Verification

@dataclass
class TrackCheck:
    track_id: str
    additivity_error: float
    peak: float
    ratio_error: float
    additive: bool
    within_ceiling: bool
    ratio_reproduces: bool

    @property
    def ok(self) -> bool:
        return self.additive and self.within_ceiling and self.ratio_reproduces


@dataclass
class VerificationReport:
    tracks: list[TrackCheck]

    @property
    def ok(self) -> bool:
        return all(t.ok for t in self.tracks)

    def failing(self) -> list[str]:
        return [t.track_id for t in self.tracks if not t.ok]

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "tracks": [dict(asdict(t), ok=t.ok) for t in self.tracks],
        }


def verify_track(original: StemSet, limited: StemSet, track_id: str = "", *,
                 ceiling_db: float = 0.0, tol: float = ADDITIVITY_TOL,
                 epsilon: float = 1e-8) -> TrackCheck:
    if set(original.stems) != set(limited.stems):
        raise ConsistencyError(f"{track_id}: stem names differ")
    if not original.mixture.same_layout(limited.mixture):
        raise ConsistencyError(f"{track_id}: original and limited shapes differ")
    additivity = limited.residual()
    peak = limited.mixture.peak()
    ceiling = 10.0 ** (ceiling_db / 20.0)

    source_mix = original.mixture.replace(stem_sum(original.stems.values()))
    ratio = frame_ratio(source_mix, limited.mixture, epsilon)
    ratio_error = 0.0
    for name, clip in original.stems.items():
        diff = np.abs(clip.samples * ratio - limited.stems[name].samples)
        ratio_error = max(ratio_error, float(np.max(diff, initial=0.0)))
    return TrackCheck(
        track_id=track_id,
        additivity_error=additivity,
        peak=peak,
        ratio_error=ratio_error,
        additive=additivity <= tol,
        within_ceiling=peak <= ceiling * (1 + CEILING_SLACK),
        ratio_reproduces=ratio_error <= tol,
    )


def verify_dataset(original_dir, limited_dir, *, ceiling_db: float = 0.0) -> VerificationReport:
    """Check additivity, ceiling and ratio reproduction for every limited track."""
    originals = {m.track_id: m for m in discover_tracks(original_dir)}
    limited = {m.track_id: m for m in discover_tracks(limited_dir)}
    if not limited or set(originals) != set(limited):
        missing = sorted(set(originals) ^ set(limited))
        raise ConsistencyError(f"track layouts differ: {missing or 'no tracks found'}")
    checks = []
    for tid in sorted(originals):
        checks.append(verify_track(load_stem_set(originals[tid]), load_stem_set(limited[tid]),
                                   tid, ceiling_db=ceiling_db))
    return VerificationReport(checks)
