"""LimitAug and the training-example construction strategies.

Every example is a pure function of its inputs and a seed.  The target stem
is transformed by the same per-frame multiplier that turned the original
mixture into the returned mixture (linear gain times limiter trace, times any
post-normalization gain), so ``sum(multiplier * stems) == mixture``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .audio_io import STEM_NAMES, AudioClip, StemSet, read_wav, wav_info
from .errors import ConfigurationError, ConsistencyError, SamplingError, SilenceError
from .limiter import LimiterParams, limit
from .loudness import apply_gain_db, integrated_lufs

logger = logging.getLogger(__name__)

STRATEGIES = ("baseline", "linear_gain", "limitaug", "loudnorm", "limitaug_loudnorm")
LOUDNORM_TARGET = -14.0
MAX_ATTEMPTS = 100

# Loudness statistics of the two limited evaluation sets, usable as targets.
MU_L, SIGMA_L = -10.89, 1.19
MU_XL, SIGMA_XL = -8.61, 1.17


@dataclass(frozen=True)
class TargetLoudnessDist:
    kind: str = "normal"
    mu: float = MU_XL
    sigma: float = SIGMA_XL
    lo: float = -12.0
    hi: float = -6.0
    value: float = -14.0

    def __post_init__(self):
        if self.kind == "normal" and not self.sigma > 0:
            raise ConfigurationError("normal target distribution needs sigma > 0")
        if self.kind == "uniform" and not self.lo < self.hi:
            raise ConfigurationError("uniform target distribution needs lo < hi")
        if self.kind not in ("normal", "uniform", "fixed"):
            raise ConfigurationError(f"unknown distribution kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "TargetLoudnessDist":
        """Parse ``normal:MU,SIGMA``, ``uniform:LO,HI`` or ``fixed:V``."""
        kind, _, args = text.partition(":")
        try:
            nums = [float(v) for v in args.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigurationError(f"bad target distribution {text!r}") from exc
        if kind == "normal" and len(nums) == 2:
            return cls("normal", mu=nums[0], sigma=nums[1])
        if kind == "uniform" and len(nums) == 2:
            return cls("uniform", lo=nums[0], hi=nums[1])
        if kind == "fixed" and len(nums) == 1:
            return cls("fixed", value=nums[0])
        raise ConfigurationError(f"bad target distribution {text!r}")

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "normal":
            return float(rng.normal(self.mu, self.sigma))
        if self.kind == "uniform":
            return float(rng.uniform(self.lo, self.hi))
        return float(self.value)

    def describe(self) -> str:
        if self.kind == "normal":
            return f"normal:{self.mu},{self.sigma}"
        if self.kind == "uniform":
            return f"uniform:{self.lo},{self.hi}"
        return f"fixed:{self.value}"


@dataclass(frozen=True)
class LimitAugConfig:
    target_dist: TargetLoudnessDist = field(default_factory=TargetLoudnessDist)
    release_range: tuple[float, float] = (30.0, 200.0)
    threshold: float = 0.0
    post_norm_target: float | None = None
    strategy: str = "limitaug"
    attack: float = 1.0

    def __post_init__(self):
        lo, hi = self.release_range
        if not (0 < lo <= hi < 10000):
            raise ConfigurationError(f"release range {self.release_range} outside (0, 10000) ms")
        if self.threshold > 0:
            raise ConfigurationError("threshold must be <= 0 dBFS")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")


@dataclass
class SegmentSpec:
    duration: float
    sample_rate: int
    track_ids: dict[str, str]
    offsets: dict[str, float]
    gains: dict[str, float]
    channel_swap: dict[str, bool]
    rng_seed: int | None = None

    def to_json(self) -> dict:
        return asdict(self)


class AugmentedExample(NamedTuple):
    mixture: AudioClip
    target: AudioClip
    achieved_lufs: float
    multiplier: np.ndarray
    drawn_lufs: float | None = None
    release_ms: float | None = None


# --------------------------------------------------------------------------
# Segment sampling

class StemLibrary:
    """``track_id`` -> stems, backed by in-memory stem sets or by manifests.

    Manifest-backed tracks are never loaded whole: only WAV headers are
    parsed, and segments are read from disk on demand.
    """

    def __init__(self, tracks):
        if isinstance(tracks, Mapping):
            self._sets = dict(tracks)
            self._manifests = {}
        else:
            self._sets = {}
            self._manifests = {m.track_id: m for m in tracks}
        self.track_ids = sorted(set(self._sets) | set(self._manifests))
        self._layout = {}

    def __len__(self):
        return len(self.track_ids)

    def layout(self, track_id: str) -> tuple[int, int]:
        """(sample rate, frames) shared by every stem of the track."""
        if track_id not in self._layout:
            if track_id in self._sets:
                track = self._sets[track_id]
                self._layout[track_id] = (track.sample_rate, track.mixture.n_frames)
            else:
                infos = {n: wav_info(p) for n, p in self._manifests[track_id].paths.items()}
                shapes = {(i.sample_rate, i.n_channels, i.n_frames) for i in infos.values()}
                if len(shapes) > 1:
                    raise ConsistencyError(f"{track_id}: stems differ in rate, channels or length")
                rate, _, frames = shapes.pop()
                self._layout[track_id] = (rate, frames)
        return self._layout[track_id]

    def read(self, track_id: str, stem: str, start: int, frames: int) -> AudioClip:
        if track_id in self._sets:
            src = self._sets[track_id].stems[stem]
            return src.replace(src.samples[:, start:start + frames])
        return read_wav(self._manifests[track_id].paths[stem], start, frames)


def _as_library(library) -> StemLibrary:
    return library if isinstance(library, StemLibrary) else StemLibrary(library)


def render_segment(library, spec: SegmentSpec, stem_names: Sequence[str] = STEM_NAMES) -> StemSet:
    """Rebuild the stem set described by ``spec``."""
    library = _as_library(library)
    n = int(round(spec.duration * spec.sample_rate))
    stems = {}
    for name in stem_names:
        tid = spec.track_ids[name]
        rate, total = library.layout(tid)
        if rate != spec.sample_rate:
            raise ConsistencyError(f"track {tid} is not at {spec.sample_rate} Hz")
        start = int(round(spec.offsets[name] * spec.sample_rate))
        if start + n > total:
            raise ConsistencyError(f"segment of {tid} runs past the track end")
        x = library.read(tid, name, start, n).samples
        if spec.channel_swap[name]:
            x = x[::-1]
        stems[name] = apply_gain_db(AudioClip(x, spec.sample_rate), spec.gains[name])
    return StemSet.from_stems(stems)


def sample_segment(
    library,
    rng: np.random.Generator,
    duration: float,
    *,
    gain_range: tuple[float, float] = (-6.0, 6.0),
    swap_prob: float = 0.5,
    stem_names: Sequence[str] = STEM_NAMES,
    seed: int | None = None,
) -> tuple[StemSet, SegmentSpec]:
    """Draw each stem from an independently chosen track, offset, gain and swap."""
    library = _as_library(library)
    if len(library) == 0:
        raise SamplingError("stem library is empty")
    eligible = []
    for tid in library.track_ids:
        rate, frames = library.layout(tid)
        if frames < int(round(duration * rate)):
            logger.info("skipping %s: shorter than %.2f s", tid, duration)
            continue
        eligible.append(tid)
    if not eligible:
        raise SamplingError(f"no track is at least {duration} s long")
    rates = {library.layout(t)[0] for t in eligible}
    if len(rates) > 1:
        raise ConsistencyError(f"library mixes sample rates {sorted(rates)}")
    fs = rates.pop()
    n = int(round(duration * fs))

    track_ids, offsets, gains, swaps = {}, {}, {}, {}
    for name in stem_names:
        tid = eligible[int(rng.integers(len(eligible)))]
        start = int(rng.integers(library.layout(tid)[1] - n + 1))
        track_ids[name] = tid
        offsets[name] = start / fs
        gains[name] = float(rng.uniform(*gain_range))
        swaps[name] = bool(rng.random() < swap_prob)
    spec = SegmentSpec(duration, fs, track_ids, offsets, gains, swaps, seed)
    return render_segment(library, spec, stem_names), spec


# --------------------------------------------------------------------------
# LimitAug

def limitaug(stems: StemSet, target_stem: str, config: LimitAugConfig,
             rng: np.random.Generator) -> AugmentedExample:
    """Gain the mixture toward a drawn loudness, limit it, and carry the
    resulting per-frame multiplier onto the target stem.
    """
    if target_stem not in stems.stems:
        raise ConsistencyError(f"no stem named {target_stem!r}")
    mixture = stems.mixture
    source = stems.stems[target_stem]
    start_lufs = integrated_lufs(mixture).lufs
    drawn = config.target_dist.sample(rng)
    release = float(rng.uniform(*config.release_range))
    gain_db = drawn - start_lufs

    params = LimiterParams(threshold=config.threshold, attack=config.attack, release=release)
    limited, trace = limit(apply_gain_db(mixture, gain_db), params)
    multiplier = 10.0 ** (gain_db / 20.0) * trace.gain
    if config.post_norm_target is not None:
        post_db = config.post_norm_target - integrated_lufs(limited).lufs
        post = 10.0 ** (post_db / 20.0)
        limited = limited.replace(limited.samples * post)
        multiplier = multiplier * post
    target = source.replace(source.samples * multiplier)
    return AugmentedExample(limited, target, integrated_lufs(limited).lufs, multiplier, drawn, release)


def _linear(stems: StemSet, target_stem: str, gain_db: float, drawn=None) -> AugmentedExample:
    amp = 10.0 ** (gain_db / 20.0)
    mixture = stems.mixture.replace(stems.mixture.samples * amp)
    target = stems.stems[target_stem].replace(stems.stems[target_stem].samples * amp)
    multiplier = np.full(stems.mixture.n_frames, amp)
    return AugmentedExample(mixture, target, integrated_lufs(mixture).lufs, multiplier, drawn)


def build_training_example(stems: StemSet, target_stem: str, config: LimitAugConfig,
                           rng: np.random.Generator) -> AugmentedExample:
    if target_stem not in stems.stems:
        raise ConsistencyError(f"no stem named {target_stem!r}")
    strategy = config.strategy
    if strategy == "baseline":
        return _linear(stems, target_stem, 0.0)
    if strategy == "linear_gain":
        drawn = config.target_dist.sample(rng)
        return _linear(stems, target_stem, drawn - integrated_lufs(stems.mixture).lufs, drawn)
    if strategy == "loudnorm":
        target_lufs = LOUDNORM_TARGET if config.post_norm_target is None else config.post_norm_target
        return _linear(stems, target_stem, target_lufs - integrated_lufs(stems.mixture).lufs, target_lufs)
    if strategy == "limitaug":
        return limitaug(stems, target_stem, _with_post_norm(config, None), rng)
    target_lufs = LOUDNORM_TARGET if config.post_norm_target is None else config.post_norm_target
    return limitaug(stems, target_stem, _with_post_norm(config, target_lufs), rng)


def _with_post_norm(config: LimitAugConfig, target) -> LimitAugConfig:
    if config.post_norm_target == target:
        return config
    return LimitAugConfig(config.target_dist, config.release_range, config.threshold,
                          target, config.strategy, config.attack)


# --------------------------------------------------------------------------
# Batch generation

@dataclass
class GeneratedExample:
    index: int
    seed: int
    spec: SegmentSpec
    example: AugmentedExample
    attempts: int


def generate_example(library, config: LimitAugConfig, seed: int, duration: float,
                     target_stem: str = "vocals", index: int = 0, **segment_kw) -> GeneratedExample:
    """One example from ``seed``; silent segments are redrawn up to 100 times."""
    library = _as_library(library)
    rng = np.random.default_rng(seed)
    for attempt in range(1, MAX_ATTEMPTS + 1):
        stems, spec = sample_segment(library, rng, duration, seed=seed, **segment_kw)
        try:
            example = build_training_example(stems, target_stem, config, rng)
        except SilenceError:
            logger.debug("example %d: silent segment, redrawing (attempt %d)", index, attempt)
            continue
        return GeneratedExample(index, seed, spec, example, attempt)
    raise SamplingError(f"example {index}: {MAX_ATTEMPTS} consecutive silent segments")


def iter_examples(library, config: LimitAugConfig, count: int, seed_base: int,
                  duration: float, target_stem: str = "vocals", jobs: int = 1,
                  **segment_kw) -> Iterator[GeneratedExample]:
    """Yield examples ``0..count-1`` (seeds ``seed_base + index``) in index order.

    Work is submitted in batches of a few examples per worker, so memory
    stays bounded however large ``count`` is.
    """
    library = _as_library(library)
    for tid in library.track_ids:
        library.layout(tid)  # parse headers up front so worker threads only read

    def one(i):
        return generate_example(library, config, seed_base + i, duration, target_stem, i, **segment_kw)

    if jobs <= 1:
        for i in range(count):
            yield one(i)
        return
    batch = 4 * jobs
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        for lo in range(0, count, batch):
            yield from pool.map(one, range(lo, min(lo + batch, count)))


def generate_examples(library, config: LimitAugConfig, count: int, seed_base: int,
                      duration: float, target_stem: str = "vocals", jobs: int = 1,
                      **segment_kw) -> list[GeneratedExample]:
    """All of :func:`iter_examples` as a list."""
    return list(iter_examples(library, config, count, seed_base, duration, target_stem, jobs, **segment_kw))


def example_record(item: GeneratedExample, config: LimitAugConfig) -> dict:
    ex = item.example
    return {
        "index": item.index,
        "seed": item.seed,
        "strategy": config.strategy,
        "segment": item.spec.to_json(),
        "drawn_lufs": ex.drawn_lufs,
        "release_ms": ex.release_ms,
        "achieved_lufs": ex.achieved_lufs,
        "attempts": item.attempts,
    }
