"""WAV reading/writing, stem sets and the mixture-additivity convention.

Clips are planar ``(n_channels, n_frames)`` float64 arrays.  Integer PCM is
scaled by ``1 / 2**(bits - 1)`` on read and rounded-to-nearest with
saturation on write.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import AudioIOError, ConsistencyError, DataError, FormatError

logger = logging.getLogger(__name__)

STEM_NAMES = ("vocals", "bass", "drums", "other")
ADDITIVITY_TOL = 1e-4

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE

WRITE_FORMATS = ("pcm16", "pcm24", "float32", "float64")


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Planar multichannel buffer.

    ``samples`` is coerced to a C-contiguous float64 array of shape
    ``(n_channels, n_frames)``; a 1-D input becomes a mono clip.
    ``subtype`` records the on-disk encoding a clip was read from, if any.
    """

    samples: np.ndarray
    sample_rate: int
    subtype: str | None = None

    def __post_init__(self):
        x = np.ascontiguousarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[np.newaxis, :]
        if x.ndim != 2:
            raise ConsistencyError(f"samples must be 1-D or 2-D, got shape {x.shape}")
        if x.shape[0] < 1:
            raise ConsistencyError("a clip needs at least one channel")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ConsistencyError(f"invalid sample rate {self.sample_rate!r}")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_frames(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_frames / self.sample_rate

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape

    def peak(self) -> float:
        if self.n_frames == 0:
            return 0.0
        return float(np.max(np.abs(self.samples)))

    def replace(self, samples: np.ndarray) -> "AudioClip":
        """New clip with the same rate and different samples."""
        return AudioClip(samples, self.sample_rate)

    def same_layout(self, other: "AudioClip") -> bool:
        return self.sample_rate == other.sample_rate and self.shape == other.shape


@dataclass(frozen=True, eq=False)
class StemSet:
    mixture: AudioClip
    stems: Mapping[str, AudioClip]
    additive: bool = False

    def __post_init__(self):
        for name, clip in self.stems.items():
            if not clip.same_layout(self.mixture):
                raise ConsistencyError(
                    f"stem {name!r} has layout {clip.shape}@{clip.sample_rate}, "
                    f"mixture has {self.mixture.shape}@{self.mixture.sample_rate}"
                )

    @classmethod
    def from_stems(cls, stems: Mapping[str, AudioClip]) -> "StemSet":
        """Stem set whose mixture is the sample-wise stem sum."""
        stems = dict(stems)
        if not stems:
            raise ConsistencyError("no stems given")
        first = next(iter(stems.values()))
        for name, clip in stems.items():
            if not clip.same_layout(first):
                raise ConsistencyError(f"stem {name!r} layout differs from the others")
        mixture = first.replace(stem_sum(stems.values()))
        return cls(mixture, stems, additive=True)

    @property
    def sample_rate(self) -> int:
        return self.mixture.sample_rate

    def residual(self) -> float:
        """max |mixture - sum(stems)|."""
        return float(np.max(np.abs(self.mixture.samples - stem_sum(self.stems.values())), initial=0.0))


def stem_sum(clips) -> np.ndarray:
    clips = list(clips)
    total = np.zeros_like(clips[0].samples)
    for clip in clips:
        total += clip.samples
    return total


def is_additive(mixture: AudioClip, stems: Mapping[str, AudioClip], tol: float = ADDITIVITY_TOL) -> bool:
    residual = mixture.samples - stem_sum(stems.values())
    return bool(np.max(np.abs(residual), initial=0.0) <= tol)


# --------------------------------------------------------------------------
# WAV

def _decode_fmt(chunk: bytes) -> tuple[int, int, int, int]:
    if len(chunk) < 16:
        raise FormatError("fmt chunk too short")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", chunk[:16])
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(chunk) < 40:
            raise FormatError("WAVE_FORMAT_EXTENSIBLE fmt chunk too short")
        # valid bits at 18, sub-format GUID at 24; its first two bytes are the tag
        tag = struct.unpack("<H", chunk[24:26])[0]
    return tag, channels, rate, bits


def _subtype(tag: int, bits: int) -> str:
    if tag == _WAVE_FORMAT_PCM and bits in (16, 24, 32):
        return f"pcm{bits}"
    if tag == _WAVE_FORMAT_IEEE_FLOAT and bits in (32, 64):
        return f"float{bits}"
    raise FormatError(f"unsupported WAV encoding: format tag 0x{tag:04x}, {bits} bits")


def _decode_payload(data: bytes, subtype: str, channels: int) -> np.ndarray:
    if subtype == "pcm16":
        x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif subtype == "pcm24":
        b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = (b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)) << 8 >> 8
        x = ints.astype(np.float64) / 8388608.0
    elif subtype == "pcm32":
        x = np.frombuffer(data, dtype="<i4").astype(np.float64) / 2147483648.0
    elif subtype == "float32":
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        x = np.frombuffer(data, dtype="<f8").astype(np.float64)
    return x.reshape(-1, channels).T.copy()


@dataclass(frozen=True)
class WavInfo:
    path: Path
    sample_rate: int
    n_channels: int
    n_frames: int
    subtype: str
    data_offset: int

    @property
    def frame_bytes(self) -> int:
        return self.n_channels * int(self.subtype[-2:]) // 8


def wav_info(path) -> WavInfo:
    """Parse the RIFF header of ``path`` without reading the payload."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            total = fh.seek(0, 2)
            fh.seek(0)
            head = fh.read(12)
            if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
                raise FormatError(f"{path} is not a RIFF/WAVE file")
            fmt = None
            data = None
            pos = 12
            while pos + 8 <= total:
                fh.seek(pos)
                cid, size = struct.unpack("<4sI", fh.read(8))
                body_start = pos + 8
                if cid == b"data":
                    if body_start + size > total:
                        raise AudioIOError(
                            f"{path}: data chunk declares {size} bytes, only {total - body_start} present"
                        )
                    data = (body_start, size)
                elif cid == b"fmt ":
                    fmt = _decode_fmt(fh.read(size))
                pos = body_start + size + (size & 1)
    except OSError as exc:
        raise AudioIOError(f"cannot read {path}: {exc}") from exc
    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk")
    if data is None:
        raise AudioIOError(f"{path}: missing data chunk")

    tag, channels, rate, bits = fmt
    subtype = _subtype(tag, bits)
    if channels < 1:
        raise FormatError(f"{path}: zero channels")
    frame_bytes = channels * bits // 8
    offset, size = data
    if size % frame_bytes:
        raise AudioIOError(f"{path}: data size {size} is not a whole number of frames")
    return WavInfo(path, rate, channels, size // frame_bytes, subtype, offset)


def read_wav(path, start: int = 0, frames: int | None = None) -> AudioClip:
    """Read a PCM16/24/32 or float32/64 RIFF WAV file into a planar clip.

    ``start`` and ``frames`` select a window without reading the rest of the
    payload; the window must lie inside the file.
    """
    info = wav_info(path)
    if frames is None:
        frames = info.n_frames - start
    if start < 0 or frames < 0 or start + frames > info.n_frames:
        raise ConsistencyError(
            f"{info.path}: frames [{start}, {start + frames}) outside 0..{info.n_frames}"
        )
    try:
        with open(info.path, "rb") as fh:
            fh.seek(info.data_offset + start * info.frame_bytes)
            data = fh.read(frames * info.frame_bytes)
    except OSError as exc:
        raise AudioIOError(f"cannot read {info.path}: {exc}") from exc
    if len(data) != frames * info.frame_bytes:
        raise AudioIOError(f"{info.path}: short read")

    samples = _decode_payload(data, info.subtype, info.n_channels)
    if info.subtype.startswith("float") and not np.all(np.isfinite(samples)):
        raise DataError(f"{info.path}: non-finite sample values in float payload")
    return AudioClip(samples, info.sample_rate, subtype=info.subtype)


def _encode_payload(x: np.ndarray, fmt: str) -> bytes:
    inter = x.T  # (frames, channels)
    if fmt == "pcm16":
        q = np.clip(np.rint(inter * 32768.0), -32768, 32767).astype("<i2")
        return q.tobytes()
    if fmt == "pcm24":
        q = np.clip(np.rint(inter * 8388608.0), -8388608, 8388607).astype("<i4")
        b = q.reshape(-1, 1).view(np.uint8).reshape(-1, 4)[:, :3]
        return np.ascontiguousarray(b).tobytes()
    if fmt == "float32":
        return inter.astype("<f4").tobytes()
    return inter.astype("<f8").tobytes()


def write_wav(clip: AudioClip, path, format: str = "float32") -> None:
    """Write ``clip`` as RIFF WAV.

    ``format`` is one of ``pcm16``, ``pcm24``, ``float32`` or ``float64``.
    """
    if format not in WRITE_FORMATS:
        raise FormatError(f"unsupported output format {format!r}; choose from {WRITE_FORMATS}")
    if not np.all(np.isfinite(clip.samples)):
        raise DataError("refusing to write non-finite samples")
    bits = {"pcm16": 16, "pcm24": 24, "float32": 32, "float64": 64}[format]
    is_float = format.startswith("float")
    tag = _WAVE_FORMAT_IEEE_FLOAT if is_float else _WAVE_FORMAT_PCM
    channels = clip.n_channels
    block_align = channels * bits // 8
    payload = _encode_payload(clip.samples, format)

    if is_float:
        fmt_body = struct.pack("<HHIIHHH", tag, channels, clip.sample_rate,
                               clip.sample_rate * block_align, block_align, bits, 0)
        extra = b"fact" + struct.pack("<II", 4, clip.n_frames)
    else:
        fmt_body = struct.pack("<HHIIHH", tag, channels, clip.sample_rate,
                               clip.sample_rate * block_align, block_align, bits)
        extra = b""
    chunks = b"fmt " + struct.pack("<I", len(fmt_body)) + fmt_body + extra
    chunks += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        chunks += b"\x00"
    blob = b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks

    path = Path(path)
    try:
        path.write_bytes(blob)
    except OSError as exc:
        raise AudioIOError(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------
# Manifests and stem sets

USE_FILE = "use_file"
USE_STEM_SUM = "use_stem_sum"


@dataclass
class TrackManifest:
    track_id: str
    paths: dict[str, Path]
    mixture_path: Path | None = None
    mixture_policy: str = field(default=USE_STEM_SUM)

    def __post_init__(self):
        self.paths = {name: Path(p) for name, p in self.paths.items()}
        if self.mixture_path is not None:
            self.mixture_path = Path(self.mixture_path)
        if self.mixture_policy not in (USE_FILE, USE_STEM_SUM):
            raise ConsistencyError(f"unknown mixture policy {self.mixture_policy!r}")
        if self.mixture_path is None and self.mixture_policy == USE_FILE:
            raise ConsistencyError(f"{self.track_id}: use_file policy needs a mixture_path")

    def to_json(self) -> dict:
        return {
            "track_id": self.track_id,
            "paths": {k: str(v) for k, v in self.paths.items()},
            "mixture_path": None if self.mixture_path is None else str(self.mixture_path),
            "mixture_policy": self.mixture_policy,
        }

    @classmethod
    def from_json(cls, doc: Mapping, base_dir=None) -> "TrackManifest":
        base = Path(base_dir) if base_dir is not None else None

        def resolve(p):
            p = Path(p)
            return base / p if base is not None and not p.is_absolute() else p

        mixture_path = doc.get("mixture_path")
        policy = doc.get("mixture_policy") or (USE_FILE if mixture_path else USE_STEM_SUM)
        return cls(
            track_id=str(doc["track_id"]),
            paths={k: resolve(v) for k, v in doc["paths"].items()},
            mixture_path=None if mixture_path is None else resolve(mixture_path),
            mixture_policy=policy,
        )

    @classmethod
    def load(cls, path) -> "TrackManifest":
        path = Path(path)
        with open(path) as fh:
            return cls.from_json(json.load(fh), base_dir=path.parent)


def load_stem_set(manifest: TrackManifest) -> StemSet:
    """Read every stem of a track and build its mixture per the manifest policy."""
    stems = {name: read_wav(p) for name, p in manifest.paths.items()}
    mixture = None
    if manifest.mixture_policy == USE_FILE:
        mixture = read_wav(manifest.mixture_path)

    clips = dict(stems)
    if mixture is not None:
        clips["mixture"] = mixture
    layouts = {name: (c.sample_rate, c.n_channels, c.n_frames) for name, c in clips.items()}
    if len(set(layouts.values())) > 1:
        detail = ", ".join(f"{n}: {r} Hz/{ch} ch/{f} frames" for n, (r, ch, f) in layouts.items())
        raise ConsistencyError(f"{manifest.track_id}: inconsistent files ({detail})")

    if mixture is None:
        return StemSet.from_stems(stems)
    return StemSet(mixture, stems, additive=is_additive(mixture, stems))


def discover_tracks(root, stem_names=STEM_NAMES) -> list[TrackManifest]:
    """Manifests for every track directory under ``root``.

    A directory holding ``manifest.json`` uses it verbatim; otherwise a
    directory containing ``<stem>.wav`` for every stem name is a track, with
    ``mixture.wav`` used when present.  Tracks are returned sorted by id.
    """
    root = Path(root)
    found = []
    for d in sorted(p for p in root.rglob("*") if p.is_dir()) + [root]:
        manifest_file = d / "manifest.json"
        if manifest_file.is_file():
            found.append(TrackManifest.load(manifest_file))
            continue
        if all((d / f"{s}.wav").is_file() for s in stem_names):
            mixture = d / "mixture.wav"
            track_id = d.relative_to(root).as_posix() if d != root else d.name
            found.append(TrackManifest(
                track_id=track_id,
                paths={s: d / f"{s}.wav" for s in stem_names},
                mixture_path=mixture if mixture.is_file() else None,
                mixture_policy=USE_FILE if mixture.is_file() else USE_STEM_SUM,
            ))
    return sorted(found, key=lambda m: m.track_id)


def write_stem_set(stemset: StemSet, out_dir, format: str = "float32") -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_wav(stemset.mixture, out_dir / "mixture.wav", format)
    for name, clip in stemset.stems.items():
        write_wav(clip, out_dir / f"{name}.wav", format)
