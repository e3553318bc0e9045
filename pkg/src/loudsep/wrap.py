"""Loudness-normalized inference around an external separator command.

The input is brought to a reference loudness, handed to the separator as a
file, and every stem the separator writes is scaled back by the inverse gain.
"""

from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

from .audio_io import read_wav, write_wav
from .errors import ConfigurationError, ConsistencyError, WrappedProcessError
from .loudness import apply_gain_db, gain_db_to_target, integrated_lufs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WrapConfig:
    command_template: str
    target_lufs: float = -14.0
    restore_gain: bool = True
    target_from: Path | None = None
    expected_stems: tuple[str, ...] = ()
    temp_format: str = "float64"
    out_format: str = "float32"

    def __post_init__(self):
        for placeholder in ("{input}", "{output_dir}"):
            if placeholder not in self.command_template:
                raise ConfigurationError(f"command template lacks {placeholder}")
        if not -200 < self.target_lufs < 200:
            raise ConfigurationError(f"implausible target loudness {self.target_lufs}")

    def command(self, input_path: Path, output_dir: Path) -> list[str]:
        return [
            tok.replace("{input}", str(input_path)).replace("{output_dir}", str(output_dir))
            for tok in shlex.split(self.command_template)
        ]


def wrap_separate(input_path, config: WrapConfig, out_dir) -> dict[str, Path]:
    """Run the separator on a loudness-normalized copy and restore the scale.

    Returns ``{stem name: written path}``.  Nothing is written to ``out_dir``
    unless the separator succeeds and every expected stem is present.
    """
    input_path = Path(input_path)
    out_dir = Path(out_dir)
    clip = read_wav(input_path)
    target = config.target_lufs
    if config.target_from is not None:
        target = integrated_lufs(read_wav(config.target_from)).lufs
    gain = gain_db_to_target(clip, target)
    logger.info("%s: normalizing by %+.2f dB toward %.2f LUFS", input_path.name, gain, target)

    with tempfile.TemporaryDirectory(prefix="loudsep-wrap-") as tmp:
        tmp = Path(tmp)
        normalized = tmp / input_path.name
        sep_dir = tmp / "separated"
        sep_dir.mkdir()
        write_wav(apply_gain_db(clip, gain), normalized, config.temp_format)

        cmd = config.command(normalized, sep_dir)
        t0 = time.perf_counter()
        proc = subprocess.run(cmd, capture_output=True, text=True)
        elapsed = time.perf_counter() - t0
        logger.info("separator exited %d after %.2f s", proc.returncode, elapsed)
        if proc.returncode != 0:
            raise WrappedProcessError(
                f"separator exited with status {proc.returncode}",
                returncode=proc.returncode, output=proc.stdout + proc.stderr,
            )

        produced = {p.relative_to(sep_dir).with_suffix("").as_posix(): p
                    for p in sorted(sep_dir.rglob("*.wav"))}
        if not produced:
            raise ConsistencyError("separator wrote no WAV files")
        by_stem = {Path(k).name: k for k in produced}
        missing = [s for s in config.expected_stems if s not in by_stem]
        if missing:
            raise ConsistencyError(f"separator did not produce stems {missing}")

        restored = {}
        for key, path in produced.items():
            stem = read_wav(path)
            restored[key] = apply_gain_db(stem, -gain) if config.restore_gain else stem

    written = {}
    for key, stem in restored.items():
        dest = out_dir / f"{key}.wav"
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_wav(stem, dest, config.out_format)
        written[key] = dest
    return written
