"""Deterministic program-like test material (drums, bass, vocals, other)."""

import numpy as np

from loudsep.audio_io import AudioClip, StemSet

FS = 44100


def _env(n, attack, decay, fs):
    t = np.arange(n) / fs
    return np.minimum(t / max(attack, 1e-6), 1.0) * np.exp(-t / decay)


def _pan(mono, pos):
    return np.stack([mono * np.cos(pos * np.pi / 2), mono * np.sin(pos * np.pi / 2)])


def drums(rng, n, fs):
    out = np.zeros(n)
    beat = int(fs * 60 / rng.uniform(90, 140))
    for k, start in enumerate(range(int(rng.integers(beat // 4)), n, beat // 2)):
        length = min(int(0.3 * fs), n - start)
        t = np.arange(length) / fs
        if k % 2 == 0:
            f = 50 + 80 * np.exp(-t / 0.03)
            hit = np.sin(2 * np.pi * np.cumsum(f) / fs) * _env(length, 0.001, 0.12, fs)
        else:
            hit = rng.standard_normal(length) * _env(length, 0.0005, 0.06, fs) * 0.7
        out[start:start + length] += hit * rng.uniform(0.6, 1.0)
    return _pan(out, 0.5 + rng.uniform(-0.1, 0.1))


def bass(rng, n, fs):
    out = np.zeros(n)
    note = int(fs * rng.uniform(0.25, 0.5))
    for start in range(0, n, note):
        length = min(note, n - start)
        f0 = 41.2 * 2 ** (rng.integers(0, 12) / 12)
        t = np.arange(length) / fs
        tone = np.sin(2 * np.pi * f0 * t) + 0.3 * np.sin(4 * np.pi * f0 * t)
        out[start:start + length] = tone * _env(length, 0.005, 0.4, fs)
    return _pan(out * 0.5, 0.5)


def vocals(rng, n, fs):
    t = np.arange(n) / fs
    f0 = rng.uniform(180, 400) * (1 + 0.01 * np.sin(2 * np.pi * 5.5 * t))
    phase = 2 * np.pi * np.cumsum(f0) / fs
    tone = sum(np.sin(h * phase) / h for h in range(1, 8))
    phrase = (np.sin(2 * np.pi * rng.uniform(0.2, 0.5) * t + rng.uniform(0, 6)) > -0.3).astype(float)
    phrase = np.convolve(phrase, np.ones(441) / 441, mode="same")
    return _pan(tone * phrase * 0.3, 0.5 + rng.uniform(-0.05, 0.05))


def other(rng, n, fs):
    t = np.arange(n) / fs
    root = 110 * 2 ** (rng.integers(0, 12) / 12)
    chord = sum(np.sin(2 * np.pi * root * r * t + rng.uniform(0, 6)) for r in (1, 1.26, 1.5, 2))
    left = chord * 0.15 + 0.02 * rng.standard_normal(n)
    right = chord * 0.15 + 0.02 * rng.standard_normal(n)
    return np.stack([left, right])


def program_stems(seed, duration=3.0, fs=FS, peak_db=None):
    """Four stereo stems whose sum peaks at ``peak_db`` dBFS (random by default)."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    parts = {"vocals": vocals(rng, n, fs), "bass": bass(rng, n, fs),
             "drums": drums(rng, n, fs), "other": other(rng, n, fs)}
    for name in parts:
        parts[name] = parts[name] * 10 ** (rng.uniform(-4, 2) / 20)
    mix_peak = np.max(np.abs(sum(parts.values())))
    if peak_db is None:
        peak_db = rng.uniform(-3.0, -0.5)
    scale = 10 ** (peak_db / 20) / mix_peak
    return StemSet.from_stems({k: AudioClip(v * scale, fs) for k, v in parts.items()})


def program_clip(seed, duration=3.0, fs=FS, peak_db=None):
    return program_stems(seed, duration, fs, peak_db).mixture


def sine(freq, amp_db, duration, fs=48000, channels=(1.0, 1.0)):
    t = np.arange(int(round(duration * fs))) / fs
    x = 10 ** (amp_db / 20) * np.sin(2 * np.pi * freq * t)
    return AudioClip(np.stack([c * x for c in channels]), fs)
