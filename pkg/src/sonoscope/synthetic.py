"""Synthetic ship-noise-like corpora for smoke tests and demos.

Two flavours:

``distinct``
    each class has its own propeller tone (55-160 Hz, with harmonics) and a
    repeating chirp in its own band; easy for every feature.
``overlapping``
    classes are the four combinations of two binary factors: a low tone at
    100 or 106 Hz and a mid-band tone at 1500 or 1590 Hz, in white noise.
    The low factor needs fine low-frequency resolution and the mid factor is
    invisible to the 0-188 Hz STFT band, so no single feature sees both
    cleanly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .signal_io import CorpusEntry, write_corpus_manifest, write_wav

DISTINCT_LOW_HZ = (55.0, 90.0, 125.0, 160.0)
DISTINCT_CHIRP_HZ = ((300.0, 600.0), (900.0, 1400.0), (2000.0, 2600.0), (3500.0, 4500.0))
OVERLAPPING_SNR_DB = (-15.0, -9.0)


def _tone(t, f, phase=0.0):
    return np.sin(2 * np.pi * f * t + phase)


def _repeating_chirp(t, f0, f1, period):
    tau = np.mod(t, period)
    phase = 2 * np.pi * (f0 * tau + 0.5 * (f1 - f0) / period * tau ** 2)
    return np.sin(phase)


def _with_noise(clean, snr_db, rng):
    p_sig = np.mean(clean ** 2)
    noise = rng.standard_normal(clean.size)
    noise *= np.sqrt(p_sig / 10 ** (snr_db / 10))
    return clean + noise


def synth_recording(label, seconds, rate, rng, kind="distinct"):
    t = np.arange(int(round(seconds * rate))) / rate
    if kind == "distinct":
        f = DISTINCT_LOW_HZ[label] + rng.uniform(-1.5, 1.5)
        x = sum(a * _tone(t, k * f, rng.uniform(0, 2 * np.pi))
                for k, a in ((1, 1.0), (2, 0.5), (3, 0.25)))
        lo, hi = DISTINCT_CHIRP_HZ[label]
        x = x + 0.4 * _repeating_chirp(t, lo, hi, rng.uniform(1.2, 1.8))
        x = _with_noise(x, rng.uniform(3.0, 10.0), rng)
    elif kind == "overlapping":
        low_bit, mid_bit = label // 2, label % 2
        f_low = 100.0 + 6.0 * low_bit + rng.uniform(-1.0, 1.0)
        f_mid = 1500.0 + 90.0 * mid_bit + rng.uniform(-5.0, 5.0)
        x = _tone(t, f_low, rng.uniform(0, 2 * np.pi)) + 0.5 * _tone(t, 2 * f_low)
        x = x + 0.6 * _tone(t, f_mid, rng.uniform(0, 2 * np.pi))
        x = _with_noise(x, rng.uniform(*OVERLAPPING_SNR_DB), rng)
    else:
        raise ValueError(f"unknown corpus kind {kind!r}")
    return 0.9 * x / np.max(np.abs(x))


def make_corpus(out_dir, kind="distinct", n_classes=4, recordings_per_class=10,
                seconds=45.0, rate=16000, seed=0) -> Path:
    """Write WAV files plus ``manifest.csv`` into ``out_dir``; returns the manifest path."""
    if n_classes > 4:
        raise ValueError("synthetic corpora have at most 4 classes")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for label in range(n_classes):
        for i in range(recordings_per_class):
            rid = f"c{label}_r{i:03d}"
            x = synth_recording(label, seconds, rate, rng, kind)
            write_wav(out_dir / f"{rid}.wav", x, rate)
            entries.append(CorpusEntry(rid, Path(f"{rid}.wav"), label))
    manifest = out_dir / "manifest.csv"
    write_corpus_manifest(manifest, entries)
    return manifest
