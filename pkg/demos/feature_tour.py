"""
Six time-frequency views of one segment
=======================================

A 3 s segment with a 120 Hz propeller-like tone, its harmonics and a 1.5 kHz
line, run through every extractor, then padded and stacked.
"""

import numpy as np

from sonoscope import features as tf
from sonoscope.stack import parse_combo, stack

rate = 16000
t = np.arange(3 * rate) / rate
rng = np.random.default_rng(0)
x = np.sin(2 * np.pi * 120 * t) + 0.5 * np.sin(2 * np.pi * 240 * t) + 0.3 * np.sin(2 * np.pi * 1500 * t)
x = 0.5 * x / np.abs(x).max() + 0.02 * rng.standard_normal(x.size)

# every kind at once; the STFT is shared by STFT, MS and MFCC
maps = tf.extract_features(x)
for kind, fm in maps.items():
    peak = np.argmax(fm.values.mean(axis=1))
    print(f"{kind.name:5s} {fm.shape!s:10s} strongest row {peak}")

# STFT keeps the lowest 48 bins of a 4000-point spectrum: 4 Hz per bin
print("STFT peak in Hz:", np.argmax(maps[tf.FeatureKind.STFT].values.mean(axis=1)) * rate / 4000)

# constant-Q bins sit at 31.25 * 2**(k/8); VQT widens low bins by a constant offset
f = tf.qtransform_frequencies()
nearest = int(np.argmin(np.abs(f - 120)))
print(f"CQT bin nearest 120 Hz: {nearest} ({f[nearest]:.1f} Hz)")
print("kernel lengths, CQT vs VQT, lowest bin:", tf.qtransform_lengths(rate)[0],
      tf.qtransform_lengths(rate, tf.vqt_gamma())[0])

# a four-feature combination: pad each map to 64x47 and stack on channels
combo = parse_combo("VQT+MFCC+STFT+GFCC")
fs = stack({k: maps[k] for k in combo.kinds}, combo)
print("stacked", fs.shape, "channel order", [k.name for k in combo.kinds])
