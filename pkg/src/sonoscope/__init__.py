"""Underwater acoustic classification from stacked time-frequency features.

Modules:

- ``signal_io``: WAV I/O, resampling, segmentation and recording-level splits
- ``features``: STFT, mel, MFCC, GFCC, CQT and VQT feature maps
- ``stack``: feature combinations, adaptive padding and normalisation
- ``nn``: NumPy layers, Adagrad and the checkpoint format
- ``hltdnn``: the histogram-layer network and its training loop
- ``metrics``: confusion matrices, summary metrics and Fisher separability
- ``pipeline`` / ``cli``: the extract, split, train, sweep and report workflow
"""

__version__ = "0.1.0"
