"""
The soft-binning histogram layer
================================

Each output is the window mean of exp(-gamma^2 (x - mu)^2): a differentiable
count of how many values in the window sit near bin centre mu.
"""

import numpy as np

from sonoscope import nn

rng = np.random.default_rng(1)

# one channel, values drawn around two modes
x = np.concatenate([rng.normal(-0.6, 0.1, 32), rng.normal(0.5, 0.1, 32)]).reshape(1, 1, 8, 8)

bins = 8
mu = np.linspace(-1, 1, bins)[:, None]   # (bins, channels)
gamma = np.full((bins, 1), bins / 2)

# one window covering the whole map gives a single soft histogram
y, cache = nn.histogram_forward(x, mu, gamma, kernel=(8, 8), stride=1)
for centre, height in zip(mu[:, 0], y.ravel()):
    print(f"{centre:+.2f} {'#' * int(60 * height)}")

# gradients flow to the inputs and to both bin parameters
dx, dmu, dgamma = nn.histogram_backward(np.ones_like(y), cache)
print("d/dmu   ", np.round(dmu[:, 0], 3))
print("d/dgamma", np.round(dgamma[:, 0], 3))

# sliding 2x2 windows with stride 2, as inside the network
y, _ = nn.histogram_forward(x, mu, gamma)
print("local histograms:", y.shape, "(batch, channels*bins, rows, cols)")
