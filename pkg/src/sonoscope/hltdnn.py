"""Histogram-layer TDNN: model assembly, training loop and feature export."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, DivergenceError, ShapeError


@dataclass
class ModelConfig:
    in_channels: int
    num_classes: int = 4
    bins: int = 16
    conv_channels: tuple = (16, 32, 64, 16)
    branch_channels: int = 256
    hist_kernel: tuple = (2, 2)
    hist_stride: int = 2
    seed: int = 0

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.hist_kernel = tuple(int(k) for k in self.hist_kernel)
        if not 1 <= self.in_channels <= 6:
            raise ConfigError(f"in_channels must lie in [1, 6], got {self.in_channels}")
        if self.num_classes < 2 or self.bins < 1 or self.branch_channels < 1:
            raise ConfigError("num_classes >= 2, bins >= 1 and branch_channels >= 1 required")
        if not self.conv_channels or min(self.conv_channels) < 1:
            raise ConfigError(f"invalid conv channel plan {self.conv_channels}")

    @property
    def penultimate_width(self):
        return self.branch_channels + self.bins * self.conv_channels[-1]


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 150
    patience: int = 15
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("lr >= 0 and positive batch_size, max_epochs, patience required")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class HLTDNN:
    """Parameters, optimizer accumulators and the forward/backward passes.

    Backbone: 3x3 conv (padding 1) + ReLU + 2x2 max-pool blocks, run
    channels-last internally. The last block feeds two branches: a conv
    block pooled to 1x1 (structural features) and a histogram layer
    averaged over space (statistical features). Their concatenation is the penultimate vector, followed by
    dropout and a linear classifier.
    """

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.accumulators: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(cfg.seed)
        c_in = cfg.in_channels
        for i, c_out in enumerate(cfg.conv_channels):
            self.params[f"conv{i}.weight"] = _kaiming_uniform(rng, (c_out, c_in, 3, 3), c_in * 9, dtype)
            self.params[f"conv{i}.bias"] = np.zeros(c_out, dtype=dtype)
            c_in = c_out
        self.params["branch.weight"] = _kaiming_uniform(
            rng, (cfg.branch_channels, c_in, 3, 3), c_in * 9, dtype)
        self.params["branch.bias"] = np.zeros(cfg.branch_channels, dtype=dtype)
        centers = np.linspace(-1.0, 1.0, cfg.bins) if cfg.bins > 1 else np.zeros(1)
        self.params["hist.centers"] = np.repeat(centers[:, None], c_in, axis=1).astype(dtype)
        self.params["hist.widths"] = np.full((cfg.bins, c_in), cfg.bins / 2, dtype=dtype)
        width = cfg.penultimate_width
        self.params["fc.weight"] = _kaiming_uniform(rng, (cfg.num_classes, width), width, dtype)
        self.params["fc.bias"] = np.zeros(cfg.num_classes, dtype=dtype)

    # -- passes -----------------------------------------------------------

    def _features(self, x):
        cfg = self.cfg
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ShapeError(f"expected N x {cfg.in_channels} x H x W input, got {x.shape}")
        caches = []
        h = x.transpose(0, 2, 3, 1)
        for i in range(len(cfg.conv_channels)):
            h, c_conv = nn.conv2d_forward_nhwc(h, self.params[f"conv{i}.weight"],
                                               self.params[f"conv{i}.bias"], padding=1)
            # max-pool commutes with ReLU; pooling first touches 4x fewer values
            h, c_pool = nn.maxpool2d_forward_nhwc(h, 2)
            h, c_relu = nn.relu_forward(h)
            caches.append((c_conv, c_pool, c_relu))

        a, ca_conv = nn.conv2d_forward_nhwc(h, self.params["branch.weight"],
                                            self.params["branch.bias"], padding=1)
        a, ca_relu = nn.relu_forward(a)
        a, ca_pool = nn.adaptive_avg_pool_forward(a.transpose(0, 3, 1, 2), 1, 1)

        h = h.transpose(0, 3, 1, 2)
        kernel = (min(cfg.hist_kernel[0], h.shape[2]), min(cfg.hist_kernel[1], h.shape[3]))
        b, cb_hist = nn.histogram_forward(h, self.params["hist.centers"], self.params["hist.widths"],
                                          kernel, cfg.hist_stride)
        b, cb_pool = nn.adaptive_avg_pool_forward(b, 1, 1)

        n = x.shape[0]
        pen = np.concatenate([a.reshape(n, -1), b.reshape(n, -1)], axis=1)
        cache = (caches, (ca_conv, ca_relu, ca_pool), (cb_hist, cb_pool), a.shape, b.shape)
        return pen, cache

    def forward(self, x, train=False, rng=None, dropout=0.5):
        pen, feat_cache = self._features(x)
        d, c_drop = nn.dropout_forward(pen, dropout, rng, train)
        logits, c_fc = nn.linear_forward(d, self.params["fc.weight"], self.params["fc.bias"])
        return logits, (feat_cache, c_drop, c_fc)

    def backward(self, dlogits, cache):
        feat_cache, c_drop, c_fc = cache
        caches, branch_a, branch_b, a_shape, b_shape = feat_cache
        g = {}
        dd, g["fc.weight"], g["fc.bias"] = nn.linear_backward(dlogits, c_fc)
        dpen = nn.dropout_backward(dd, c_drop)
        na = a_shape[1]
        da = dpen[:, :na].reshape(a_shape)
        db = dpen[:, na:].reshape(b_shape)

        ca_conv, ca_relu, ca_pool = branch_a
        da = nn.adaptive_avg_pool_backward(da, ca_pool).transpose(0, 2, 3, 1)
        da = nn.relu_backward(da, ca_relu)
        dh, g["branch.weight"], g["branch.bias"] = nn.conv2d_backward_nhwc(da, ca_conv)

        cb_hist, cb_pool = branch_b
        db = nn.adaptive_avg_pool_backward(db, cb_pool)
        dh_hist, g["hist.centers"], g["hist.widths"] = nn.histogram_backward(db, cb_hist)
        dh = dh + dh_hist.transpose(0, 2, 3, 1)

        for i in reversed(range(len(caches))):
            c_conv, c_pool, c_relu = caches[i]
            dh = nn.relu_backward(dh, c_relu)
            dh = nn.maxpool2d_backward_nhwc(dh, c_pool)
            dh, g[f"conv{i}.weight"], g[f"conv{i}.bias"] = nn.conv2d_backward_nhwc(
                dh, c_conv, need_dx=i > 0)
        return g

    def loss_and_grads(self, x, y, train=True, rng=None, dropout=0.5):
        logits, cache = self.forward(x, train, rng, dropout)
        loss, dlogits = nn.softmax_cross_entropy(logits, np.asarray(y))
        return loss, self.backward(dlogits, cache)

    # -- inference ----------------------------------------------------------

    def logits(self, x, batch_size=256):
        out = [self.forward(x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.cfg.num_classes), self.dtype)

    def predict(self, x, batch_size=256):
        return self.logits(x, batch_size).argmax(axis=1)

    def penultimate(self, x, batch_size=256):
        """Concatenated structural + statistical feature vectors, before dropout."""
        x = np.asarray(x)
        single = x.ndim == 3
        if single:
            x = x[None]
        out = np.concatenate([self._features(x[i:i + batch_size])[0]
                              for i in range(0, len(x), batch_size)])
        return out[0] if single else out

    def mean_loss(self, x, y, batch_size=256):
        total = 0.0
        for i in range(0, len(x), batch_size):
            logits = self.forward(x[i:i + batch_size])[0]
            loss, _ = nn.softmax_cross_entropy(logits, np.asarray(y[i:i + batch_size]))
            total += loss * len(logits)
        return total / len(x)

    # -- state --------------------------------------------------------------

    def state_dict(self):
        tensors = dict(self.params)
        tensors.update({f"acc.{k}": v for k, v in self.accumulators.items()})
        return tensors

    def load_state_dict(self, tensors):
        for name, arr in tensors.items():
            if name.startswith("acc."):
                self.accumulators[name[4:]] = np.array(arr, dtype=self.dtype)
            elif name in self.params:
                if arr.shape != self.params[name].shape:
                    raise ShapeError(f"{name}: checkpoint shape {arr.shape} != {self.params[name].shape}")
                self.params[name] = np.array(arr, dtype=self.dtype)
            else:
                raise ShapeError(f"unexpected tensor {name}")

    def save(self, path):
        nn.save_checkpoint(path, self.state_dict())

    @classmethod
    def load(cls, path, cfg: ModelConfig, dtype=np.float32):
        model = cls(cfg, dtype)
        model.load_state_dict(nn.load_checkpoint(path))
        return model

    def copy(self):
        return copy.deepcopy(self)


def build_model(cfg: ModelConfig, dtype=np.float32) -> HLTDNN:
    return HLTDNN(cfg, dtype)


class EarlyStopping:
    """Counts epochs without a strictly lower validation loss."""

    def __init__(self, patience=15):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = None
        self.bad_epochs = 0

    def update(self, val_loss, epoch):
        """Record one epoch; returns True when the loss is a new best."""
        if val_loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = val_loss, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience


@dataclass
class History:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    def rows(self):
        return list(zip(self.epochs, self.train_loss, self.val_loss))


def train(model: HLTDNN, train_set, val_set, tc: TrainConfig, evaluate=None, log=None):
    """Adagrad minibatch training with early stopping on validation loss.

    ``train_set`` and ``val_set`` are ``(X, y)`` pairs. ``evaluate`` may
    replace the validation-loss computation (it receives the model and the
    1-based epoch). Returns a copy of the model at its best validation
    epoch, accumulators included, and the per-epoch history.
    """
    x_train, y_train = train_set
    x_val, y_val = val_set
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    y_train = np.asarray(y_train)
    if evaluate is None:
        def evaluate(m, _epoch):
            return m.mean_loss(x_val, y_val)

    rng = np.random.default_rng(tc.seed)
    opt = nn.Adagrad(tc.lr, accumulators=model.accumulators)
    stopper = EarlyStopping(tc.patience)
    history = History()
    best = model.copy()
    n = len(x_train)
    for epoch in range(1, tc.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, tc.batch_size):
            idx = order[start:start + tc.batch_size]
            loss, grads = model.loss_and_grads(x_train[idx], y_train[idx], True, rng, tc.dropout)
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            opt.step(model.params, grads)
            total += loss * len(idx)
        train_loss = total / n
        val_loss = float(evaluate(model, epoch))
        if not math.isfinite(val_loss):
            raise DivergenceError(epoch)
        history.epochs.append(epoch)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        if log is not None:
            log(f"epoch {epoch:3d} train {train_loss:.4f} val {val_loss:.4f}")
        if stopper.update(val_loss, epoch):
            best = model.copy()
        elif stopper.should_stop:
            history.stopped_early = True
            break
    history.best_epoch = stopper.best_epoch
    return best, history


def config_dict(cfg) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
