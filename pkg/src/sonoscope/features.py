"""Time-frequency feature extractors.

Six log-compressed 2-D maps are computed from a 3 s clip: mel spectrogram
(MS), MFCC, low-band STFT magnitude, GFCC, CQT and VQT. Everything runs in
float64 and the final grid is stored as float32, frequency along rows.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from functools import cache, lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sfft
from scipy import signal

from .errors import FormatError, RangeError, TooShortError

EPS = 1e-10


class FeatureKind(enum.IntEnum):
    # order fixes both the combination bitmask and the channel order
    MS = 0
    MFCC = 1
    STFT = 2
    GFCC = 3
    CQT = 4
    VQT = 5


ALL_KINDS = tuple(FeatureKind)

FREQ_BINS = {
    FeatureKind.MS: 44,
    FeatureKind.MFCC: 16,
    FeatureKind.STFT: 48,
    FeatureKind.GFCC: 64,
    FeatureKind.CQT: 64,
    FeatureKind.VQT: 64,
}

N_MELS = FREQ_BINS[FeatureKind.MS]
N_MFCC = FREQ_BINS[FeatureKind.MFCC]
N_STFT_BINS = FREQ_BINS[FeatureKind.STFT]
N_GAMMATONE = FREQ_BINS[FeatureKind.GFCC]

GAMMATONE_FMIN = 50.0
GAMMATONE_FMAX = 8000.0
GAMMATONE_ORDER = 4
GAMMATONE_SECONDS = 0.2

CQT_BINS = 64
CQT_BINS_PER_OCTAVE = 8
CQT_FMIN = 31.25


@dataclass(frozen=True)
class FrameParams:
    window_len: int = 4000
    hop_len: int = 1024
    window_fn: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop_len <= self.window_len:
            raise RangeError("need 0 < hop_len <= window_len")
        if self.window_fn != "hann":
            raise RangeError(f"unsupported window {self.window_fn!r}")

    @classmethod
    def for_rate(cls, rate_hz=16000, window_ms=250.0, hop_ms=64.0):
        return cls(int(round(rate_hz * window_ms / 1000)), int(round(rate_hz * hop_ms / 1000)))


@dataclass
class FeatureMap:
    values: np.ndarray
    kind: FeatureKind

    def __post_init__(self):
        self.kind = FeatureKind(self.kind)
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError("feature map must be 2-D")
        if self.values.shape[0] != FREQ_BINS[self.kind]:
            raise ValueError(
                f"{self.kind.name} expects {FREQ_BINS[self.kind]} bins, got {self.values.shape[0]}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature map contains non-finite values")

    @property
    def freq_bins(self):
        return self.values.shape[0]

    @property
    def time_frames(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape


def _signal_of(seg):
    if hasattr(seg, "samples"):
        return np.asarray(seg.samples, dtype=np.float64), int(getattr(seg, "sample_rate_hz", 16000))
    return np.asarray(seg, dtype=np.float64), 16000


def _params(p, rate):
    return p if p is not None else FrameParams.for_rate(rate)


# ---------------------------------------------------------------------------
# STFT family
# ---------------------------------------------------------------------------

def frame_count(seg_len, p: FrameParams) -> int:
    if seg_len < p.window_len:
        raise TooShortError(f"{seg_len} samples is shorter than one {p.window_len}-sample window")
    return (seg_len - p.window_len) // p.hop_len + 1


@cache
def _hann(n):
    w = signal.get_window("hann", n)
    w.flags.writeable = False
    return w


def _frames(x, p):
    n = frame_count(x.size, p)
    return sliding_window_view(x, p.window_len)[:: p.hop_len][:n]


def stft_complex(seg, p: FrameParams | None = None) -> np.ndarray:
    """One-sided Hann-windowed STFT, ``n_fft = window_len``, no centering.

    Returns a complex grid of shape ``(window_len // 2 + 1, frames)``.
    """
    x, rate = _signal_of(seg)
    p = _params(p, rate)
    frames = _frames(x, p) * _hann(p.window_len)
    return sfft.rfft(frames, n=p.window_len, axis=1).T


def stft_feature(seg, p: FrameParams | None = None, spectrum=None) -> FeatureMap:
    """dB magnitude of the lowest 48 bins."""
    X = stft_complex(seg, p) if spectrum is None else spectrum
    mag = np.abs(X[:N_STFT_BINS])
    return FeatureMap(20.0 * np.log10(mag + EPS), FeatureKind.STFT)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels, f_min, f_max):
    pts = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    return pts[1:-1]


@cache
def mel_filterbank(n_mels=N_MELS, n_fft=4000, rate_hz=16000, f_min=0.0, f_max=None) -> np.ndarray:
    """HTK-mel triangular filterbank, shape ``(n_mels, n_fft // 2 + 1)``.

    Triangles are evaluated at the FFT bin frequencies and each row is
    rescaled so its largest tap is exactly 1.
    """
    if f_max is None:
        f_max = rate_hz / 2
    if not 0 <= f_min < f_max <= rate_hz / 2:
        raise RangeError(f"need 0 <= f_min < f_max <= {rate_hz / 2}, got [{f_min}, {f_max}]")
    freqs = np.arange(n_fft // 2 + 1) * rate_hz / n_fft
    pts = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    left, center, right = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    rising = (freqs - left) / (center - left)
    falling = (right - freqs) / (right - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    peaks = fb.max(axis=1)
    if np.any(peaks <= 0):
        raise RangeError(f"{n_mels} mel filters are too narrow for a {n_fft}-point FFT")
    fb /= peaks[:, None]
    fb.flags.writeable = False
    return fb


def mel_spectrogram(seg, p: FrameParams | None = None, spectrum=None) -> FeatureMap:
    """Natural-log mel power spectrogram, 44 bands from 0 Hz to Nyquist."""
    _, rate = _signal_of(seg)
    p = _params(p, rate)
    X = stft_complex(seg, p) if spectrum is None else spectrum
    fb = mel_filterbank(N_MELS, p.window_len, rate, 0.0, min(8000.0, rate / 2))
    power = X.real ** 2 + X.imag ** 2
    return FeatureMap(np.log(fb @ power + EPS), FeatureKind.MS)


def dct_ii(v, n_keep=None, axis=0) -> np.ndarray:
    """Orthonormal DCT-II along ``axis``, truncated to the first ``n_keep`` coefficients."""
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[axis]
    if n_keep is None:
        n_keep = n
    if not 1 <= n_keep <= n:
        raise RangeError(f"n_keep must lie in [1, {n}]")
    c = sfft.dct(v, type=2, norm="ortho", axis=axis)
    return np.take(c, np.arange(n_keep), axis=axis)


def mfcc(seg, p: FrameParams | None = None, log_mel: FeatureMap | None = None) -> FeatureMap:
    """DCT-II of each log-mel column, first 16 coefficients."""
    if log_mel is None:
        log_mel = mel_spectrogram(seg, p)
    return FeatureMap(dct_ii(log_mel.values, N_MFCC, axis=0), FeatureKind.MFCC)


# ---------------------------------------------------------------------------
# Gammatone / GFCC
# ---------------------------------------------------------------------------

def erb(f):
    """Equivalent rectangular bandwidth in Hz (Glasberg and Moore)."""
    return 24.7 * (4.37 * np.asarray(f, dtype=np.float64) / 1000.0 + 1.0)


def hz_to_erb_rate(f):
    return 21.4 * np.log10(4.37 * np.asarray(f, dtype=np.float64) / 1000.0 + 1.0)


def erb_rate_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) * 1000.0 / 4.37


def gammatone_center_frequencies(n=N_GAMMATONE, f_min=GAMMATONE_FMIN, f_max=GAMMATONE_FMAX):
    return erb_rate_to_hz(np.linspace(hz_to_erb_rate(f_min), hz_to_erb_rate(f_max), n))


@cache
def gammatone_impulse_responses(rate_hz=16000, n=N_GAMMATONE):
    """FIR gammatone bank ``t^3 exp(-2 pi b t) cos(2 pi f t)``, unit gain at each centre."""
    f_max = min(GAMMATONE_FMAX, rate_hz / 2)
    fc = gammatone_center_frequencies(n, GAMMATONE_FMIN, f_max)
    t = np.arange(int(round(GAMMATONE_SECONDS * rate_hz))) / rate_hz
    b = 1.019 * erb(fc)
    g = (t ** (GAMMATONE_ORDER - 1)) * np.exp(-2 * np.pi * b[:, None] * t) \
        * np.cos(2 * np.pi * fc[:, None] * t)
    gain = np.abs(np.einsum("kn,kn->k", g, np.exp(-2j * np.pi * fc[:, None] * t)))
    g /= gain[:, None]
    g.flags.writeable = False
    return fc, g


@lru_cache(maxsize=8)
def _gammatone_spectra(rate_hz, n_fft):
    _, g = gammatone_impulse_responses(rate_hz)
    G = sfft.rfft(g, n=n_fft, axis=1)
    G.flags.writeable = False
    return G


def gammatone_log_energies(seg, p: FrameParams | None = None) -> np.ndarray:
    """Per-channel log energy of the Hann-windowed filtered signal, shape ``(64, frames)``."""
    x, rate = _signal_of(seg)
    p = _params(p, rate)
    n_frames = frame_count(x.size, p)
    _, g = gammatone_impulse_responses(rate)
    n_fft = sfft.next_fast_len(x.size + g.shape[1] - 1, real=True)
    y = sfft.irfft(sfft.rfft(x, n=n_fft) * _gammatone_spectra(rate, n_fft), n=n_fft, axis=1)
    y = y[:, : x.size]
    w2 = _hann(p.window_len) ** 2
    energy = sliding_window_view(y * y, p.window_len, axis=1)[:, :: p.hop_len][:, :n_frames] @ w2
    return np.log(energy + EPS)


def gfcc(seg, p: FrameParams | None = None) -> FeatureMap:
    """Gammatone cepstral coefficients (all 64 DCT-II terms)."""
    return FeatureMap(dct_ii(gammatone_log_energies(seg, p), N_GAMMATONE, axis=0), FeatureKind.GFCC)


# ---------------------------------------------------------------------------
# Constant-Q / variable-Q
# ---------------------------------------------------------------------------

def qtransform_frequencies(n_bins=CQT_BINS, bins_per_octave=CQT_BINS_PER_OCTAVE, f_min=CQT_FMIN):
    return f_min * 2.0 ** (np.arange(n_bins) / bins_per_octave)


def cqt_q(bins_per_octave=CQT_BINS_PER_OCTAVE):
    return 1.0 / (2.0 ** (1.0 / bins_per_octave) - 1.0)


def vqt_gamma(bins_per_octave=CQT_BINS_PER_OCTAVE):
    alpha = 2.0 ** (1.0 / bins_per_octave) - 1.0
    return 24.7 * alpha / 0.108


def qtransform_bandwidths(gamma=0.0, n_bins=CQT_BINS, bins_per_octave=CQT_BINS_PER_OCTAVE,
                          f_min=CQT_FMIN):
    alpha = 2.0 ** (1.0 / bins_per_octave) - 1.0
    return alpha * qtransform_frequencies(n_bins, bins_per_octave, f_min) + gamma


def qtransform_lengths(rate_hz, gamma=0.0, n_bins=CQT_BINS, bins_per_octave=CQT_BINS_PER_OCTAVE,
                       f_min=CQT_FMIN):
    """Kernel lengths ``ceil(Q_k * rate / f_k)`` with ``Q_k = f_k / bandwidth_k``."""
    f = qtransform_frequencies(n_bins, bins_per_octave, f_min)
    q = f / qtransform_bandwidths(gamma, n_bins, bins_per_octave, f_min)
    # guard against ceil rounding up an exact integer product
    return np.ceil(q * rate_hz / f - 1e-9).astype(int)


@lru_cache(maxsize=8)
def qtransform_kernels(rate_hz=16000, gamma=0.0, n_bins=CQT_BINS,
                       bins_per_octave=CQT_BINS_PER_OCTAVE, f_min=CQT_FMIN):
    """Dense matrix of centred, Hann-windowed complex exponentials.

    Rows are bins; every kernel is centred on column ``width // 2`` and
    normalised by its window sum, so a unit sinusoid at the bin frequency
    yields magnitude 0.5.
    """
    freqs = qtransform_frequencies(n_bins, bins_per_octave, f_min)
    if freqs[-1] > rate_hz / 2:
        raise RangeError(f"top bin {freqs[-1]:.1f} Hz exceeds Nyquist {rate_hz / 2} Hz")
    lengths = qtransform_lengths(rate_hz, gamma, n_bins, bins_per_octave, f_min)
    width = int(lengths.max()) | 1
    mid = width // 2
    K = np.zeros((n_bins, width), dtype=np.complex128)
    for k, (f, n) in enumerate(zip(freqs, lengths)):
        start = mid - n // 2
        pos = np.arange(start, start + n)
        w = signal.get_window("hann", int(n), fftbins=False)
        K[k, start:start + n] = w * np.exp(2j * np.pi * f * (pos - mid) / rate_hz) / w.sum()
    K.flags.writeable = False
    return K


def _qtransform(seg, hop_len, gamma, kind):
    x, rate = _signal_of(seg)
    if hop_len is None:
        hop_len = FrameParams.for_rate(rate).hop_len
    K = qtransform_kernels(rate, gamma)
    width = K.shape[1]
    half = width // 2
    n_frames = x.size // hop_len + 1
    padded = np.pad(x, (half, half))
    frames = sliding_window_view(padded, width)[::hop_len][:n_frames]
    C = frames @ K.real.T - 1j * (frames @ K.imag.T)
    return FeatureMap(20.0 * np.log10(np.abs(C).T + EPS), kind)


def cqt(seg, hop_len=None) -> FeatureMap:
    """Constant-Q transform: 64 bins, 8 per octave, from 31.25 Hz, in dB.

    Frames are centred at multiples of ``hop_len`` with zero padding at the
    edges, giving ``len // hop_len + 1`` frames.
    """
    return _qtransform(seg, hop_len, 0.0, FeatureKind.CQT)


def vqt(seg, hop_len=None) -> FeatureMap:
    """Variable-Q transform: as :func:`cqt` but with bandwidth ``alpha f + gamma``."""
    return _qtransform(seg, hop_len, vqt_gamma(), FeatureKind.VQT)


# ---------------------------------------------------------------------------
# Batch extraction and cache files
# ---------------------------------------------------------------------------

def extract_features(seg, kinds=ALL_KINDS, p: FrameParams | None = None) -> dict:
    """Compute the requested kinds for one clip, sharing the STFT between MS/MFCC/STFT."""
    _, rate = _signal_of(seg)
    p = _params(p, rate)
    kinds = [FeatureKind(k) for k in kinds]
    out = {}
    spectrum = None
    if {FeatureKind.MS, FeatureKind.MFCC, FeatureKind.STFT} & set(kinds):
        spectrum = stft_complex(seg, p)
    log_mel = None
    for kind in kinds:
        if kind in (FeatureKind.MS, FeatureKind.MFCC):
            if log_mel is None:
                log_mel = mel_spectrogram(seg, p, spectrum)
            out[kind] = log_mel if kind is FeatureKind.MS else mfcc(seg, p, log_mel)
        elif kind is FeatureKind.STFT:
            out[kind] = stft_feature(seg, p, spectrum)
        elif kind is FeatureKind.GFCC:
            out[kind] = gfcc(seg, p)
        elif kind is FeatureKind.CQT:
            out[kind] = cqt(seg, p.hop_len)
        else:
            out[kind] = vqt(seg, p.hop_len)
    return out


_MAGIC = b"TFFM"
_VERSION = 1
_HEADER = struct.Struct("<4sIBII")


def feature_map_to_bytes(fm: FeatureMap) -> bytes:
    head = _HEADER.pack(_MAGIC, _VERSION, int(fm.kind), fm.freq_bins, fm.time_frames)
    return head + np.ascontiguousarray(fm.values, dtype="<f4").tobytes()


def feature_map_from_bytes(raw: bytes) -> FeatureMap:
    if len(raw) < _HEADER.size:
        raise FormatError("feature cache too short")
    magic, version, kind, fb, tf = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"unsupported cache version {version}")
    if kind >= len(FeatureKind):
        raise FormatError(f"unknown feature kind {kind}")
    payload = raw[_HEADER.size:]
    if len(payload) != 4 * fb * tf:
        raise FormatError("payload size does not match header")
    values = np.frombuffer(payload, dtype="<f4").reshape(fb, tf).astype(np.float32)
    return FeatureMap(values, FeatureKind(kind))


def save_feature_map(path, fm: FeatureMap):
    Path(path).write_bytes(feature_map_to_bytes(fm))


def load_feature_map(path) -> FeatureMap:
    return feature_map_from_bytes(Path(path).read_bytes())
