"""Feature combinations, adaptive zero padding and channel stacking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SelectionError, SizeError
from .features import ALL_KINDS, FeatureKind, FeatureMap


@dataclass(frozen=True, order=True)
class CombinationId:
    """Bitmask over :class:`FeatureKind`; bit ``i`` selects kind ``i``."""

    bitmask: int
    n_kinds: int = len(ALL_KINDS)

    def __post_init__(self):
        if not 1 <= self.bitmask < (1 << self.n_kinds):
            raise SelectionError(f"bitmask {self.bitmask} outside [1, {(1 << self.n_kinds) - 1}]")

    @property
    def kinds(self) -> tuple[FeatureKind, ...]:
        return tuple(FeatureKind(i) for i in range(self.n_kinds) if self.bitmask >> i & 1)

    @property
    def size(self):
        return self.bitmask.bit_count()

    @property
    def name(self):
        return combo_name(self)

    @classmethod
    def from_kinds(cls, kinds):
        mask = 0
        for k in kinds:
            bit = 1 << int(FeatureKind[k] if isinstance(k, str) else FeatureKind(k))
            if mask & bit:
                raise SelectionError(f"duplicate kind {k}")
            mask |= bit
        return cls(mask)

    def __str__(self):
        return self.name


def enumerate_combinations(m=len(ALL_KINDS)) -> list[CombinationId]:
    if not 1 <= m <= 16:
        raise ValueError("m must lie in [1, 16]")
    return [CombinationId(mask, m) for mask in range(1, 1 << m)]


def combo_name(combo: CombinationId) -> str:
    """Canonical ``+``-joined kind names, e.g. ``MFCC+STFT+GFCC+VQT``."""
    return "+".join(k.name for k in combo.kinds)


def parse_combo(text: str) -> CombinationId:
    """Inverse of :func:`combo_name`; accepts any order and case."""
    names = [t.strip().upper() for t in text.split("+") if t.strip()]
    if not names:
        raise SelectionError("empty combination")
    try:
        return CombinationId.from_kinds(names)
    except KeyError as exc:
        raise SelectionError(f"unknown feature kind {exc.args[0]!r}") from None


def pad_offsets(size, target):
    """Leading/trailing pad for one axis; an odd deficit puts the extra cell last."""
    deficit = target - size
    return deficit // 2, deficit - deficit // 2


def adaptive_pad(fm, target_h, target_w) -> np.ndarray:
    values = fm.values if isinstance(fm, FeatureMap) else np.asarray(fm)
    h, w = values.shape
    if target_h < h or target_w < w:
        raise SizeError(f"cannot pad {h}x{w} down to {target_h}x{target_w}")
    top, bottom = pad_offsets(h, target_h)
    left, right = pad_offsets(w, target_w)
    return np.pad(values, ((top, bottom), (left, right)))


def crop(padded, h, w) -> np.ndarray:
    """Undo :func:`adaptive_pad` for a source of shape ``h x w``."""
    top, _ = pad_offsets(h, padded.shape[0])
    left, _ = pad_offsets(w, padded.shape[1])
    return padded[top:top + h, left:left + w]


@dataclass
class FeatureStack:
    channels: np.ndarray
    combo: CombinationId

    @property
    def shape(self):
        return self.channels.shape

    @property
    def H(self):
        return self.channels.shape[1]

    @property
    def W(self):
        return self.channels.shape[2]


def stack_shape(combo: CombinationId, shapes: dict) -> tuple[int, int, int]:
    """Stack dimensions from per-kind ``(freq_bins, time_frames)`` shapes."""
    sel = [shapes[k] for k in combo.kinds]
    return combo.size, max(s[0] for s in sel), max(s[1] for s in sel)


def stack(features, combo: CombinationId, normalizer=None) -> FeatureStack:
    """Pad the selected maps to their common maximum size and stack them.

    ``features`` is a list of :class:`FeatureMap` or a kind-keyed dict. It must
    hold exactly the kinds in ``combo``; channel order is the canonical kind
    order regardless of input order. ``normalizer`` (a :class:`Standardizer`)
    is applied to each map before padding so the padding stays at zero.
    """
    maps = list(features.values()) if isinstance(features, dict) else list(features)
    by_kind = {}
    for fm in maps:
        if fm.kind in by_kind:
            raise SelectionError(f"duplicate {fm.kind.name} map")
        by_kind[fm.kind] = fm
    if set(by_kind) != set(combo.kinds):
        raise SelectionError(
            f"combination {combo.name} needs {[k.name for k in combo.kinds]}, "
            f"got {[k.name for k in by_kind]}")
    selected = [by_kind[k] for k in combo.kinds]
    H = max(fm.freq_bins for fm in selected)
    W = max(fm.time_frames for fm in selected)
    out = np.empty((len(selected), H, W), dtype=np.float32)
    for c, fm in enumerate(selected):
        values = fm.values if normalizer is None else normalizer.apply(fm)
        out[c] = adaptive_pad(values, H, W)
    return FeatureStack(out, combo)


class Standardizer:
    """Per-kind scalar z-scoring fitted on training maps."""

    def __init__(self, stats=None):
        self.stats = dict(stats or {})

    @classmethod
    def fit(cls, maps):
        """``maps`` yields :class:`FeatureMap` objects of any kinds."""
        acc = {}
        for fm in maps:
            v = fm.values.astype(np.float64)
            n, s, s2 = acc.get(fm.kind, (0, 0.0, 0.0))
            acc[fm.kind] = (n + v.size, s + v.sum(), s2 + np.square(v).sum())
        stats = {}
        for kind, (n, s, s2) in acc.items():
            mean = s / n
            std = float(np.sqrt(max(s2 / n - mean * mean, 0.0)))
            stats[kind] = (float(mean), std if std > 0 else 1.0)
        return cls(stats)

    def apply(self, fm: FeatureMap) -> np.ndarray:
        mean, std = self.stats[fm.kind]
        return ((fm.values.astype(np.float64) - mean) / std).astype(np.float32)

    def to_dict(self):
        return {k.name: [m, s] for k, (m, s) in sorted(self.stats.items())}

    @classmethod
    def from_dict(cls, d):
        return cls({FeatureKind[k]: (float(v[0]), float(v[1])) for k, v in d.items()})
