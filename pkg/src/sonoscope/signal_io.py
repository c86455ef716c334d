"""Audio ingestion: WAV parsing, resampling, segmentation and leakage-free splits."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import (
    ConfigError,
    EmptyInputError,
    FormatError,
    InsufficientDataError,
    RangeError,
    UnsupportedError,
)

PARTITIONS = ("train", "val", "test")

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE

# Kaiser-windowed sinc resampler settings
KAISER_BETA = 8.6
TAPS_PER_PHASE = 32


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate_hz: int
    recording_id: str = ""
    class_label: int | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioBuffer holds mono samples only")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample rate must be positive")
        self.sample_rate_hz = int(self.sample_rate_hz)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("non-finite amplitude")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0:
            raise ValueError("amplitudes must lie in [-1, 1]")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate_hz


@dataclass
class Segment:
    samples: np.ndarray
    recording_id: str
    class_label: int | None
    segment_index: int
    sample_rate_hz: int = 16000


@dataclass
class SplitManifest:
    assignments: dict[str, str]
    seed: int
    achieved_ratios: tuple[float, float, float]
    segment_counts: dict[str, int] = field(default_factory=dict)

    def partition_of(self, recording_id):
        return self.assignments[recording_id]

    def recordings_in(self, partition):
        return sorted(r for r, p in self.assignments.items() if p == partition)


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

def _parse_fmt(chunk):
    if len(chunk) < 16:
        raise FormatError("fmt chunk too short")
    fmt_tag, channels, rate, _byte_rate, block_align, bits = struct.unpack("<HHIIHH", chunk[:16])
    if fmt_tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(chunk) < 40:
            raise FormatError("truncated WAVE_FORMAT_EXTENSIBLE header")
        # first two bytes of the subformat GUID carry the real format tag
        fmt_tag = struct.unpack("<H", chunk[24:26])[0]
    return fmt_tag, channels, rate, block_align, bits


def read_wav(path, recording_id=None, class_label=None) -> AudioBuffer:
    """Read a 16-bit PCM or 32-bit float WAV file into a mono buffer.

    Stereo files are averaged per frame. Integer PCM is scaled by 1/32768.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4:pos + 8])
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size:
            if chunk_id == b"data" and fmt is not None:
                # tolerate writers that leave a bogus data size
                body = body[: len(body) - len(body) % max(fmt[3], 1)]
            else:
                raise FormatError(f"{path}: truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(body)
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk")
    if data is None:
        raise FormatError(f"{path}: missing data chunk")

    fmt_tag, channels, rate, block_align, bits = fmt
    if rate <= 0 or channels <= 0 or block_align <= 0:
        raise FormatError(f"{path}: invalid fmt fields")
    if channels > 2:
        raise UnsupportedError(f"{path}: {channels} channels")
    if fmt_tag == _WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif fmt_tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedError(f"{path}: format tag {fmt_tag:#06x} with {bits} bits")
    if block_align != channels * dtype.itemsize:
        raise FormatError(f"{path}: block_align {block_align} inconsistent with format")

    n_frames = len(data) // block_align
    frames = np.frombuffer(data[: n_frames * block_align], dtype=dtype)
    frames = frames.reshape(n_frames, channels).astype(np.float64) * scale
    mono = frames.mean(axis=1)
    if not np.all(np.isfinite(mono)):
        raise FormatError(f"{path}: non-finite samples")
    np.clip(mono, -1.0, 1.0, out=mono)
    if recording_id is None:
        recording_id = path.stem
    return AudioBuffer(mono, rate, recording_id, class_label)


def write_wav(path, samples, sample_rate_hz, encoding="pcm16"):
    """Write mono (1-D) or multichannel (frames x channels) audio.

    ``encoding`` is ``"pcm16"`` or ``"float32"``.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    channels = x.shape[1]
    if encoding == "pcm16":
        payload = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        fmt_tag, bits = _WAVE_FORMAT_PCM, 16
    elif encoding == "float32":
        payload = x.astype("<f4").tobytes()
        fmt_tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    block_align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, int(sample_rate_hz),
                      int(sample_rate_hz) * block_align, block_align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# ---------------------------------------------------------------------------
# Resampling and segmentation
# ---------------------------------------------------------------------------

def _resampling_filter(up, down):
    max_rate = max(up, down)
    half_len = TAPS_PER_PHASE // 2 * max_rate
    return signal.firwin(2 * half_len + 1, 1.0 / max_rate, window=("kaiser", KAISER_BETA))


def resample(buf: AudioBuffer, target_hz: int) -> AudioBuffer:
    """Band-limited polyphase resampling to ``target_hz``.

    Same-rate calls return an exact copy of the samples.
    """
    if len(buf) == 0:
        raise EmptyInputError("cannot resample an empty buffer")
    target_hz = int(target_hz)
    if target_hz < 8000:
        raise RangeError(f"target rate {target_hz} Hz below 8000 Hz")
    if target_hz == buf.sample_rate_hz:
        return AudioBuffer(buf.samples.copy(), target_hz, buf.recording_id, buf.class_label)
    g = math.gcd(target_hz, buf.sample_rate_hz)
    up, down = target_hz // g, buf.sample_rate_hz // g
    y = signal.resample_poly(buf.samples, up, down, window=_resampling_filter(up, down))
    # sinc ringing can overshoot full scale
    np.clip(y, -1.0, 1.0, out=y)
    return AudioBuffer(y, target_hz, buf.recording_id, buf.class_label)


def segment(buf: AudioBuffer, seconds=3.0) -> list[Segment]:
    """Cut ``buf`` into consecutive non-overlapping clips; the tail is dropped."""
    exact = buf.sample_rate_hz * seconds
    seg_len = int(round(exact))
    if seg_len <= 0 or abs(exact - seg_len) > 1e-9:
        raise RangeError(f"{seconds} s at {buf.sample_rate_hz} Hz is not a whole number of samples")
    count = len(buf) // seg_len
    return [
        Segment(buf.samples[i * seg_len:(i + 1) * seg_len].copy(), buf.recording_id,
                buf.class_label, i, buf.sample_rate_hz)
        for i in range(count)
    ]


# ---------------------------------------------------------------------------
# Recording-level split
# ---------------------------------------------------------------------------

def _check_ratios(ratios):
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios <= 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three positive reals summing to 1, got {ratios.tolist()}")
    return ratios


def split_dataset(recordings, ratios=(0.7, 0.15, 0.15), seed=0) -> SplitManifest:
    """Assign whole recordings to train/val/test.

    ``recordings`` is an iterable of ``(recording_id, class_label, segment_count)``.
    Classes are visited in ascending label order; within a class the recordings
    are shuffled with ``seed`` and each one goes to the partition whose
    segment deficit (target minus assigned) is largest, ties to the earlier
    partition. Targets accumulate across classes, so leftover imbalance from
    one class is repaid by the next and each partition stays within one
    recording's worth of segments of its target.
    """
    ratios = _check_ratios(ratios)
    recordings = [(str(r), int(c), int(n)) for r, c, n in recordings]
    ids = [r for r, _, _ in recordings]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate recording ids")

    by_class: dict[int, list] = {}
    for rec in recordings:
        by_class.setdefault(rec[1], []).append(rec)
    for label, recs in by_class.items():
        if len(recs) < 3:
            raise InsufficientDataError(f"class {label} has {len(recs)} recordings, need at least 3")

    rng = np.random.default_rng(seed)
    targets = np.zeros(3)
    counts = np.zeros(3)
    assignments = {}
    for label in sorted(by_class):
        recs = sorted(by_class[label])
        order = rng.permutation(len(recs))
        targets += ratios * sum(n for _, _, n in recs)
        for i in order:
            rid, _, n = recs[i]
            p = int(np.argmax(targets - counts))
            counts[p] += n
            assignments[rid] = PARTITIONS[p]

    total = counts.sum()
    achieved = tuple(float(c / total) for c in counts) if total else (0.0, 0.0, 0.0)
    seg_counts = {name: int(c) for name, c in zip(PARTITIONS, counts)}
    return SplitManifest(assignments, int(seed), achieved, seg_counts)


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

@dataclass
class CorpusEntry:
    recording_id: str
    path: Path
    class_label: int


def read_corpus_manifest(path) -> list[CorpusEntry]:
    """Parse a ``recording_id,path,class_label`` CSV; relative paths resolve against the CSV."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["recording_id", "path", "class_label"]:
            raise FormatError(f"{path}: expected header recording_id,path,class_label")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 fields")
            rid, audio, label = (v.strip() for v in row)
            audio_path = Path(audio)
            if not audio_path.is_absolute():
                audio_path = path.parent / audio_path
            try:
                label = int(label)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad class label {label!r}") from exc
            entries.append(CorpusEntry(rid, audio_path, label))
    return entries


def write_corpus_manifest(path, entries):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recording_id", "path", "class_label"])
        for e in entries:
            w.writerow([e.recording_id, str(e.path), e.class_label])


def write_split_manifest(path, manifest: SplitManifest):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recording_id", "partition", "seed"])
        for rid in sorted(manifest.assignments):
            w.writerow([rid, manifest.assignments[rid], manifest.seed])


def read_split_manifest(path) -> SplitManifest:
    """Load a split CSV. Achieved ratios are not stored, so they come back as NaN."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["recording_id", "partition", "seed"]:
            raise FormatError(f"{path}: expected header recording_id,partition,seed")
        assignments = {}
        seed = 0
        for row in reader:
            if row["partition"] not in PARTITIONS:
                raise FormatError(f"{path}: unknown partition {row['partition']!r}")
            assignments[row["recording_id"]] = row["partition"]
            seed = int(row["seed"])
    nan = float("nan")
    return SplitManifest(assignments, seed, (nan, nan, nan))
