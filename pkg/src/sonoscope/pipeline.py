"""End-to-end workflow: extract, split, train, evaluate, sweep and report.

Layout under the output directory::

    split.csv
    runs/<combo>/<seed>/config           run settings and normalisation stats
    runs/<combo>/<seed>/history.csv      epoch, train_loss, val_loss
    runs/<combo>/<seed>/checkpoint.best  HLTC checkpoint, written last
    runs/<combo>/<seed>/eval.json        test-split metrics
    report.json, table.csv, table.md, fdr.csv, confusion/, penultimate/

Feature caches live in ``$SONOSCOPE_CACHE_DIR`` if set, else the configured
cache directory, else ``<output>/cache``.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import features as tf
from .errors import ConfigError, DegenerateError, DivergenceError, SonoscopeError
from .hltdnn import HLTDNN, ModelConfig, TrainConfig, build_model, train
from .metrics import METRIC_NAMES, MetricsReport, aggregate, confusion, log_fdr, summary
from .signal_io import (
    PARTITIONS,
    read_corpus_manifest,
    read_split_manifest,
    read_wav,
    resample,
    segment,
    split_dataset,
    write_split_manifest,
)
from .stack import (
    CombinationId,
    Standardizer,
    combo_name,
    enumerate_combinations,
    parse_combo,
    stack,
)

log = logging.getLogger(__name__)

CACHE_ENV = "SONOSCOPE_CACHE_DIR"
INDEX_FILE = "index.csv"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    manifest: Path
    output: Path
    cache: Path | None = None
    sample_rate: int = 16000
    segment_seconds: float = 3.0
    window_ms: float = 250.0
    hop_ms: float = 64.0
    split_ratios: tuple = (0.7, 0.15, 0.15)
    split_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    bins: int = 16
    num_classes: int = 4
    seeds: tuple = (0, 1, 2)
    combos: object = "all"
    workers: int = 1

    @property
    def cache_dir(self) -> Path:
        env = os.environ.get(CACHE_ENV)
        if env:
            return Path(env)
        return self.cache if self.cache is not None else self.output / "cache"

    @property
    def frame_params(self):
        return tf.FrameParams.for_rate(self.sample_rate, self.window_ms, self.hop_ms)

    def combo_list(self) -> list[CombinationId]:
        if self.combos == "all":
            return enumerate_combinations(len(tf.ALL_KINDS))
        return list(self.combos)


def parse_combos(text) -> object:
    """``"all"`` or a comma-separated list of ``+``-joined kind names."""
    text = text.strip()
    if text.lower() == "all":
        return "all"
    try:
        combos = [parse_combo(t) for t in text.split(",") if t.strip()]
    except SonoscopeError as exc:
        raise ConfigError(str(exc)) from None
    if not combos:
        raise ConfigError("empty combination list")
    return sorted(set(combos))


def parse_seeds(text) -> tuple:
    try:
        seeds = tuple(int(s) for s in str(text).split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"bad seed list {text!r}") from exc
    if not seeds or len(set(seeds)) != len(seeds):
        raise ConfigError(f"seeds must be a non-empty list of distinct integers, got {text!r}")
    return seeds


def load_config(path, combos=None, seeds=None, workers=None) -> RunConfig:
    """Read a ``key = value`` INI-style config; relative paths resolve against it."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    cp = configparser.ConfigParser()
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = path.parent

    def get(section, key, default=None):
        return cp.get(section, key, fallback=default)

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    if get("paths", "manifest") is None or get("paths", "output") is None:
        raise ConfigError(f"{path}: [paths] needs manifest and output")
    try:
        tc = TrainConfig(
            lr=float(get("train", "lr", 1e-3)),
            batch_size=int(get("train", "batch_size", 128)),
            max_epochs=int(get("train", "max_epochs", 150)),
            patience=int(get("train", "patience", 15)),
            dropout=float(get("train", "dropout", 0.5)),
        )
        ratios = tuple(float(r) for r in get("split", "ratios", "0.7, 0.15, 0.15").split(","))
        cfg = RunConfig(
            manifest=resolve(get("paths", "manifest")),
            output=resolve(get("paths", "output")),
            cache=resolve(get("paths", "cache")) if get("paths", "cache") else None,
            sample_rate=int(get("audio", "sample_rate", 16000)),
            segment_seconds=float(get("audio", "segment_seconds", 3.0)),
            window_ms=float(get("features", "window_ms", 250.0)),
            hop_ms=float(get("features", "hop_ms", 64.0)),
            split_ratios=ratios,
            split_seed=int(get("split", "seed", 0)),
            train=tc,
            bins=int(get("model", "bins", 16)),
            num_classes=int(get("model", "num_classes", 4)),
            seeds=parse_seeds(seeds if seeds is not None else get("sweep", "seeds", "0, 1, 2")),
            combos=parse_combos(combos if combos is not None else get("sweep", "combos", "all")),
            workers=int(workers if workers is not None else get("sweep", "workers", 1)),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1) > 1e-9:
        raise ConfigError(f"{path}: split ratios must be three positive numbers summing to 1")
    if not cfg.manifest.is_file():
        raise ConfigError(f"corpus manifest {cfg.manifest} not found")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def cache_path(cache_dir, recording_id, segment_index, kind):
    return Path(cache_dir) / recording_id / f"{segment_index:04d}.{tf.FeatureKind(kind).name}.tffm"


def _extract_recording(args):
    entry, cache_dir, rate, seconds, params = args
    written = skipped = 0
    buf = resample(read_wav(entry.path, entry.recording_id, entry.class_label), rate)
    segs = segment(buf, seconds)
    for seg in segs:
        for kind, fm in tf.extract_features(seg, tf.ALL_KINDS, params).items():
            target = cache_path(cache_dir, entry.recording_id, seg.segment_index, kind)
            data = tf.feature_map_to_bytes(fm)
            if target.is_file() and target.read_bytes() == data:
                skipped += 1
                continue
            target.parent.mkdir(parents=True, exist_ok=True)
            tmp = target.with_suffix(".tmp")
            tmp.write_bytes(data)
            tmp.replace(target)
            written += 1
    return entry.recording_id, entry.class_label, len(segs), written, skipped


@dataclass
class ExtractResult:
    written: int = 0
    skipped: int = 0
    failures: list = field(default_factory=list)


def _write_if_changed(path, text):
    path = Path(path)
    if path.is_file() and path.read_text(encoding="utf-8") == text:
        return False
    path.write_text(text, encoding="utf-8")
    return True


def cmd_extract(cfg: RunConfig) -> ExtractResult:
    """Compute all six feature maps for every segment of every recording.

    Existing cache files with identical bytes are left untouched. Recordings
    that fail to load are logged and skipped; ``failures`` lists them.
    """
    entries = read_corpus_manifest(cfg.manifest)
    cache_dir = cfg.cache_dir
    cache_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(e, cache_dir, cfg.sample_rate, cfg.segment_seconds, cfg.frame_params) for e in entries]
    result = ExtractResult()
    rows = []

    def consume(entry, outcome):
        if isinstance(outcome, BaseException):
            log.error("failed to process %s: %s", entry.path, outcome)
            result.failures.append((entry.recording_id, str(entry.path), str(outcome)))
            return
        rid, label, n_segs, written, skipped = outcome
        result.written += written
        result.skipped += skipped
        rows.extend((rid, label, i) for i in range(n_segs))

    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            futures = [(e, pool.submit(_extract_recording, j)) for e, j in zip(entries, jobs)]
            for entry, fut in futures:
                try:
                    consume(entry, fut.result())
                except Exception as exc:  # noqa: BLE001 - reported per file
                    consume(entry, exc)
    else:
        for entry, job in zip(entries, jobs):
            try:
                consume(entry, _extract_recording(job))
            except Exception as exc:  # noqa: BLE001
                consume(entry, exc)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["recording_id", "class_label", "segment_index"])
    w.writerows(sorted(rows))
    _write_if_changed(cache_dir / INDEX_FILE, buf.getvalue())
    log.info("extract: %d written, %d unchanged, %d failed recordings",
             result.written, result.skipped, len(result.failures))
    return result


def read_index(cache_dir) -> list[tuple[str, int, int]]:
    path = Path(cache_dir) / INDEX_FILE
    if not path.is_file():
        raise ConfigError(f"feature index {path} missing; run extract first")
    with path.open(newline="", encoding="utf-8") as fh:
        return [(r["recording_id"], int(r["class_label"]), int(r["segment_index"]))
                for r in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# Split
# ---------------------------------------------------------------------------

def cmd_split(cfg: RunConfig):
    index = read_index(cfg.cache_dir)
    counts: dict[tuple[str, int], int] = {}
    for rid, label, _ in index:
        counts[(rid, label)] = counts.get((rid, label), 0) + 1
    manifest = split_dataset([(r, c, n) for (r, c), n in sorted(counts.items())],
                             cfg.split_ratios, cfg.split_seed)
    cfg.output.mkdir(parents=True, exist_ok=True)
    write_split_manifest(cfg.output / "split.csv", manifest)
    log.info("split: segments %s, ratios %s", manifest.segment_counts,
             tuple(round(r, 4) for r in manifest.achieved_ratios))
    return manifest


# ---------------------------------------------------------------------------
# Data assembly
# ---------------------------------------------------------------------------

class FeatureStore:
    """Loads cached maps per partition and builds stacked model inputs."""

    def __init__(self, cache_dir, split_path):
        self.cache_dir = Path(cache_dir)
        self.index = read_index(self.cache_dir)
        if not Path(split_path).is_file():
            raise ConfigError(f"split manifest {split_path} missing; run split first")
        assignments = read_split_manifest(split_path).assignments
        self.parts = {p: [] for p in PARTITIONS}
        for rid, label, idx in self.index:
            if rid not in assignments:
                raise ConfigError(f"recording {rid} missing from split manifest")
            self.parts[assignments[rid]].append((rid, label, idx))
        self._maps = {}

    def maps(self, partition):
        if partition not in self._maps:
            self._maps[partition] = [
                {k: tf.load_feature_map(cache_path(self.cache_dir, rid, idx, k)) for k in tf.ALL_KINDS}
                for rid, _, idx in self.parts[partition]
            ]
        return self._maps[partition]

    def labels(self, partition):
        return np.array([label for _, label, _ in self.parts[partition]], dtype=np.int64)

    def standardizer(self):
        return Standardizer.fit(fm for maps in self.maps("train") for fm in maps.values())

    def arrays(self, partition, combo, normalizer):
        maps = self.maps(partition)
        if not maps:
            raise ConfigError(f"{partition} partition is empty")
        x = np.stack([stack({k: m[k] for k in combo.kinds}, combo, normalizer).channels for m in maps])
        return x, self.labels(partition)


_STORES: dict = {}


def _store(cfg: RunConfig) -> FeatureStore:
    key = (str(cfg.cache_dir), str(cfg.output))
    if key not in _STORES:
        _STORES.clear()
        _STORES[key] = FeatureStore(cfg.cache_dir, cfg.output / "split.csv")
    return _STORES[key]


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

def run_dir(output, combo, seed) -> Path:
    return Path(output) / "runs" / combo_name(combo) / str(seed)


def model_config(cfg: RunConfig, combo, seed):
    return ModelConfig(in_channels=combo.size, num_classes=cfg.num_classes, bins=cfg.bins, seed=seed)


def _write_run_config(path, combo, mcfg: ModelConfig, tc: TrainConfig, normalizer: Standardizer):
    cp = configparser.ConfigParser()
    cp["run"] = {"combo": combo_name(combo), "seed": str(mcfg.seed)}
    cp["model"] = {
        "in_channels": str(mcfg.in_channels), "num_classes": str(mcfg.num_classes),
        "bins": str(mcfg.bins), "conv_channels": ", ".join(map(str, mcfg.conv_channels)),
        "branch_channels": str(mcfg.branch_channels),
        "hist_kernel": ", ".join(map(str, mcfg.hist_kernel)), "hist_stride": str(mcfg.hist_stride),
    }
    cp["train"] = {k: repr(getattr(tc, k)) for k in ("lr", "batch_size", "max_epochs", "patience",
                                                     "dropout", "seed")}
    cp["normalization"] = {k: f"{m!r}, {s!r}" for k, (m, s) in normalizer.to_dict().items()}
    buf = io.StringIO()
    cp.write(buf)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_run_config(path):
    """Returns ``(ModelConfig, Standardizer)`` from a run's ``config`` file."""
    cp = configparser.ConfigParser()
    cp.read(path, encoding="utf-8")
    m = cp["model"]
    mcfg = ModelConfig(
        in_channels=int(m["in_channels"]), num_classes=int(m["num_classes"]), bins=int(m["bins"]),
        conv_channels=tuple(int(v) for v in m["conv_channels"].split(",")),
        branch_channels=int(m["branch_channels"]),
        hist_kernel=tuple(int(v) for v in m["hist_kernel"].split(",")),
        hist_stride=int(m["hist_stride"]), seed=int(cp["run"]["seed"]),
    )
    stats = {k.upper(): [float(v) for v in val.split(",")] for k, val in cp["normalization"].items()}
    return mcfg, Standardizer.from_dict(stats)


def _write_history(path, history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss"])
    for epoch, tr, va in history.rows():
        w.writerow([epoch, repr(tr), repr(va)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def train_run(cfg: RunConfig, combo: CombinationId, seed: int) -> str:
    """Train one (combination, seed) pair unless its checkpoint exists.

    Returns ``"trained"``, ``"skipped"`` or ``"failed"``.
    """
    rdir = run_dir(cfg.output, combo, seed)
    ckpt = rdir / "checkpoint.best"
    if ckpt.is_file():
        return "skipped"
    store = _store(cfg)
    normalizer = store.standardizer()
    x_tr, y_tr = store.arrays("train", combo, normalizer)
    x_va, y_va = store.arrays("val", combo, normalizer)
    mcfg = model_config(cfg, combo, seed)
    tc = replace(cfg.train, seed=seed)
    rdir.mkdir(parents=True, exist_ok=True)
    (rdir / "failed.json").unlink(missing_ok=True)
    try:
        best, history = train(build_model(mcfg), (x_tr, y_tr), (x_va, y_va), tc)
    except DivergenceError as exc:
        log.error("%s seed %d diverged at epoch %d", combo_name(combo), seed, exc.epoch)
        _dump_json(rdir / "failed.json", {"epoch": exc.epoch, "reason": "divergence"})
        return "failed"
    _write_run_config(rdir / "config", combo, mcfg, tc, normalizer)
    _write_history(rdir / "history.csv", history)
    tmp = rdir / "checkpoint.tmp"
    best.save(tmp)
    tmp.replace(ckpt)
    log.info("%s seed %d: best epoch %d of %d", combo_name(combo), seed,
             history.best_epoch, history.epochs[-1])
    return "trained"


def load_run_model(rdir):
    mcfg, normalizer = read_run_config(Path(rdir) / "config")
    return HLTDNN.load(Path(rdir) / "checkpoint.best", mcfg), normalizer


def evaluate_run(cfg: RunConfig, combo: CombinationId, seed: int, force=False) -> str:
    """Score a trained run on the test split and write ``eval.json``."""
    rdir = run_dir(cfg.output, combo, seed)
    if not (rdir / "checkpoint.best").is_file():
        return "missing"
    if (rdir / "eval.json").is_file() and not force:
        return "skipped"
    model, normalizer = load_run_model(rdir)
    x_te, y_te = _store(cfg).arrays("test", combo, normalizer)
    pred = model.predict(x_te)
    cm = confusion(y_te, pred, cfg.num_classes)
    report = summary(cm)
    try:
        fdr = log_fdr(model.penultimate(x_te), y_te)
    except DegenerateError:
        fdr = None
    with (rdir / "history.csv").open(encoding="utf-8") as fh:
        history = list(csv.DictReader(fh))
    best_epoch = min(history, key=lambda r: (float(r["val_loss"]), int(r["epoch"])))["epoch"]
    _dump_json(rdir / "eval.json", {
        "combo": combo_name(combo),
        "seed": seed,
        "metrics": report.values(),
        "confusion": cm.counts.tolist(),
        "log_fdr": fdr,
        "test_segments": len(y_te),
        "epochs_run": len(history),
        "best_epoch": int(best_epoch),
    })
    return "evaluated"


def _sweep_job(args):
    cfg, combo, seed, do_train, do_eval = args
    try:
        status = train_run(cfg, combo, seed) if do_train else "skipped"
        if do_eval and status != "failed":
            evaluate_run(cfg, combo, seed)
    except Exception as exc:  # noqa: BLE001 - one bad run must not stop the sweep
        log.error("%s seed %d failed: %s", combo_name(combo), seed, exc)
        rdir = run_dir(cfg.output, combo, seed)
        rdir.mkdir(parents=True, exist_ok=True)
        _dump_json(rdir / "failed.json", {"reason": f"{type(exc).__name__}: {exc}"})
        status = "failed"
    return combo.bitmask, seed, status


def _run_jobs(cfg, do_train, do_eval):
    store = _store(cfg)  # surfaces missing caches or split before any job starts
    for part in PARTITIONS:
        if not store.parts[part]:
            raise ConfigError(f"{part} partition is empty")
    jobs = [(cfg, c, s, do_train, do_eval) for c in cfg.combo_list() for s in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    return [r for r in results if r[2] == "failed"]


def cmd_train(cfg: RunConfig):
    return _run_jobs(cfg, True, False)


def cmd_evaluate(cfg: RunConfig):
    return _run_jobs(cfg, False, True)


def cmd_sweep(cfg: RunConfig):
    """Train and evaluate every (combination, seed) pair, then write the report.

    Completed runs are not retrained. Returns failed runs followed by runs
    missing from the report; empty means complete success.
    """
    failures = _run_jobs(cfg, True, True)
    return failures + cmd_report(cfg)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def _fmt_pct(mean, std):
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


def best_seed(per_seed: dict) -> int:
    """Highest test accuracy, ties to the lower seed."""
    return min(per_seed, key=lambda s: (-per_seed[s]["metrics"]["accuracy"], s))


def cmd_report(cfg: RunConfig):
    """Aggregate evaluated runs into tables, confusion matrices and feature dumps.

    Returns the list of ``(combo, seed)`` pairs that had no evaluation.
    """
    out = cfg.output
    rows, missing = [], []
    for combo in cfg.combo_list():
        per_seed = {}
        for seed in cfg.seeds:
            path = run_dir(out, combo, seed) / "eval.json"
            if path.is_file():
                per_seed[seed] = json.loads(path.read_text(encoding="utf-8"))
            else:
                missing.append((combo_name(combo), seed))
        if not per_seed:
            continue
        seeds = sorted(per_seed)
        reports = [MetricsReport(**per_seed[s]["metrics"]) for s in seeds]
        agg = aggregate(reports)
        counts = np.array([per_seed[s]["confusion"] for s in seeds], dtype=np.int64)
        support = counts.sum(axis=2, keepdims=True)
        normalized = np.divide(counts, support, out=np.zeros(counts.shape), where=support > 0)
        fdrs = [per_seed[s]["log_fdr"] for s in seeds]
        valid = [f for f in fdrs if f is not None]
        rows.append({
            "combo": combo_name(combo),
            "bitmask": combo.bitmask,
            "n_features": combo.size,
            "seeds": seeds,
            "complete": len(seeds) == len(cfg.seeds),
            "per_seed": {str(s): per_seed[s]["metrics"] for s in seeds},
            "mean": agg.values(),
            "std": agg.std,
            "best_seed": best_seed(per_seed),
            "confusion": {
                "per_seed": {str(s): per_seed[s]["confusion"] for s in seeds},
                "sum": counts.sum(axis=0).tolist(),
                "normalized_mean": normalized.mean(axis=0).tolist(),
                "normalized_std": (normalized.std(axis=0, ddof=1) if len(seeds) > 1
                                   else np.zeros(normalized.shape[1:])).tolist(),
            },
            "log_fdr": {
                "per_seed": {str(s): f for s, f in zip(seeds, fdrs)},
                "mean": float(np.mean(valid)) if valid else None,
                "std": float(np.std(valid, ddof=1)) if len(valid) > 1 else 0.0,
            },
        })
    rows.sort(key=lambda r: (-r["mean"]["accuracy"], r["bitmask"]))

    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "report.json", {"rows": rows, "missing": [list(m) for m in missing],
                                     "seeds": list(cfg.seeds)})
    _write_tables(out, rows)
    _write_confusions(out / "confusion", rows)
    _write_fdr(out / "fdr.csv", rows)
    _write_penultimate(cfg, rows)
    if missing:
        absent = sorted({c for c, _ in missing})
        log.error("report: %d runs missing across %d combinations: %s",
                  len(missing), len(absent), ", ".join(absent))
    return missing


def _write_tables(out, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["features"] + [f"{m}_{s}" for m in METRIC_NAMES for s in ("mean", "std")]
               + ["n_runs", "complete"])
    for r in rows:
        w.writerow([r["combo"]] + [repr(r[s][m]) for m in METRIC_NAMES for s in ("mean", "std")]
                   + [len(r["seeds"]), int(r["complete"])])
    (out / "table.csv").write_text(buf.getvalue(), encoding="utf-8")

    lines = ["| Features | Accuracy (%) | Precision (%) | Recall (%) | F1 score (%) | MCC |",
             "|---|---|---|---|---|---|"]
    for r in rows:
        mean, std = r["mean"], r["std"]
        cells = [r["combo"].replace("+", ", ") + ("" if r["complete"] else " (incomplete)")]
        cells += [_fmt_pct(mean[m], std[m]) for m in ("accuracy", "precision", "recall", "f1")]
        cells.append(f"{mean['mcc']:.3f} ± {std['mcc']:.3f}")
        lines.append("| " + " | ".join(cells) + " |")
    (out / "table.md").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_confusions(directory, rows):
    directory.mkdir(parents=True, exist_ok=True)
    for r in rows:
        np.savetxt(directory / f"{r['combo']}.counts.csv", np.array(r["confusion"]["sum"]),
                   fmt="%d", delimiter=",")
        np.savetxt(directory / f"{r['combo']}.normalized.csv",
                   np.array(r["confusion"]["normalized_mean"]), fmt="%.10f", delimiter=",")


def _write_fdr(path, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["combo", "seed", "log_fdr"])
    for r in sorted(rows, key=lambda r: r["bitmask"]):
        for seed, value in r["log_fdr"]["per_seed"].items():
            w.writerow([r["combo"], seed, "" if value is None else repr(value)])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _write_penultimate(cfg, rows):
    directory = cfg.output / "penultimate"
    directory.mkdir(parents=True, exist_ok=True)
    store = _store(cfg)
    for r in rows:
        combo = parse_combo(r["combo"])
        model, normalizer = load_run_model(run_dir(cfg.output, combo, r["best_seed"]))
        x_te, y_te = store.arrays("test", combo, normalizer)
        feats = model.penultimate(x_te)
        header = "label," + ",".join(f"f{i}" for i in range(feats.shape[1]))
        np.savetxt(directory / f"{r['combo']}.csv", np.column_stack([y_te, feats]),
                   fmt=["%d"] + ["%.9g"] * feats.shape[1], delimiter=",", header=header, comments="")
