"""Flow datasets: CSV ingestion, synthetic UAV attack traffic, balancing and splits."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .flowfeat import FeatureError, FlowRecord

log = logging.getLogger(__name__)

LABELS = ("Normal", "Blackhole", "Flooding", "Sybil", "Wormhole")
ATTACKS = LABELS[1:]

CANONICAL_COLUMNS = (
    "label", "t_first", "t_last", "total_packets", "total_bytes", "bytes_fwd", "bytes_bwd",
    "packet_times", "packet_sizes",
)
OPTIONAL_FIELDS = ("bytes_fwd", "bytes_bwd", "packet_times", "packet_sizes", "cv_iat", "jitter",
                   "pmr", "window_rates")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    records: tuple
    provenance: dict
    y: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.y is not None and len(self.y) != len(self.records):
            raise DatasetError("binary label vector length differs from record count")

    def __len__(self):
        return len(self.records)

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.records]

    @property
    def class_counts(self) -> dict:
        counts = {lab: 0 for lab in LABELS}
        for r in self.records:
            counts[r.label] += 1
        return counts

    @property
    def binary_counts(self) -> dict:
        if self.y is None:
            raise DatasetError("dataset is not binarized")
        return {-1: int(np.sum(self.y < 0)), 1: int(np.sum(self.y > 0))}

    def subset(self, indices, step: dict) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        recs = tuple(self.records[i] for i in indices)
        y = None if self.y is None else self.y[indices].copy()
        return Dataset(recs, _chain(self.provenance, step), y)


def _chain(prov: dict, step: dict) -> dict:
    out = dict(prov)
    out["steps"] = list(prov.get("steps", [])) + [step]
    return out


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass
class IngestReport:
    rows: int = 0
    accepted: int = 0
    skipped: int = 0
    rejected_labels: int = 0
    diagnostics: list = field(default_factory=list)
    unmapped: list = field(default_factory=list)


def _float_list(text: str) -> np.ndarray | None:
    text = (text or "").strip()
    if not text:
        return None
    return np.array([float(v) for v in text.split(";")], dtype=float)


def _opt_float(text):
    text = (text or "").strip()
    return float(text) if text else None


def load_column_map(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def ingest_csv(path, column_map: dict | None = None) -> tuple[Dataset, IngestReport]:
    """Read one :class:`FlowRecord` per row.

    ``column_map`` maps logical field names to CSV headers; unmapped fields use
    their logical name. Mandatory: ``label``, ``total_packets``, a duration
    (``duration`` or ``t_first`` + ``t_last``) and a byte count (``total_bytes``
    or ``bytes_fwd`` + ``bytes_bwd``). Malformed rows are skipped and counted.
    """
    path = Path(path)
    column_map = dict(column_map or {})
    text = path.read_text()
    if not text.strip():
        raise DatasetError(f"{path} is empty")
    reader = csv.DictReader(io.StringIO(text))
    headers = set(reader.fieldnames or [])

    def col(name):
        h = column_map.get(name, name)
        return h if h in headers else None

    missing = [f for f in ("label", "total_packets") if col(f) is None]
    if col("duration") is None and (col("t_first") is None or col("t_last") is None):
        missing.append("duration|t_first+t_last")
    if col("total_bytes") is None and (col("bytes_fwd") is None or col("bytes_bwd") is None):
        missing.append("total_bytes|bytes_fwd+bytes_bwd")
    if missing:
        raise DatasetError(f"missing mandatory column(s): {', '.join(missing)}")

    report = IngestReport(unmapped=[f for f in OPTIONAL_FIELDS if col(f) is None])
    records = []
    for lineno, row in enumerate(reader, start=2):
        report.rows += 1
        label = (row.get(col("label")) or "").strip()
        if label not in LABELS:
            report.rejected_labels += 1
            report.diagnostics.append(f"line {lineno}: unknown label {label!r}")
            continue
        try:
            rec = _row_to_record(row, col, label)
        except (ValueError, FeatureError) as exc:
            report.skipped += 1
            report.diagnostics.append(f"line {lineno}: {exc}")
            continue
        records.append(rec)
        report.accepted += 1
    if report.rows == 0:
        raise DatasetError(f"{path} has a header but no rows")
    prov = {"source": "INGESTED", "path": str(path), "sha256": _sha(text), "column_map": column_map}
    return Dataset(tuple(records), prov), report


def _row_to_record(row, col, label) -> FlowRecord:
    def get(name):
        c = col(name)
        return row.get(c) if c else None

    if col("t_first") and col("t_last"):
        t_first = float(get("t_first"))
        t_last = float(get("t_last"))
    else:
        t_first = 0.0
        t_last = float(get("duration"))
    if not (math.isfinite(t_first) and math.isfinite(t_last)):
        raise ValueError("non-finite timestamps")
    n_pkt = int(float(get("total_packets")))
    fwd = _opt_float(get("bytes_fwd"))
    bwd = _opt_float(get("bytes_bwd"))
    total = _opt_float(get("total_bytes"))
    if total is None:
        if fwd is None or bwd is None:
            raise ValueError("no byte counts")
        total = fwd + bwd
    return FlowRecord(
        t_first=t_first,
        t_last=t_last,
        total_packets=n_pkt,
        total_bytes=total,
        bytes_fwd=fwd,
        bytes_bwd=bwd,
        label=label,
        packet_times=_float_list(get("packet_times")),
        packet_sizes=_float_list(get("packet_sizes")),
        window_rates=_float_list(get("window_rates")),
        cv_iat=_opt_float(get("cv_iat")),
        jitter=_opt_float(get("jitter")),
        pmr=_opt_float(get("pmr")),
    )


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, np.ndarray):
        return ";".join(repr(float(x)) for x in v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def to_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CANONICAL_COLUMNS)
    for r in ds.records:
        w.writerow([r.label] + [_fmt(getattr(r, c)) for c in CANONICAL_COLUMNS[1:]])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class ClassProfile:
    """Class-conditional generative parameters.

    Packet rate and duration are log-normal; inter-arrival times are gamma
    with shape ``iat_shape`` (coefficient of variation ``1/sqrt(shape)``).
    The forward byte share is drawn from Beta(*fwd_beta); bursty classes switch
    between normal and compressed gaps in runs of mean length ``burst_run``.
    """

    rate_median: float = 20.0
    rate_sigma: float = 0.5
    duration_median: float = 2.0
    duration_sigma: float = 0.5
    size_mean: float = 512.0
    size_sigma: float = 0.3
    iat_shape: float = 4.0
    fwd_beta: tuple = (6.0, 6.0)
    burst_prob: float = 0.0
    burst_factor: float = 0.1
    burst_run: float = 25.0


DEFAULT_PROFILES = {
    "Normal": ClassProfile(),
    "Flooding": ClassProfile(rate_median=160.0, rate_sigma=0.5, duration_median=1.5, size_mean=700.0,
                             iat_shape=2.0, fwd_beta=(8.0, 3.0), burst_prob=0.3, burst_factor=0.05),
    "Blackhole": ClassProfile(rate_median=8.0, size_mean=300.0, fwd_beta=(40.0, 1.0), iat_shape=3.0),
    "Wormhole": ClassProfile(rate_median=10.0, size_mean=350.0, fwd_beta=(30.0, 1.5), iat_shape=3.5),
    "Sybil": ClassProfile(rate_median=18.0, iat_shape=0.15, fwd_beta=(5.0, 5.0)),
}

# 2,000 flows at 78.6 % attack prevalence
DEFAULT_COUNTS = {"Normal": 428, "Blackhole": 393, "Flooding": 393, "Sybil": 393, "Wormhole": 393}


@dataclass(frozen=True)
class SynthConfig:
    counts: dict = field(default_factory=lambda: dict(DEFAULT_COUNTS))
    profiles: dict = field(default_factory=lambda: dict(DEFAULT_PROFILES))
    seed: int = 7
    max_packets: int = 2000
    # fraction of attack flows that mimic Normal traffic (keeps the task non-trivial)
    camouflage: float = 0.1

    def __post_init__(self):
        for lab, c in self.counts.items():
            if lab not in LABELS:
                raise DatasetError(f"unknown class {lab!r}")
            if c < 0:
                raise DatasetError(f"negative count for {lab}")
        if sum(self.counts.values()) == 0:
            raise DatasetError("all class counts are zero")

    def to_dict(self) -> dict:
        return {
            "counts": dict(self.counts),
            "profiles": {k: asdict(v) for k, v in self.profiles.items()},
            "seed": self.seed,
            "max_packets": self.max_packets,
            "camouflage": self.camouflage,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        profiles = dict(DEFAULT_PROFILES)
        for k, v in (d.get("profiles") or {}).items():
            v = dict(v)
            if "fwd_beta" in v:
                v["fwd_beta"] = tuple(v["fwd_beta"])
            profiles[k] = replace(DEFAULT_PROFILES.get(k, ClassProfile()), **v)
        return cls(
            counts=dict(d.get("counts", DEFAULT_COUNTS)),
            profiles=profiles,
            seed=int(d.get("seed", 7)),
            max_packets=int(d.get("max_packets", 2000)),
            camouflage=float(d.get("camouflage", 0.1)),
        )

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _synth_flow(label: str, prof: ClassProfile, rng: np.random.Generator, max_packets: int,
                t0: float) -> FlowRecord:
    rate = prof.rate_median * np.exp(prof.rate_sigma * rng.standard_normal())
    duration = prof.duration_median * np.exp(prof.duration_sigma * rng.standard_normal())
    n_pkt = int(np.clip(rng.poisson(rate * duration), 3, max_packets))
    iat = rng.gamma(prof.iat_shape, 1.0 / prof.iat_shape, size=n_pkt - 1)
    if prof.burst_prob > 0:
        # two-state on/off switching so short gaps cluster into bursts
        flips = rng.random(n_pkt - 1) < 1.0 / prof.burst_run
        state = (np.cumsum(flips) + (rng.random() < prof.burst_prob)) % 2 == 1
        iat = np.where(state, iat * prof.burst_factor, iat)
    iat = iat / iat.mean() / rate
    times = t0 + np.r_[0.0, np.cumsum(iat)]
    sizes = np.round(prof.size_mean * np.exp(prof.size_sigma * rng.standard_normal(n_pkt)))
    sizes = np.clip(sizes, 40.0, 1500.0)
    total = float(sizes.sum())
    frac = rng.beta(*prof.fwd_beta)
    fwd = float(np.round(total * frac))
    return FlowRecord(
        t_first=float(times[0]),
        t_last=float(times[-1]),
        total_packets=n_pkt,
        total_bytes=total,
        bytes_fwd=fwd,
        bytes_bwd=total - fwd,
        label=label,
        packet_times=times,
        packet_sizes=sizes,
    )


def synth_generate(config: SynthConfig | None = None) -> Dataset:
    config = config or SynthConfig()
    records = []
    for ci, label in enumerate(LABELS):
        count = int(config.counts.get(label, 0))
        if count == 0:
            continue
        # independent stream per class
        rng = np.random.default_rng([config.seed, ci])
        prof = config.profiles.get(label, ClassProfile())
        normal = config.profiles.get("Normal", ClassProfile())
        for _ in range(count):
            t0 = float(rng.uniform(0.0, 600.0))
            use = prof
            if label != "Normal" and rng.random() < config.camouflage:
                use = normal
            records.append(_synth_flow(label, use, rng, config.max_packets, t0))
    order = np.random.default_rng([config.seed, 99]).permutation(len(records))
    records = [records[i] for i in order]
    prov = {"source": "SYNTHETIC", "seed": config.seed, "config_hash": config.digest()}
    return Dataset(tuple(records), prov)


# ---------------------------------------------------------------------------
# binary protocol


def binarize(ds: Dataset) -> Dataset:
    y = np.array([-1 if r.label == "Normal" else 1 for r in ds.records], dtype=int)
    if ds.y is not None and np.array_equal(ds.y, y):
        return ds
    return Dataset(ds.records, _chain(ds.provenance, {"op": "binarize"}), y)


def _require_binary(ds: Dataset):
    if ds.y is None:
        raise DatasetError("dataset must be binarized first")


def balance(ds: Dataset, strategy: str = "UNDERSAMPLE", seed: int = 0) -> Dataset:
    _require_binary(ds)
    strategy = strategy.upper()
    pos = np.flatnonzero(ds.y > 0)
    neg = np.flatnonzero(ds.y < 0)
    if len(pos) == 0 or len(neg) == 0:
        raise DatasetError("balancing needs both classes")
    if strategy == "NONE":
        return ds.subset(np.arange(len(ds)), {"op": "balance", "strategy": "NONE"})
    if strategy != "UNDERSAMPLE":
        raise DatasetError(f"unknown balance strategy {strategy!r}")
    rng = np.random.default_rng(seed)
    k = min(len(pos), len(neg))
    keep_pos = np.sort(rng.choice(pos, size=k, replace=False)) if len(pos) > k else pos
    keep_neg = np.sort(rng.choice(neg, size=k, replace=False)) if len(neg) > k else neg
    idx = np.sort(np.r_[keep_pos, keep_neg])
    return ds.subset(idx, {"op": "balance", "strategy": "UNDERSAMPLE", "seed": seed})


@dataclass(frozen=True)
class Split:
    train_indices: np.ndarray
    test_indices: np.ndarray
    ratio: float
    seed: int

    def train(self, ds: Dataset) -> Dataset:
        return ds.subset(self.train_indices, {"op": "split", "part": "train", "seed": self.seed})

    def test(self, ds: Dataset) -> Dataset:
        return ds.subset(self.test_indices, {"op": "split", "part": "test", "seed": self.seed})


def split(ds: Dataset, ratio: float = 0.8, seed: int = 0) -> Split:
    """Stratified train/test partition by binary label."""
    _require_binary(ds)
    if not 0 < ratio < 1:
        raise DatasetError("ratio must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in (-1, 1):
        members = np.flatnonzero(ds.y == cls)
        if len(members) < 2:
            raise DatasetError(f"class {cls:+d} has fewer than 2 members")
        members = rng.permutation(members)
        k = int(round(ratio * len(members)))
        k = min(max(k, 1), len(members) - 1)
        train.append(members[:k])
        test.append(members[k:])
    return Split(np.sort(np.concatenate(train)), np.sort(np.concatenate(test)), ratio, seed)


def write_dataset(ds: Dataset, path) -> Path:
    """Canonical CSV plus a ``.provenance.json`` sidecar, both written atomically."""
    from .bench import atomic_write

    path = Path(path)
    text = to_csv(ds)
    atomic_write(path, text)
    prov = dict(ds.provenance)
    prov["rows"] = len(ds)
    prov["class_counts"] = ds.class_counts
    prov["sha256"] = _sha(text)
    atomic_write(path.with_suffix(".provenance.json"), json.dumps(prov, indent=2, sort_keys=True))
    return path
