"""Flow records to the 8-dimensional engineered feature vector.

Feature order: duration, packet rate, byte rate, mean packet size,
inter-arrival coefficient of variation, directional asymmetry ratio,
short-term jitter, peak-to-mean burst ratio.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

FEATURE_NAMES = ("duration", "pkt_rate", "byte_rate", "mean_pkt_size", "cv_iat", "dar", "jitter", "pmr")
LOG_COLUMNS = (1, 2, 7)
STAGES = ("RAW", "LOGGED", "STANDARDIZED")

DAR_EPS = 1e-9
MIN_DURATION = 1e-6
DEFAULT_PMR_WINDOW = 0.1


class FeatureError(ValueError):
    pass


class DegenerateFeatureError(FeatureError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"zero variance in feature(s): {', '.join(self.columns)}")


@dataclass
class FlowRecord:
    t_first: float
    t_last: float
    total_packets: int
    total_bytes: float
    bytes_fwd: float | None = None
    bytes_bwd: float | None = None
    label: str = "Normal"
    packet_times: np.ndarray | None = None
    packet_sizes: np.ndarray | None = None
    window_rates: np.ndarray | None = None
    # aggregate-only corpora may ship these three pre-computed
    cv_iat: float | None = None
    jitter: float | None = None
    pmr: float | None = None

    def __post_init__(self):
        if self.total_packets < 1:
            raise FeatureError("a flow needs at least one packet")
        if self.t_first < 0 or self.t_last < 0:
            raise FeatureError("negative timestamps")
        if self.t_last < self.t_first:
            raise FeatureError("t_last precedes t_first")
        if self.packet_times is not None:
            self.packet_times = np.asarray(self.packet_times, dtype=float)
            if len(self.packet_times) != self.total_packets:
                raise FeatureError("packet_times length differs from total_packets")
            if np.any(np.diff(self.packet_times) < 0):
                raise FeatureError("packet_times must be sorted")
        if self.packet_sizes is not None:
            self.packet_sizes = np.asarray(self.packet_sizes, dtype=float)
            if len(self.packet_sizes) != self.total_packets:
                raise FeatureError("packet_sizes length differs from total_packets")

    @property
    def duration(self) -> float:
        return self.t_last - self.t_first


@dataclass
class FeatureVector:
    values: np.ndarray
    stage: str = "RAW"
    imputed: tuple = field(default=(), compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(FEATURE_NAMES),):
            raise FeatureError(f"feature vector must have {len(FEATURE_NAMES)} entries")
        if self.stage not in STAGES:
            raise FeatureError(f"unknown stage {self.stage!r}")


def _inter_arrivals(times: np.ndarray) -> np.ndarray:
    return np.diff(times) if len(times) > 1 else np.zeros(0)


def _cv(dt: np.ndarray) -> float:
    if len(dt) < 1:
        return 0.0
    mu = dt.mean()
    if mu <= 0:
        return 0.0
    return float(dt.std() / mu)


def _jitter(dt: np.ndarray, n_pkt: int) -> float:
    if n_pkt < 3:
        return 0.0
    return float(np.sum(np.abs(np.diff(dt))) / (n_pkt - 2))


def _pmr(flow: FlowRecord, byte_rate: float, window: float) -> float:
    if flow.window_rates is not None and len(flow.window_rates):
        peak = float(np.max(flow.window_rates))
        return max(1.0, peak / byte_rate) if byte_rate > 0 else 1.0
    T = flow.duration
    if T < window or byte_rate <= 0:
        return 1.0
    t = flow.packet_times - flow.t_first
    sizes = flow.packet_sizes
    if sizes is None:
        sizes = np.full(flow.total_packets, flow.total_bytes / flow.total_packets)
    cum = np.r_[0.0, np.cumsum(sizes)]
    hop = window / 2
    starts = np.arange(0.0, T - window + 1e-12, hop)
    starts = np.r_[starts, T - window]
    lo = np.searchsorted(t, starts, side="left")
    hi = np.searchsorted(t, starts + window, side="right")
    peak = float(np.max((cum[hi] - cum[lo]) / window))
    # the whole-flow window is always a candidate, so PMR >= 1
    return max(1.0, peak / byte_rate)


def extract(flow: FlowRecord, pmr_window: float = DEFAULT_PMR_WINDOW) -> FeatureVector:
    n_pkt = flow.total_packets
    T = flow.duration
    T_eff = max(T, MIN_DURATION)
    r_p = n_pkt / T_eff
    r_b = flow.total_bytes / T_eff
    s_mean = flow.total_bytes / n_pkt
    fwd = flow.bytes_fwd if flow.bytes_fwd is not None else flow.total_bytes
    bwd = flow.bytes_bwd if flow.bytes_bwd is not None else 0.0
    dar = abs(fwd - bwd) / (fwd + bwd + DAR_EPS)

    imputed = []
    if flow.packet_times is not None:
        dt = _inter_arrivals(flow.packet_times)
        cv = _cv(dt)
        jit = _jitter(dt, n_pkt)
        pmr = _pmr(flow, flow.total_bytes / T if T > 0 else 0.0, pmr_window)
    else:
        cv, jit, pmr = flow.cv_iat, flow.jitter, flow.pmr
        if flow.window_rates is not None and pmr is None:
            pmr = _pmr(flow, flow.total_bytes / T if T > 0 else 0.0, pmr_window)
        if cv is None:
            cv = 0.0
            imputed.append("cv_iat")
        if jit is None:
            jit = 0.0
            imputed.append("jitter")
        if pmr is None:
            pmr = 1.0
            imputed.append("pmr")
    values = [T, r_p, r_b, s_mean, cv, dar, jit, pmr]
    return FeatureVector(np.array(values, dtype=float), "RAW", tuple(imputed))


def _require(fv: FeatureVector, stage: str):
    if fv.stage != stage:
        raise FeatureError(f"expected a {stage} feature vector, got {fv.stage}")


def log_transform(fv: FeatureVector) -> FeatureVector:
    _require(fv, "RAW")
    out = fv.values.copy()
    out[list(LOG_COLUMNS)] = np.log1p(out[list(LOG_COLUMNS)])
    return FeatureVector(out, "LOGGED", fv.imputed)


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    stddevs: np.ndarray

    def to_dict(self) -> dict:
        return {"features": list(FEATURE_NAMES), "means": self.means.tolist(),
                "stddevs": self.stddevs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.array(d["means"], dtype=float), np.array(d["stddevs"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _matrix(features, stage: str) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        if features.stage != stage:
            raise FeatureError(f"expected {stage} features, got {features.stage}")
        return features.values
    rows = list(features)
    for fv in rows:
        _require(fv, stage)
    return np.array([fv.values for fv in rows])


def standardizer_fit(train_features) -> Standardizer:
    X = _matrix(train_features, "LOGGED")
    if len(X) < 2:
        raise FeatureError("need at least two training samples")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    bad = [FEATURE_NAMES[j] for j in np.flatnonzero(stds <= 1e-12 * np.maximum(1.0, np.abs(means)))]
    if bad:
        raise DegenerateFeatureError(bad)
    return Standardizer(means, stds)


def standardize(fv: FeatureVector, s: Standardizer) -> FeatureVector:
    _require(fv, "LOGGED")
    return FeatureVector((fv.values - s.means) / s.stddevs, "STANDARDIZED", fv.imputed)


@dataclass
class FeatureMatrix:
    """Row-stacked feature vectors sharing one stage."""

    values: np.ndarray
    stage: str = "RAW"

    def __len__(self):
        return len(self.values)

    def to_csv(self, labels=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["stage", *FEATURE_NAMES]
        if labels is not None:
            header.append("label")
        w.writerow(header)
        for i, row in enumerate(self.values):
            cells = [self.stage, *(repr(float(v)) for v in row)]
            if labels is not None:
                cells.append(int(labels[i]))
            w.writerow(cells)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str):
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        if header[1 : 1 + len(FEATURE_NAMES)] != list(FEATURE_NAMES):
            raise FeatureError("unexpected feature CSV header")
        has_label = header[-1] == "label"
        body = rows[1:]
        stage = body[0][0] if body else "RAW"
        values = np.array([[float(v) for v in r[1 : 1 + len(FEATURE_NAMES)]] for r in body])
        labels = np.array([int(r[-1]) for r in body]) if has_label else None
        return cls(values.reshape(-1, len(FEATURE_NAMES)), stage), labels


def extract_all(flows, pmr_window: float = DEFAULT_PMR_WINDOW) -> FeatureMatrix:
    return FeatureMatrix(np.array([extract(f, pmr_window).values for f in flows]).reshape(-1, 8), "RAW")


def log_transform_all(fm: FeatureMatrix) -> FeatureMatrix:
    if fm.stage != "RAW":
        raise FeatureError(f"expected RAW features, got {fm.stage}")
    out = fm.values.copy()
    out[:, list(LOG_COLUMNS)] = np.log1p(out[:, list(LOG_COLUMNS)])
    return FeatureMatrix(out, "LOGGED")


def standardize_all(fm: FeatureMatrix, s: Standardizer) -> FeatureMatrix:
    if fm.stage != "LOGGED":
        raise FeatureError(f"expected LOGGED features, got {fm.stage}")
    return FeatureMatrix((fm.values - s.means) / s.stddevs, "STANDARDIZED")
