"""Experiment harness: data -> features -> models -> metrics -> reports."""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import os
import tempfile
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio, evalkit, flowfeat, kernelml, qkernel, qtnn, vqc
from .encode import EncoderConfig
from .simcore import STATS

log = logging.getLogger(__name__)

REPORT_SCHEMA = 1
CSV_COLUMNS = evalkit.TABLE_COLUMNS + ("n_test", "status", "seed", "config_hash")
WORKERS_ENV = "UAVQML_WORKERS"


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "seed": 0,
    "data": {"source": "synth", "synth": {}},
    "balance": "UNDERSAMPLE",
    "split": {"ratio": 0.8, "seed": 0},
    "features": {"pmr_window": 0.1, "kappa": 1.0, "encoding": "plain", "encoding_reps": 1},
    "train": {
        "learning_rate": 0.01, "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_eps": 1e-8,
        "epochs": 100, "batch_size": 32, "weight_decay": 1e-4, "shots": None,
    },
    "models": [
        {"type": "svm"},
        {"type": "qkernel"},
        {"type": "qnn", "layers": 6},
        {"type": "hybrid", "layers": 4},
    ],
    "output_dir": "runs/default",
}

TABLE1_GRID = (
    [{"type": "svm"}, {"type": "qkernel"}]
    + [{"type": "qnn", "layers": L, "expect": {"quantum_params": 8 * L, "classical_params": 0}}
       for L in (6, 8, 10)]
    + [{"type": "hybrid", "layers": L, "expect": {"quantum_params": 8 * L, "classical_params": 18}}
       for L in (2, 4, 6, 8, 10)]
    + [{"type": "qtnn", "hidden": h, "layers": L, "expect": exp}
       for h, L, exp in (
           (4, 2, {"qubits": 7, "quantum_params": 14, "classical_params": 66}),
           (8, 2, {"qubits": 8, "quantum_params": 16, "classical_params": 162}),
           (4, 4, {"qubits": 7, "quantum_params": 28, "classical_params": 66}),
           (8, 4, {"qubits": 8, "quantum_params": 32, "classical_params": 162}),
           (16, 4, {"qubits": 9, "quantum_params": 36, "classical_params": 450}),
       )]
)


# ---------------------------------------------------------------------------
# config handling


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply ``dot.path=value``; the value is parsed as JSON when possible.

    Object values merge into an existing object; anything else replaces it.
    """
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out = copy.deepcopy(cfg)
    node = out
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot descend into non-object at {p!r}")
    leaf = parts[-1]
    if isinstance(value, dict) and isinstance(node.get(leaf), dict):
        value = deep_merge(node[leaf], value)
    node[leaf] = value
    return out


def load_config(path=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as fh:
            cfg = deep_merge(cfg, json.load(fh))
    for ov in overrides:
        cfg = apply_override(cfg, ov)
    if cfg.get("models") == "table1":
        cfg["models"] = copy.deepcopy(TABLE1_GRID)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    src = cfg["data"].get("source")
    if src not in ("synth", "csv"):
        raise ConfigError("data.source must be 'synth' or 'csv'")
    if src == "csv" and not cfg["data"].get("path"):
        raise ConfigError("data.path is required for csv sources")
    if not cfg.get("models"):
        raise ConfigError("model grid is empty")
    for m in cfg["models"]:
        model_tag(m)
        expected = m.get("expect")
        if expected:
            fp = footprint_for(m, cfg)
            bad = {k: (v, fp.get(k)) for k, v in expected.items() if fp.get(k) != v}
            if bad:
                raise ConfigError(f"{model_tag(m)}: footprint mismatch {bad}")


def config_hash(cfg: dict) -> str:
    blob = json.dumps({k: v for k, v in cfg.items() if k != "output_dir"}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def model_tag(desc: dict) -> str:
    kind = desc.get("type")
    if kind == "svm":
        return "SVM"
    if kind == "qkernel":
        return "QuantumKernel"
    if kind == "qnn":
        return f"QNN-{int(desc['layers'])}L"
    if kind == "hybrid":
        return f"HybridQNN-{int(desc['layers'])}L"
    if kind == "qtnn":
        return f"QT-NN({int(desc['hidden'])},{int(desc['layers'])})"
    raise ConfigError(f"unknown model type {kind!r}")


def parse_selector(selector: str) -> dict:
    """``svm``, ``qkernel``, ``qnn:6``, ``hybrid:4`` or ``qtnn:4,2``."""
    kind, _, args = selector.partition(":")
    kind = kind.strip().lower()
    nums = [int(a) for a in args.split(",") if a.strip()] if args else []
    if kind in ("svm", "qkernel") and not nums:
        return {"type": kind}
    if kind in ("qnn", "hybrid") and len(nums) == 1:
        return {"type": kind, "layers": nums[0]}
    if kind == "qtnn" and len(nums) == 2:
        return {"type": kind, "hidden": nums[0], "layers": nums[1]}
    raise ConfigError(f"unknown model selector {selector!r}")


def model_seed(master: int, tag: str) -> int:
    return (int(master) * 1_000_003 + zlib.crc32(tag.encode())) % (2**32)


def encoder_from(cfg: dict) -> EncoderConfig:
    f = cfg["features"]
    return EncoderConfig(num_qubits=8, scale=float(f.get("kappa", 1.0)),
                         mode=f.get("encoding", "plain"), reps=int(f.get("encoding_reps", 1)))


def train_config_from(cfg: dict, desc: dict, seed: int) -> vqc.TrainConfig:
    t = dict(cfg["train"])
    t.update(desc.get("train", {}))
    return vqc.TrainConfig(
        learning_rate=float(t["learning_rate"]), adam_beta1=float(t["adam_beta1"]),
        adam_beta2=float(t["adam_beta2"]), adam_eps=float(t["adam_eps"]), epochs=int(t["epochs"]),
        batch_size=int(t["batch_size"]), seed=seed, weight_decay=float(t["weight_decay"]),
        shots=t.get("shots"),
    )


def footprint_for(desc: dict, cfg: dict) -> dict:
    kind = desc["type"]
    if kind == "svm":
        return {}
    if kind == "qkernel":
        return {"qubits": encoder_from(cfg).num_qubits}
    if kind in ("qnn", "hybrid"):
        model = vqc.make_qnn(8, int(desc["layers"]), hybrid=kind == "hybrid",
                             encoder=encoder_from(cfg), entangler=desc.get("entangler", "RING_CNOT"))
        return model.footprint()
    arch = qtnn.QtArch(int(desc["hidden"]), int(desc["layers"]))
    return arch.footprint()


# ---------------------------------------------------------------------------
# data preparation


@dataclass
class Prepared:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    standardizer: flowfeat.Standardizer
    train_indices: np.ndarray
    test_indices: np.ndarray
    provenance: dict = field(default_factory=dict)


def load_dataset(cfg: dict) -> dataio.Dataset:
    data = cfg["data"]
    if data["source"] == "synth":
        synth = dict(data.get("synth") or {})
        synth.setdefault("seed", 7)
        return dataio.synth_generate(dataio.SynthConfig.from_dict(synth))
    cmap = data.get("column_map") or {}
    if isinstance(cmap, str):
        cmap = dataio.load_column_map(cmap)
    ds, report = dataio.ingest_csv(data["path"], cmap)
    if report.skipped or report.rejected_labels:
        log.warning("ingest skipped %d malformed rows and %d rows with unknown labels",
                    report.skipped, report.rejected_labels)
    return ds


def featurize(train: dataio.Dataset, test: dataio.Dataset, pmr_window: float):
    raw_tr = flowfeat.extract_all(train.records, pmr_window)
    raw_te = flowfeat.extract_all(test.records, pmr_window)
    log_tr = flowfeat.log_transform_all(raw_tr)
    log_te = flowfeat.log_transform_all(raw_te)
    std = flowfeat.standardizer_fit(log_tr)
    return (flowfeat.standardize_all(log_tr, std), flowfeat.standardize_all(log_te, std), std)


def prepare(cfg: dict, ds: dataio.Dataset | None = None) -> Prepared:
    """Split first (stratified, natural prevalence), then balance the training part only."""
    ds = dataio.binarize(ds if ds is not None else load_dataset(cfg))
    sp = dataio.split(ds, float(cfg["split"]["ratio"]), int(cfg["split"]["seed"]))
    train_full = sp.train(ds)
    balanced = dataio.balance(train_full, cfg.get("balance", "UNDERSAMPLE"), int(cfg["split"]["seed"]))
    kept = sp.train_indices[_kept_positions(train_full, balanced)]
    test = sp.test(ds)
    if np.intersect1d(kept, sp.test_indices).size:
        raise RuntimeError("training subset overlaps the test split")
    Ftr, Fte, std = featurize(balanced, test, float(cfg["features"].get("pmr_window", 0.1)))
    return Prepared(Ftr.values, balanced.y.copy(), Fte.values, test.y.copy(), std, kept,
                    sp.test_indices, balanced.provenance)


def _kept_positions(parent: dataio.Dataset, child: dataio.Dataset) -> np.ndarray:
    ids = {id(r): i for i, r in enumerate(parent.records)}
    return np.array([ids[id(r)] for r in child.records], dtype=int)


# ---------------------------------------------------------------------------
# model fitting


@dataclass
class FitResult:
    tag: str
    checkpoint: dict
    footprint: dict
    scores: np.ndarray
    preds: np.ndarray
    trace: list = field(default_factory=list)


def fit_model(desc: dict, cfg: dict, data: Prepared, seed: int) -> FitResult:
    tag = model_tag(desc)
    kind = desc["type"]
    Xtr, ytr, Xte = data.X_train, data.y_train, data.X_test
    if kind == "svm":
        gamma = desc.get("gamma") or kernelml.default_gamma(Xtr)
        C = float(desc.get("C", 1.0))
        K = kernelml.rbf_gram(Xtr, Xtr, gamma)
        kdesc = {"type": "rbf", "gamma": gamma}
        model = kernelml.smo_fit(K, ytr, C, float(desc.get("tol", 1e-3)),
                                 int(desc.get("max_passes", 200)), Xtr, kdesc)
        scores = kernelml.svm_scores(model, kernelml.rbf_gram(Xte, Xtr, gamma))
        ckpt = model.to_dict()
        fp = {}
    elif kind == "qkernel":
        enc = encoder_from(cfg)
        shots = desc.get("shots")
        if shots:
            K = qkernel.gram(Xtr, "SHOTS", enc, seed, int(shots))
            K = qkernel.repair(K, -1.0)
            rows = qkernel.cross_gram_shots(Xte, Xtr, enc, int(shots), seed + 1)
        else:
            K = qkernel.gram(Xtr, "EXACT", enc)
            rows = qkernel.cross_gram(Xte, Xtr, enc)
        kdesc = {"type": "quantum_fidelity", "encoder": enc.to_dict(), "mode": K.mode_label}
        if desc.get("learner", "svm") == "ridge":
            model = kernelml.ridge_fit(K, ytr, float(desc.get("lambda", 1.0)), Xtr, kdesc)
            scores = kernelml.ridge_scores(model, rows)
        else:
            model = kernelml.smo_fit(K, ytr, float(desc.get("C", 1.0)), float(desc.get("tol", 1e-3)),
                                     int(desc.get("max_passes", 200)), Xtr, kdesc)
            scores = kernelml.svm_scores(model, rows)
        ckpt = model.to_dict()
        fp = {"qubits": enc.num_qubits}
    elif kind in ("qnn", "hybrid"):
        tc = train_config_from(cfg, desc, seed)
        model = vqc.make_qnn(8, int(desc["layers"]), hybrid=kind == "hybrid", seed=seed,
                             encoder=encoder_from(cfg), entangler=desc.get("entangler", "RING_CNOT"),
                             reupload=bool(desc.get("reupload", False)))
        model, trace = vqc.train(Xtr, ytr, model, tc)
        scores = vqc.decision_scores(Xte, model)
        ckpt = {**model.to_dict(), "config": tc.to_dict()}
        fp = model.footprint()
        return _result(tag, ckpt, fp, scores, trace)
    elif kind == "qtnn":
        tc = train_config_from(cfg, desc, seed)
        arch = qtnn.QtArch(int(desc["hidden"]), int(desc["layers"]))
        model, trace = qtnn.qt_train(Xtr, ytr, arch, tc, float(desc.get("beta", 1.0)))
        scores = qtnn.qt_scores(Xte, model)
        ckpt = {**model.to_dict(), "config": tc.to_dict()}
        fp = model.footprint()
        return _result(tag, ckpt, fp, scores, trace)
    else:
        raise ConfigError(f"unknown model type {kind!r}")
    return _result(tag, ckpt, fp, scores, [])


def _result(tag, ckpt, fp, scores, trace) -> FitResult:
    ckpt = {**ckpt, "tag": tag, "footprint": fp}
    preds = np.where(np.asarray(scores) >= 0, 1, -1)
    return FitResult(tag, ckpt, fp, np.asarray(scores, dtype=float), preds, trace)


def _run_one(args):
    desc, cfg, data, master = args
    tag = model_tag(desc)
    seed = model_seed(master, tag)
    t0 = time.perf_counter()
    try:
        res = fit_model(desc, cfg, data, seed)
    except Exception as exc:  # recorded per model; the grid continues
        log.exception("model %s failed", tag)
        return {"tag": tag, "seed": seed, "status": "failed", "error": f"{type(exc).__name__}: {exc}",
                "footprint": footprint_for(desc, cfg), "seconds": time.perf_counter() - t0}
    rep = evalkit.evaluate(res.preds, res.scores, data.y_test, res.footprint)
    return {"tag": tag, "seed": seed, "status": "ok", "metrics": rep.to_dict(),
            "footprint": res.footprint, "seconds": time.perf_counter() - t0,
            "final_loss": res.trace[-1]["loss"] if res.trace else None}


# ---------------------------------------------------------------------------
# reports and files


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in report["rows"]:
        fp = row.get("footprint", {})
        m = row.get("metrics") or {}
        cells = {
            "model": row["tag"],
            "qubits": fp.get("qubits", "-"),
            "layers": fp.get("layers", "-"),
            "class_params": fp.get("classical_params", "-"),
            "quant_params": fp.get("quantum_params", "-"),
            "n_test": m.get("n_samples", "-"),
            "status": row["status"],
            "seed": row["seed"],
            "config_hash": report["config_hash"],
        }
        for k in ("accuracy", "f1", "specificity", "sensitivity", "mcc", "roc_auc", "macro_f1"):
            cells[k] = m.get(k)
        w.writerow([evalkit.format_cell(cells[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def format_table(report: dict) -> str:
    cols = ("model", "qubits", "layers", "class_params", "quant_params", "accuracy", "f1",
            "specificity", "sensitivity", "mcc", "roc_auc")
    rows = list(csv.DictReader(io.StringIO(report_csv(report))))
    for r in rows:
        for k in ("accuracy", "f1", "specificity", "sensitivity", "mcc", "roc_auc"):
            if r[k] not in ("-", ""):
                r[k] = f"{float(r[k]):.3f}"
    widths = {c: max(len(c), *(len(r[c]) for r in rows)) for c in cols}
    lines = ["  ".join(c.ljust(widths[c]) for c in cols)]
    lines += ["  ".join(r[c].ljust(widths[c]) for c in cols) for r in rows]
    return "\n".join(lines)


def run_bench(cfg: dict, out_dir=None, parallel: bool = False) -> dict:
    """Run the model grid and write ``report.json`` / ``report.csv`` into ``out_dir``."""
    out_dir = Path(out_dir or cfg["output_dir"])
    STATS.reset()
    timings = {}
    t0 = time.perf_counter()
    data = prepare(cfg)
    timings["prepare"] = time.perf_counter() - t0
    master = int(cfg.get("seed", 0))
    jobs = [(desc, cfg, data, master) for desc in cfg["models"]]
    t1 = time.perf_counter()
    if parallel:
        from concurrent.futures import ProcessPoolExecutor

        workers = int(os.environ.get(WORKERS_ENV, os.cpu_count() or 1))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_one, jobs))
    else:
        rows = [_run_one(j) for j in jobs]
    timings["models"] = time.perf_counter() - t1
    report = {
        "schema_version": REPORT_SCHEMA,
        "config_hash": config_hash(cfg),
        "seed": master,
        "split_seed": int(cfg["split"]["seed"]),
        "n_train": int(len(data.y_train)),
        "n_test": int(len(data.y_test)),
        "test_prevalence": float(np.mean(data.y_test > 0)),
        "rows": rows,
        "timings": timings,
        "simulator": STATS.snapshot(),
        "config": cfg,
    }
    atomic_write(out_dir / "report.json", json.dumps(report, indent=2, default=_json_default))
    atomic_write(out_dir / "report.csv", report_csv(report))
    return report


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


def run_train(cfg: dict, selector: str, out_dir=None) -> dict:
    desc = parse_selector(selector)
    for m in cfg["models"]:
        if model_tag(m) == model_tag(desc):
            desc = {**m, **desc}
    tag = model_tag(desc)
    seed = model_seed(int(cfg.get("seed", 0)), tag)
    data = prepare(cfg)
    res = fit_model(desc, cfg, data, seed)
    out_dir = Path(out_dir or cfg["output_dir"])
    stem = _slug(tag)
    ckpt = {**res.checkpoint, "seed": seed, "config_hash": config_hash(cfg),
            "standardizer": data.standardizer.to_dict()}
    atomic_write(out_dir / f"{stem}.checkpoint.json", json.dumps(ckpt, indent=2, default=_json_default))
    if res.trace:
        atomic_write(out_dir / f"{stem}.trace.csv", trace_csv(res.trace))
    return ckpt


def trace_csv(trace: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(vqc.TRACE_COLUMNS)
    for row in trace:
        w.writerow([row["epoch"]] + [f"{row[c]:.10g}" for c in vqc.TRACE_COLUMNS[1:]])
    return buf.getvalue()


def _slug(tag: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in tag).strip("_").lower()


def run_features(dataset_path, out_dir, ratio=0.8, seed=0, balance="UNDERSAMPLE",
                 pmr_window=0.1, column_map=None) -> dict:
    ds, _ = dataio.ingest_csv(dataset_path, column_map)
    cfg = deep_merge(DEFAULT_CONFIG, {"balance": balance, "split": {"ratio": ratio, "seed": seed},
                                      "features": {"pmr_window": pmr_window}})
    data = prepare(cfg, ds)
    out_dir = Path(out_dir)
    tr = flowfeat.FeatureMatrix(data.X_train, "STANDARDIZED").to_csv(data.y_train)
    te = flowfeat.FeatureMatrix(data.X_test, "STANDARDIZED").to_csv(data.y_test)
    std_json = data.standardizer.to_json()
    atomic_write(out_dir / "train_features.csv", tr)
    atomic_write(out_dir / "test_features.csv", te)
    atomic_write(out_dir / "standardizer.json", std_json)
    return {
        "train_rows": len(data.y_train),
        "test_rows": len(data.y_test),
        "standardizer_sha256": hashlib.sha256(std_json.encode()).hexdigest(),
    }
