"""Kernel ridge classifier and an SMO-trained soft-margin SVM over precomputed kernels."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .qkernel import GramMatrix, repair

log = logging.getLogger(__name__)

TAU = 1e-12


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class DegenerateLabelsError(ValueError):
    pass


def _values(K) -> np.ndarray:
    V = K.values if isinstance(K, GramMatrix) else np.asarray(K, dtype=float)
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise ValueError(f"kernel matrix must be square, got shape {V.shape}")
    return V


def _labels(y, n) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got {y.shape}")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be in {-1, +1}")
    return y


def sign(score):
    """Sign with ``sign(0) = +1``."""
    return np.where(np.asarray(score) >= 0, 1, -1)


def rbf_kernel(x, y, gamma: float) -> float:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(np.exp(-gamma * np.sum((x - y) ** 2)))


def rbf_gram(A, B, gamma: float) -> np.ndarray:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d2 = np.sum(A**2, 1)[:, None] + np.sum(B**2, 1)[None, :] - 2 * A @ B.T
    return np.exp(-gamma * np.clip(d2, 0.0, None))


def default_gamma(X) -> float:
    """``1 / (d * var(X))``; for standardized 8-d features this is 1/8."""
    X = np.asarray(X, dtype=float)
    var = float(X.var())
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0


# ---------------------------------------------------------------------------
# kernel ridge


@dataclass
class KernelRidgeModel:
    alpha: np.ndarray
    lam: float
    train_refs: np.ndarray | None = None
    jitter: float = 0.0
    kernel: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": "kernel_ridge",
            "alpha": self.alpha.tolist(),
            "lambda": self.lam,
            "jitter": self.jitter,
            "kernel": self.kernel,
            "train_refs": None if self.train_refs is None else self.train_refs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelRidgeModel":
        refs = d.get("train_refs")
        return cls(np.array(d["alpha"]), d["lambda"], None if refs is None else np.array(refs),
                   d.get("jitter", 0.0), d.get("kernel", {}))


def ridge_fit(K, y, lam: float, train_refs=None, kernel: dict | None = None) -> KernelRidgeModel:
    """Dual weights ``alpha = (K + lam I)^{-1} y``."""
    V = _values(K)
    n = len(V)
    y = _labels(y, n)
    if lam <= 0:
        raise ValueError("lambda must be positive")
    jitter = 0.0
    A = V + lam * np.eye(n)
    try:
        alpha = _cho_refined(A, y)
    except linalg.LinAlgError:
        # K may be indefinite when estimated from shots
        fixed = repair(V, -1.0)
        jitter = fixed.jitter
        A = fixed.values + lam * np.eye(n)
        try:
            alpha = _cho_refined(A, y)
        except linalg.LinAlgError:
            alpha = _pivoted_solve(A, y)
    refs = None if train_refs is None else np.asarray(train_refs, dtype=float)
    return KernelRidgeModel(alpha, lam, refs, jitter, dict(kernel or {}))


def _cho_refined(A, y):
    """Cholesky solve plus one step of iterative refinement."""
    factor = linalg.cho_factor(A)
    x = linalg.cho_solve(factor, y)
    return x + linalg.cho_solve(factor, y - A @ x)


def _pivoted_solve(A, y):
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularSystemError(f"ridge system is singular (condition number {cond:.3g})", cond)
    lu, piv = linalg.lu_factor(A)
    return linalg.lu_solve((lu, piv), y)


def ridge_scores(model: KernelRidgeModel, K_rows) -> np.ndarray:
    K_rows = np.atleast_2d(np.asarray(K_rows, dtype=float))
    if K_rows.shape[1] != len(model.alpha):
        raise ValueError(f"kernel row length {K_rows.shape[1]} != {len(model.alpha)} training points")
    return K_rows @ model.alpha


def ridge_predict(model: KernelRidgeModel, k_row) -> tuple[float, int]:
    score = float(ridge_scores(model, k_row)[0])
    return score, int(sign(score))


# ---------------------------------------------------------------------------
# SMO soft-margin SVM


@dataclass
class SvmModel:
    dual_coefs: np.ndarray
    support: np.ndarray
    bias: float
    C: float
    n_train: int
    support_refs: np.ndarray | None = None
    converged: bool = True
    iterations: int = 0
    trace: list = field(default_factory=list, repr=False)
    kernel: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": "svm",
            "dual_coefs": self.dual_coefs.tolist(),
            "support": self.support.tolist(),
            "bias": self.bias,
            "C": self.C,
            "n_train": self.n_train,
            "converged": self.converged,
            "iterations": self.iterations,
            "kernel": self.kernel,
            "support_refs": None if self.support_refs is None else self.support_refs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        refs = d.get("support_refs")
        return cls(np.array(d["dual_coefs"]), np.array(d["support"], dtype=int), d["bias"], d["C"],
                   d["n_train"], None if refs is None else np.array(refs), d.get("converged", True),
                   d.get("iterations", 0), [], d.get("kernel", {}))


def dual_objective(alpha, y, K) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def smo_fit(K, y, C: float = 1.0, tol: float = 1e-3, max_passes: int = 200,
            train_refs=None, kernel: dict | None = None) -> SvmModel:
    """Solve the soft-margin dual with SMO (maximal-violating-pair, second-order selection).

    ``max_passes`` bounds the work at ``max_passes * n`` pair updates. The
    returned model carries the dual objective after every update in ``trace``.
    """
    V = _values(K)
    n = len(V)
    y = _labels(y, n)
    if C <= 0:
        raise ValueError("C must be positive")
    if np.all(y == y[0]):
        raise DegenerateLabelsError("SVM needs both classes; all labels are equal")

    Q = (y[:, None] * y[None, :]) * V
    diagQ = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of 0.5 a'Qa - e'a
    obj = 0.0
    trace = [obj]
    max_iter = max_passes * max(n, 1)
    converged = False
    it = 0
    while it < max_iter:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        score = -y * G
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        m_up = score[i]
        cand = low & (score < m_up)
        if not cand.any() or m_up - score[low].min() < tol:
            converged = True
            break
        b = m_up - score
        a = diagQ[i] + diagQ - 2.0 * y[i] * y * Q[i]
        a = np.where(a > 0, a, TAU)
        gain = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(gain))

        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = diagQ[i] + diagQ[j] + 2 * Q[i, j]
            quad = quad if quad > 0 else TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            elif alpha[j] > C:
                alpha[j] = C
                alpha[i] = C + diff
        else:
            quad = diagQ[i] + diagQ[j] - 2 * Q[i, j]
            quad = quad if quad > 0 else TAU
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            elif alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = total
        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        G += Q[:, i] * dai + Q[:, j] * daj
        # dual W = e'a - 0.5 a'Qa = -0.5 a'(G - e), non-decreasing under SMO
        obj = -0.5 * float(alpha @ (G - 1.0))
        trace.append(obj)
        it += 1

    if not converged:
        log.warning("SMO stopped after %d updates without reaching tol=%g", it, tol)

    rho = _rho(alpha, y, G, C)
    sv = np.flatnonzero(alpha > 0)
    refs = None if train_refs is None else np.asarray(train_refs, dtype=float)[sv]
    return SvmModel(
        dual_coefs=alpha[sv] * y[sv],
        support=sv,
        bias=-rho,
        C=float(C),
        n_train=n,
        support_refs=refs,
        converged=converged,
        iterations=it,
        trace=trace,
        kernel=dict(kernel or {}),
    )


def _rho(alpha, y, G, C) -> float:
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yG[free].mean())
    # no free vectors: midpoint of the feasible interval
    at_upper = alpha >= C
    at_lower = alpha <= 0
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    if np.isfinite(ub) and np.isfinite(lb):
        return float((ub + lb) / 2)
    return float(ub if np.isfinite(ub) else lb)


def full_alpha(model: SvmModel) -> np.ndarray:
    """Signed dual coefficients scattered over all training points."""
    out = np.zeros(model.n_train)
    out[model.support] = model.dual_coefs
    return out


def svm_scores(model: SvmModel, K_rows) -> np.ndarray:
    """Decision values; ``K_rows`` holds kernels against the full training set or the support set."""
    K_rows = np.atleast_2d(np.asarray(K_rows, dtype=float))
    width = K_rows.shape[1]
    if width == model.n_train:
        return K_rows[:, model.support] @ model.dual_coefs + model.bias
    if width == len(model.support):
        return K_rows @ model.dual_coefs + model.bias
    raise ValueError(
        f"kernel row length {width} matches neither {model.n_train} training points "
        f"nor {len(model.support)} support vectors"
    )


def svm_predict(model: SvmModel, k_row) -> tuple[float, int]:
    score = float(svm_scores(model, k_row)[0])
    return score, int(sign(score))
