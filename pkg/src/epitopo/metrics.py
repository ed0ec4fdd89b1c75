"""Comparisons between a ground-truth mobility matrix and an inferred one."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import EigenFailure, ShapeMismatch

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class MetricsReport:
    spectral_similarity: float
    pearson: float
    jaccard: float
    pr_auc: float | None
    rmse_beta: float | None = None
    rmse_inv_gamma: float | None = None
    sparsity_index: float | None = None

    def as_dict(self):
        return asdict(self)


def _pair(A, B):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeMismatch("expected two square matrices of equal size", left=A.shape, right=B.shape)
    return A, B


def _offdiag(M):
    return M[~np.eye(M.shape[0], dtype=bool)]


def _spectrum(M):
    try:
        if np.allclose(M, M.T, rtol=0.0, atol=1e-12):
            vals = np.linalg.eigvalsh(M)
        else:
            vals = np.linalg.eigvals(M).real
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from None
    return np.sort(vals)[::-1]


def spectral_similarity(A, A_hat):
    """Cosine between the descending real parts of the two spectra."""
    A, B = _pair(A, A_hat)
    la, lb = _spectrum(A), _spectrum(B)
    denom = np.linalg.norm(la) * np.linalg.norm(lb)
    if denom == 0:
        return 0.0
    return float(np.dot(la, lb) / denom)


def pearson(A, A_hat):
    """Correlation over all n*n entries; 0 (with a warning) if either is constant."""
    A, B = _pair(A, A_hat)
    a, b = A.ravel(), B.ravel()
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        warnings.warn("constant matrix: Pearson correlation undefined, reporting 0", stacklevel=2)
        return 0.0
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


def jaccard(A, A_hat):
    """Weighted Jaccard ``sum(min) / sum(max)`` over off-diagonal entries."""
    A, B = _pair(A, A_hat)
    a, b = _offdiag(A), _offdiag(B)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("Jaccard similarity needs nonnegative matrices")
    top = np.maximum(a, b).sum()
    if top == 0:
        return 1.0
    return float(np.minimum(a, b).sum() / top)


def pr_curve(A_binary, scores):
    """Precision/recall points over off-diagonal entries, one per distinct score.

    Entries sharing a score enter the ranking together. The curve is
    anchored at recall 0 with the precision of the top-scored group, so a
    constant scorer integrates to the positive prevalence.
    """
    A, S = _pair(A_binary, scores)
    y = _offdiag(A) > 0
    s = _offdiag(S)
    if y.sum() == 0:
        raise ValueError("ground truth has no links")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / y.sum()
    thresholds = s[last]
    precision = np.r_[precision[0], precision]
    recall = np.r_[0.0, recall]
    return precision, recall, thresholds


def pr_auc(A_binary, scores):
    """Trapezoid area under the precision-recall curve; ``None`` for weighted truth."""
    A = np.asarray(A_binary, dtype=np.float64)
    if not np.all(np.isin(A, (0.0, 1.0))):
        return None
    precision, recall, _ = pr_curve(A, scores)
    return float(_trapezoid(precision, recall))


def rmse_params(beta_hat, gamma_hat, truth):
    """RMSE across pathogens of node-averaged beta and of 1/gamma."""
    beta_hat = np.atleast_2d(np.asarray(beta_hat, dtype=np.float64))
    gamma_hat = np.atleast_2d(np.asarray(gamma_hat, dtype=np.float64))
    beta_true = np.array([p.beta for p in truth])
    inv_gamma_true = np.array([1.0 / p.gamma for p in truth])
    if beta_hat.shape[0] != beta_true.size or gamma_hat.shape[0] != beta_true.size:
        raise ShapeMismatch("one row of rates per pathogen expected",
                            beta=beta_hat.shape, pathogens=beta_true.size)
    b = beta_hat.mean(axis=1)
    ig = 1.0 / gamma_hat.mean(axis=1)
    rmse_b = float(np.sqrt(np.mean((b - beta_true) ** 2)))
    rmse_g = float(np.sqrt(np.mean((ig - inv_gamma_true) ** 2)))
    return rmse_b, rmse_g


def sparsity_index(M):
    """Hoyer sparsity of all entries: 1 for one-hot, 0 for constant."""
    x = np.abs(np.asarray(M, dtype=np.float64).ravel())
    N = x.size
    l2 = np.sqrt((x * x).sum())
    if l2 == 0:
        return 1.0
    if N == 1:
        return 1.0
    rootn = np.sqrt(N)
    return float((rootn - x.sum() / l2) / (rootn - 1.0))


def random_baseline(n, rng_seed):
    """Uniform(0, 1) off-diagonal scores with a unit diagonal."""
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = np.random.default_rng(rng_seed)
    M = rng.uniform(0.0, 1.0, (n, n))
    np.fill_diagonal(M, 1.0)
    return M


def evaluate(A, A_hat, weighted=None, beta_hat=None, gamma_hat=None, truth=None):
    """All topology metrics (and parameter RMSE when rates are given)."""
    A, A_hat = _pair(A, A_hat)
    if weighted is None:
        # a single nonzero value (e.g. a uniform mobility rate) is a binary graph
        weighted = np.unique(A[A != 0]).size > 1
    report = MetricsReport(
        spectral_similarity=spectral_similarity(A, A_hat),
        pearson=pearson(A, A_hat),
        jaccard=jaccard(A, A_hat),
        pr_auc=None if weighted else pr_auc((A > 0).astype(float), A_hat),
        sparsity_index=sparsity_index(A_hat),
    )
    if beta_hat is not None and gamma_hat is not None and truth:
        report.rmse_beta, report.rmse_inv_gamma = rmse_params(beta_hat, gamma_hat, truth)
    return report
