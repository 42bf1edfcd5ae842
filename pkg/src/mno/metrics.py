"""Evaluation metrics: moment errors, Wasserstein-2, covariance fidelity, Hurst, exceedance."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .operator import MomentPrediction, covariance_matvec, sample_batch
from .stochsim.rng import stream

DENSE_LIMIT = 4096


@dataclass
class MetricRecord:
    name: str
    value: float
    n_samples: int
    seed: int | None
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        self.value = float(self.value)
        if not math.isfinite(self.value):
            raise ValueError(f"metric {self.name} is not finite: {self.value}")

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "n_samples": int(self.n_samples),
                "seed": self.seed, "aux": self.aux}


def _same_shape(a, b, what: str):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{what}: shapes {a.shape} and {b.shape} differ")
    return a, b


def mean_rmse(pred_mean, true_mean) -> float:
    a, b = _same_shape(pred_mean, true_mean, "mean_rmse")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def variance_rmse(pred_var, true_var, std=None) -> float:
    """RMSE between variance fields [..., C, N]; ``std`` (per channel) converts to physical units."""
    a, b = _same_shape(pred_var, true_var, "variance_rmse")
    if std is not None:
        s2 = (np.asarray(std, dtype=np.float64) ** 2)[:, None]
        a, b = a * s2, b * s2
    return float(np.sqrt(np.mean((a - b) ** 2)))


# ------------------------------------------------------------------------ W2

def _quantiles(sorted_x: np.ndarray, m: int) -> np.ndarray:
    """Piecewise-linear quantile function at levels (i + 0.5)/m; sample j sits at (j + 0.5)/S."""
    s = sorted_x.shape[0]
    if s == m:
        return sorted_x
    pos = np.clip((np.arange(m) + 0.5) / m * s - 0.5, 0.0, s - 1.0)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, s - 1)
    w = (pos - lo).reshape((m,) + (1,) * (sorted_x.ndim - 1))
    return (1 - w) * sorted_x[lo] + w * sorted_x[hi]


def w2_per_point(pred_samples, true_samples) -> np.ndarray:
    """1D W2 at every trailing index by quantile matching; sample axis first."""
    a = np.asarray(pred_samples, dtype=np.float64)
    b = np.asarray(true_samples, dtype=np.float64)
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"sample shapes {a.shape[1:]} and {b.shape[1:]} differ")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError(f"need at least 2 samples per side, got {a.shape[0]} and {b.shape[0]}")
    m = max(a.shape[0], b.shape[0])
    qa = _quantiles(np.sort(a, axis=0), m)
    qb = _quantiles(np.sort(b, axis=0), m)
    return np.sqrt(np.mean((qa - qb) ** 2, axis=0))


def empirical_w2(pred_samples, true_samples) -> float:
    """Spatially averaged marginal W2: arithmetic mean of per-point W2 over (C, N)."""
    return float(np.mean(w2_per_point(pred_samples, true_samples)))


def ensemble_w2(pred: MomentPrediction, true_uT, n_samples: int = 256, seed: int = 0) -> float:
    """Predicted Gaussian samples against each condition's ensemble [B, n_ens, C, N], averaged over B."""
    true_uT = np.asarray(true_uT, dtype=np.float64)
    draws = sample_batch(pred, n_samples, seed)
    if draws.shape[0] != true_uT.shape[0]:
        raise ValueError(f"{draws.shape[0]} predictions for {true_uT.shape[0]} ensembles")
    return float(np.mean([empirical_w2(d, t) for d, t in zip(draws, true_uT)]))


def gaussian_w2_1d(m1: float, s1: float, m2: float, s2: float) -> float:
    if s1 < 0 or s2 < 0:
        raise ValueError(f"standard deviations must be nonnegative, got {s1}, {s2}")
    return math.hypot(m1 - m2, s1 - s2)


# ---------------------------------------------------------------- covariance

def cov_frobenius_rel(B, true_samples, n_probes: int = 128, seed: int = 0) -> float:
    """||B^T B - C_emp||_F / ||C_emp||_F over the flattened (C, N) index.

    Dense when C*N <= 4096, otherwise estimated with Rademacher probes
    (E||A z||^2 = ||A||_F^2) using only matrix-vector products.
    """
    B = np.asarray(B, dtype=np.float64)
    x = np.asarray(true_samples, dtype=np.float64)
    s = x.shape[0]
    if s < 2:
        raise ValueError("need at least 2 samples")
    flat = x.reshape(s, -1)
    if B.reshape(B.shape[0], -1).shape[1] != flat.shape[1]:
        raise ValueError(f"factor covers {B[0].size} points but samples have {flat.shape[1]}")
    xc = (flat - flat.mean(axis=0)) / math.sqrt(s - 1)
    d = flat.shape[1]
    if d <= DENSE_LIMIT:
        bf = B.reshape(B.shape[0], -1)
        c_emp = xc.T @ xc
        den = np.linalg.norm(c_emp)
        if den == 0:
            raise ValueError("empirical covariance is identically zero")
        return float(np.linalg.norm(bf.T @ bf - c_emp) / den)
    z = stream(seed, 30).choice([-1.0, 1.0], size=(n_probes, d))
    num = den = 0.0
    for v in z:
        cv = xc.T @ (xc @ v)
        num += np.sum((covariance_matvec(B, v) - cv) ** 2)
        den += np.sum(cv ** 2)
    if den == 0:
        raise ValueError("empirical covariance is identically zero")
    return float(math.sqrt(num / den))


# --------------------------------------------------------------------- Hurst

@dataclass
class HurstFit:
    hurst: float
    slope: float
    clipped: bool
    lags: np.ndarray
    msd: np.ndarray


def hurst_fit(paths) -> HurstFit:
    """Variogram regression: log E|X(t+tau) - X(t)|^2 on log tau, tau = 1, 2, 4, ..., T/4."""
    x = np.asarray(paths, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 8 or x.shape[0] < 10:
        raise ValueError(f"need [>=10 paths, >=8 times], got {x.shape}")
    lags = 2 ** np.arange(int(math.log2(x.shape[1] // 4)) + 1)
    msd = np.array([np.mean((x[:, lag:] - x[:, :-lag]) ** 2) for lag in lags])
    if np.any(msd <= 0):
        raise ValueError("degenerate paths: zero increment variance")
    slope = float(np.polyfit(np.log(lags), np.log(msd), 1)[0])
    raw = slope / 2
    h = min(max(raw, 0.0), 1.0)
    return HurstFit(h, slope, bool(raw >= 1 - 1e-9 or raw <= 1e-9), lags, msd)


def hurst_estimate(paths) -> float:
    return hurst_fit(paths).hurst


# ------------------------------------------------------- residual correlation

@dataclass
class CorrelationResult:
    max_abs: float
    per_feature: dict
    skipped: list


def residual_correlation(increments, features: dict) -> CorrelationResult:
    """Largest |Pearson correlation| between residual increments and past-state features."""
    y = np.asarray(increments, dtype=np.float64).ravel()
    if y.size < 30:
        raise ValueError(f"need at least 30 samples, got {y.size}")
    if y.std() == 0:
        raise ValueError("increments have zero variance")
    per, skipped = {}, []
    for name, f in features.items():
        f = np.asarray(f, dtype=np.float64).ravel()
        if f.shape != y.shape:
            raise ValueError(f"feature {name} has {f.size} samples, increments have {y.size}")
        if f.std() == 0:
            skipped.append(name)
            continue
        per[name] = float(np.corrcoef(y, f)[0, 1])
    best = max((abs(v) for v in per.values()), default=0.0)
    return CorrelationResult(min(best, 1.0), per, skipped)


# ---------------------------------------------------------------- exceedance

_erfc = np.vectorize(math.erfc, otypes=[float])


@dataclass
class ExceedanceResult:
    per_point: np.ndarray
    union_bound: float
    max_point: float


def exceedance_prob(pred: MomentPrediction, threshold: float) -> ExceedanceResult:
    """P(|u| >= threshold) per point under the predicted Gaussian marginals.

    The any-point event is reported both as the union bound (sum, capped at 1)
    and as the largest single-point probability, which bound it from above and
    below.
    """
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    m = np.asarray(pred.mean, dtype=np.float64)
    s = np.sqrt(np.asarray(pred.variance(), dtype=np.float64))
    safe = np.where(s > 0, s, 1.0)
    upper = 0.5 * _erfc((threshold - m) / (safe * math.sqrt(2)))
    lower = 0.5 * _erfc((threshold + m) / (safe * math.sqrt(2)))
    p = np.where(s > 0, upper + lower, (np.abs(m) >= threshold).astype(float))
    return ExceedanceResult(p, float(min(1.0, p.sum())), float(p.max()))
