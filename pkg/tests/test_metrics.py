import math

import numpy as np
import pytest

from mno import metrics
from mno.metrics import (
    MetricRecord,
    cov_frobenius_rel,
    empirical_w2,
    exceedance_prob,
    gaussian_w2_1d,
    hurst_fit,
    mean_rmse,
    residual_correlation,
    variance_rmse,
)
from mno.operator import MomentPrediction, sample_terminal
from mno.stochsim import FbmSpec, davies_harte_fbm

# ---------------------------------------------------------------------- RMSE


def test_mean_rmse_examples():
    x = np.random.default_rng(0).standard_normal((4, 2, 8))
    assert mean_rmse(x, x) == 0.0
    assert abs(mean_rmse(x + 0.3, x) - 0.3) < 1e-15
    y = np.random.default_rng(1).standard_normal((4, 2, 8))
    total = 0.0
    for i in range(4):
        for c in range(2):
            for j in range(8):
                total += (x[i, c, j] - y[i, c, j]) ** 2
    assert abs(mean_rmse(x, y) - math.sqrt(total / 64)) < 1e-12
    with pytest.raises(ValueError):
        mean_rmse(x, y[:2])


def test_variance_rmse_examples():
    v = np.full((3, 1, 8), 0.4)
    assert variance_rmse(v, v) == 0.0
    assert abs(variance_rmse(np.zeros_like(v), v) - 0.4) < 1e-15
    assert abs(variance_rmse(np.zeros_like(v), v, std=np.array([2.0])) - 1.6) < 1e-15


# ------------------------------------------------------------------------ W2

def test_w2_identical_and_translated():
    a = np.random.default_rng(2).standard_normal((500, 1, 4))
    assert empirical_w2(a, a) == 0.0
    assert abs(empirical_w2(a, a + 0.7) - 0.7) < 1e-12


def test_w2_unequal_sizes_hand_value():
    a = np.array([0.0, 1.0]).reshape(2, 1, 1)
    b = np.array([0.0, 0.0, 1.0, 1.0]).reshape(4, 1, 1)
    assert abs(empirical_w2(a, b) - math.sqrt(0.03125)) < 1e-15


def test_w2_gaussian_closed_form():
    rng = np.random.default_rng(3)
    pred = 0.3 + 1.2 * rng.standard_normal((10_000, 1, 4))
    true = rng.standard_normal((10_000, 1, 4))
    exact = gaussian_w2_1d(0.3, 1.2, 0.0, 1.0)
    assert abs(exact - 0.36056) < 1e-5
    assert abs(empirical_w2(pred, true) / exact - 1) < 0.05


def test_w2_symmetric_and_shrinks_with_samples():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((2, 1000, 1, 16))
    assert empirical_w2(a, b) == empirical_w2(b, a)
    c, d = rng.standard_normal((2, 10_000, 1, 16))
    assert empirical_w2(a, b) >= 2 * empirical_w2(c, d)


def test_w2_needs_two_samples():
    with pytest.raises(ValueError):
        empirical_w2(np.zeros((1, 1, 2)), np.zeros((5, 1, 2)))


def test_gaussian_w2_examples():
    assert gaussian_w2_1d(0, 1, 0, 1) == 0.0
    assert gaussian_w2_1d(0, 1, 3, 1) == 3.0
    assert gaussian_w2_1d(0, 1, 0, 2) == 1.0
    with pytest.raises(ValueError):
        gaussian_w2_1d(0, -1, 0, 1)


# ---------------------------------------------------------------- covariance

def _low_rank_samples(seed, s, r=2, c=1, n=12):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((r, c, n))
    xi = rng.standard_normal((s, r))
    return B, np.einsum("sr,rcn->scn", xi, B)


def test_cov_zero_factor_is_one():
    _, x = _low_rank_samples(0, 200)
    assert cov_frobenius_rel(np.zeros((3, 1, 12)), x) == 1.0


def test_cov_eigen_factor_recovers_truth():
    _, x = _low_rank_samples(1, 50_000)
    flat = x.reshape(len(x), -1)
    emp = np.cov(flat.T)
    w, v = np.linalg.eigh(emp)
    B = (v[:, -2:] * np.sqrt(w[-2:])).T.reshape(2, 1, 12)
    assert cov_frobenius_rel(B, x) < 0.05


def test_cov_exact_factor_small_and_rotation_invariant():
    B, x = _low_rank_samples(2, 20_000)
    err = cov_frobenius_rel(B, x)
    assert err < 0.05
    q, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((2, 2)))
    rotated = np.einsum("kj,jcn->kcn", q, B)
    assert abs(cov_frobenius_rel(rotated, x) - err) < 1e-12


def test_cov_probe_path_agrees_with_dense(monkeypatch):
    rng = np.random.default_rng(5)
    B, x = _low_rank_samples(4, 3000, r=3, c=2, n=20)
    guess = B + 0.3 * rng.standard_normal(B.shape)
    dense = cov_frobenius_rel(guess, x)
    monkeypatch.setattr(metrics, "DENSE_LIMIT", 10)
    probed = cov_frobenius_rel(guess, x, n_probes=400)
    assert abs(probed / dense - 1) < 0.1


def test_cov_rejects_zero_covariance():
    with pytest.raises(ValueError):
        cov_frobenius_rel(np.ones((1, 1, 4)), np.ones((10, 1, 4)))


# --------------------------------------------------------------------- Hurst

def test_hurst_brownian():
    steps = np.random.default_rng(6).standard_normal((1000, 64))
    paths = np.cumsum(steps, axis=1)
    assert abs(hurst_fit(paths).hurst - 0.5) < 0.05


@pytest.mark.parametrize("hurst", [0.1, 0.3, 0.5])
def test_hurst_on_exact_fbm(hurst):
    paths = davies_harte_fbm(FbmSpec(hurst=hurst, n_t=64), 1000, seed=7)
    assert abs(hurst_fit(paths).hurst - hurst) < 0.05


def test_hurst_ramp_is_ballistic_and_flagged():
    paths = np.outer(np.linspace(1, 2, 12), np.arange(32.0))
    fit = hurst_fit(paths)
    assert abs(fit.slope - 2) < 1e-9 and fit.hurst == 1.0 and fit.clipped
    assert list(fit.lags) == [1, 2, 4, 8]


def test_hurst_errors():
    with pytest.raises(ValueError):
        hurst_fit(np.ones((20, 16)))
    with pytest.raises(ValueError):
        hurst_fit(np.zeros((5, 16)))


# ------------------------------------------------------- residual correlation

def test_residual_correlation_null_and_identity():
    rng = np.random.default_rng(8)
    y = rng.standard_normal(10_000)
    res = residual_correlation(y, {"a": rng.standard_normal(10_000), "b": rng.standard_normal(10_000) ** 2})
    assert res.max_abs < 0.05
    assert abs(residual_correlation(y, {"same": y}).max_abs - 1.0) < 1e-12
    neg = residual_correlation(y, {"neg": -y})
    assert abs(neg.max_abs - 1.0) < 1e-12 and neg.per_feature["neg"] < 0


def test_residual_correlation_skips_constant_feature():
    y = np.random.default_rng(9).standard_normal(40)
    res = residual_correlation(y, {"const": np.ones(40), "y": y})
    assert res.skipped == ["const"] and "const" not in res.per_feature
    with pytest.raises(ValueError):
        residual_correlation(y[:10], {})


# ---------------------------------------------------------------- exceedance

def test_exceedance_deterministic_and_one_sigma():
    det = MomentPrediction(mean=np.array([[0.5, -2.0]]), factor=np.zeros((1, 1, 2)), gate=1.0)
    res = exceedance_prob(det, 1.0)
    assert list(res.per_point[0]) == [0.0, 1.0]
    one = MomentPrediction(mean=np.zeros((1, 3)), factor=np.full((1, 1, 3), 2.0), gate=1.0)
    res = exceedance_prob(one, 2.0)
    assert np.allclose(res.per_point, math.erfc(1 / math.sqrt(2)), rtol=1e-14)
    assert abs(res.per_point[0, 0] - 0.3173) < 1e-4
    assert abs(res.union_bound - 3 * res.per_point[0, 0]) < 1e-15 and res.max_point == res.per_point.max()
    assert exceedance_prob(MomentPrediction(np.zeros((1, 8)), np.full((1, 1, 8), 2.0), 1.0), 2.0).union_bound == 1.0


def test_exceedance_matches_monte_carlo():
    rng = np.random.default_rng(10)
    pred = MomentPrediction(mean=rng.standard_normal((1, 4)), factor=0.7 * rng.standard_normal((3, 1, 4)), gate=1.0)
    res = exceedance_prob(pred, 1.5)
    s = sample_terminal(pred, n_samples=100_000, seed=4)
    hits = (np.abs(s) >= 1.5).mean(axis=0)
    se = np.sqrt(res.per_point * (1 - res.per_point) / 100_000)
    assert np.all(np.abs(hits - res.per_point) < 3 * se + 1e-12)


def test_exceedance_rejects_nonpositive_threshold():
    with pytest.raises(ValueError):
        exceedance_prob(MomentPrediction(np.zeros((1, 2)), np.zeros((1, 1, 2)), 1.0), 0.0)


def test_metric_record():
    rec = MetricRecord("w2", np.float64(0.25), 100, 3, {"n": 32})
    assert rec.to_dict() == {"name": "w2", "value": 0.25, "n_samples": 100, "seed": 3, "aux": {"n": 32}}
    with pytest.raises(ValueError):
        MetricRecord("bad", float("nan"), 1, 0)
