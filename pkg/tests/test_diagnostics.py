import numpy as np
import pytest

from mno import diagnostics, training
from mno.diagnostics import (
    ModelSettings,
    RolloutDivergenceError,
    SeparationSettings,
    Thresholds,
    ar_rollout,
    centering_verdict,
    mirror_verdict,
    run_ablation,
    run_head_separation,
    run_martingale_mirror,
    run_residual_centering,
    run_resolution_transfer,
    run_uncertainty_decomposition,
    sampling_scaling,
    transfer_verdict,
    zero_variance_comparison,
)
from mno.operator import FnoConfig, MomentPrediction, init_model
from mno.stochsim import EnsembleDataset, FbmSpec, synth_head_separation
from mno.training import TrainConfig

TINY = ModelSettings(width=8, modes=4, layers=2, rank=2)


def brownian_oracle(sigma=1.0, mean_shift=0.0, power=0.5):
    """Exact moments of u_t = u0 + sigma W_t with pointwise independent W (when power = 0.5)."""

    def run(u0, t):
        t = np.asarray(t, float)
        std = sigma * t[:, None, None] ** power * np.ones_like(u0)
        return MomentPrediction(mean=u0 + mean_shift, factor=std[:, None], gate=1.0)

    return run


def brownian_snapshots(times, n_ic=40, n_ens=50, n=16, sigma=1.0, seed=0):
    rng = np.random.default_rng(seed)
    u0 = rng.standard_normal((n_ic, 1, n))
    dt = np.diff(np.concatenate([[0.0], times]))
    steps = rng.standard_normal((len(times), n_ic, n_ens, 1, n)) * sigma * np.sqrt(dt)[:, None, None, None, None]
    paths = u0[None, :, None] + np.cumsum(steps, axis=0)
    return [EnsembleDataset(u0=u0, uT=paths[k], t=times[k]) for k in range(len(times))]


# ----------------------------------------------------------------- centering

def test_centering_passes_for_exact_brownian_oracle():
    snaps = brownian_snapshots(np.array([0.25, 0.5, 1.0]))
    rep = run_residual_centering(brownian_oracle(), snaps, seed=0)
    assert rep.passed, rep.checks
    assert abs(rep.evidence["variance_slope"] - 1.0) < 1e-12
    assert rep.evidence["max_abs_corr"] < 0.05


def test_centering_flags_bias_and_wrong_growth():
    snaps = brownian_snapshots(np.array([0.25, 0.5, 1.0]))
    biased = run_residual_centering(brownian_oracle(mean_shift=0.2), snaps)
    assert not biased.checks["centering"] and biased.checks["correlation"]
    quadratic = run_residual_centering(brownian_oracle(power=1.0), snaps)
    assert abs(quadratic.evidence["variance_slope"] - 2.0) < 1e-12 and not quadratic.checks["variance_growth"]
    assert "variance_growth" not in run_residual_centering(brownian_oracle(power=1.0), snaps, brownian=False).checks


def test_centering_flags_predictable_increments():
    # residuals that share one draw across times: increments become a function of the past
    snaps = brownian_snapshots(np.array([0.25, 0.5, 1.0]))
    shared = snaps[0].uT - snaps[0].u0[:, None]
    bad = [EnsembleDataset(u0=s.u0, uT=s.u0[:, None] + shared * (k + 1), t=s.t) for k, s in enumerate(snaps)]
    rep = run_residual_centering(brownian_oracle(), bad)
    assert rep.evidence["max_abs_corr"] > 0.9 and not rep.checks["correlation"]


def test_centering_needs_three_times():
    with pytest.raises(ValueError, match="3 query times"):
        run_residual_centering(brownian_oracle(), brownian_snapshots(np.array([0.5, 1.0])))


def test_verdicts_are_pure_functions_of_evidence():
    th = {"centering_tol": 0.05, "corr_max": 0.1, "slope_low": 0.8, "slope_high": 1.2}
    ev = {"max_abs_bias": 0.05, "max_abs_corr": 0.1, "variance_slope": 1.2}
    assert all(centering_verdict(ev, th).values())
    assert centering_verdict(dict(ev, max_abs_bias=0.0501), th)["centering"] is False
    assert mirror_verdict({"hurst_ar": 0.25, "hurst_true": 0.1, "w2_oneshot": 0.25},
                          {"hurst_gap": 0.15, "mirror_w2_max": 0.25}) == {"whitening": True, "oneshot_fidelity": True}
    ev = {"resolutions": [32, 128], "mean_rmse": {"32": 0.1, "128": 0.21}, "variance_ratio": {"32": 0.3, "128": 0.3}}
    assert transfer_verdict(ev, {"transfer_mean_factor": 2.0, "transfer_var_ratio": 0.5})["mean_bounded"] is False


def test_report_is_reproducible():
    snaps = brownian_snapshots(np.array([0.25, 0.5, 1.0]))
    a = run_residual_centering(brownian_oracle(), snaps, seed=3).to_dict()
    b = run_residual_centering(brownian_oracle(), snaps, seed=3).to_dict()
    a.pop("runtime_ms"), b.pop("runtime_ms")
    assert a == b


# -------------------------------------------------------------------- mirror

def fbm_marginal_oracle(spec, scale=1.0):
    """Memoryless Gaussian map with the exact one-time fBm marginal: var = eta^2 t^2H."""

    def run(u0, t):
        t = np.asarray(t, float)
        std = scale * spec.eta * t[:, None, None] ** spec.hurst * np.ones_like(u0)
        return MomentPrediction(mean=u0, factor=std[:, None], gate=1.0)

    return run


def test_mirror_whitens_exact_marginal_oracle():
    spec = FbmSpec(hurst=0.1, eta=1.0, n_t=32)
    u0 = np.zeros((300, 1, 4))
    rep = run_martingale_mirror(fbm_marginal_oracle(spec), spec, u0, seed=1)
    ev = rep.evidence
    assert abs(ev["hurst_ar"] - 0.5) < 0.07
    assert abs(ev["hurst_data"] - 0.1) < 0.05
    assert ev["w2_oneshot"] < 0.25  # two-sample noise at 300 paths
    assert rep.passed


def test_mirror_flags_wrong_marginal():
    spec = FbmSpec(hurst=0.1, eta=1.0, n_t=32)
    rep = run_martingale_mirror(fbm_marginal_oracle(spec, scale=2.0), spec, np.zeros((300, 1, 4)), seed=1)
    assert rep.checks["whitening"] and not rep.checks["oneshot_fidelity"]


def test_rollout_divergence_names_step():
    def explode(u0, t):
        return MomentPrediction(mean=10 * u0 + 1, factor=np.zeros((len(u0), 1) + u0.shape[1:]), gate=1.0)

    with pytest.raises(RolloutDivergenceError, match="step 7 of 10"):
        ar_rollout(explode, np.zeros((3, 1, 4)), 0.1, 10, seed=0)


# ---------------------------------------------------------------- resolution

def test_resolution_transfer_oracles():
    sets = {}
    for n in (16, 32, 64):
        snap = brownian_snapshots(np.array([1.0]), n_ic=8, n_ens=64, n=n, seed=n)[0]
        sets[n] = snap
    good = run_resolution_transfer(brownian_oracle(), sets)
    assert good.passed and max(good.evidence["variance_ratio"].values()) < 0.3
    zero = run_resolution_transfer(brownian_oracle(sigma=0.0), sets)
    assert zero.checks["mean_bounded"] and not zero.checks["variance_beats_zero"]
    assert all(abs(r - 1) < 1e-12 for r in zero.evidence["variance_ratio"].values())


def test_resolution_transfer_rejects_grid_below_modes():
    model = init_model(FnoConfig(8, 9, 1), rank=1)
    sets = {8: brownian_snapshots(np.array([1.0]), n_ic=2, n_ens=4, n=8)[0]}
    with pytest.raises(ValueError, match="modes=9"):
        run_resolution_transfer(diagnostics.as_predictor(model), sets)


def test_zero_variance_comparison_prefers_exact_oracle():
    test = brownian_snapshots(np.array([1.0]), n_ic=8, n_ens=64, n=8, seed=2)[0]
    res = zero_variance_comparison(brownian_oracle(), test, n_samples=256)
    assert res["w2_mno"] < 0.5 * res["w2_zero"]
    assert res["mean_rmse_mno"] == res["mean_rmse_zero"]


# ----------------------------------------------------- trained diagnostics

def test_head_separation_on_tiny_model():
    settings = SeparationSettings(model=ModelSettings(width=8, modes=4, layers=2, rank=4))
    rep = run_head_separation(settings, seed=0)
    assert rep.checks["case_A"] and rep.checks["case_B"], rep.evidence
    assert set(rep.evidence) == {"A", "B", "C"}


def test_uncertainty_decomposition_recovers_known_variance():
    settings = SeparationSettings(model=ModelSettings(width=8, modes=4, layers=2, rank=4))
    rep = run_uncertainty_decomposition(settings, n_members=3, seed=0)
    assert rep.passed, rep.evidence
    assert rep.evidence["member_epochs"] == 20
    assert rep.evidence["epistemic_out_of_distribution"] > rep.evidence["epistemic_in_distribution"]
    with pytest.raises(ValueError):
        run_uncertainty_decomposition(settings, n_members=2)
    with pytest.raises(ValueError):
        run_uncertainty_decomposition(settings, case="A")


# ----------------------------------------------------------------- ablation

def _ablation_data():
    return synth_head_separation("C", 12, 4, seed=0, n_x=16), synth_head_separation("C", 4, 4, seed=1, n_x=16)


def test_rank_ablation_table():
    train, test = _ablation_data()
    bundle = run_ablation("rank", [1, 2, 4], [0, 1], TINY, TrainConfig(epochs=3, warmup_epochs=1, batch=4),
                          train, test, n_timing_samples=50)
    rows = bundle.tables["cells"]
    assert len(rows) == 6 and all(r["status"] == "ok" for r in rows)
    assert [r["factor_bytes"] for r in rows if r["seed"] == 0] == [1 * 16 * 8, 2 * 16 * 8, 4 * 16 * 8]
    assert bundle.provenance["factor_bytes_r2"] == pytest.approx(1.0)
    assert [s["cell"] for s in bundle.tables["summary"]] == ["1", "2", "4"]
    assert bundle.metric("mean_rmse", cell="2").seed == 0


def test_ablation_records_divergence(monkeypatch):
    monkeypatch.setattr(training, "DIVERGENCE_LIMIT", -1.0)
    train, test = _ablation_data()
    bundle = run_ablation("loss", ["full", "nll_only"], [0], TINY, TrainConfig(epochs=2, warmup_epochs=1), train, test)
    assert all(r["status"] == "diverged" for r in bundle.tables["cells"])
    assert all(s["n_diverged"] == 1 for s in bundle.tables["summary"])


def test_ablation_rejects_unknown_cells():
    train, test = _ablation_data()
    cfg = TrainConfig(epochs=2, warmup_epochs=1)
    with pytest.raises(ValueError, match="axis"):
        run_ablation("depth", [1], [0], TINY, cfg, train, test)
    with pytest.raises(ValueError, match="loss variant"):
        run_ablation("loss", ["no_gate"], [0], TINY, cfg, train, test)
    with pytest.raises(ValueError):
        run_ablation("rank", [], [0], TINY, cfg, train, test)


def test_ablation_is_deterministic():
    train, test = _ablation_data()
    cfg = TrainConfig(epochs=2, warmup_epochs=1, batch=4)
    a = run_ablation("backbone", ["shared", "split"], [0], TINY, cfg, train, test)
    b = run_ablation("backbone", ["shared", "split"], [0], TINY, cfg, train, test)
    assert a.content_hash() == b.content_hash()


def test_sampling_scaling_shape():
    out = sampling_scaling(ranks=(1, 2, 4), n_x=16, n_samples=20, repeats=1)
    assert [r["rank"] for r in out["rows"]] == [1, 2, 4]
    assert out["r2"] <= 1.0


def test_linear_r2():
    assert diagnostics.linear_r2([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert diagnostics.linear_r2([1, 2, 3], [5, 5, 5]) == 1.0
