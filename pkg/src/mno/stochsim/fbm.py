"""Fractional Brownian motion by circulant embedding, and rough log-volatility data."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .dataset import SCHEMA_VERSION, EnsembleDataset
from .rng import stream

CHOLESKY_MAX_STEPS = 512


@dataclass(frozen=True)
class FbmSpec:
    hurst: float = 0.1
    eta: float = 1.0
    n_t: int = 32
    horizon: float = 1.0
    logvol0_std: float = 0.5

    def validate(self):
        if not 0 < self.hurst <= 1:
            raise ValueError(f"Hurst parameter must lie in (0, 1], got {self.hurst}")
        if self.eta < 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")
        if self.n_t < 1 or self.horizon <= 0:
            raise ValueError("need n_t >= 1 and a positive horizon")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_t + 1) * (self.horizon / self.n_t)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def fbm_covariance(s, t, hurst: float):
    """Cov(W^H_s, W^H_t) = (s^2H + t^2H - |t - s|^2H) / 2."""
    s, t = np.asarray(s, float), np.asarray(t, float)
    h2 = 2 * hurst
    return 0.5 * (np.abs(s) ** h2 + np.abs(t) ** h2 - np.abs(t - s) ** h2)


def fgn_autocovariance(n: int, hurst: float, step: float) -> np.ndarray:
    k = np.arange(n + 1, dtype=float)
    h2 = 2 * hurst
    gamma = 0.5 * (np.abs(k + 1) ** h2 - 2 * k ** h2 + np.abs(k - 1) ** h2)
    return gamma * step ** h2


class CirculantEmbeddingError(ValueError):
    pass


def circulant_eigenvalues(spec: FbmSpec) -> np.ndarray:
    gamma = fgn_autocovariance(spec.n_t, spec.hurst, spec.horizon / spec.n_t)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    return np.fft.fft(row).real


def davies_harte_fbm(spec: FbmSpec, n_paths: int, seed: int) -> np.ndarray:
    """Exact fBm samples on ``spec.times``: [n_paths, n_t + 1], starting at 0.

    Falls back to a Cholesky factor of the exact covariance when the embedding
    has eigenvalues below -1e-10 and the grid is small enough.
    """
    spec.validate()
    n = spec.n_t
    rng = stream(seed, 2)
    lam = circulant_eigenvalues(spec)
    scale = max(1.0, float(np.max(np.abs(lam))))
    if lam.min() < -1e-10 * scale:
        if n > CHOLESKY_MAX_STEPS:
            raise CirculantEmbeddingError(
                f"circulant embedding has eigenvalue {lam.min():.3g} < 0 for H={spec.hurst}, n_t={n}"
            )
        return _cholesky_fbm(spec, n_paths, rng)
    lam = np.clip(lam, 0.0, None)
    m = 2 * n
    z = rng.standard_normal((n_paths, m)) + 1j * rng.standard_normal((n_paths, m))
    fgn = np.fft.fft(np.sqrt(lam / m) * z, axis=-1).real[:, :n]
    paths = np.zeros((n_paths, n + 1))
    paths[:, 1:] = np.cumsum(fgn, axis=-1)
    return paths


def _cholesky_fbm(spec: FbmSpec, n_paths: int, rng: np.random.Generator) -> np.ndarray:
    t = spec.times[1:]
    cov = fbm_covariance(t[:, None], t[None, :], spec.hurst)
    w, v = np.linalg.eigh(cov)
    root = v * np.sqrt(np.clip(w, 0.0, None))
    paths = np.zeros((n_paths, spec.n_t + 1))
    paths[:, 1:] = rng.standard_normal((n_paths, spec.n_t)) @ root.T
    return paths


def _logvol0(spec: FbmSpec, n_ic: int, seed: int) -> np.ndarray:
    return np.array([stream(seed, 3, i).standard_normal() * spec.logvol0_std for i in range(n_ic)])


def simulate_logvol_ensemble(spec: FbmSpec, n_ic: int, n_ens: int, seed: int) -> EnsembleDataset:
    """Rough log-volatility paths stored as 1-channel fields over time.

    Condition i is the constant field log sigma_0; member j is
    ``log sigma_0 + eta * W^H`` sampled at times T/n_t, 2T/n_t, ..., T, so the
    field coordinate is time and point x has law N(log sigma_0, eta^2 x^2H).
    """
    spec.validate()
    s0 = _logvol0(spec, n_ic, seed)
    u0 = np.repeat(s0[:, None, None], spec.n_t, axis=2)
    uT = np.empty((n_ic, n_ens, 1, spec.n_t))
    for i in range(n_ic):
        paths = davies_harte_fbm(spec, n_ens, seed=_subseed(seed, i))
        uT[i, :, 0] = s0[i] + spec.eta * paths[:, 1:]
    meta = {
        "kind": "logvol",
        "spec": spec.to_dict(),
        "seed": int(seed),
        "schema_version": SCHEMA_VERSION,
        "grid": spec.times[1:].tolist(),
    }
    return EnsembleDataset(u0=u0, uT=uT, t=np.full(n_ic, spec.horizon), meta=meta)


def simulate_fbm_marginals(
    spec: FbmSpec, n_ic: int, n_ens: int, seed: int, n_x: int = 16, times: np.ndarray | None = None
) -> EnsembleDataset:
    """Constant fields log sigma_0 observed at random grid times.

    Condition i gets a query time t_i drawn from ``times`` (default: the
    positive fBm grid) and an ensemble of ``log sigma_0 + eta W^H_{t_i}``, so a
    time-conditioned model can be queried at any step of the grid.
    """
    spec.validate()
    times = spec.times[1:] if times is None else np.asarray(times, float)
    s0 = _logvol0(spec, n_ic, seed)
    t = np.empty(n_ic)
    uT = np.empty((n_ic, n_ens, 1, n_x))
    for i in range(n_ic):
        g = stream(seed, 4, i)
        t[i] = times[g.integers(times.size)]
        draws = s0[i] + spec.eta * t[i] ** spec.hurst * g.standard_normal(n_ens)
        uT[i, :, 0, :] = draws[:, None]
    u0 = np.repeat(s0[:, None, None], n_x, axis=2)
    meta = {"kind": "fbm_marginal", "spec": spec.to_dict(), "seed": int(seed), "schema_version": SCHEMA_VERSION}
    return EnsembleDataset(u0=u0, uT=uT, t=t, meta=meta)


def _subseed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(5, i)).generate_state(2, np.uint64)[0])
