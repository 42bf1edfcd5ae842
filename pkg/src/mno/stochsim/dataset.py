from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1


@dataclass
class NormStats:
    """Per-channel affine standardization of target fields."""

    mean: np.ndarray
    std: np.ndarray

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean[:, None]) / self.std[:, None]

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std[:, None] + self.mean[:, None]

    def variance_to_physical(self, v: np.ndarray) -> np.ndarray:
        return v * (self.std ** 2)[:, None]

    def variance_to_normalized(self, v: np.ndarray) -> np.ndarray:
        return v / (self.std ** 2)[:, None]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float))


@dataclass
class EnsembleDataset:
    """Initial conditions with per-condition ensembles of terminal realizations.

    ``u0`` is [n_ic, C, N], ``uT`` is [n_ic, n_ens, C, N] and ``t`` holds the
    query time of each initial condition. ``norm`` is set once the fields are
    in standardized coordinates.
    """

    u0: np.ndarray
    uT: np.ndarray
    t: np.ndarray
    meta: dict = field(default_factory=dict)
    norm: NormStats | None = None

    def __post_init__(self):
        self.u0 = np.asarray(self.u0, dtype=np.float64)
        self.uT = np.asarray(self.uT, dtype=np.float64)
        self.t = np.broadcast_to(np.asarray(self.t, dtype=np.float64), (self.u0.shape[0],)).copy()
        if self.u0.ndim != 3 or self.uT.ndim != 4:
            raise ValueError(f"expected u0 [n_ic,C,N] and uT [n_ic,n_ens,C,N], got {self.u0.shape} and {self.uT.shape}")
        if self.uT.shape[0] != self.u0.shape[0] or self.uT.shape[2:] != self.u0.shape[1:]:
            raise ValueError(f"u0 {self.u0.shape} and uT {self.uT.shape} disagree")

    @property
    def n_ic(self) -> int:
        return self.u0.shape[0]

    @property
    def n_ens(self) -> int:
        return self.uT.shape[1]

    @property
    def channels(self) -> int:
        return self.u0.shape[1]

    @property
    def n_x(self) -> int:
        return self.u0.shape[2]

    def ensemble_mean(self) -> np.ndarray:
        return self.uT.mean(axis=1)

    def ensemble_var(self) -> np.ndarray:
        if self.n_ens < 2:
            return np.zeros_like(self.u0)
        # centring on one member first makes identical members give exactly 0
        return (self.uT - self.uT[:, :1]).var(axis=1, ddof=1)

    def subset(self, idx) -> "EnsembleDataset":
        return dataclasses.replace(self, u0=self.u0[idx], uT=self.uT[idx], t=self.t[idx], meta=dict(self.meta))


def _target_stats(ds: EnsembleDataset) -> NormStats:
    mean = ds.uT.mean(axis=(0, 1, 3))
    std = ds.uT.std(axis=(0, 1, 3))
    if np.any(std <= 0):
        raise ValueError(f"zero target standard deviation in channel(s) {np.flatnonzero(std <= 0).tolist()}")
    return NormStats(mean, std)


def apply_normalization(ds: EnsembleDataset, stats: NormStats) -> EnsembleDataset:
    """Standardize an unnormalized dataset with given (e.g. training) statistics."""
    if ds.norm is not None:
        raise ValueError("dataset is already normalized")
    return dataclasses.replace(
        ds, u0=stats.normalize(ds.u0), uT=stats.normalize(ds.uT), meta=dict(ds.meta), norm=stats
    )


def normalize_dataset(ds: EnsembleDataset) -> tuple[EnsembleDataset, NormStats]:
    """Standardize targets per channel over (ic, ens, x); u0 uses the same map."""
    stats = _target_stats(ds)
    return apply_normalization(ds, stats), stats


def denormalize_dataset(ds: EnsembleDataset) -> EnsembleDataset:
    if ds.norm is None:
        return ds
    s = ds.norm
    return dataclasses.replace(ds, u0=s.denormalize(ds.u0), uT=s.denormalize(ds.uT), meta=dict(ds.meta), norm=None)
