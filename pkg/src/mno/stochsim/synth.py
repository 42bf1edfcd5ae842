"""Controlled drift/noise cases for the head-separation audit.

Case A adds a deterministic smooth drift to u0 with no noise, case B adds a
zero-mean smooth Gaussian field of pointwise variance ``v_b`` with no drift,
and case C adds both.
"""
from __future__ import annotations

import numpy as np

from .dataset import SCHEMA_VERSION, EnsembleDataset
from .rng import stream

NOISE_MODES = 2


def drift_field(u0: np.ndarray, amp: float) -> np.ndarray:
    """Deterministic drift increment for case A/C: amp * (sin(2 pi x) + u0 / 2)."""
    n = u0.shape[-1]
    x = np.arange(n) / n
    return amp * (np.sin(2 * np.pi * x) + 0.5 * u0)


def _smooth_noise(g: np.random.Generator, n_ens: int, n: int, v_b: float) -> np.ndarray:
    # DC plus NOISE_MODES cos/sin pairs, each of variance v_b / (NOISE_MODES + 1): stationary, pointwise var v_b
    x = np.arange(n) / n
    k = np.arange(1, NOISE_MODES + 1)
    s = np.sqrt(v_b / (NOISE_MODES + 1))
    c = g.standard_normal((n_ens, 2 * NOISE_MODES + 1)) * s
    basis = np.concatenate([np.ones((1, n)), np.cos(2 * np.pi * np.outer(k, x)), np.sin(2 * np.pi * np.outer(k, x))])
    return c @ basis


def synth_head_separation(
    case: str,
    n_ic: int,
    n_ens: int,
    seed: int,
    n_x: int = 32,
    v_b: float = 0.25,
    drift_amp: float = 0.25,
    horizon: float = 1.0,
) -> EnsembleDataset:
    if case not in ("A", "B", "C"):
        raise ValueError(f"case must be one of A, B, C; got {case!r}")
    if n_ic < 1 or n_ens < 1:
        raise ValueError("n_ic and n_ens must be positive")
    x = np.arange(n_x) / n_x
    u0 = np.empty((n_ic, 1, n_x))
    uT = np.empty((n_ic, n_ens, 1, n_x))
    for i in range(n_ic):
        g = stream(seed, 6, i)
        a, b = g.standard_normal((2, 3)) / np.arange(1, 4)
        u0[i, 0] = a @ np.cos(2 * np.pi * np.outer(np.arange(1, 4), x)) + b @ np.sin(2 * np.pi * np.outer(np.arange(1, 4), x))
        mean = u0[i, 0] + (drift_field(u0[i, 0], drift_amp) if case in ("A", "C") else 0.0)
        noise = _smooth_noise(stream(seed, 7, i), n_ens, n_x, v_b) if case in ("B", "C") else 0.0
        uT[i, :, 0] = mean + noise
    meta = {
        "kind": "synthetic",
        "spec": {"case": case, "n_x": n_x, "v_b": v_b, "drift_amp": drift_amp, "horizon": horizon},
        "seed": int(seed),
        "schema_version": SCHEMA_VERSION,
    }
    return EnsembleDataset(u0=u0, uT=uT, t=np.full(n_ic, horizon), meta=meta)
