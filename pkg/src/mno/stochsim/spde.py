"""Spectral Euler-Maruyama for 1D periodic SPDEs of the form du = mu(u) dt + sigma dW.

The linear part of the drift is integrated exactly with an integrating factor in
Fourier space; the nonlinear part is explicit and dealiased with the 2/3 rule.
Space-time white noise is discretized as iid N(0, dt/dx) increments per grid
point.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .dataset import SCHEMA_VERSION, EnsembleDataset
from .rng import stream

EQUATIONS = ("burgers", "phi4", "ou")


class BlowUpError(FloatingPointError):
    pass


@dataclass(frozen=True)
class SpdeSpec:
    equation: str = "burgers"
    viscosity: float = 0.01
    mass: float = 1.0
    quartic: float = 1.0
    rate: float = 1.0
    sigma: float = 0.05
    length: float = 1.0
    n_x: int = 64
    horizon: float = 0.5
    dt: float | None = None
    c_stab: float = 0.25
    u0_modes: int = 4
    u0_scale: float = 0.5
    nonlinear: bool = True
    drift: bool = True

    @classmethod
    def burgers(cls, **kw) -> "SpdeSpec":
        return cls(**{"equation": "burgers", "viscosity": 0.01, "sigma": 0.05, "horizon": 0.5, **kw})

    @classmethod
    def phi4(cls, **kw) -> "SpdeSpec":
        return cls(**{"equation": "phi4", "viscosity": 1.0, "mass": 1.0, "quartic": 1.0,
                      "sigma": 0.2, "horizon": 0.5, **kw})

    @classmethod
    def ou(cls, **kw) -> "SpdeSpec":
        return cls(**{"equation": "ou", "viscosity": 0.0, "rate": 1.0, **kw})

    @property
    def dx(self) -> float:
        return self.length / self.n_x

    def stable_dt(self) -> float:
        return self.c_stab * self.dx ** 2 / max(self.viscosity, 1.0)

    def steps(self) -> tuple[float, int]:
        """Validated (dt, n_steps); an unset dt is the largest stable step dividing the horizon."""
        if self.equation not in EQUATIONS:
            raise ValueError(f"unknown equation {self.equation!r}; expected one of {EQUATIONS}")
        if self.n_x < 8:
            raise ValueError(f"n_x must be >= 8, got {self.n_x}")
        bound = self.stable_dt()
        if self.dt is None:
            n = math.ceil(self.horizon / bound - 1e-9)
            dt = self.horizon / n
        else:
            dt = float(self.dt)
            if dt <= 0:
                raise ValueError(f"dt must be positive, got {dt}")
            if dt > bound * (1 + 1e-12):
                raise ValueError(f"dt={dt} violates the stability bound {bound:.6g}")
            n = round(self.horizon / dt)
            if n < 1 or abs(n * dt - self.horizon) > 1e-9 * self.horizon:
                raise ValueError(f"horizon {self.horizon} is not a multiple of dt {dt}")
        return dt, n

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def grid(spec: SpdeSpec) -> np.ndarray:
    return np.arange(spec.n_x) * spec.dx


def sample_initial_conditions(spec: SpdeSpec, n_ic: int, seed: int) -> np.ndarray:
    """Random low-pass Fourier series, [n_ic, 1, n_x].

    Coefficients depend only on (seed, ic), so the same condition can be
    evaluated on any grid.
    """
    x = grid(spec) / spec.length
    out = np.empty((n_ic, 1, spec.n_x))
    k = np.arange(1, spec.u0_modes + 1)
    for i in range(n_ic):
        a, b = stream(seed, 0, i).standard_normal((2, spec.u0_modes)) * (spec.u0_scale / k)
        phase = 2 * np.pi * np.outer(k, x)
        out[i, 0] = a @ np.cos(phase) + b @ np.sin(phase)
    return out


def _linear_symbol(spec: SpdeSpec, wavenumber: np.ndarray) -> np.ndarray:
    if not spec.drift:
        return np.zeros_like(wavenumber)
    lin = -spec.viscosity * wavenumber ** 2
    if spec.equation == "phi4":
        lin = lin + spec.mass
    elif spec.equation == "ou":
        lin = lin - spec.rate
    return lin


def _noise_block(gens, steps: int, n_x: int) -> np.ndarray:
    return np.stack([g.standard_normal((steps, n_x)) for g in gens], axis=1)


def integrate(spec: SpdeSpec, u0: np.ndarray, gens: list, labels: list | None = None) -> np.ndarray:
    """Advance a batch of fields [n_traj, n_x] to the horizon; one generator per trajectory."""
    dt, n_steps = spec.steps()
    u0 = np.asarray(u0, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        return _run(spec, u0, gens, labels, dt, n_steps)


def _run(spec, u0, gens, labels, dt, n_steps):
    n = spec.n_x
    k = 2 * np.pi * np.fft.rfftfreq(n, d=spec.dx)
    factor = np.exp(_linear_symbol(spec, k) * dt)
    keep = np.arange(k.size) <= n // 3
    noise_scale = spec.sigma * math.sqrt(dt / spec.dx)
    nonlinear = spec.drift and spec.nonlinear and spec.equation in ("burgers", "phi4")
    uh = np.fft.rfft(u0, axis=-1)
    block = max(1, min(n_steps, 4_000_000 // max(1, len(gens) * n)))
    done = 0
    while done < n_steps:
        steps = min(block, n_steps - done)
        noise_h = None
        if noise_scale > 0:
            noise_h = np.fft.rfft(_noise_block(gens, steps, n), axis=-1) * noise_scale
        for s in range(steps):
            rhs = uh
            if nonlinear:
                u = np.fft.irfft(uh, n=n, axis=-1)
                if spec.equation == "burgers":
                    nl = -0.5j * k * np.fft.rfft(u * u, axis=-1)
                else:
                    nl = -spec.quartic * np.fft.rfft(u ** 3, axis=-1)
                rhs = rhs + dt * nl * keep
            if noise_h is not None:
                rhs = rhs + noise_h[s]
            uh = factor * rhs
        done += steps
        u = np.fft.irfft(uh, n=n, axis=-1)
        bad = ~np.all(np.isfinite(u) & (np.abs(u) <= 1e6), axis=-1)
        if np.any(bad):
            j = int(np.flatnonzero(bad)[0])
            who = labels[j] if labels is not None else j
            raise BlowUpError(f"trajectory {who} blew up (|u| > 1e6) by step {done} of {n_steps}")
    return np.fft.irfft(uh, n=n, axis=-1)


def simulate_spde_ensemble(
    spec: SpdeSpec,
    n_ic: int,
    n_ens: int,
    seed: int,
    u0: np.ndarray | None = None,
) -> EnsembleDataset:
    """Terminal-state ensembles, reproducible bit-for-bit from (spec, seed).

    Trajectory (i, j) draws its noise from its own stream keyed by (seed, i, j),
    so results do not depend on batching or ensemble size.
    """
    spec.steps()
    if u0 is None:
        u0 = sample_initial_conditions(spec, n_ic, seed)
    u0 = np.asarray(u0, dtype=np.float64).reshape(n_ic, 1, spec.n_x)
    gens = [stream(seed, 1, i, j) for i in range(n_ic) for j in range(n_ens)]
    labels = [(i, j) for i in range(n_ic) for j in range(n_ens)]
    start = np.repeat(u0[:, 0], n_ens, axis=0)
    uT = integrate(spec, start, gens, labels).reshape(n_ic, n_ens, 1, spec.n_x)
    meta = {
        "kind": "spde",
        "spec": spec.to_dict(),
        "seed": int(seed),
        "schema_version": SCHEMA_VERSION,
        "grid": grid(spec).tolist(),
    }
    return EnsembleDataset(u0=u0, uT=uT, t=np.full(n_ic, spec.horizon), meta=meta)


def simulate_spde_snapshots(
    spec: SpdeSpec,
    times,
    n_ic: int,
    n_ens: int,
    seed: int,
    u0: np.ndarray | None = None,
) -> list[EnsembleDataset]:
    """The same trajectories observed at increasing times, one dataset per time.

    Each trajectory keeps its generator across segments, so snapshot k is the
    path of snapshot k-1 continued. ``spec.dt`` must divide every segment.
    """
    times = [float(t) for t in times]
    if not times or times[0] <= 0 or any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError(f"times must be positive and increasing, got {times}")
    dt = spec.dt if spec.dt is not None else dataclasses.replace(spec, horizon=times[0]).steps()[0]
    if u0 is None:
        u0 = sample_initial_conditions(spec, n_ic, seed)
    u0 = np.asarray(u0, dtype=np.float64).reshape(n_ic, 1, spec.n_x)
    gens = [stream(seed, 1, i, j) for i in range(n_ic) for j in range(n_ens)]
    labels = [(i, j) for i in range(n_ic) for j in range(n_ens)]
    state = np.repeat(u0[:, 0], n_ens, axis=0)
    out, prev = [], 0.0
    for t in times:
        seg = dataclasses.replace(spec, horizon=t - prev, dt=dt)
        state = integrate(seg, state, gens, labels)
        meta = {"kind": "spde_snapshot", "spec": dataclasses.replace(spec, horizon=t, dt=dt).to_dict(),
                "seed": int(seed), "schema_version": SCHEMA_VERSION, "grid": grid(spec).tolist()}
        out.append(EnsembleDataset(u0=u0, uT=state.reshape(n_ic, n_ens, 1, spec.n_x).copy(), t=t, meta=meta))
        prev = t
    return out
