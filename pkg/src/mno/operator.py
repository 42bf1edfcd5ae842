"""Martingale neural operator: FNO drift and factor heads behind a temporal gate.

One forward pass maps an initial field u0 [C, N] and a time t to

    mean   = u0 + g(t) * drift_head(u0 | t)
    factor = g(t) * reshape(factor_head(u0 | t), [r, C, N])

with g(t) = 1 - exp(-|alpha| t). The predicted covariance is B^T B over the
flattened (C, N) index, so its diagonal is sum_k B_k^2 and it is never formed.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .numkit import autodiff as ad
from .numkit.optim import AdamWState
from .stochsim.rng import stream

ACTIVATIONS = ("gelu",)


@dataclass(frozen=True)
class FnoConfig:
    width: int = 48
    modes: int = 16
    layers: int = 4
    activation: str = "gelu"

    def validate(self):
        if self.width < 1 or self.layers < 1 or self.modes < 1:
            raise ValueError(f"width, modes and layers must be >= 1, got {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")


@dataclass
class MnoModel:
    """Parameters plus architecture. ``horizon`` fixes the time unit of the t channel."""

    fno: FnoConfig
    rank: int
    channels: int
    params: dict[str, np.ndarray]
    shared_backbone: bool = True
    horizon: float = 1.0
    proj_hidden: int = 0
    grid_channel: bool = True

    @property
    def in_channels(self) -> int:
        return self.channels + 1 + int(self.grid_channel)

    @property
    def hidden(self) -> int:
        return self.proj_hidden or self.fno.width

    def backbones(self) -> tuple[str, str]:
        return ("bb", "bb") if self.shared_backbone else ("bb_drift", "bb_factor")

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def arch(self) -> dict:
        return {
            "fno": dataclasses.asdict(self.fno),
            "rank": self.rank,
            "channels": self.channels,
            "shared_backbone": self.shared_backbone,
            "horizon": self.horizon,
            "proj_hidden": self.proj_hidden,
            "grid_channel": self.grid_channel,
        }

    def with_params(self, params: dict[str, np.ndarray]) -> "MnoModel":
        return dataclasses.replace(self, params=params)

    def copy(self) -> "MnoModel":
        return self.with_params({k: v.copy() for k, v in self.params.items()})


def init_model(
    fno: FnoConfig,
    rank: int,
    channels: int = 1,
    seed: int = 0,
    shared_backbone: bool = True,
    horizon: float = 1.0,
    proj_hidden: int = 0,
    grid_channel: bool = True,
    alpha0: float = 5.0,
    factor_init: float = 0.3,
    zero_heads: bool = False,
) -> MnoModel:
    """Fresh model.

    The drift head's last layer starts at zero so the mean starts as the
    identity map. The factor head's last layer gets small random weights
    (``factor_init`` sets the rough initial std): at B = 0 every loss term has
    zero gradient with respect to the factor head, so zeros would never move.
    ``zero_heads`` zeroes both last layers anyway.
    """
    fno.validate()
    if rank < 1 or channels < 1:
        raise ValueError(f"rank and channels must be >= 1, got rank={rank}, channels={channels}")
    model = MnoModel(fno, rank, channels, {}, shared_backbone, float(horizon), proj_hidden, grid_channel)
    rng = stream(seed, 10)
    w, m, hid = fno.width, fno.modes, model.hidden
    p: dict[str, np.ndarray] = {}

    def dense(i, o):
        return rng.standard_normal((i, o)) / math.sqrt(i)

    for name in dict.fromkeys(model.backbones()):
        p[f"{name}.lift_w"] = dense(model.in_channels, w)
        p[f"{name}.lift_b"] = np.zeros(w)
        scale = 1.0 / (w * m)
        for layer in range(fno.layers):
            p[f"{name}.{layer}.spec_re"] = scale * rng.standard_normal((w, w, m))
            p[f"{name}.{layer}.spec_im"] = scale * rng.standard_normal((w, w, m))
            p[f"{name}.{layer}.skip_w"] = dense(w, w)
            p[f"{name}.{layer}.skip_b"] = np.zeros(w)
    out = {"drift": channels, "factor": rank * channels}
    for head in ("drift", "factor"):
        p[f"{head}.w1"] = dense(w, hid)
        p[f"{head}.b1"] = np.zeros(hid)
        p[f"{head}.w2"] = np.zeros((hid, out[head]))
        p[f"{head}.b2"] = np.zeros(out[head])
    if not zero_heads:
        p["factor.w2"] = rng.standard_normal((hid, rank * channels)) * (factor_init / math.sqrt(hid * rank))
    p["alpha"] = np.array([alpha0])
    model.params = p
    return model


@dataclass
class MomentPrediction:
    """Mean [C,N], factor [r,C,N], gate scalar; a leading batch axis is allowed."""

    mean: np.ndarray
    factor: np.ndarray
    gate: np.ndarray | float
    drift: np.ndarray | None = None

    def variance(self) -> np.ndarray:
        return variance_from_factor(self.factor)

    def std(self) -> np.ndarray:
        return np.sqrt(self.variance())

    def __len__(self):
        return self.mean.shape[0]

    def __getitem__(self, i) -> "MomentPrediction":
        if self.mean.ndim != 3:
            raise IndexError("prediction is not batched")
        return MomentPrediction(
            self.mean[i], self.factor[i], np.asarray(self.gate)[i],
            None if self.drift is None else self.drift[i],
        )


def gate_eval(alpha, t):
    """g(t) = 1 - exp(-|alpha| t); works on taped values."""
    tv = np.asarray(t, dtype=np.float64)
    if np.any(tv < 0):
        raise ValueError(f"time must be nonnegative, got {t}")
    return ad.sub(1.0, ad.exp(ad.neg(ad.mul(ad.absolute(alpha), tv))))


def _check_grid(model: MnoModel, n: int):
    limit = n // 2 + 1
    if model.fno.modes > limit:
        raise ValueError(
            f"modes={model.fno.modes} does not fit a grid of N={n} points (at most {limit} modes)"
        )


def _inputs(model: MnoModel, u0: np.ndarray, t: np.ndarray) -> np.ndarray:
    b, _, n = u0.shape
    parts = [u0, np.broadcast_to((t / model.horizon)[:, None, None], (b, 1, n))]
    if model.grid_channel:
        parts.append(np.broadcast_to((np.arange(n) / n)[None, None, :], (b, 1, n)))
    return np.concatenate(parts, axis=1)


def _backbone(p, name: str, fno: FnoConfig, x):
    h = ad.channel_mix(x, p[f"{name}.lift_w"], p[f"{name}.lift_b"])
    for layer in range(fno.layers):
        spec = ad.spectral_conv(h, p[f"{name}.{layer}.spec_re"], p[f"{name}.{layer}.spec_im"])
        h = ad.gelu(ad.add(spec, ad.channel_mix(h, p[f"{name}.{layer}.skip_w"], p[f"{name}.{layer}.skip_b"])))
    return h


def _head(p, name: str, h):
    z = ad.gelu(ad.channel_mix(h, p[f"{name}.w1"], p[f"{name}.b1"]))
    return ad.channel_mix(z, p[f"{name}.w2"], p[f"{name}.b2"])


def forward_terms(model: MnoModel, u0, t, params=None) -> dict:
    """Batched forward on [B,C,N] inputs; ``params`` may hold tape leaves.

    Returns taped (or plain) ``mean``, ``drift``, ``factor`` [B,r,C,N] and ``gate`` [B].
    """
    p = model.params if params is None else params
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.ndim != 3 or u0.shape[1] != model.channels:
        raise ValueError(f"expected u0 of shape [B, {model.channels}, N], got {u0.shape}")
    if not np.all(np.isfinite(u0)):
        raise ValueError("u0 contains non-finite values")
    b, c, n = u0.shape
    _check_grid(model, n)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
    gate = gate_eval(p["alpha"], t)
    g3 = ad.reshape(gate, (b, 1, 1))
    x = _inputs(model, u0, t)
    bb_drift, bb_factor = model.backbones()
    h = _backbone(p, bb_drift, model.fno, x)
    hf = h if bb_factor == bb_drift else _backbone(p, bb_factor, model.fno, x)
    drift = ad.mul(g3, _head(p, "drift", h))
    factor = ad.reshape(ad.mul(g3, _head(p, "factor", hf)), (b, model.rank, c, n))
    return {"mean": ad.add(u0, drift), "drift": drift, "factor": factor, "gate": gate}


def predict(model: MnoModel, u0, t, batch: int = 256) -> MomentPrediction:
    """Untaped batched prediction for u0 [B,C,N] and t scalar or [B]."""
    u0 = np.asarray(u0, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (u0.shape[0],))
    chunks = [forward_terms(model, u0[s:s + batch], t[s:s + batch]) for s in range(0, u0.shape[0], batch)]
    if not chunks:
        raise ValueError("empty input batch")
    return MomentPrediction(
        mean=np.concatenate([c["mean"] for c in chunks]),
        factor=np.concatenate([c["factor"] for c in chunks]),
        gate=np.concatenate([c["gate"] for c in chunks]),
        drift=np.concatenate([c["drift"] for c in chunks]),
    )


def mno_forward(model: MnoModel, u0, t: float) -> MomentPrediction:
    """Moments for a single initial field u0 [C,N] at time t."""
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.ndim != 2:
        raise ValueError(f"expected u0 of shape [C, N], got {u0.shape}")
    return predict(model, u0[None], np.array([t]))[0]


def zero_variance(pred: MomentPrediction) -> MomentPrediction:
    """Same mean with the factor forced to zero (the deterministic ablation)."""
    return dataclasses.replace(pred, factor=np.zeros_like(pred.factor))


# ------------------------------------------------------------ factor algebra

def variance_from_factor(B):
    """Pointwise variance sum_k B_k^2; the rank axis is third from the end."""
    return ad.sum(ad.square(B), axis=-3)


def covariance_matvec(B: np.ndarray, v: np.ndarray) -> np.ndarray:
    """B^T (B v) over the flattened (C, N) index, without forming B^T B."""
    B = np.asarray(B, dtype=np.float64)
    r = B.shape[0]
    flat = B.reshape(r, -1)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (flat.shape[1],):
        raise ValueError(f"vector of length {v.size} does not match C*N = {flat.shape[1]}")
    return flat.T @ (flat @ v)


def sample_terminal(pred: MomentPrediction, u0=None, n_samples: int = 1, seed: int = 0) -> np.ndarray:
    """Draws u0 + A + sum_k B_k xi_k with xi ~ N(0, I_r), shape [S, C, N].

    Without ``u0`` the predicted mean is used as the center. The rank loop
    keeps the cost at O(S r C N).
    """
    if n_samples < 1:
        raise ValueError(f"sample count must be >= 1, got {n_samples}")
    B = np.asarray(pred.factor)
    if B.ndim != 3:
        raise ValueError("sample_terminal takes an unbatched prediction; index it first")
    if u0 is None or pred.drift is None:
        center = pred.mean
    else:
        center = np.asarray(u0, dtype=np.float64) + pred.drift
    return _draw(B, center, n_samples, stream(seed, 7))


def _draw(B, center, n_samples, gen) -> np.ndarray:
    xi = gen.standard_normal((n_samples, B.shape[0]))
    out = np.empty((n_samples,) + center.shape)
    out[:] = center
    for k in range(B.shape[0]):
        out += xi[:, k, None, None] * B[k]
    return out


def sample_batch(pred: MomentPrediction, n_samples: int, seed: int) -> np.ndarray:
    """Samples for every condition of a batched prediction: [B, S, C, N]."""
    if n_samples < 1:
        raise ValueError(f"sample count must be >= 1, got {n_samples}")
    return np.stack([_draw(pred.factor[i], pred.mean[i], n_samples, stream(seed, 7, i)) for i in range(len(pred))])


# --------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    model: MnoModel
    optimizer: AdamWState | None = None
    provenance: dict = field(default_factory=dict)


def checkpoint_bytes(model: MnoModel, optimizer: AdamWState | None = None, provenance: dict | None = None) -> bytes:
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    header = {"schema_version": 1, "config": model.arch(), "provenance": provenance or {}}
    if optimizer is not None:
        header["optimizer"] = {
            "lr": optimizer.lr, "beta1": optimizer.beta1, "beta2": optimizer.beta2,
            "eps": optimizer.eps, "weight_decay": optimizer.weight_decay, "step_count": optimizer.step_count,
        }
        arrays.update({f"adam_m/{k}": v for k, v in optimizer.m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in optimizer.v.items()})
    return io.pack(io.CHECKPOINT_MAGIC, header, arrays)


def save_checkpoint(path, model: MnoModel, optimizer: AdamWState | None = None, provenance: dict | None = None) -> str:
    data = checkpoint_bytes(model, optimizer, provenance)
    Path(path).write_bytes(data)
    return io.sha256_bytes(data)


def load_checkpoint(path) -> Checkpoint:
    header, arrays = io.unpack(io.CHECKPOINT_MAGIC, Path(path).read_bytes())
    cfg = dict(header["config"])
    fno = FnoConfig(**cfg.pop("fno"))
    params = {k[6:]: v for k, v in arrays.items() if k.startswith("param/")}
    model = MnoModel(fno=fno, params=params, **cfg)
    opt = None
    if "optimizer" in header:
        o = header["optimizer"]
        opt = AdamWState(
            lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], weight_decay=o["weight_decay"],
            step_count=o["step_count"],
            m={k[7:]: v for k, v in arrays.items() if k.startswith("adam_m/")},
            v={k[7:]: v for k, v in arrays.items() if k.startswith("adam_v/")},
        )
    return Checkpoint(model, opt, header.get("provenance", {}))
