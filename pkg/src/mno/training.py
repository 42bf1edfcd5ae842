"""Composite objective, warmup schedule and the fit loop."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numkit import autodiff as ad
from .numkit.autodiff import Tape
from .numkit.optim import AdamWState, adamw_step, clip_grad_norm
from .operator import MnoModel, forward_terms, save_checkpoint, variance_from_factor
from .stochsim.dataset import EnsembleDataset
from .stochsim.rng import stream

DIVERGENCE_LIMIT = 1e8


class NonFiniteLossError(FloatingPointError):
    pass


class DivergenceError(RuntimeError):
    """Training blew up; ``last_good`` holds the model from the last finite epoch."""

    def __init__(self, msg: str, last_good: MnoModel, epoch: int, checkpoint: str | None = None):
        super().__init__(msg)
        self.last_good = last_good
        self.epoch = epoch
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class LossWeights:
    s_nll: float = 1.0
    gamma: float = 0.1
    epsilon: float = 0.1
    delta: float = 0.01

    def validate(self):
        if min(self.s_nll, self.gamma, self.epsilon, self.delta) < 0:
            raise ValueError(f"loss weights must be nonnegative, got {self}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 120
    warmup_epochs: int = 10
    lr: float = 1e-3
    batch: int = 256
    var_min: float = 1e-5
    var_max: float = 1e2
    seed: int = 0
    weight_decay: float = 0.01
    clip_norm: float | None = None

    def validate(self):
        if self.epochs < 0 or self.warmup_epochs < 0 or self.batch < 1:
            raise ValueError(f"invalid epoch/batch settings: {self}")
        if self.epochs > 0 and self.warmup_epochs >= self.epochs:
            raise ValueError(f"warmup_epochs ({self.warmup_epochs}) must be < epochs ({self.epochs})")
        if not 0 < self.var_min < self.var_max:
            raise ValueError(f"variance clamp must satisfy 0 < lower < upper, got [{self.var_min}, {self.var_max}]")


def _targets(uT) -> np.ndarray:
    uT = np.asarray(uT, dtype=np.float64)
    if uT.ndim == 3:
        uT = uT[None]
    if uT.shape[1] < 1:
        raise ValueError("ensemble is empty")
    return uT


def _batched(x, ndim: int):
    return ad.reshape(x, (1,) + ad.value_of(x).shape) if ad.value_of(x).ndim == ndim - 1 else x


# ------------------------------------------------------------------- terms
# Targets are [B, E, C, N] (or [E, C, N]); mean is [B, C, N]; factor [B, r, C, N].

def nll_loss(mean, factor, uT, var_min: float = 1e-5, var_max: float = 1e2):
    """Gaussian NLL without the 0.5 log 2 pi constant, averaged over all axes."""
    uT = _targets(uT)
    mean, factor = _batched(mean, 3), _batched(factor, 4)
    v = ad.clamp(variance_from_factor(factor), var_min, var_max)
    b, _, c, n = uT.shape
    v4 = ad.reshape(v, (b, 1, c, n))
    sq = ad.square(ad.sub(uT, ad.reshape(mean, (b, 1, c, n))))
    return ad.mul(0.5, ad.mean(ad.add(ad.log(v4), ad.div(sq, v4))))


def empirical_variance(uT) -> np.ndarray:
    """Unbiased ensemble variance [B, C, N]; zeros when E < 2."""
    uT = _targets(uT)
    if uT.shape[1] < 2:
        return np.zeros((uT.shape[0],) + uT.shape[2:])
    return (uT - uT[:, :1]).var(axis=1, ddof=1)


def consistency_loss(factor, uT):
    """Relative L2 gap between predicted and empirical variance, batch-averaged.

    A sample whose empirical variance is exactly zero has no scale to be
    relative to, so its absolute L2 norm is used instead.
    """
    uT = _targets(uT)
    if uT.shape[1] < 2:
        return 0.0
    factor = _batched(factor, 4)
    v_emp = empirical_variance(uT)
    axes = (1, 2)
    gap = ad.l2norm(ad.sub(variance_from_factor(factor), v_emp), axis=axes)
    norm = np.sqrt(np.sum(v_emp ** 2, axis=axes))
    den = np.where(norm > 0, norm + 1e-8, 1.0)
    return ad.mean(ad.div(gap, den))


def martingale_loss(mean, uT):
    """Squared ensemble mean of the residual u_T - u_0 - A, averaged over (B, C, N)."""
    uT = _targets(uT)
    mean = _batched(mean, 3)
    return ad.mean(ad.square(ad.sub(uT.mean(axis=1), mean)))


def reg_loss(factor):
    return ad.mean(ad.square(factor))


def mse_loss(mean, uT):
    uT = _targets(uT)
    mean = _batched(mean, 3)
    b, _, c, n = uT.shape
    return ad.mean(ad.square(ad.sub(uT, ad.reshape(mean, (b, 1, c, n)))))


def schedule(epoch: int, weights: LossWeights, cfg: TrainConfig) -> tuple[float, float]:
    """(NLL weight, MSE weight) for an epoch: linear NLL ramp from 0 with MSE on during warmup."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if epoch < cfg.warmup_epochs:
        return weights.s_nll * epoch / cfg.warmup_epochs, 1.0
    return weights.s_nll, 0.0


TERMS = ("nll", "consistency", "martingale", "reg", "mse")


def composite_loss(model: MnoModel, batch: EnsembleDataset, weights: LossWeights, epoch: int,
                   cfg: TrainConfig, params=None):
    """Total loss plus a breakdown of raw terms and the weights applied to them.

    ``total`` is exactly sum(weight_k * term_k) over the breakdown.
    """
    w_nll, w_mse = schedule(epoch, weights, cfg)
    coef = {"nll": w_nll, "consistency": weights.gamma, "martingale": weights.epsilon,
            "reg": weights.delta, "mse": w_mse}
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            total, terms = _weighted_terms(model, batch, cfg, params, coef)
    except FloatingPointError as exc:
        raise NonFiniteLossError(f"non-finite loss at epoch {epoch}: {exc}") from exc
    breakdown = {k: float(ad.value_of(terms[k])) for k in TERMS}
    breakdown.update({f"w_{k}": float(coef[k]) for k in TERMS})
    breakdown["total"] = float(ad.value_of(total))
    return total, breakdown


def _weighted_terms(model, batch, cfg, params, coef):
    out = forward_terms(model, batch.u0, batch.t, params)
    terms = {
        "nll": nll_loss(out["mean"], out["factor"], batch.uT, cfg.var_min, cfg.var_max),
        "consistency": consistency_loss(out["factor"], batch.uT),
        "martingale": martingale_loss(out["mean"], batch.uT),
        "reg": reg_loss(out["factor"]),
        "mse": mse_loss(out["mean"], batch.uT),
    }
    total = 0.0
    for k in TERMS:
        total = ad.add(total, ad.mul(coef[k], terms[k]))
    return total, terms


def reconstruct_total(breakdown: dict) -> float:
    return sum(breakdown[f"w_{k}"] * breakdown[k] for k in TERMS)


# --------------------------------------------------------------------- fit

@dataclass
class FitResult:
    model: MnoModel
    log: list[dict] = field(default_factory=list)
    optimizer: AdamWState | None = None


def loss_and_grads(model: MnoModel, batch: EnsembleDataset, weights: LossWeights, epoch: int, cfg: TrainConfig):
    tape = Tape()
    leaves = {k: tape.leaf(v, name=k) for k, v in model.params.items()}
    total, breakdown = composite_loss(model, batch, weights, epoch, cfg, leaves)
    tape.backward(total)
    return breakdown, {k: leaves[k].grad for k in leaves}


def fit(
    model: MnoModel,
    dataset: EnsembleDataset,
    cfg: TrainConfig,
    weights: LossWeights = LossWeights(),
    log_path=None,
    start_epoch: int = 0,
    optimizer: AdamWState | None = None,
    failure_checkpoint=None,
    verbose: bool = False,
) -> FitResult:
    """Train with seeded shuffles and AdamW; returns a new model and the epoch log.

    Epoch e shuffles with a stream keyed by (seed, e), so resuming from a
    checkpoint written after epoch e-1 continues the same trajectory.
    """
    cfg.validate()
    weights.validate()
    if dataset.norm is None:
        raise ValueError("fit expects a normalized dataset")
    model = model.copy()
    opt = optimizer if optimizer is not None else AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    log: list[dict] = []
    sink = open(log_path, "a" if start_epoch else "w") if log_path else None
    try:
        for epoch in range(start_epoch, cfg.epochs):
            t0 = time.perf_counter()
            last_good = model.copy()
            order = stream(cfg.seed, 20, epoch).permutation(dataset.n_ic)
            sums = dict.fromkeys(TERMS + ("total",), 0.0)
            grad_norms = []
            for s in range(0, dataset.n_ic, cfg.batch):
                idx = np.sort(order[s:s + cfg.batch])
                batch = dataset.subset(idx)
                try:
                    bd, grads = loss_and_grads(model, batch, weights, epoch, cfg)
                except FloatingPointError as exc:
                    raise _diverged(f"{exc}", last_good, epoch, failure_checkpoint, opt) from exc
                if not bd["total"] < DIVERGENCE_LIMIT:
                    raise _diverged(f"loss {bd['total']:.3g} exceeds {DIVERGENCE_LIMIT:g} at epoch {epoch}",
                                    last_good, epoch, failure_checkpoint, opt)
                if cfg.clip_norm is not None:
                    grad_norms.append(clip_grad_norm(grads, cfg.clip_norm))
                model.params = adamw_step(opt, model.params, grads)
                share = len(idx) / dataset.n_ic
                for k in sums:
                    sums[k] += share * bd[k]
            w_nll, w_mse = schedule(epoch, weights, cfg)
            record = {"epoch": epoch, "lr": opt.lr, "w_nll": w_nll, "w_mse": w_mse,
                      "alpha": float(model.params["alpha"][0]),
                      "wall_ms": 1000 * (time.perf_counter() - t0), **sums}
            if grad_norms:
                record["grad_norm"] = float(np.max(grad_norms))
            log.append(record)
            if sink:
                sink.write(json.dumps(record) + "\n")
                sink.flush()
            if verbose:
                print(f"epoch {epoch:4d} total {sums['total']:.5f} nll {sums['nll']:.4f} mse {sums['mse']:.5f}")
    finally:
        if sink:
            sink.close()
    return FitResult(model, log, opt)


def _diverged(msg, last_good, epoch, path, opt) -> DivergenceError:
    saved = None
    if path is not None:
        save_checkpoint(path, last_good, None, {"diverged_epoch": epoch, "reason": msg})
        saved = str(Path(path))
    return DivergenceError(f"training diverged at epoch {epoch}: {msg}", last_good, epoch, saved)

