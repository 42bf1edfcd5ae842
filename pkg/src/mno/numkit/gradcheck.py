from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import Tape


class NondeterministicLossError(RuntimeError):
    pass


def grad_check(
    loss_fn: Callable[[dict], object],
    params: dict[str, np.ndarray],
    n_samples: int = 200,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between taped and central-difference gradients.

    ``loss_fn`` maps a dict of parameters (``Var`` leaves or plain arrays) to a
    scalar. Entries are sampled uniformly over all parameters; when the total
    count is at most ``n_samples`` every entry is checked. The error of an entry
    is ``|a - fd| / max(|a|, |fd|, 1e-8)``.
    """
    tape = Tape()
    leaves = {k: tape.leaf(v, name=k) for k, v in params.items()}
    tape.backward(loss_fn(leaves))
    analytic = {k: leaves[k].grad for k in params}

    def evaluate(p):
        return float(np.asarray(loss_fn(p)))

    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    if evaluate(base) != evaluate(base):
        raise NondeterministicLossError("loss differs between identical evaluations")

    index = [(k, i) for k in base for i in range(base[k].size)]
    rng = np.random.default_rng(seed)
    if len(index) > n_samples:
        picks = rng.choice(len(index), size=n_samples, replace=False)
        index = [index[i] for i in picks]

    worst = 0.0
    for k, i in index:
        flat = base[k].reshape(-1)
        orig = flat[i]
        flat[i] = orig + step
        up = evaluate(base)
        flat[i] = orig - step
        down = evaluate(base)
        flat[i] = orig
        fd = (up - down) / (2 * step)
        a = float(analytic[k].reshape(-1)[i])
        err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
        worst = max(worst, err)
    return worst
