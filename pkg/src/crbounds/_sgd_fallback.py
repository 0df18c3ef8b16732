"""Pure numpy version of the SGD loop; same contract as the compiled kernel."""

from __future__ import annotations

import math

import numpy as np

from .core_model import Activation

_BY_CODE = {a.code: a for a in Activation}


def sgd_epochs(w1, w2, x, y, orders, lr, code, batch, abort_level):
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if int(code) not in _BY_CODE:
        raise ValueError(f"unknown activation code {code}")
    act = _BY_CODE[int(code)]
    n1, d = w1.shape
    m = orders.shape[1]
    if w2.shape[0] != n1 or x.shape[1] != d or y.shape[0] != x.shape[0]:
        raise ValueError("inconsistent shapes for w1, w2, x, y")
    if m > 0 and (np.min(orders) < 0 or np.max(orders) >= x.shape[0]):
        raise ValueError("orders holds an index outside the sample range")
    losses = np.zeros(orders.shape[0])
    with np.errstate(over="ignore", invalid="ignore"):
        done = _loop(w1, w2, x, y, orders, lr, act, batch, abort_level, losses)
    return done, losses[:done]


def _loop(w1, w2, x, y, orders, lr, act, batch, abort_level, losses):
    n1, d = w1.shape
    m = orders.shape[1]
    inv_sd, inv_sn = 1.0 / math.sqrt(d), 1.0 / math.sqrt(n1)
    done = 0
    for e, order in enumerate(orders):
        loss_sum = 0.0
        for start in range(0, m, batch):
            idx = order[start:start + batch]
            xb = x[idx]                                   # (b, d)
            q = xb @ w1.T * inv_sd                        # (b, N)
            h = act.value_of(q)
            r = h @ w2 * inv_sn - y[idx]
            loss_sum += float(r @ r)
            scale = lr / len(idx)
            s = (2.0 * r)[:, None] * w2[None, :] * act.deriv(q) * (inv_sd * inv_sn)
            g2 = (2.0 * r) @ h * inv_sn
            g1 = s.T @ xb
            w2 -= scale * g2
            w1 -= scale * g1
        losses[e] = loss_sum / m
        done = e + 1
        if not losses[e] <= abort_level:
            break
    return done
