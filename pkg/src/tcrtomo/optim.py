"""AdamW with decoupled weight decay and a warmup/hold/cosine LR schedule."""

import math

import numpy as np

__all__ = ["init_adamw", "adamw_step", "lr_cosine"]


def init_adamw(params, betas=(0.9, 0.95), eps=1e-8, weight_decay=1e-2):
    """Create optimizer state for a flat name -> Tensor parameter dict."""
    state = {
        "betas": (float(betas[0]), float(betas[1])),
        "eps": float(eps),
        "weight_decay": float(weight_decay),
        "step": 0,
        "m": {k: np.zeros(t.shape, dtype=np.float32) for k, t in params.items()},
        "v": {k: np.zeros(t.shape, dtype=np.float32) for k, t in params.items()},
    }
    return state


def adamw_step(params, state, lr):
    """One in-place AdamW update from the .grad fields of params.

    Decay is decoupled: p <- p - lr*wd*p, applied independently of the
    moment-based step. Parameters whose gradient is missing are left
    untouched; a non-finite gradient skips the whole update (moments and
    step counter included) and is reported.

    Returns a report dict with the step index actually applied and the
    names of any parameters with non-finite gradients.
    """
    b1, b2 = state["betas"]
    eps = state["eps"]
    wd = state["weight_decay"]
    lr = float(lr)

    bad = [k for k, t in params.items()
           if t.grad is not None and not np.all(np.isfinite(t.grad))]
    if bad:
        return {"applied": False, "step": state["step"], "skipped": sorted(bad)}

    state["step"] += 1
    k_step = state["step"]
    bc1 = 1.0 - b1 ** k_step
    bc2 = 1.0 - b2 ** k_step
    for name, t in params.items():
        g = t.grad
        if g is None:
            continue
        g = g.astype(np.float32, copy=False)
        m = state["m"][name]
        v = state["v"][name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        upd = m_hat / (np.sqrt(v_hat) + eps)
        t.data -= (lr * upd).astype(t.data.dtype, copy=False)
        if wd != 0.0:
            t.data -= (lr * wd) * t.data
    return {"applied": True, "step": k_step, "skipped": []}


def lr_cosine(epoch, warmup, total, min_lr, max_lr, hold_until=0):
    """Learning rate at integer epoch: linear warmup, optional hold, cosine tail.

    Warmup ramps linearly so that lr(warmup) = max_lr (epoch 0 already
    takes one warmup-sized step). The cosine segment starts at
    max(warmup, hold_until) and would hit min_lr at epoch = total, so the
    final training epoch total - 1 sits one grid point above min_lr.
    """
    epoch = int(epoch)
    if not (0 <= epoch < total):
        raise ValueError(f"epoch {epoch} outside [0, {total})")
    if warmup < 0 or hold_until < 0 or total <= 0:
        raise ValueError("schedule lengths must be nonnegative, total positive")
    if min_lr > max_lr:
        raise ValueError("min_lr exceeds max_lr")
    if epoch < warmup:
        return max_lr * (epoch + 1) / warmup
    start = max(warmup, hold_until)
    if epoch <= start:
        return max_lr
    span = total - start
    frac = (epoch - start) / span
    return min_lr + 0.5 * (max_lr - min_lr) * (1.0 + math.cos(math.pi * frac))
