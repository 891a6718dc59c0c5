"""Per-time-step variational solvers with a prediction prior.

Each solver minimizes a data term 1/2 ||A x - psi||^2 plus a penalty that
anchors x to a prior image (the temporal prediction):

    l2_tcr          + alpha/2 ||x - prior||^2      (gradient iteration)
    l1_tcr_fista    + alpha ||x - prior||_1        (FISTA)
    l1_tv_tcr_pdhg  + alpha ||x - prior||_1 + beta ||grad x||_1   (PDHG)

All of them return (solution, SolveReport).  Operators follow the
forward/adjoint protocol of geometry.LinearOperator; images may have any
shape as long as it matches the operator.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SolveReport:
    """Trace of one solver run.

    discrepancies[i] is ||A x_i - psi|| for the kept iterates x_0..x_n, so
    its length is iterations + 1.  objectives traces the full objective for
    solvers that track it (FISTA, PDHG).
    """

    iterations: int = 0
    stop_reason: str = "max_iter"
    discrepancies: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    objective: float = float("nan")


def soft_threshold(v, lam):
    """Proximal map of lam * ||.||_1: sign(v) * max(|v| - lam, 0)."""
    if lam < 0:
        raise ValueError(f"threshold must be >= 0, got {lam}")
    v = np.asarray(v)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def prox_shifted_l1(v, lam, anchor):
    """Proximal map of lam * ||x - anchor||_1: shift, shrink, shift back."""
    v = np.asarray(v)
    anchor = np.asarray(anchor)
    if v.shape != anchor.shape:
        raise ValueError(f"shape mismatch: v {v.shape} vs anchor {anchor.shape}")
    if lam == 0:
        # exact identity; keeps alpha = 0 runs bit-identical to prior-free ones
        return v.copy() if isinstance(v, np.ndarray) else v
    return anchor + soft_threshold(v - anchor, lam)


def _discrepancy(op, x, psi):
    return float(np.linalg.norm((op.forward(x) - psi).ravel()))


def l2_tcr(op, psi, prior, alpha, x0=None, max_iter=19, tau=None):
    """Gradient iteration on 1/2||Ax - psi||^2 + alpha/2 ||x - prior||^2.

    Step size defaults to 1 / (1.01 * ||A^T A||).  Stops at max_iter or as
    soon as the data discrepancy would increase, returning the last iterate
    on the non-increasing run.  alpha = 0 gives the plain Landweber
    iteration with the early-stopping rule acting as regularization.
    """
    psi = np.asarray(psi, dtype=np.float64)
    prior = np.asarray(prior, dtype=np.float64)
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if tau is None:
        tau = 1.0 / (1.01 * op.norm_ata())
    x = (np.zeros(op.in_shape) if x0 is None
         else np.array(x0, dtype=np.float64, copy=True))
    if x.shape != tuple(op.in_shape):
        raise ValueError(f"x0 shape {x.shape} does not match {op.in_shape}")

    report = SolveReport(stop_reason="max_iter")
    d = _discrepancy(op, x, psi)
    report.discrepancies.append(d)
    for _ in range(max_iter):
        grad = op.adjoint(op.forward(x) - psi)
        if alpha > 0:
            grad = grad + alpha * (x - prior)
        x_new = x - tau * grad
        d_new = _discrepancy(op, x_new, psi)
        if d_new > d:
            report.stop_reason = "discrepancy_increase"
            break
        x = x_new
        d = d_new
        report.discrepancies.append(d)
        report.iterations += 1
    report.objective = 0.5 * d * d
    if alpha > 0:
        report.objective += 0.5 * alpha * float(np.sum((x - prior) ** 2))
    return x, report


def l1_tcr_fista(op, psi, prior, alpha, x0=None, max_iter=200):
    """FISTA on 1/2||Ax - psi||^2 + alpha ||x - prior||_1.

    Fixed iteration budget, step 1 / (1.01 * ||A^T A||), momentum
    h_1 = 1, h_{k+1} = (1 + sqrt(1 + 4 h_k^2)) / 2,
    y_{k+1} = x_k + (h_k - 1)/h_{k+1} * (x_k - x_{k-1}).
    """
    psi = np.asarray(psi, dtype=np.float64)
    prior = np.asarray(prior, dtype=np.float64)
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    lip = 1.01 * op.norm_ata()
    step = 1.0 / lip
    lam = alpha * step

    x = (np.zeros(op.in_shape) if x0 is None
         else np.array(x0, dtype=np.float64, copy=True))
    if x.shape != tuple(op.in_shape):
        raise ValueError(f"x0 shape {x.shape} does not match {op.in_shape}")

    def objective(z):
        r = 0.5 * float(np.sum((op.forward(z) - psi) ** 2))
        return r + alpha * float(np.sum(np.abs(z - prior)))

    report = SolveReport(stop_reason="max_iter")
    report.discrepancies.append(_discrepancy(op, x, psi))
    report.objectives.append(objective(x))
    x_prev = x
    y = x
    h = 1.0
    for _ in range(max_iter):
        grad = op.adjoint(op.forward(y) - psi)
        x_new = prox_shifted_l1(y - step * grad, lam, prior)
        h_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * h * h))
        y = x_new + ((h - 1.0) / h_new) * (x_new - x_prev)
        x_prev = x_new
        x = x_new
        h = h_new
        report.discrepancies.append(_discrepancy(op, x, psi))
        report.objectives.append(objective(x))
        report.iterations += 1
    report.objective = report.objectives[-1]
    return x, report


def grad2d(x):
    """Forward differences with replicate (Neumann) boundary: last row/col 0.

    Returns (d_rows, d_cols).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"grad2d expects a 2-D array, got shape {x.shape}")
    gr = np.zeros_like(x)
    gc = np.zeros_like(x)
    gr[:-1, :] = x[1:, :] - x[:-1, :]
    gc[:, :-1] = x[:, 1:] - x[:, :-1]
    return gr, gc


def div2d(gr, gc):
    """Exact negative adjoint of grad2d: <grad x, p> == -<x, div p>."""
    gr = np.asarray(gr, dtype=np.float64)
    gc = np.asarray(gc, dtype=np.float64)
    if gr.shape != gc.shape or gr.ndim != 2:
        raise ValueError(f"component shape mismatch: {gr.shape} vs {gc.shape}")
    d = np.zeros_like(gr)
    d[:-1, :] += gr[:-1, :]
    d[1:, :] -= gr[:-1, :]
    d[:, :-1] += gc[:, :-1]
    d[:, 1:] -= gc[:, :-1]
    return d


def l1_tv_tcr_pdhg(op, psi, prior, alpha, beta, x0=None, max_iter=400):
    """PDHG on 1/2||Ax - psi||^2 + beta||grad x||_1 + alpha||x - prior||_1.

    The linear map K = (A, grad) is composed into the dual block:
      y1 <- (y1 + sigma (A xbar - psi)) / (1 + sigma)       data dual
      y2 <- clip(y2 + sigma grad xbar, -beta, beta)         TV dual
      x  <- prox_shifted_l1(x - tau (A^T y1 - div y2), tau alpha, prior)
      xbar = 2 x_new - x
    with tau = sigma = 0.99 / ||K||, ||K||^2 <= 1.01 ||A^T A|| + 8.
    """
    psi = np.asarray(psi, dtype=np.float64)
    prior = np.asarray(prior, dtype=np.float64)
    if alpha < 0 or beta < 0:
        raise ValueError(f"alpha and beta must be >= 0, got {(alpha, beta)}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if len(op.in_shape) != 2:
        raise ValueError(f"TV solver needs 2-D images, got shape {op.in_shape}")

    norm_k = np.sqrt(1.01 * op.norm_ata() + 8.0)
    tau = sigma = 0.99 / norm_k

    x = (np.zeros(op.in_shape) if x0 is None
         else np.array(x0, dtype=np.float64, copy=True))
    if x.shape != tuple(op.in_shape):
        raise ValueError(f"x0 shape {x.shape} does not match {op.in_shape}")
    xbar = x.copy()
    y1 = np.zeros(op.out_shape)
    y2r = np.zeros(op.in_shape)
    y2c = np.zeros(op.in_shape)

    def objective(z):
        r = 0.5 * float(np.sum((op.forward(z) - psi) ** 2))
        gr, gc = grad2d(z)
        r += beta * float(np.sum(np.abs(gr)) + np.sum(np.abs(gc)))
        r += alpha * float(np.sum(np.abs(z - prior)))
        return r

    report = SolveReport(stop_reason="max_iter")
    report.discrepancies.append(_discrepancy(op, x, psi))
    report.objectives.append(objective(x))
    for _ in range(max_iter):
        y1 = (y1 + sigma * (op.forward(xbar) - psi)) / (1.0 + sigma)
        gr, gc = grad2d(xbar)
        y2r = np.clip(y2r + sigma * gr, -beta, beta)
        y2c = np.clip(y2c + sigma * gc, -beta, beta)
        x_new = prox_shifted_l1(
            x - tau * (op.adjoint(y1) - div2d(y2r, y2c)), tau * alpha, prior)
        xbar = 2.0 * x_new - x
        x = x_new
        report.discrepancies.append(_discrepancy(op, x, psi))
        report.objectives.append(objective(x))
        report.iterations += 1
    report.objective = report.objectives[-1]
    return x, report
