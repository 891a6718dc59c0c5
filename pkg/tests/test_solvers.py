"""Variational solver oracles: closed forms, descent, cross-checks."""

import numpy as np
import pytest

from tcrtomo.geometry import MatrixOperator, operator_for_angles
from tcrtomo.solvers import (div2d, grad2d, l1_tcr_fista, l1_tv_tcr_pdhg,
                             l2_tcr, prox_shifted_l1, soft_threshold)


def scalar_op(a=1.0):
    return MatrixOperator(np.array([[a]]))


def small_radon(size=32, n_angles=6, n_offsets=40, seed=0):
    angles = np.arange(n_angles) * np.pi / n_angles + 0.05
    offsets = np.linspace(-1, 1, n_offsets)
    return operator_for_angles(angles, offsets, size)


def random_image(size=32, seed=0):
    rng = np.random.default_rng(seed)
    img = rng.uniform(size=(size, size))
    h = 2.0 / size
    c = -1.0 + (np.arange(size) + 0.5) * h
    xx, yy = np.meshgrid(c, c, indexing="xy")
    img[(xx ** 2 + yy ** 2) > 1.0] = 0.0
    return img


# ------------------------------------------------------------- prox maps

def test_soft_threshold_values():
    assert soft_threshold(2.0, 0.5) == pytest.approx(1.5, abs=1e-12)
    assert soft_threshold(-2.0, 0.5) == pytest.approx(-1.5, abs=1e-12)
    assert soft_threshold(0.3, 0.5) == 0.0
    assert soft_threshold(-0.3, 0.5) == 0.0


def test_soft_threshold_is_prox_of_l1():
    # brute-force 1-D oracle: argmin_x lam|x| + 0.5 (x - v)^2
    grid = np.linspace(-4, 4, 160001)
    for v in [2.0, -1.3, 0.2, 0.0]:
        for lam in [0.0, 0.5, 1.7]:
            best = grid[np.argmin(lam * np.abs(grid) + 0.5 * (grid - v) ** 2)]
            assert soft_threshold(v, lam) == pytest.approx(best, abs=1e-4)


def test_soft_threshold_validation():
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


def test_prox_shifted_l1_shift_identity():
    v = np.array([2.0, -0.5, 0.9])
    a = np.array([1.0, 1.0, 1.0])
    got = prox_shifted_l1(v, 0.5, a)
    expected = a + soft_threshold(v - a, 0.5)
    assert np.array_equal(got, expected)


def test_prox_shifted_l1_zero_anchor_is_soft_threshold():
    v = np.array([2.0, -2.0, 0.1])
    assert np.array_equal(prox_shifted_l1(v, 0.5, np.zeros(3)),
                          soft_threshold(v, 0.5))


def test_prox_shifted_l1_zero_lambda_exact_identity():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(50)
    a = rng.standard_normal(50)
    assert np.array_equal(prox_shifted_l1(v, 0.0, a), v)


def test_prox_shifted_l1_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        prox_shifted_l1(np.zeros(3), 0.5, np.zeros(4))


def test_prox_shifted_l1_brute_force_oracle():
    # argmin_x lam|x - a| + 0.5(x - v)^2 on a fine grid
    grid = np.linspace(-4, 4, 160001)
    for v, a, lam in [(2.0, 1.0, 0.5), (-1.0, 0.5, 0.7), (0.4, 0.5, 0.05)]:
        best = grid[np.argmin(lam * np.abs(grid - a) + 0.5 * (grid - v) ** 2)]
        assert prox_shifted_l1(np.array([v]), lam, np.array([a]))[0] == \
            pytest.approx(best, abs=1e-4)


# ------------------------------------------------------------------ l2_tcr

def test_l2_identity_stub_fixed_point():
    # A = I, psi = 2, prior = 0, alpha = 1 -> x* = (psi + alpha prior)/(1+alpha) = 1
    op = scalar_op()
    x, rep = l2_tcr(op, np.array([2.0]), np.array([0.0]), alpha=1.0,
                    x0=np.array([0.0]), tau=0.5)
    assert abs(x[0] - 1.0) < 1e-3
    assert rep.iterations <= 19


def test_l2_general_scalar_fixed_point():
    # closed form x* = (a psi + alpha prior) / (a^2 + alpha) for A = a I
    op = scalar_op(2.0)
    psi, prior, alpha = np.array([3.0]), np.array([0.5]), 0.8
    x, _ = l2_tcr(op, psi, prior, alpha, x0=prior.copy(),
                  tau=1.0 / (4.0 + alpha), max_iter=500)
    assert x[0] == pytest.approx((2.0 * 3.0 + 0.8 * 0.5) / (4.0 + 0.8), abs=1e-6)


def test_l2_objective_descent_and_report():
    op = small_radon()
    img = random_image(seed=1)
    psi = op.forward(img)
    prior = random_image(seed=2)
    x, rep = l2_tcr(op, psi, prior, alpha=0.1, x0=prior)

    def objective(z):
        return (0.5 * np.sum((op.forward(z) - psi) ** 2)
                + 0.05 * np.sum((z - prior) ** 2))

    assert len(rep.discrepancies) == rep.iterations + 1
    assert rep.stop_reason in ("max_iter", "discrepancy_increase")
    # kept discrepancies never increase
    assert np.all(np.diff(rep.discrepancies) <= 1e-12)


def test_l2_landweber_alpha_zero_early_stop():
    # noisy data: discrepancy rule must kick in at or before max_iter
    op = small_radon()
    img = random_image(seed=3)
    rng = np.random.default_rng(4)
    psi = op.forward(img) + 0.05 * rng.standard_normal(op.out_shape)
    x, rep = l2_tcr(op, psi, np.zeros(op.in_shape), alpha=0.0)
    assert rep.iterations <= 19
    assert np.all(np.diff(rep.discrepancies) <= 0)


def test_l2_validation():
    op = scalar_op()
    with pytest.raises(ValueError):
        l2_tcr(op, np.array([1.0]), np.array([0.0]), alpha=-1.0)
    with pytest.raises(ValueError):
        l2_tcr(op, np.array([1.0]), np.array([0.0]), alpha=0.0,
               x0=np.zeros(3))


# ------------------------------------------------------------------- FISTA

def test_fista_momentum_sequence():
    # h1 = 1, h2 = (1 + sqrt 5)/2; exposed indirectly: 2 iterations on an
    # exactly solvable problem still land on the fixed point
    h1 = 1.0
    h2 = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * h1 * h1))
    assert h2 == pytest.approx((1.0 + np.sqrt(5.0)) / 2.0, abs=1e-15)


def test_fista_scalar_zero_prior():
    # A = I, psi = 2, prior = 0, alpha = 0.5 -> x* = soft(2, 0.5) = 1.5
    op = scalar_op()
    x, rep = l1_tcr_fista(op, np.array([2.0]), np.array([0.0]), alpha=0.5,
                          max_iter=200)
    assert x[0] == pytest.approx(1.5, abs=1e-6)
    assert rep.iterations == 200
    assert len(rep.discrepancies) == 201


def test_fista_scalar_shifted_prior():
    # prior = 1: argmin 0.5(x-2)^2 + 0.5|x-1| -> x = 1.5
    op = scalar_op()
    x, _ = l1_tcr_fista(op, np.array([2.0]), np.array([1.0]), alpha=0.5)
    assert x[0] == pytest.approx(1.5, abs=1e-6)


def test_fista_strong_prior_pins_solution():
    # large alpha: solution sticks to the prior where data pull is weaker
    op = scalar_op()
    x, _ = l1_tcr_fista(op, np.array([2.0]), np.array([1.8]), alpha=5.0)
    assert x[0] == pytest.approx(1.8, abs=1e-6)


def test_fista_objective_tail_monotone():
    op = small_radon()
    img = random_image(seed=5)
    psi = op.forward(img)
    prior = img + 0.1 * np.random.default_rng(6).standard_normal(img.shape)
    _, rep = l1_tcr_fista(op, psi, prior, alpha=0.05)
    obj = np.array(rep.objectives)
    # FISTA is not monotone step to step; compare 20-iteration window means
    w = 20
    means = [obj[i:i + w].mean() for i in range(0, len(obj) - w, w)]
    assert all(means[i + 1] <= means[i] + 1e-9 for i in range(len(means) - 1))


# -------------------------------------------------------------- grad / div

def test_grad2d_constant_is_zero():
    gr, gc = grad2d(np.full((6, 7), 3.2))
    assert np.all(gr == 0) and np.all(gc == 0)


def test_grad2d_ramp():
    x = np.arange(5)[None, :] * np.ones((4, 1))
    gr, gc = grad2d(x)
    assert np.all(gr == 0)
    assert np.all(gc[:, :-1] == 1) and np.all(gc[:, -1] == 0)


def test_div2d_exact_negative_adjoint():
    rng = np.random.default_rng(7)
    for shape in [(8, 8), (5, 9)]:
        x = rng.standard_normal(shape)
        pr = rng.standard_normal(shape)
        pc = rng.standard_normal(shape)
        gr, gc = grad2d(x)
        lhs = np.sum(gr * pr) + np.sum(gc * pc)
        rhs = -np.sum(x * div2d(pr, pc))
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_grad_operator_norm_bound():
    # power iteration on K = (Id, grad): squared norm <= 9
    rng = np.random.default_rng(8)
    x = rng.standard_normal((16, 16))
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(200):
        gr, gc = grad2d(x)
        y = x - div2d(gr, gc)  # (Id + grad^T grad) x
        lam = float(np.vdot(x, y))
        x = y / np.linalg.norm(y)
    assert lam <= 9.0 + 1e-9


# -------------------------------------------------------------------- PDHG

def test_pdhg_beta_zero_matches_fista_objective():
    op = small_radon()
    img = random_image(seed=9)
    psi = op.forward(img)
    prior = img + 0.05 * np.random.default_rng(10).standard_normal(img.shape)
    alpha = 0.1
    x_f, rep_f = l1_tcr_fista(op, psi, prior, alpha, max_iter=400)
    x_p, rep_p = l1_tv_tcr_pdhg(op, psi, prior, alpha, beta=0.0, max_iter=800)

    def objective(z):
        return (0.5 * np.sum((op.forward(z) - psi) ** 2)
                + alpha * np.sum(np.abs(z - prior)))

    best = min(objective(x_f), objective(x_p))
    assert abs(objective(x_p) - objective(x_f)) <= 1e-3 * max(1.0, best)


def test_pdhg_tv_flattens_noise():
    op = small_radon()
    img = np.zeros((32, 32))
    img[10:22, 12:20] = 0.8
    rng = np.random.default_rng(11)
    psi = op.forward(img) + 0.02 * rng.standard_normal(op.out_shape)
    prior = np.zeros_like(img)
    x_no_tv, _ = l1_tv_tcr_pdhg(op, psi, prior, alpha=0.0, beta=0.0,
                                max_iter=300)
    x_tv, _ = l1_tv_tcr_pdhg(op, psi, prior, alpha=0.0, beta=0.05,
                             max_iter=300)
    gr, gc = grad2d(x_tv)
    gr0, gc0 = grad2d(x_no_tv)
    tv = np.sum(np.abs(gr)) + np.sum(np.abs(gc))
    tv0 = np.sum(np.abs(gr0)) + np.sum(np.abs(gc0))
    assert tv < tv0


def test_pdhg_objective_window_monotone():
    op = small_radon()
    img = random_image(seed=12)
    psi = op.forward(img)
    prior = np.zeros_like(img)
    _, rep = l1_tv_tcr_pdhg(op, psi, prior, alpha=0.02, beta=0.02,
                            max_iter=300)
    obj = np.array(rep.objectives)
    w = 20
    means = [obj[i:i + w].mean() for i in range(0, len(obj) - w, w)]
    assert all(means[i + 1] <= means[i] + 1e-9 for i in range(len(means) - 1))


def test_pdhg_validation():
    op = small_radon()
    with pytest.raises(ValueError):
        l1_tv_tcr_pdhg(op, np.zeros(op.out_shape), np.zeros(op.in_shape),
                       alpha=-0.1, beta=0.0)
    with pytest.raises(ValueError):
        l1_tv_tcr_pdhg(op, np.zeros(op.out_shape), np.zeros(op.in_shape),
                       alpha=0.0, beta=-0.1)
