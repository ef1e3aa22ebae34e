"""Gradient/loss correctness and the curvature constants."""

import math

import numpy as np
import pytest

from asyncsgd import problems, rng
from asyncsgd.data import DataSet
from asyncsgd.problems import (Problem, grad, loss, objective, full_gradient,
                               variance_constant, smoothness_constants,
                               find_optimum)


def small_dataset(kind: str, M: int = 40, d_feat: int = 3,
                  seed: int = 11) -> DataSet:
    gen = rng.stream(seed, "test-problems")
    X = gen.normal(size=(M, d_feat))
    y = (X @ gen.normal(size=d_feat) + 0.2 * gen.normal(size=M) > 0)
    return DataSet(X=X, y=y.astype(np.int8), name=kind)


PROBLEMS = {
    "quadratic": (Problem.quadratic_mean(3), 3),
    "plain": (Problem.logistic_plain(3), 4),
    "ridge": (Problem.logistic_ridge(3, lam=0.1), 4),
}


# ---------------------------------------------------------------------------
# pointwise examples
# ---------------------------------------------------------------------------

def test_grad_quadratic_is_w_minus_xi():
    p = Problem.quadratic_mean(2)
    g = grad(p, np.zeros(2), np.array([1.0, 2.0]), 0.0)
    assert np.array_equal(g, np.array([-1.0, -2.0]))


def test_grad_logistic_at_zero():
    x = np.array([2.0, -1.0, 0.5])
    p = Problem.logistic_plain(3)
    g = grad(p, np.zeros(4), x, 1.0)
    assert np.allclose(g, -0.5 * np.append(x, 1.0))
    pr = Problem.logistic_ridge(3, lam=0.1)
    g0 = grad(pr, np.zeros(4), x, 0.0)
    assert np.allclose(g0, 0.5 * np.append(x, 1.0))  # lam*w vanishes at 0


def test_loss_at_zero_is_ln2():
    x = np.array([3.0, -2.0])
    assert loss(Problem.logistic_plain(2), np.zeros(3), x, 1.0) == \
        pytest.approx(math.log(2.0))
    assert loss(Problem.logistic_ridge(2, lam=1.0), np.zeros(3), x, 0.0) == \
        pytest.approx(math.log(2.0))


def test_grad_dimension_mismatch():
    with pytest.raises(ValueError):
        grad(Problem.quadratic_mean(3), np.zeros(3), np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        grad(Problem.logistic_plain(3), np.zeros(4), np.zeros(4), 0.0)


def test_quadratic_objective_is_half_variance():
    X = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 3.0]])
    ds = DataSet(X=X, y=np.zeros(3, dtype=np.int8))
    p = Problem.quadratic_mean(2)
    info = find_optimum(p, ds, budget=0, seed=0)
    assert np.allclose(info.w_star, [1.0, 1.0])
    assert info.F_star == pytest.approx(4.0 / 3.0)
    assert info.N == pytest.approx(16.0 / 3.0)
    assert info.exact


def test_objective_matches_mean_loss():
    ds = small_dataset("ridge")
    p = Problem.logistic_ridge(3, lam=0.05)
    w = rng.stream(3, "test-problems").normal(size=4)
    mean = np.mean([loss(p, w, *ds.sample(i)) for i in range(len(ds))])
    assert objective(p, w, ds) == pytest.approx(mean, rel=1e-12)


def test_full_gradient_matches_mean_grad():
    ds = small_dataset("plain")
    p = Problem.logistic_plain(3)
    w = rng.stream(4, "test-problems").normal(size=4)
    mean = np.mean([grad(p, w, *ds.sample(i)) for i in range(len(ds))], axis=0)
    assert np.allclose(full_gradient(p, w, ds), mean, rtol=1e-12)


def test_variance_constant_definition():
    ds = small_dataset("quadratic")
    p = Problem.quadratic_mean(3)
    w = np.array([0.5, -1.0, 2.0])
    manual = 2.0 * np.mean([np.sum(grad(p, w, *ds.sample(i)) ** 2)
                            for i in range(len(ds))])
    assert variance_constant(p, w, ds) == pytest.approx(manual, rel=1e-12)


def test_smoothness_constants():
    ds = small_dataset("ridge")
    p = Problem.logistic_ridge(3, lam=0.01)
    mu, L = smoothness_constants(p, ds)
    assert mu == 0.01
    max_sq = max(float(x @ x) + 1.0 for x in ds.X)
    assert L == pytest.approx(0.25 * max_sq + 0.01)
    assert smoothness_constants(Problem.quadratic_mean(3), ds) == (1.0, 1.0)
    assert smoothness_constants(Problem.logistic_plain(3), ds)[0] == 0.0


# ---------------------------------------------------------------------------
# analytic properties on random pairs
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_gradient_finite_differences(name):
    p, dim = PROBLEMS[name]
    gen = rng.stream(17, "fd-" + name)
    for _ in range(100):
        w = gen.normal(size=dim)
        x = gen.normal(size=3)
        y = float(gen.integers(0, 2))
        g = grad(p, w, x, y)
        for j in range(dim):
            e = np.zeros(dim)
            e[j] = 1e-6
            fd = (loss(p, w + e, x, y) - loss(p, w - e, x, y)) / 2e-6
            assert g[j] == pytest.approx(fd, rel=1e-4, abs=1e-7)


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_per_sample_convexity(name):
    p, dim = PROBLEMS[name]
    gen = rng.stream(23, "cvx-" + name)
    for _ in range(100):
        w, w2 = gen.normal(size=dim), gen.normal(size=dim)
        x = gen.normal(size=3)
        y = float(gen.integers(0, 2))
        lhs = loss(p, w, x, y) - loss(p, w2, x, y)
        rhs = float(grad(p, w2, x, y) @ (w - w2))
        assert lhs >= rhs - 1e-9


@pytest.mark.parametrize("name", ["quadratic", "ridge"])
def test_strong_convexity_of_objective(name):
    p, dim = PROBLEMS[name]
    ds = small_dataset(name)
    gen = rng.stream(29, "scvx-" + name)
    for _ in range(100):
        w, w2 = gen.normal(size=dim), gen.normal(size=dim)
        lhs = objective(p, w, ds) - objective(p, w2, ds)
        rhs = float(full_gradient(p, w2, ds) @ (w - w2)) \
            + 0.5 * p.mu * float((w - w2) @ (w - w2))
        assert lhs >= rhs - 1e-9


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_per_sample_smoothness(name):
    p, dim = PROBLEMS[name]
    gen = rng.stream(31, "smooth-" + name)
    for _ in range(100):
        w, w2 = gen.normal(size=dim), gen.normal(size=dim)
        x = gen.normal(size=3)
        y = float(gen.integers(0, 2))
        # per-sample L for logistic: ||[x;1]||^2/4 + lam
        if p.kind == problems.QUADRATIC_MEAN:
            L = 1.0
        else:
            L = 0.25 * (float(x @ x) + 1.0) + p.lam
        dg = np.linalg.norm(grad(p, w, x, y) - grad(p, w2, x, y))
        assert dg <= L * np.linalg.norm(w - w2) * (1.0 + 1e-9)


def test_quadratic_optimum_gradient_is_zero():
    ds = small_dataset("quadratic", M=200)
    p = Problem.quadratic_mean(3)
    info = find_optimum(p, ds, budget=0, seed=0)
    g = full_gradient(p, info.w_star, ds)
    assert np.max(np.abs(g)) < 1e-12 * len(ds)


# ---------------------------------------------------------------------------
# find_optimum for logistic problems
# ---------------------------------------------------------------------------

def test_find_optimum_separable_ridge():
    X = np.array([[1.0, 1.0], [2.0, 1.5], [-1.0, -1.0], [-2.0, -0.5]])
    y = np.array([1, 1, 0, 0], dtype=np.int8)
    ds = DataSet(X=X, y=y)
    p = Problem.logistic_ridge(2, lam=0.25)
    info = find_optimum(p, ds, budget=400000, seed=5)
    assert not info.degenerate
    assert np.all(np.isfinite(info.w_star))
    assert np.linalg.norm(full_gradient(p, info.w_star, ds)) < 1e-4


def test_find_optimum_zero_budget_is_degenerate():
    ds = small_dataset("plain")
    p = Problem.logistic_plain(3)
    info = find_optimum(p, ds, budget=0, seed=0)
    assert info.degenerate
    assert np.array_equal(info.w_star, np.zeros(4))
    assert info.F_star == pytest.approx(objective(p, np.zeros(4), ds))
