"""Objective functions, per-sample gradients and curvature constants.

Three problem kinds are supported:

* ``logistic_plain`` -- binary logistic regression (plain convex),
* ``logistic_ridge`` -- the same plus (lambda/2)||w||^2 (strongly convex),
* ``quadratic_mean`` -- f(w; xi) = 0.5 ||w - xi||^2, a synthetic problem
  with exact optimum (the sample mean), mu = L = 1 and exact variance
  constant N; used by the convergence-rate acceptance tests.

The per-sample loss f(w; xi) is normalized so the full objective is the
mean over the data set; the ridge term is part of every per-sample loss so
that gradients and finite differences agree sample by sample.  For logistic
problems the model vector is w = (w_bar, bias): the feature vector is
implicitly augmented with a trailing 1, and the regularizer applies to the
full concatenated vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

LOGISTIC_PLAIN = "logistic_plain"
LOGISTIC_RIDGE = "logistic_ridge"
QUADRATIC_MEAN = "quadratic_mean"

_SIGMA_CLAMP = 1e-12  # loss only; gradients need no clamp


@dataclass(frozen=True)
class Problem:
    kind: str
    dim: int           # model dimension (d_feat + 1 for logistic)
    mu: float
    L: float
    lam: float = 0.0

    @staticmethod
    def logistic_plain(d_feat: int, L: float = 1.0) -> "Problem":
        return Problem(kind=LOGISTIC_PLAIN, dim=d_feat + 1, mu=0.0, L=L)

    @staticmethod
    def logistic_ridge(d_feat: int, lam: float, L: Optional[float] = None) -> "Problem":
        if lam <= 0:
            raise ValueError("ridge problems need lambda > 0")
        return Problem(kind=LOGISTIC_RIDGE, dim=d_feat + 1, mu=lam,
                       L=L if L is not None else 1.0 + lam, lam=lam)

    @staticmethod
    def quadratic_mean(dim: int) -> "Problem":
        return Problem(kind=QUADRATIC_MEAN, dim=dim, mu=1.0, L=1.0)


@dataclass
class OptimumInfo:
    """Optimum location w*, value F* and the variance constant N at w*."""

    w_star: np.ndarray
    F_star: float
    N: float
    exact: bool = False       # closed form (quadratic_mean) vs SGD estimate
    degenerate: bool = False  # budget 0: this is just the initial point

    def to_dict(self) -> dict:
        return {"w_star": self.w_star.tolist(), "F_star": self.F_star,
                "N": self.N, "exact": self.exact, "degenerate": self.degenerate}


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


def grad(p: Problem, w: np.ndarray, x: np.ndarray, y: float) -> np.ndarray:
    """Per-sample gradient of f(w; xi)."""
    if p.kind == QUADRATIC_MEAN:
        if x.shape[0] != p.dim:
            raise ValueError(f"feature dim {x.shape[0]} != model dim {p.dim}")
        return w - x
    if x.shape[0] + 1 != p.dim:
        raise ValueError(f"feature dim {x.shape[0]} + 1 != model dim {p.dim}")
    z = float(w[:-1] @ x + w[-1])
    sig = _sigmoid(z)
    g = np.empty(p.dim)
    g[:-1] = (sig - y) * x
    g[-1] = sig - y
    if p.kind == LOGISTIC_RIDGE:
        g += p.lam * w
    return g


def loss(p: Problem, w: np.ndarray, x: np.ndarray, y: float) -> float:
    """Per-sample loss f(w; xi)."""
    if p.kind == QUADRATIC_MEAN:
        d = w - x
        return 0.5 * float(d @ d)
    z = float(w[:-1] @ x + w[-1])
    sig = min(max(_sigmoid(z), _SIGMA_CLAMP), 1.0 - _SIGMA_CLAMP)
    val = -(y * np.log(sig) + (1.0 - y) * np.log(1.0 - sig))
    if p.kind == LOGISTIC_RIDGE:
        val += 0.5 * p.lam * float(w @ w)
    return float(val)


def objective(p: Problem, w: np.ndarray, dataset) -> float:
    """Mean per-sample loss over the data set (the F(w) form).

    Vectorized; equivalent to the mean of loss() over all samples.
    """
    X, y = dataset.X, dataset.y
    if p.kind == QUADRATIC_MEAN:
        diff = w[None, :] - X
        return float(0.5 * np.mean(np.einsum("ij,ij->i", diff, diff)))
    z = X @ w[:-1] + w[-1]
    sig = np.clip(1.0 / (1.0 + np.exp(-z)), _SIGMA_CLAMP, 1.0 - _SIGMA_CLAMP)
    val = float(np.mean(-(y * np.log(sig) + (1.0 - y) * np.log(1.0 - sig))))
    if p.kind == LOGISTIC_RIDGE:
        val += 0.5 * p.lam * float(w @ w)
    return val


def full_gradient(p: Problem, w: np.ndarray, dataset) -> np.ndarray:
    """Gradient of the mean objective F."""
    X, y = dataset.X, dataset.y
    if p.kind == QUADRATIC_MEAN:
        return w - X.mean(axis=0)
    z = X @ w[:-1] + w[-1]
    sig = 1.0 / (1.0 + np.exp(-z))
    r = sig - y
    g = np.empty(p.dim)
    g[:-1] = X.T @ r / len(y)
    g[-1] = float(np.mean(r))
    if p.kind == LOGISTIC_RIDGE:
        g += p.lam * w
    return g


def variance_constant(p: Problem, w: np.ndarray, dataset) -> float:
    """N = 2 * mean_i ||grad f(w; xi_i)||^2 over the data set."""
    X, y = dataset.X, dataset.y
    if p.kind == QUADRATIC_MEAN:
        diff = w[None, :] - X
        return 2.0 * float(np.mean(np.einsum("ij,ij->i", diff, diff)))
    z = X @ w[:-1] + w[-1]
    sig = 1.0 / (1.0 + np.exp(-z))
    r = sig - y
    G = np.concatenate([X * r[:, None], r[:, None]], axis=1)
    if p.kind == LOGISTIC_RIDGE:
        G = G + p.lam * w[None, :]
    return 2.0 * float(np.mean(np.einsum("ij,ij->i", G, G)))


def smoothness_constants(p: Problem, dataset) -> tuple:
    """(mu, L) bounds: logistic L = max ||[x;1]||^2 / 4 + lambda."""
    if p.kind == QUADRATIC_MEAN:
        return 1.0, 1.0
    X = dataset.X
    max_sq = float(np.max(np.einsum("ij,ij->i", X, X))) + 1.0  # + bias coord
    L = 0.25 * max_sq + p.lam
    return p.lam, L


def find_optimum(p: Problem, dataset, budget: int, seed: int,
                 eta0: Optional[float] = None,
                 beta: Optional[float] = None) -> OptimumInfo:
    """Estimate (or compute exactly) the optimum and the constant N.

    quadratic_mean has the closed form w* = sample mean.  Logistic problems
    run the serial reference SGD with inverse-t diminishing steps for
    `budget` iterations from w = 0.
    """
    if p.kind == QUADRATIC_MEAN:
        w_star = dataset.X.mean(axis=0)
        return OptimumInfo(w_star=w_star, F_star=objective(p, w_star, dataset),
                           N=variance_constant(p, w_star, dataset), exact=True)

    w0 = np.zeros(p.dim)
    if budget <= 0:
        return OptimumInfo(w_star=w0, F_star=objective(p, w0, dataset),
                           N=variance_constant(p, w0, dataset),
                           degenerate=True)

    from . import engine, rng, schedules  # local import avoids a cycle

    _, L = smoothness_constants(p, dataset)
    if eta0 is None:
        eta0 = 1.0 / L
    if beta is None:
        beta = max(p.mu, 1.0 / len(dataset))
    steps = schedules.StepSchedule.inverse_t(eta0=eta0, beta=beta)
    gen = rng.stream(seed, rng.OPTIMUM)
    w = engine.serial_sgd(p, dataset, lambda t: schedules.per_iteration_step(steps, t),
                          budget, gen, w0=w0)
    F = objective(p, w, dataset)
    if not np.isfinite(F):
        raise FloatingPointError("objective became non-finite during the "
                                 "reference SGD run")
    return OptimumInfo(w_star=w, F_star=F, N=variance_constant(p, w, dataset))
