"""Optimizers, the learning-rate schedule, and a convergence test harness.

Momentum SGD follows the two-line recursion
    m_t = beta1 * m_(t-1) + (1 - beta1) * g_t
    w_(t+1) = w_t - lr_t * m_t
with m_(-1) = 0. AdamW is the standard decoupled-weight-decay variant with
bias correction. Parameters whose gradient is marked "skip" keep both weights
and optimizer state untouched for that step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractViolation, NumericalFailure

MOMENTUM_SGD = "momentum_sgd"
ADAMW = "adamw"


@dataclass
class OptimConfig:
    kind: str = ADAMW
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.kind not in (MOMENTUM_SGD, ADAMW):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("betas must be in [0, 1)")


@dataclass
class OptimState:
    cfg: OptimConfig
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: dict[str, int] = field(default_factory=dict)

    def ensure(self, name: str, like: np.ndarray) -> None:
        if name not in self.m:
            self.m[name] = np.zeros_like(like)
            if self.cfg.kind == ADAMW:
                self.v[name] = np.zeros_like(like)
            self.step[name] = 0


def _check_grad(name: str, g: np.ndarray) -> None:
    if not np.all(np.isfinite(g)):
        raise NumericalFailure(f"non-finite gradient for {name!r}")


def momentum_sgd_step(w: np.ndarray, state: OptimState, name: str, g: np.ndarray, lr_t: float) -> None:
    if lr_t <= 0:
        raise ContractViolation("learning rate must be > 0")
    if w.shape != g.shape:
        raise ContractViolation(f"shape mismatch for {name!r}: {w.shape} vs {g.shape}")
    _check_grad(name, g)
    state.ensure(name, w)
    beta1 = state.cfg.beta1
    m = state.m[name]
    m *= beta1
    m += (1.0 - beta1) * g
    w -= lr_t * m
    state.step[name] += 1


def adamw_step(w: np.ndarray, state: OptimState, name: str, g: np.ndarray, lr_t: float) -> None:
    if lr_t <= 0:
        raise ContractViolation("learning rate must be > 0")
    if w.shape != g.shape:
        raise ContractViolation(f"shape mismatch for {name!r}: {w.shape} vs {g.shape}")
    _check_grad(name, g)
    state.ensure(name, w)
    cfg = state.cfg
    t = state.step[name] + 1
    m = state.m[name]
    v = state.v[name]
    m *= cfg.beta1
    m += (1.0 - cfg.beta1) * g
    v *= cfg.beta2
    v += (1.0 - cfg.beta2) * (g * g)
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    w -= lr_t * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * w)
    state.step[name] = t


def apply_step(weights, state: OptimState, grads: dict, lr_t: float, skip=()) -> None:
    """One optimizer step over named parameters, in canonical order."""
    step = momentum_sgd_step if state.cfg.kind == MOMENTUM_SGD else adamw_step
    skip = set(skip)
    for name, w in weights.named():
        if name in skip:
            continue
        step(w, state, name, grads[name], lr_t)


def lr_at(step: int, total_steps: int, base_lr: float, floor_fraction: float = 0.1) -> float:
    """Linear warmup to base over the first 10% of steps, then cosine decay
    to floor_fraction * base at the final step."""
    if not 0 <= step <= total_steps:
        raise ContractViolation(f"step {step} outside 0..{total_steps}")
    warmup = math.ceil(0.1 * total_steps)
    if step <= warmup:
        return base_lr * (step / warmup) if warmup > 0 else base_lr
    span = total_steps - warmup
    progress = (step - warmup) / span
    floor = floor_fraction * base_lr
    return floor + (base_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------------
# Synthetic-objective convergence harness
# ---------------------------------------------------------------------------


class QuadraticObjective:
    """f(w) = 0.5 w^T A w with eigenvalues log-spaced in [1, condition]."""

    def __init__(self, dim: int, condition: float, seed: int = 0):
        rng = np.random.Generator(np.random.PCG64(seed))
        eigs = np.logspace(0.0, math.log10(condition), dim) if condition > 1 else np.ones(dim)
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        self.a = q @ np.diag(eigs) @ q.T
        self.dim = dim
        self.smoothness = float(eigs[-1])

    def value(self, w: np.ndarray) -> float:
        return 0.5 * float(w @ self.a @ w)

    def grad(self, w: np.ndarray) -> np.ndarray:
        return self.a @ w


class SigmoidSumObjective:
    """Smooth nonconvex f(w) = sum_i sigmoid(a_i . w - b_i)."""

    def __init__(self, dim: int, terms: int = 32, seed: int = 0):
        rng = np.random.Generator(np.random.PCG64(seed))
        self.a = rng.normal(size=(terms, dim)) / math.sqrt(dim)
        self.b = rng.normal(size=terms)
        self.dim = dim
        self.smoothness = float(np.linalg.norm(self.a, 2) ** 2 / 4.0) + 1.0

    def value(self, w: np.ndarray) -> float:
        return float(np.sum(1.0 / (1.0 + np.exp(-(self.a @ w - self.b)))))

    def grad(self, w: np.ndarray) -> np.ndarray:
        s = 1.0 / (1.0 + np.exp(-(self.a @ w - self.b)))
        return self.a.T @ (s * (1.0 - s))


def convergence_harness(
    objective,
    oracle_bias_delta: float,
    noise_sigma: float,
    n_ranks: int,
    total_steps: int,
    beta1: float,
    lr: float,
    seed: int = 0,
    w0_scale: float = 1.0,
):
    """Momentum SGD against a controlled biased-and-noisy gradient oracle.

    Per step, each of n_ranks draws grad(w) plus N(0, sigma^2) noise; their
    mean is then perturbed along a random unit direction by
    sqrt(1 - delta) * ||mean||, realizing the relative-error bound with
    equality. delta = 1 and sigma = 0 reduce to exact momentum SGD.

    Returns a dict with the squared-gradient-norm trace, its running mean, and
    a divergence flag (objective value above 1e6).
    """
    if not 0.0 < oracle_bias_delta <= 1.0:
        raise ContractViolation("oracle bias delta must be in (0, 1]")
    rng = np.random.Generator(np.random.PCG64(seed))
    dim = objective.dim
    w = rng.normal(size=dim) * w0_scale
    m = np.zeros(dim)
    sq_norms = np.empty(total_steps)
    diverged = False
    bias_scale = math.sqrt(1.0 - oracle_bias_delta)
    for t in range(total_steps):
        true_grad = objective.grad(w)
        sq_norms[t] = float(true_grad @ true_grad)
        noise = rng.normal(size=(n_ranks, dim)) * noise_sigma if noise_sigma > 0 else 0.0
        g_star = true_grad + (np.mean(noise, axis=0) if noise_sigma > 0 else 0.0)
        if bias_scale > 0.0:
            direction = rng.normal(size=dim)
            direction /= np.linalg.norm(direction)
            g = g_star + bias_scale * np.linalg.norm(g_star) * direction
        else:
            g = g_star
        m = beta1 * m + (1.0 - beta1) * g
        w = w - lr * m
        if objective.value(w) > 1e6:
            diverged = True
            break
    trace = sq_norms[: t + 1]
    running_mean = np.cumsum(trace) / np.arange(1, trace.size + 1)
    return {
        "sq_grad_norms": trace,
        "running_mean": running_mean,
        "diverged": diverged,
        "final_w": w,
    }


def rate_matched_schedule(delta: float, n_ranks: int, total_steps: int, smoothness: float, sigma: float):
    """(beta1, lr) scaled the way the convergence bound suggests:
    1 - beta1 shrinks like sqrt(n / T), lr sits at its stability cap."""
    one_minus = min(delta / 48.0, math.sqrt(n_ranks / ((total_steps + 1) * max(sigma, 1e-12) ** 2)))
    one_minus = min(max(one_minus, 1e-4), 0.5)
    beta1 = 1.0 - one_minus
    lr = min(1.0 / (2.0 * smoothness), math.sqrt(delta * one_minus ** 2 / (8.0 * smoothness ** 2)))
    return beta1, lr
