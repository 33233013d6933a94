"""Diffusion mechanics: noise schedule, corruption, objective, guidance, DDIM.

The schedule is the linear-beta lineage default (1e-4 to 2e-2 over 1000
steps). Sampling is deterministic DDIM (eta = 0); guidance is the standard
two-branch combination with a reserved null class. With guidance weight
exactly 1 the combination degenerates to the conditional branch, and that
case returns the conditional prediction itself so the equality is bitwise,
not just close.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numerics import Rng, mse, no_grad


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta forward process: alpha_bar(t) = prod_{s<=t}(1 - beta_s)."""

    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D sequence")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("betas must lie in (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @classmethod
    def linear(cls, t_steps=1000, beta_start=1e-4, beta_end=2e-2):
        return cls(np.linspace(beta_start, beta_end, t_steps))

    @property
    def t_steps(self):
        return self.betas.shape[0]

    def alpha_bar(self, t):
        """alpha_bar at step t (1-based); t = 0 returns exactly 1."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.t_steps):
            raise DimensionError(
                f"timestep out of range [0, {self.t_steps}]: {t}"
            )
        padded = np.concatenate(([1.0], self.alpha_bars))
        return padded[t]


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance weight and the class index reserved for the null condition."""

    omega: float = 1.0
    null_class: int = 0

    def __post_init__(self):
        if self.omega < 1.0:
            raise ValueError("guidance weight must be >= 1")


@dataclass(frozen=True)
class SamplerConfig:
    """Deterministic DDIM settings."""

    steps: int = 250
    eta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("need at least one sampling step")
        if self.eta != 0.0:
            raise ValueError("only deterministic sampling (eta = 0) is supported")


def forward_diffuse(x0, t, eps, sched):
    """x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps, per-sample t.

    t is a 1-based integer step (scalar or per-sample array in [1, t_steps]).
    """
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    t = np.asarray(t)
    if np.any(t < 1):
        raise DimensionError("diffusion steps are 1-based")
    abar = sched.alpha_bar(t).astype(x0.dtype)
    extra = x0.ndim - abar.ndim
    abar = abar.reshape(abar.shape + (1,) * extra)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def training_loss(model, x0, y, sched, rng, p_uncond=0.1):
    """Noise-prediction MSE with random per-sample step and noise.

    Each label is replaced by the null class with probability p_uncond so the
    guided sampler has an unconditional branch to lean on.
    """
    batch = x0.shape[0]
    t = rng.integers(1, sched.t_steps + 1, (batch,))
    eps = rng.normal(x0.shape, dtype=x0.dtype)
    if p_uncond > 0:
        drop = rng.uniform(0.0, 1.0, (batch,)) < p_uncond
        y = np.where(drop, model.config.class_count, y)
    x_t = forward_diffuse(x0, t, eps, sched)
    pred = model.forward(x_t, t, y)
    return mse(pred, eps)


def _predict(model, x_t, t_scalar, y):
    batch = x_t.shape[0]
    t = np.full((batch,), int(t_scalar), dtype=np.int64)
    with no_grad():
        out = model.forward(x_t, t, y)
    return out.data


def cfg_predict(model, x_t, t, y, guidance):
    """Guided noise estimate eps_u + omega * (eps_c - eps_u).

    omega == 1 returns the conditional branch directly: the affine formula
    is then the identity, and skipping it keeps the equality bitwise.
    """
    x_t = np.asarray(x_t)
    y = np.asarray(y)
    eps_c = _predict(model, x_t, t, y)
    if guidance.omega == 1.0:
        return eps_c
    y_null = np.full_like(y, guidance.null_class)
    eps_u = _predict(model, x_t, t, y_null)
    return eps_u + guidance.omega * (eps_c - eps_u)


def ddim_timesteps(t_steps, count):
    """Strictly decreasing step subsequence from t_steps down, ending near 1."""
    if count > t_steps:
        raise ValueError(f"cannot take {count} sub-steps of a {t_steps}-step schedule")
    ts = np.linspace(t_steps, 1, count)
    ts = np.unique(np.round(ts).astype(np.int64))[::-1]
    return ts


def ddim_sample(model, shape, y, sched, sampler, guidance=None):
    """Deterministic DDIM chain from seeded Gaussian noise down to a sample.

    shape: (batch, C, H, W); y: per-sample class labels. Each update forms
    the x0 estimate from the predicted noise and renoises to the previous
    selected step; the final step lands on alpha_bar = 1 so the x0 estimate
    itself is returned. Same seed, same everything else: same bits out.
    """
    y = np.asarray(y)
    if y.shape != (shape[0],):
        raise DimensionError("need one class label per requested sample")
    rng = Rng(sampler.seed)
    dtype = model.dtype
    x = rng.normal(shape, dtype=dtype)
    ts = ddim_timesteps(sched.t_steps, sampler.steps)
    prev = np.concatenate((ts[1:], [0]))
    for t_cur, t_prev in zip(ts, prev):
        if guidance is not None:
            eps_hat = cfg_predict(model, x, t_cur, y, guidance)
        else:
            eps_hat = _predict(model, x, t_cur, y)
        ab_cur = float(sched.alpha_bar(int(t_cur)))
        ab_prev = float(sched.alpha_bar(int(t_prev)))
        x0_est = (x - np.sqrt(1.0 - ab_cur) * eps_hat) / np.sqrt(ab_cur)
        x = np.sqrt(ab_prev) * x0_est + np.sqrt(1.0 - ab_prev) * eps_hat
        x = x.astype(dtype, copy=False)
    return x
