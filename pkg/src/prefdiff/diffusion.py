"""Forward noising, the simplified denoising objective, and ancestral sampling.

Conventions on a T-step timeline with 1-indexed timesteps t in [1, T]:

    beta_t in (0, 1)            per-step variance, linear schedule
    alpha_bar_t = prod (1-beta) cumulative signal retention
    q(x_t | x_0):  x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps
    reverse mean:  (x_t - beta_t / sqrt(1 - alpha_bar_t) eps_hat) / sqrt(1 - beta_t)
    reverse std:   sigma_t = sqrt(beta_t), no noise on the final step

The denoising objective is the unweighted mean of ||eps - eps_hat||^2 over a
batch (w(t) = 1 throughout).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DenoiserParams, _as_batch, _forward_cached, backward_batch, forward


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for name in ("beta", "alpha_bar", "sigma"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        for name in ("beta", "alpha_bar", "sigma"):
            arr = getattr(self, name)
            if arr.shape != (self.T,):
                raise ValueError(f"{name} must have shape ({self.T},), got {arr.shape}")
        if np.any(self.beta <= 0.0) or np.any(self.beta >= 1.0):
            raise ValueError("beta entries must lie in (0, 1)")
        if np.any(self.alpha_bar <= 0.0) or np.any(self.alpha_bar > 1.0):
            raise ValueError("alpha_bar entries must lie in (0, 1]")

    def check_t(self, t) -> None:
        t_arr = np.asarray(t)
        if np.any(t_arr < 1) or np.any(t_arr > self.T):
            raise ValueError(f"timestep out of range [1, {self.T}]")


@dataclass
class Sample:
    """A data point x with the condition c it was generated under."""

    x: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.c))):
            raise ValueError("sample entries must be finite")


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule; alpha_bar by running product, sigma_t = sqrt(beta_t)."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - beta)
    sigma = np.sqrt(beta)
    return NoiseSchedule(T=T, beta=beta, alpha_bar=alpha_bar, sigma=sigma)


def q_sample(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form forward noising: sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.

    x0 and eps may be single vectors or (B, d) batches; t may be a scalar or
    a per-row integer array.
    """
    sched.check_t(t)
    x0_a = np.asarray(x0, dtype=np.float64)
    eps_a = np.asarray(eps, dtype=np.float64)
    if x0_a.shape != eps_a.shape:
        raise ValueError(f"x0 shape {x0_a.shape} does not match eps shape {eps_a.shape}")
    ab = sched.alpha_bar[np.asarray(t) - 1]
    if x0_a.ndim == 2:
        ab = np.reshape(ab, (-1, 1)) if np.ndim(ab) else ab
    return np.sqrt(ab) * x0_a + np.sqrt(1.0 - ab) * eps_a


def denoise_loss(params: DenoiserParams, batch, sched: NoiseSchedule) -> float:
    """Mean of ||eps - eps_hat(q_sample(x0, t, eps), t, c)||^2 over the batch.

    batch: non-empty list of (x0, c, t, eps) tuples.
    """
    loss, _ = _denoise_loss_impl(params, batch, sched, want_grad=False)
    return loss


def denoise_loss_grad(params: DenoiserParams, batch, sched: NoiseSchedule):
    """(loss, flat gradient) of the denoising objective."""
    return _denoise_loss_impl(params, batch, sched, want_grad=True)


def _denoise_loss_impl(params, batch, sched, want_grad: bool):
    if not batch:
        raise ValueError("denoise_loss needs a non-empty batch")
    x0 = np.stack([np.asarray(b[0], dtype=np.float64) for b in batch])
    c = np.stack([np.asarray(b[1], dtype=np.float64) for b in batch])
    t = np.asarray([int(b[2]) for b in batch])
    eps = np.stack([np.asarray(b[3], dtype=np.float64) for b in batch])
    return denoise_loss_grad_arrays(params, x0, c, t, eps, sched, want_grad)


def denoise_loss_grad_arrays(params, x0, c, t, eps, sched, want_grad: bool = True):
    d = params.arch.d
    if x0.shape[1] != d or eps.shape[1] != d:
        raise ValueError("batch sample dimension does not match arch.d")
    x_t = q_sample(x0, t, eps, sched)
    eps_hat = forward(params, x_t, t, c)
    resid = eps_hat - eps
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    if not want_grad:
        return loss, None
    upstream = (2.0 / x0.shape[0]) * resid
    return loss, backward_batch(params, x_t, t, c, upstream)


def reverse_step(params: DenoiserParams, x, t: int, c, sched: NoiseSchedule,
                 noise=None) -> np.ndarray:
    """One DDPM reverse update from x_t to x_{t-1}; pass noise=None at t=1."""
    sched.check_t(t)
    beta_t = sched.beta[t - 1]
    ab_t = sched.alpha_bar[t - 1]
    eps_hat = forward(params, x, t, c)
    mean = (np.asarray(x, dtype=np.float64) - beta_t / np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(1.0 - beta_t)
    if noise is None:
        return mean
    return mean + sched.sigma[t - 1] * np.asarray(noise, dtype=np.float64)


def ancestral_sample(params: DenoiserParams, c, sched: NoiseSchedule,
                     rng: np.random.Generator) -> Sample:
    """Full T-step ancestral chain from x_T ~ N(0, I); deterministic per rng."""
    d = params.arch.d
    x = rng.standard_normal(d)
    for t in range(sched.T, 0, -1):
        noise = rng.standard_normal(d) if t > 1 else None
        x = reverse_step(params, x, t, c, sched, noise)
    return Sample(x=x, c=np.asarray(c, dtype=np.float64))


def sample_batch(params: DenoiserParams, conditions, sched: NoiseSchedule,
                 rng: np.random.Generator) -> np.ndarray:
    """Ancestral-sample one x0 per condition row, sharing the reverse loop
    across the batch. Noise draw order differs from per-sample
    ancestral_sample; each entry point is individually deterministic."""
    C = np.asarray(conditions, dtype=np.float64)
    if C.ndim != 2:
        raise ValueError("conditions must be a (B, d_c) array")
    b = C.shape[0]
    d = params.arch.d
    x = rng.standard_normal((b, d))
    for t in range(sched.T, 0, -1):
        eps_hat = forward(params, x, t, C)
        beta_t = sched.beta[t - 1]
        ab_t = sched.alpha_bar[t - 1]
        x = (x - beta_t / np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(1.0 - beta_t)
        if t > 1:
            x = x + sched.sigma[t - 1] * rng.standard_normal((b, d))
    return x
