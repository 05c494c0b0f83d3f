"""Scoring sampled outputs against the reward committee, and paired model
comparison with common random numbers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import NoiseSchedule, sample_batch
from .model import DenoiserParams
from .rewards import RewardCommittee, reward_eval


@dataclass
class EvalReport:
    per_dim_mean: tuple[float, ...]
    aggregate: float
    n_samples: int
    seed: int | None
    win_rate: tuple[float, ...] | None = None
    interval_accuracy: tuple[float, ...] | None = None

    def __post_init__(self):
        self.per_dim_mean = tuple(float(v) for v in self.per_dim_mean)
        if self.win_rate is not None:
            self.win_rate = tuple(float(v) for v in self.win_rate)
            if any(not 0.0 <= w <= 1.0 for w in self.win_rate):
                raise ValueError("win rates must lie in [0, 1]")

    def as_dict(self) -> dict:
        return {
            "per_dim_mean": list(self.per_dim_mean),
            "aggregate": self.aggregate,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "win_rate": None if self.win_rate is None else list(self.win_rate),
            "interval_accuracy": None if self.interval_accuracy is None
            else list(self.interval_accuracy),
        }


def prompt_grid(n_prompts: int, d_c: int, seed: int) -> np.ndarray:
    """Fixed evaluation conditions, drawn from their own seed so they stay
    disjoint from any training draw."""
    if n_prompts < 1:
        raise ValueError("need at least one prompt")
    return np.random.default_rng(seed).standard_normal((n_prompts, d_c))


def _rng_and_seed(rng):
    if isinstance(rng, (int, np.integer)):
        return np.random.default_rng(int(rng)), int(rng)
    return rng, None


def _score_matrix(committee: RewardCommittee, X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """(n, K) reward scores of samples X under matched conditions C."""
    scores = np.empty((X.shape[0], committee.K))
    for i in range(X.shape[0]):
        for k in range(committee.K):
            scores[i, k] = reward_eval(committee, k, X[i], C[i])
    return scores


def _sample_for_prompts(params, prompts, n_per, sched, rng):
    C = np.repeat(np.asarray(prompts, dtype=np.float64), n_per, axis=0)
    X = sample_batch(params, C, sched, rng)
    return X, C


def evaluate_model(params: DenoiserParams, committee: RewardCommittee, prompts,
                   n_samples_per_prompt: int, sched: NoiseSchedule,
                   rng) -> EvalReport:
    """Ancestral-sample n outputs per prompt and average each committee reward;
    the aggregate is the unweighted mean of the per-dimension means."""
    prompts = np.asarray(prompts, dtype=np.float64)
    if prompts.ndim != 2 or prompts.shape[0] == 0:
        raise ValueError("prompts must be a non-empty (n, d_c) array")
    if n_samples_per_prompt < 1:
        raise ValueError(f"n_samples_per_prompt must be >= 1, got {n_samples_per_prompt}")
    gen, seed = _rng_and_seed(rng)
    X, C = _sample_for_prompts(params, prompts, n_samples_per_prompt, sched, gen)
    scores = _score_matrix(committee, X, C)
    per_dim = scores.mean(axis=0)
    return EvalReport(
        per_dim_mean=tuple(per_dim.tolist()),
        aggregate=float(per_dim.mean()),
        n_samples=int(X.shape[0]),
        seed=seed,
    )


def compare_models(params_a: DenoiserParams, params_b: DenoiserParams,
                   committee: RewardCommittee, prompts, n: int,
                   sched: NoiseSchedule, rng) -> np.ndarray:
    """Per-dimension win rate of a over b on prompt-paired samples; ties count
    0.5. Each model samples from its own generator seeded identically, so
    identical parameters tie exactly."""
    prompts = np.asarray(prompts, dtype=np.float64)
    if prompts.ndim != 2 or prompts.shape[0] == 0:
        raise ValueError("prompts must be a non-empty (n, d_c) array")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    gen, seed = _rng_and_seed(rng)
    if seed is None:
        seed = int(gen.integers(0, 2**63 - 1))
    Xa, C = _sample_for_prompts(params_a, prompts, n, sched, np.random.default_rng(seed))
    Xb, _ = _sample_for_prompts(params_b, prompts, n, sched, np.random.default_rng(seed))
    sa = _score_matrix(committee, Xa, C)
    sb = _score_matrix(committee, Xb, C)
    return np.mean((sa > sb) + 0.5 * (sa == sb), axis=0)
