"""Analytic reward committee and the unanimous-consensus partitioner.

Built-in reward family (each maps (x, c) to a finite real):

    alignment   -||x - target(c)||^2        target = c truncated/zero-padded to d
    magnitude   -(||x|| - rho)^2            preferred norm rho
    roughness   -sum_i (x[i+1] - x[i])^2    first-difference energy
    axis        <x, u>                      fixed unit direction u

A pair joins the clean labeled set only when every committee dimension
strictly prefers the stored winner; ties and dissents route to the noisy
unlabeled set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dpo import PreferencePair

REWARD_KINDS = ("alignment", "magnitude", "roughness", "axis")


@dataclass(frozen=True)
class RewardSpec:
    kind: str
    rho: float = 1.5
    axis: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise ValueError(f"unknown reward kind {self.kind!r}")
        if self.kind == "axis":
            if self.axis is None:
                raise ValueError("axis reward needs a direction")
            u = np.asarray(self.axis, dtype=np.float64)
            norm = float(np.linalg.norm(u))
            if norm == 0.0 or not np.all(np.isfinite(u)):
                raise ValueError("axis direction must be finite and nonzero")
            object.__setattr__(self, "axis", tuple((u / norm).tolist()))

    def as_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "magnitude":
            d["rho"] = self.rho
        if self.kind == "axis":
            d["axis"] = list(self.axis)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RewardSpec":
        return cls(
            kind=str(d["kind"]),
            rho=float(d.get("rho", 1.5)),
            axis=tuple(d["axis"]) if d.get("axis") is not None else None,
        )


@dataclass(frozen=True)
class RewardCommittee:
    specs: tuple[RewardSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        if len(self.specs) < 2:
            raise ValueError(f"committee needs K >= 2 dimensions, got {len(self.specs)}")

    @property
    def K(self) -> int:
        return len(self.specs)

    def as_dicts(self) -> list[dict]:
        return [s.as_dict() for s in self.specs]

    @classmethod
    def from_dicts(cls, ds) -> "RewardCommittee":
        return cls(tuple(RewardSpec.from_dict(d) for d in ds))


def default_committee(d: int, k: int = 3, rho: float = 1.5) -> RewardCommittee:
    """Standard desk committee: alignment + magnitude, then roughness and up
    to two axis preferences as K grows (K in 2..5)."""
    if not 2 <= k <= 5:
        raise ValueError(f"committee size must be in [2, 5], got {k}")
    if k >= 3 and d < 2:
        raise ValueError("roughness dimension needs d >= 2")
    e0 = tuple(1.0 if i == 0 else 0.0 for i in range(d))
    alt = tuple(1.0 if i % 2 == 0 else -1.0 for i in range(d))
    specs = [
        RewardSpec("alignment"),
        RewardSpec("magnitude", rho=rho),
        RewardSpec("roughness"),
        RewardSpec("axis", axis=e0),
        RewardSpec("axis", axis=alt),
    ]
    return RewardCommittee(tuple(specs[:k]))


def _target(c: np.ndarray, d: int) -> np.ndarray:
    """Embed the condition into sample space: truncate or zero-pad to d."""
    if c.shape[0] >= d:
        return c[:d]
    out = np.zeros(d)
    out[: c.shape[0]] = c
    return out


def reward_eval(committee: RewardCommittee, k: int, x, c) -> float:
    """Dimension-k reward of x under condition c."""
    if not 0 <= k < committee.K:
        raise IndexError(f"reward index {k} out of range for K={committee.K}")
    spec = committee.specs[k]
    xv = np.asarray(x, dtype=np.float64)
    cv = np.asarray(c, dtype=np.float64)
    if spec.kind == "alignment":
        diff = xv - _target(cv, xv.shape[0])
        return float(-diff @ diff)
    if spec.kind == "magnitude":
        return float(-((np.linalg.norm(xv) - spec.rho) ** 2))
    if spec.kind == "roughness":
        if xv.shape[0] < 2:
            return 0.0
        steps = np.diff(xv)
        return float(-steps @ steps)
    u = np.asarray(spec.axis, dtype=np.float64)
    if u.shape[0] != xv.shape[0]:
        raise ValueError(f"axis direction has dimension {u.shape[0]}, sample has {xv.shape[0]}")
    return float(xv @ u)


def reward_diff(committee: RewardCommittee, k: int, pair: PreferencePair) -> float:
    """delta_r_k = r_k(winner) - r_k(loser); positive means dimension k agrees
    with the stored label."""
    return reward_eval(committee, k, pair.x0_w, pair.c) - reward_eval(committee, k, pair.x0_l, pair.c)


@dataclass
class PartitionStats:
    n_total: int
    n_labeled: int
    n_unlabeled: int
    agree_counts: list[int]

    def as_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "n_labeled": self.n_labeled,
            "n_unlabeled": self.n_unlabeled,
            "agree_counts": list(self.agree_counts),
        }


@dataclass
class PartitionedDataset:
    labeled: list[PreferencePair]
    unlabeled: list[PreferencePair]
    stats: PartitionStats


def consensus_partition(dataset, committee: RewardCommittee) -> PartitionedDataset:
    """Labeled iff every dimension has strictly positive delta_r; order is
    preserved within each side."""
    labeled: list[PreferencePair] = []
    unlabeled: list[PreferencePair] = []
    agree = [0] * committee.K
    for pair in dataset:
        unanimous = True
        for k in range(committee.K):
            if reward_diff(committee, k, pair) > 0.0:
                agree[k] += 1
            else:
                unanimous = False
        (labeled if unanimous else unlabeled).append(pair)
    stats = PartitionStats(
        n_total=len(dataset),
        n_labeled=len(labeled),
        n_unlabeled=len(unlabeled),
        agree_counts=agree,
    )
    return PartitionedDataset(labeled=labeled, unlabeled=unlabeled, stats=stats)
