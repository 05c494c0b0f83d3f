"""Synthetic preference pairs with controllable dimensional conflict.

Each pair pits a candidate biased toward the optimum of one reward dimension
against a candidate biased toward a different dimension, both perturbed. The
annotator draws a Dirichlet weight vector over the committee and labels the
candidate with the higher weighted reward sum as the winner. Spiky weights
(small concentration) make single dimensions dominate the call, which is what
creates per-dimension conflicts against the stored holistic label.

Dataset files are line-delimited JSON: a header object

    {"version": 1, "d": ..., "d_c": ..., "K": ..., "seed": ...}

followed by one record per pair with fields

    {"c", "x0_w", "x0_l", "delta_r", "weights", "origin"}

Floats round-trip bit-exactly through the default JSON encoding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dpo import PreferencePair
from .rewards import RewardCommittee, RewardSpec, _target, reward_eval

DATASET_VERSION = 1
MAX_REJECTIONS = 1000


class DatasetFormatError(RuntimeError):
    """Dataset file does not parse under the documented format."""


@dataclass
class GenProfile:
    n_pairs: int
    d: int
    d_c: int
    committee: RewardCommittee
    annotator_concentration: float = 0.3
    noise_scale: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ValueError(f"n_pairs must be >= 1, got {self.n_pairs}")
        if self.d < 1 or self.d_c < 1:
            raise ValueError("d and d_c must be >= 1")
        if self.annotator_concentration <= 0:
            raise ValueError("annotator concentration must be > 0")
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be > 0")


def _spec_optimum(spec: RewardSpec, c: np.ndarray, d: int, rng: np.random.Generator) -> np.ndarray:
    """A point near which the given reward dimension is maximal."""
    if spec.kind == "alignment":
        return _target(c, d).copy()
    if spec.kind == "magnitude":
        v = rng.standard_normal(d)
        norm = np.linalg.norm(v)
        while norm < 1e-12:
            v = rng.standard_normal(d)
            norm = np.linalg.norm(v)
        return spec.rho * v / norm
    if spec.kind == "roughness":
        # any constant vector has zero first-difference energy
        return float(rng.standard_normal()) * np.ones(d)
    return 2.0 * np.asarray(spec.axis, dtype=np.float64)


def holistic_winner(committee: RewardCommittee, weights: np.ndarray, c, x_a, x_b):
    """(winner, loser) under the weighted reward sum, or None on an exact tie."""
    s_a = sum(weights[k] * reward_eval(committee, k, x_a, c) for k in range(committee.K))
    s_b = sum(weights[k] * reward_eval(committee, k, x_b, c) for k in range(committee.K))
    if s_a == s_b:
        return None
    return (x_a, x_b) if s_a > s_b else (x_b, x_a)


def gen_dataset(profile: GenProfile) -> list[PreferencePair]:
    """Deterministic per profile.seed; redraws on exact score ties and on
    exact per-dimension reward ties so stored delta_r is tie-free."""
    rng = np.random.default_rng(profile.seed)
    committee = profile.committee
    K = committee.K
    pairs: list[PreferencePair] = []
    for _ in range(profile.n_pairs):
        for attempt in range(MAX_REJECTIONS + 1):
            if attempt == MAX_REJECTIONS:
                raise RuntimeError(
                    f"gave up generating a pair after {MAX_REJECTIONS} tie rejections"
                )
            c = rng.standard_normal(profile.d_c)
            dims = rng.choice(K, size=2, replace=False)
            x_a = _spec_optimum(committee.specs[dims[0]], c, profile.d, rng) \
                + profile.noise_scale * rng.standard_normal(profile.d)
            x_b = _spec_optimum(committee.specs[dims[1]], c, profile.d, rng) \
                + profile.noise_scale * rng.standard_normal(profile.d)
            w = rng.dirichlet(np.full(K, profile.annotator_concentration))
            decision = holistic_winner(committee, w, c, x_a, x_b)
            if decision is None:
                continue
            winner, loser = decision
            delta_r = np.array(
                [reward_eval(committee, k, winner, c) - reward_eval(committee, k, loser, c)
                 for k in range(K)]
            )
            if np.any(delta_r == 0.0):
                continue
            pair = PreferencePair(c=c, x0_w=winner, x0_l=loser, delta_r=delta_r,
                                  origin="human", weights=w)
            pair.validate()
            pairs.append(pair)
            break
    return pairs


def conflict_stats(dataset, committee: RewardCommittee) -> list[dict]:
    """Per-dimension fractions of sign(delta_r) against the stored label:
    [{"p_a", "p_c", "p_tie"}, ...]. Recomputed from the committee."""
    if not dataset:
        raise ValueError("conflict_stats of an empty dataset")
    n = len(dataset)
    out = []
    for k in range(committee.K):
        diffs = np.array([
            reward_eval(committee, k, p.x0_w, p.c) - reward_eval(committee, k, p.x0_l, p.c)
            for p in dataset
        ])
        out.append({
            "p_a": float(np.count_nonzero(diffs > 0)) / n,
            "p_c": float(np.count_nonzero(diffs < 0)) / n,
            "p_tie": float(np.count_nonzero(diffs == 0)) / n,
        })
    return out


def _pair_record(pair: PreferencePair) -> dict:
    return {
        "c": pair.c.tolist(),
        "x0_w": pair.x0_w.tolist(),
        "x0_l": pair.x0_l.tolist(),
        "delta_r": None if pair.delta_r is None else pair.delta_r.tolist(),
        "weights": None if pair.weights is None else pair.weights.tolist(),
        "origin": pair.origin,
    }


def save_dataset(dataset, path, seed: int | None = None, extra: dict | None = None) -> None:
    if not dataset:
        raise ValueError("refusing to save an empty dataset")
    first = dataset[0]
    header = {
        "version": DATASET_VERSION,
        "d": int(first.x0_w.shape[0]),
        "d_c": int(first.c.shape[0]),
        "K": 0 if first.delta_r is None else int(first.delta_r.shape[0]),
        "seed": seed,
    }
    if extra:
        header.update(extra)
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(json.dumps(_pair_record(p), sort_keys=True) for p in dataset)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_header(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    if not first.strip():
        raise DatasetFormatError(f"{path}: empty file, no header")
    try:
        header = json.loads(first)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path}: unreadable header: {e}") from e
    if header.get("version") != DATASET_VERSION:
        raise DatasetFormatError(
            f"{path}: dataset version {header.get('version')} unsupported "
            f"(this build reads version {DATASET_VERSION})"
        )
    return header


def load_dataset(path) -> list[PreferencePair]:
    """Lossless inverse of save_dataset; parse errors point at the record index."""
    read_header(path)
    pairs: list[PreferencePair] = []
    with open(path, "r", encoding="utf-8") as fh:
        fh.readline()
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pair = PreferencePair(
                    c=np.asarray(rec["c"], dtype=np.float64),
                    x0_w=np.asarray(rec["x0_w"], dtype=np.float64),
                    x0_l=np.asarray(rec["x0_l"], dtype=np.float64),
                    delta_r=None if rec["delta_r"] is None else np.asarray(rec["delta_r"], dtype=np.float64),
                    origin=rec["origin"],
                    weights=None if rec.get("weights") is None else np.asarray(rec["weights"], dtype=np.float64),
                )
                pair.validate()
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as e:
                raise DatasetFormatError(f"{path}: bad record {i}: {e}") from e
            pairs.append(pair)
    return pairs
