"""Self-training loop: cold start on the consensus-clean set, then iterations of
timestep-conditional pseudo-labeling over the noisy set.

Each iteration freezes the previous model and uses its margin logit as an
implicit preference classifier: sign(z) proposes keep/swap, |z| is the
confidence. The timeline [0, T) is cut into N intervals; each interval gets a
nearest-rank percentile threshold over its observed confidences, raised when
the classifier's measured accuracy in that interval falls below the accuracy
floor. Accepted records join the clean anchor batches in a composite loss
(unit-weighted sum) for the next round of training.

Timesteps are 1-indexed in [1, T]; interval membership is decided on t - 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import dpo as dpo_mod
from .diffusion import NoiseSchedule, sample_batch
from .dpo import (PreferencePair, dpo_loss_and_grad_arrays, log_sigmoid,
                  margin_logit, margin_logits_arrays, stack_pairs)
from .model import DenoiserParams, MLPArch, NumericError, init_params, save_checkpoint
from .rewards import RewardCommittee, consensus_partition

DECISIONS = ("keep", "swap", "reject")


@dataclass
class PseudoLabelRecord:
    """One labeling probe of a noisy pair at a specific (t, eps)."""

    pair_index: int
    t: int
    z: float
    confidence: float
    decision: str
    interval: int
    eps: np.ndarray

    def __post_init__(self):
        if self.decision not in DECISIONS:
            raise ValueError(f"decision must be one of {DECISIONS}, got {self.decision!r}")
        self.eps = np.asarray(self.eps, dtype=np.float64)

    def as_dict(self) -> dict:
        return {
            "pair_index": self.pair_index,
            "t": self.t,
            "z": self.z,
            "confidence": self.confidence,
            "decision": self.decision,
            "interval": self.interval,
            "eps": self.eps.tolist(),
        }


def make_intervals(T: int, n: int) -> tuple[tuple[int, int], ...]:
    """n half-open ranges partitioning [0, T) exactly."""
    if n < 1 or T < 1:
        raise ValueError("need T >= 1 and n >= 1")
    if n > T:
        raise ValueError(f"cannot cut {T} timesteps into {n} nonempty intervals")
    bounds = [(i * T) // n for i in range(n + 1)]
    return tuple((bounds[i], bounds[i + 1]) for i in range(n))


def interval_index(intervals, t: int) -> int:
    """Index of the interval containing t - 1."""
    u = t - 1
    if u < 0 or u >= intervals[-1][1]:
        raise ValueError(f"timestep {t} outside the covered range")
    his = [hi for _, hi in intervals]
    return int(np.searchsorted(his, u, side="right"))


@dataclass
class ThresholdTable:
    intervals: tuple[tuple[int, int], ...]
    tau: np.ndarray
    accuracy: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        self.intervals = tuple((int(a), int(b)) for a, b in self.intervals)
        self.tau = np.asarray(self.tau, dtype=np.float64)
        self.accuracy = np.asarray(self.accuracy, dtype=np.float64)
        n = len(self.intervals)
        if self.tau.shape != (n,) or self.accuracy.shape != (n,):
            raise ValueError("tau and accuracy must have one entry per interval")
        if self.intervals[0][0] != 0:
            raise ValueError("intervals must start at 0")
        for (lo, hi), (lo2, _) in zip(self.intervals, self.intervals[1:]):
            if lo2 != hi:
                raise ValueError("intervals must tile the timeline with no gaps or overlaps")
        if any(lo > hi for lo, hi in self.intervals):
            raise ValueError("interval bounds must be ordered")
        if np.any(self.tau < 0):
            raise ValueError("thresholds must be >= 0")

    def index_of(self, t: int) -> int:
        return interval_index(self.intervals, t)

    def tau_for(self, t: int) -> float:
        return float(self.tau[self.index_of(t)])

    def as_dict(self) -> dict:
        return {
            "intervals": [list(iv) for iv in self.intervals],
            "tau": [v if math.isfinite(v) else None for v in self.tau.tolist()],
            "accuracy": self.accuracy.tolist(),
            "iteration": self.iteration,
        }


def pseudo_logit(frozen_params, ref_params, pair, t, eps, beta_dpo, sched) -> float:
    """Margin logit of the frozen labeling model; never updates parameters."""
    return margin_logit(frozen_params, ref_params, pair, t, eps, beta_dpo, sched)


def nearest_rank(values, q: float) -> float:
    """Nearest-rank quantile: value at rank ceil(q * n) of the sorted list."""
    vals = np.sort(np.asarray(values, dtype=np.float64))
    n = vals.shape[0]
    if n == 0:
        raise ValueError("nearest_rank of empty values")
    rank = min(max(int(math.ceil(q * n)), 1), n)
    return float(vals[rank - 1])


def build_thresholds(confidences, accuracy_by_interval, percentile: float = 0.8,
                     acc_floor: float = 0.7, raise_step: float = 0.05, *,
                     intervals, iteration: int = 0) -> ThresholdTable:
    """Per-interval nearest-rank percentile of |z|; intervals whose measured
    accuracy sits below the floor get their quantile pushed up in raise_step
    increments until the threshold strictly exceeds the base value (capped at
    the interval's maximum confidence). Empty intervals select nothing."""
    if not 0.0 < percentile < 1.0:
        raise ValueError(f"percentile must be in (0, 1), got {percentile}")
    if not 0.0 <= acc_floor <= 1.0:
        raise ValueError(f"acc_floor must be in [0, 1], got {acc_floor}")
    if not 0.0 < raise_step < 1.0:
        raise ValueError(f"raise_step must be in (0, 1), got {raise_step}")
    n = len(intervals)
    acc = np.asarray(accuracy_by_interval, dtype=np.float64)
    if acc.shape != (n,):
        raise ValueError(f"expected {n} accuracy fractions, got shape {acc.shape}")
    by_interval: list[list[float]] = [[] for _ in range(n)]
    for t, conf in confidences:
        if conf < 0:
            raise ValueError("confidences must be >= 0")
        by_interval[interval_index(intervals, int(t))].append(float(conf))
    tau = np.full(n, np.inf)
    for j in range(n):
        vals = by_interval[j]
        if not vals:
            continue
        base = nearest_rank(vals, percentile)
        tau[j] = base
        if acc[j] < acc_floor:
            q = percentile
            while tau[j] <= base and q < 1.0:
                q = min(1.0, q + raise_step)
                tau[j] = nearest_rank(vals, q)
    return ThresholdTable(intervals=tuple(intervals), tau=tau, accuracy=acc,
                          iteration=iteration)


def measure_interval_accuracy(frozen_params, ref_params, clean_test, intervals,
                              draws_per_pair: int, beta_dpo: float,
                              sched: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """Fraction of probes with z > 0 per interval (z = 0 scores incorrect);
    t drawn uniformly inside each interval, fresh eps per probe."""
    if not clean_test:
        raise ValueError("clean test set is empty")
    d = frozen_params.arch.d
    C, XW, XL = stack_pairs(clean_test)
    Cr = np.repeat(C, draws_per_pair, axis=0)
    XWr = np.repeat(XW, draws_per_pair, axis=0)
    XLr = np.repeat(XL, draws_per_pair, axis=0)
    m = Cr.shape[0]
    accs = np.zeros(len(intervals))
    for j, (lo, hi) in enumerate(intervals):
        if hi <= lo:
            continue
        t = rng.integers(lo, hi, size=m) + 1
        eps = rng.standard_normal((m, d))
        z = margin_logits_arrays(frozen_params, ref_params, Cr, XWr, XLr, t, eps,
                                 beta_dpo, sched)
        accs[j] = float(np.mean(z > 0.0))
    return accs


def probe_unlabeled(unlabeled, frozen_params, ref_params, draws_per_pair: int,
                    beta_dpo: float, sched: NoiseSchedule,
                    rng: np.random.Generator):
    """Stratified labeling probes: one timestep draw per pair per equal chunk
    of [0, T). Returns a list of (pair_index, t, eps, z)."""
    if not unlabeled:
        return []
    d = frozen_params.arch.d
    n = len(unlabeled)
    chunks = make_intervals(sched.T, draws_per_pair)
    ts = np.empty((n, draws_per_pair), dtype=np.int64)
    for j, (lo, hi) in enumerate(chunks):
        ts[:, j] = rng.integers(lo, hi, size=n) + 1
    eps = rng.standard_normal((n, draws_per_pair, d))
    C, XW, XL = stack_pairs(unlabeled)
    Cr = np.repeat(C, draws_per_pair, axis=0)
    XWr = np.repeat(XW, draws_per_pair, axis=0)
    XLr = np.repeat(XL, draws_per_pair, axis=0)
    t_flat = ts.ravel()
    eps_flat = eps.reshape(n * draws_per_pair, d)
    z = margin_logits_arrays(frozen_params, ref_params, Cr, XWr, XLr, t_flat,
                             eps_flat, beta_dpo, sched)
    return [
        (i // draws_per_pair, int(t_flat[i]), eps_flat[i], float(z[i]))
        for i in range(n * draws_per_pair)
    ]


def apply_pseudo_labels(unlabeled, frozen_params, ref_params,
                        thresholds: ThresholdTable, draws_per_pair: int,
                        beta_dpo: float, sched: NoiseSchedule,
                        rng: np.random.Generator | None = None,
                        probes=None) -> list[PseudoLabelRecord]:
    """One record per (pair, timestep draw): accepted when |z| strictly exceeds
    the interval threshold, keep on z > 0, swap on z < 0."""
    if probes is None:
        if rng is None:
            raise ValueError("apply_pseudo_labels needs an rng when probes are not given")
        probes = probe_unlabeled(unlabeled, frozen_params, ref_params,
                                 draws_per_pair, beta_dpo, sched, rng)
    records = []
    for idx, t, eps, z in probes:
        j = thresholds.index_of(t)
        conf = abs(z)
        if conf > thresholds.tau[j]:
            decision = "keep" if z > 0 else "swap"
        else:
            decision = "reject"
        records.append(PseudoLabelRecord(pair_index=idx, t=t, z=z, confidence=conf,
                                         decision=decision, interval=j, eps=eps))
    return records


def anchor_loss(params, ref_params, labeled_batch, beta_dpo, sched,
                rng: np.random.Generator) -> float:
    """Clean-set DPO loss with one fresh (t, eps) draw per pair."""
    if not labeled_batch:
        raise ValueError("anchor_loss needs a non-empty batch")
    C, XW, XL = stack_pairs(labeled_batch)
    t = rng.integers(1, sched.T + 1, size=len(labeled_batch))
    eps = rng.standard_normal((len(labeled_batch), params.arch.d))
    loss, _ = dpo_loss_and_grad_arrays(params, ref_params, C, XW, XL, t, eps,
                                       beta_dpo, sched, want_grad=False)
    return loss


def pseudo_label_loss(params, ref_params, accepted_records, pairs, beta_dpo,
                      sched) -> float:
    """Mean of -log sigmoid(z_hat) over accepted records, where z_hat is the
    current model's logit at the record's (t, eps) on the kept or swapped
    ordering. No records contributes 0."""
    if not accepted_records:
        return 0.0
    arrays = stack_records(accepted_records, pairs)
    z = margin_logits_arrays(params, ref_params, arrays["C"], arrays["XW"],
                             arrays["XL"], arrays["t"], arrays["eps"], beta_dpo, sched)
    return float(np.mean(-log_sigmoid(z)))


def composite_loss(params, ref_params, labeled_batch, accepted_records, pairs,
                   beta_dpo, sched, rng: np.random.Generator) -> float:
    """Anchor loss plus pseudo-label loss, unit weights."""
    a = anchor_loss(params, ref_params, labeled_batch, beta_dpo, sched, rng)
    p = pseudo_label_loss(params, ref_params, accepted_records, pairs, beta_dpo, sched)
    return a + p


def stack_records(records, pairs) -> dict:
    """Training-ready arrays for accepted records; swap decisions exchange the
    winner and loser columns."""
    for r in records:
        if r.decision == "reject":
            raise ValueError("rejected records cannot feed the pseudo-label loss")
        if not 0 <= r.pair_index < len(pairs):
            raise IndexError(f"record pair_index {r.pair_index} out of range")
    C = np.stack([pairs[r.pair_index].c for r in records])
    XW = np.stack([
        pairs[r.pair_index].x0_w if r.decision == "keep" else pairs[r.pair_index].x0_l
        for r in records
    ])
    XL = np.stack([
        pairs[r.pair_index].x0_l if r.decision == "keep" else pairs[r.pair_index].x0_w
        for r in records
    ])
    t = np.asarray([r.t for r in records], dtype=np.int64)
    eps = np.stack([r.eps for r in records])
    return {"C": C, "XW": XW, "XL": XL, "t": t, "eps": eps, "n": len(records)}


@dataclass
class IterationState:
    iteration: int
    params: DenoiserParams
    ref_params: DenoiserParams
    thresholds: ThresholdTable | None
    metrics: list


def split_clean(labeled, test_frac: float, rng: np.random.Generator):
    """Hold out a small clean test slice for interval-accuracy measurement."""
    if not labeled:
        raise ValueError("cannot split an empty labeled set")
    if not 0.0 < test_frac < 1.0:
        raise ValueError(f"test_frac must be in (0, 1), got {test_frac}")
    n = len(labeled)
    n_test = min(max(1, round(test_frac * n)), n - 1) if n > 1 else 1
    order = rng.permutation(n)
    test_idx = set(order[:n_test].tolist())
    train = [labeled[i] for i in range(n) if i not in test_idx]
    test = [labeled[i] for i in range(n) if i in test_idx]
    if not train:
        train, test = test, train
    return train, test


def _streams(seed: int, iterations: int) -> dict:
    """Fixed seed-stream layout so a plain run on the clean set consumes the
    same init, pretrain, and phase-0 streams as the full pipeline."""
    kids = np.random.SeedSequence(seed).spawn(5 + 3 * max(iterations, 0))
    streams = {"init": kids[0], "pretrain": kids[1], "split": kids[2],
               "cold": kids[3], "report0": kids[4]}
    for i in range(1, iterations + 1):
        base = 5 + 3 * (i - 1)
        streams[f"label{i}"] = kids[base]
        streams[f"train{i}"] = kids[base + 1]
        streams[f"report{i}"] = kids[base + 2]
    return streams


def pretrain_denoiser(params, dataset, steps: int, lr: float, warmup_frac: float,
                      batch_size: int, sched: NoiseSchedule,
                      rng: np.random.Generator):
    """Brief denoising-only training on every point in the dataset (winners and
    losers alike); the result plays the pretrained base model whose copy
    becomes the frozen DPO reference."""
    from .diffusion import denoise_loss_grad_arrays

    points = []
    for p in dataset:
        points.append((p.x0_w, p.c))
        points.append((p.x0_l, p.c))
    X = np.stack([x for x, _ in points])
    C = np.stack([c for _, c in points])
    n = X.shape[0]
    d = params.arch.d
    losses: list[float] = []
    warmup = max(1, math.ceil(warmup_frac * steps))
    for step in range(steps):
        lr_t = lr * min(1.0, (step + 1) / warmup)
        idx = rng.integers(0, n, size=min(batch_size, n) if batch_size else n)
        t = rng.integers(1, sched.T + 1, size=idx.shape[0])
        eps = rng.standard_normal((idx.shape[0], d))
        loss, grad = denoise_loss_grad_arrays(params, X[idx], C[idx], t, eps, sched)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite pretraining loss or gradient at step {step}")
        params = DenoiserParams(params.theta - lr_t * grad, params.arch)
        losses.append(float(loss))
    return params, losses


def _train_dpo_phase(params, ref_params, pairs, plan, batch_size, warmup_frac,
                     beta_dpo, sched, rng, pseudo=None, pseudo_batch_size=0,
                     weights=(1.0, 1.0)):
    """SGD over one or more (steps, lr) phases with per-phase linear warmup.

    pseudo: optional stacked record arrays from stack_records; each step then
    adds a pseudo-label minibatch under the composite weights.
    """
    if not pairs:
        raise ValueError("no pairs to train on")
    C, XW, XL = stack_pairs(pairs)
    n = len(pairs)
    d = params.arch.d
    w_anchor, w_pseudo = weights
    losses: list[float] = []
    for steps, lr in plan:
        warmup = max(1, math.ceil(warmup_frac * steps))
        for step in range(steps):
            lr_t = lr * min(1.0, (step + 1) / warmup)
            idx = rng.integers(0, n, size=min(batch_size, n) if batch_size else n)
            t = rng.integers(1, sched.T + 1, size=idx.shape[0])
            eps = rng.standard_normal((idx.shape[0], d))
            loss, grad = dpo_loss_and_grad_arrays(params, ref_params, C[idx],
                                                  XW[idx], XL[idx], t, eps,
                                                  beta_dpo, sched)
            loss *= w_anchor
            grad = w_anchor * grad
            if pseudo is not None and pseudo["n"] > 0:
                ridx = rng.integers(0, pseudo["n"], size=min(pseudo_batch_size, pseudo["n"]))
                loss_p, grad_p = dpo_loss_and_grad_arrays(
                    params, ref_params, pseudo["C"][ridx], pseudo["XW"][ridx],
                    pseudo["XL"][ridx], pseudo["t"][ridx], pseudo["eps"][ridx],
                    beta_dpo, sched)
                loss += w_pseudo * loss_p
                grad += w_pseudo * grad_p
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite loss or gradient at step {step}")
            params = DenoiserParams(params.theta - lr_t * grad, params.arch)
            losses.append(float(loss))
    return params, losses


def _eval_row(params, committee, sched, eval_cfg) -> dict:
    from .evalrep import evaluate_model, prompt_grid

    prompts = prompt_grid(eval_cfg.n_prompts, params.arch.d_c, eval_cfg.seed)
    report = evaluate_model(params, committee, prompts,
                            eval_cfg.n_samples_per_prompt, sched, eval_cfg.seed)
    return {
        "per_dim_mean": list(report.per_dim_mean),
        "aggregate": report.aggregate,
        "n_samples": report.n_samples,
    }


def _write_jsonl(path: Path, rows) -> None:
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows),
                    encoding="utf-8")


def run_pipeline(cfg, dataset=None, out_dir=None, meta: dict | None = None,
                 log=None) -> tuple[IterationState, list]:
    """Consensus partition, cold start on the clean set, then cfg.train.iterations
    rounds of pseudo-labeling and composite training. Returns the final state
    and the per-iteration metrics rows; writes checkpoints, threshold tables,
    pseudo-label records, and metrics.jsonl when out_dir is given."""
    from .config import build_arch, build_committee, build_schedule
    from .datagen import load_dataset

    say = log or (lambda *_: None)
    sched = build_schedule(cfg)
    arch = build_arch(cfg)
    committee = build_committee(cfg)
    tr = cfg.train
    if dataset is None:
        dataset = load_dataset(cfg.paths.dataset)
    part = consensus_partition(dataset, committee)
    if not part.labeled:
        raise ValueError("consensus clean set is empty; nothing to cold-start on")
    assert all(p.origin == "human" for p in part.labeled)
    streams = _streams(tr.seed, tr.iterations)
    labeled_train, clean_test = split_clean(part.labeled, tr.test_frac,
                                            np.random.default_rng(streams["split"]))
    params = init_params(arch, np.random.default_rng(streams["init"]))
    intervals = make_intervals(sched.T, cfg.thresholds.n_intervals)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    metrics: list[dict] = [{
        "type": "partition",
        **part.stats.as_dict(),
        "n_clean_train": len(labeled_train),
        "n_clean_test": len(clean_test),
    }]
    say(f"partition: {part.stats.n_labeled}/{part.stats.n_total} clean "
        f"({len(labeled_train)} train / {len(clean_test)} test)")

    def _checkpoint(p, name):
        if out is not None:
            save_checkpoint(out / name, p, seed=tr.seed, meta=meta)
        return name

    # base model: denoising-only pretrain on the whole corpus, then freeze a
    # copy as the DPO reference
    if tr.pretrain_steps > 0:
        params, pre_losses = pretrain_denoiser(params, dataset, tr.pretrain_steps,
                                               tr.lr_pretrain, tr.warmup_frac,
                                               tr.batch_size, sched,
                                               np.random.default_rng(streams["pretrain"]))
        metrics.append({
            "type": "pretrain", "steps": tr.pretrain_steps, "lr": tr.lr_pretrain,
            "mean_loss": float(np.mean(pre_losses)), "final_loss": pre_losses[-1],
            "eval": _eval_row(params, committee, sched, cfg.eval),
            "checkpoint": _checkpoint(params, "ckpt_base.bin"),
        })
        say(f"base: denoise loss {pre_losses[-1]:.4f} "
            f"aggregate {metrics[-1]['eval']['aggregate']:.4f}")
    ref = params.copy()

    # cold start: anchor loss only
    params, losses = _train_dpo_phase(params, ref, labeled_train,
                                      [(tr.steps_cold, tr.lr_cold)],
                                      tr.batch_size, tr.warmup_frac,
                                      cfg.beta_dpo, sched,
                                      np.random.default_rng(streams["cold"]))
    rep_rng = np.random.default_rng(streams["report0"])
    accs0 = measure_interval_accuracy(params, ref, clean_test, intervals,
                                      cfg.thresholds.accuracy_draws, cfg.beta_dpo,
                                      sched, rep_rng)
    row = {
        "type": "iteration", "iteration": 0, "phase": "cold_start",
        "steps": tr.steps_cold, "lr": tr.lr_cold,
        "mean_loss": float(np.mean(losses)) if losses else None,
        "losses": losses,
        "interval_accuracy": accs0.tolist(),
        "acceptance": None,
        "eval": _eval_row(params, committee, sched, cfg.eval),
        "checkpoint": _checkpoint(params, "ckpt_iter0.bin"),
    }
    metrics.append(row)
    say(f"iter0: loss {row['mean_loss']:.4f} aggregate {row['eval']['aggregate']:.4f}")

    thresholds: ThresholdTable | None = None
    state = IterationState(0, params, ref, None, metrics)
    for i in range(1, tr.iterations + 1):
        frozen = params.copy()
        lab_rng = np.random.default_rng(streams[f"label{i}"])
        accs = measure_interval_accuracy(frozen, ref, clean_test, intervals,
                                         cfg.thresholds.accuracy_draws,
                                         cfg.beta_dpo, sched, lab_rng)
        probes = probe_unlabeled(part.unlabeled, frozen, ref,
                                 cfg.thresholds.draws_per_pair, cfg.beta_dpo,
                                 sched, lab_rng)
        thresholds = build_thresholds([(t, abs(z)) for _, t, _, z in probes],
                                      accs, cfg.thresholds.percentile,
                                      cfg.thresholds.acc_floor,
                                      cfg.thresholds.raise_step,
                                      intervals=intervals, iteration=i)
        records = apply_pseudo_labels(part.unlabeled, frozen, ref, thresholds,
                                      cfg.thresholds.draws_per_pair, cfg.beta_dpo,
                                      sched, probes=probes)
        accepted = [r for r in records if r.decision != "reject"]
        pseudo = stack_records(accepted, part.unlabeled) if accepted else None
        if out is not None:
            _write_jsonl(out / f"thresholds_iter{i}.jsonl", [thresholds.as_dict()])
            _write_jsonl(out / f"pseudo_labels_iter{i}.jsonl",
                         [r.as_dict() for r in records])
        params, losses = _train_dpo_phase(params, ref, labeled_train,
                                          [(tr.steps_iter, tr.lr_iter)],
                                          tr.batch_size, tr.warmup_frac,
                                          cfg.beta_dpo, sched,
                                          np.random.default_rng(streams[f"train{i}"]),
                                          pseudo=pseudo,
                                          pseudo_batch_size=tr.pseudo_batch_size,
                                          weights=(tr.anchor_weight, tr.pseudo_weight))
        n_keep = sum(1 for r in accepted if r.decision == "keep")
        row = {
            "type": "iteration", "iteration": i, "phase": "self_train",
            "steps": tr.steps_iter, "lr": tr.lr_iter,
            "mean_loss": float(np.mean(losses)) if losses else None,
            "losses": losses,
            "interval_accuracy": accs.tolist(),
            "acceptance": {
                "n_records": len(records),
                "n_accepted": len(accepted),
                "n_keep": n_keep,
                "n_swap": len(accepted) - n_keep,
                "fraction": (len(accepted) / len(records)) if records else 0.0,
            },
            "eval": _eval_row(params, committee, sched, cfg.eval),
            "checkpoint": _checkpoint(params, f"ckpt_iter{i}.bin"),
        }
        metrics.append(row)
        say(f"iter{i}: loss {row['mean_loss']:.4f} accepted "
            f"{row['acceptance']['fraction']:.2%} aggregate {row['eval']['aggregate']:.4f}")
        state = IterationState(i, params, ref, thresholds, metrics)

    if out is not None:
        header = {"type": "header", "mode": "semi", **(meta or {})}
        _write_jsonl(out / "metrics.jsonl", [header, *metrics])
    return state, metrics


def train_dpo_baseline(cfg, dataset=None, out_dir=None, meta: dict | None = None,
                       log=None, plan=None, dpo_pairs=None) -> tuple[DenoiserParams, list]:
    """Plain DPO under the same step budget as the pipeline: identical init and
    pretrain, then the cold phase plus each iteration phase on dpo_pairs
    (default: the full unfiltered dataset)."""
    from .config import build_arch, build_committee, build_schedule
    from .datagen import load_dataset

    say = log or (lambda *_: None)
    sched = build_schedule(cfg)
    arch = build_arch(cfg)
    committee = build_committee(cfg)
    tr = cfg.train
    if dataset is None:
        dataset = load_dataset(cfg.paths.dataset)
    if not dataset:
        raise ValueError("empty dataset")
    streams = _streams(tr.seed, tr.iterations)
    params = init_params(arch, np.random.default_rng(streams["init"]))
    if tr.pretrain_steps > 0:
        params, _ = pretrain_denoiser(params, dataset, tr.pretrain_steps,
                                      tr.lr_pretrain, tr.warmup_frac,
                                      tr.batch_size, sched,
                                      np.random.default_rng(streams["pretrain"]))
    ref = params.copy()
    if plan is None:
        plan = [(tr.steps_cold, tr.lr_cold)] + [(tr.steps_iter, tr.lr_iter)] * tr.iterations
    params, losses = _train_dpo_phase(params, ref,
                                      list(dataset) if dpo_pairs is None else list(dpo_pairs),
                                      plan, tr.batch_size, tr.warmup_frac, cfg.beta_dpo,
                                      sched, np.random.default_rng(streams["cold"]))
    row = {
        "type": "iteration", "iteration": 0, "phase": "dpo_all",
        "steps": sum(s for s, _ in plan),
        "mean_loss": float(np.mean(losses)) if losses else None,
        "losses": losses,
        "interval_accuracy": None,
        "acceptance": None,
        "eval": _eval_row(params, committee, sched, cfg.eval),
        "checkpoint": "ckpt_dpo_all.bin",
    }
    say(f"dpo_all: loss {row['mean_loss']:.4f} aggregate {row['eval']['aggregate']:.4f}")
    metrics = [row]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "ckpt_dpo_all.bin", params, seed=tr.seed, meta=meta)
        header = {"type": "header", "mode": "dpo_all", **(meta or {})}
        _write_jsonl(out / "metrics.jsonl", [header, *metrics])
    return params, metrics
