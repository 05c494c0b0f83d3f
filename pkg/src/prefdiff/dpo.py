"""Preference objective on noised pairs, its gradient split, and variance diagnostics.

For a pair (c, x0_w, x0_l) noised with a shared (t, eps), the margin logit is

    z = -beta * [ (||eps - eps_theta(xt_w)||^2 - ||eps - eps_ref(xt_w)||^2)
                - (||eps - eps_theta(xt_l)||^2 - ||eps - eps_ref(xt_l)||^2) ]

so z > 0 means the policy beats the reference more on the winner than on the
loser. The training loss is mean(-log sigmoid(z)), and its per-pair gradient
factors as

    g = -f * delta_phi,   f = (1 - sigmoid(z)) * beta,
    delta_phi = -( grad ||eps - eps_theta(xt_w)||^2 - grad ||eps - eps_theta(xt_l)||^2 )

For a reward dimension k with difference delta_r_k, the oracle direction is
sign(delta_r_k) * delta_phi and the progress measure is

    xi = <-g, sign(delta_r_k) * delta_phi> = f * sign(delta_r_k) * ||delta_phi||^2.

On any finite population split into an agree side (delta_r_k > 0) and a
conflict side (delta_r_k < 0) with fractions p_a + p_c = 1,

    Var[xi] = intra + inter   and   inter = p_a * p_c * (m_a + m_c)^2,

where m_a, m_c are the conditional means of f * ||delta_phi||^2. The
variance_report checker verifies both identities on concrete datasets.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .diffusion import NoiseSchedule, q_sample
from .model import DenoiserParams, GradVector, backward_batch, forward

DEFAULT_BETA_DPO = 2500.0


@dataclass
class PreferencePair:
    """One comparison: condition, winner, loser, and (when generated here)
    the ground-truth per-dimension reward differences and annotator weights."""

    c: np.ndarray
    x0_w: np.ndarray
    x0_l: np.ndarray
    delta_r: np.ndarray | None = None
    origin: str = "human"
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        self.x0_w = np.asarray(self.x0_w, dtype=np.float64)
        self.x0_l = np.asarray(self.x0_l, dtype=np.float64)
        if self.delta_r is not None:
            self.delta_r = np.asarray(self.delta_r, dtype=np.float64)
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.origin not in ("human", "pseudo"):
            raise ValueError(f"origin must be 'human' or 'pseudo', got {self.origin!r}")
        for name in ("c", "x0_w", "x0_l"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")

    def validate(self) -> None:
        """Full invariants, enforced on generation and load paths: winner and
        loser differ, stored reward differences are finite and tie-free."""
        if self.x0_w.shape != self.x0_l.shape:
            raise ValueError("winner and loser must have the same dimension")
        if np.array_equal(self.x0_w, self.x0_l):
            raise ValueError("winner and loser are identical")
        if self.delta_r is not None:
            if not np.all(np.isfinite(self.delta_r)):
                raise ValueError("non-finite delta_r entries")
            if np.any(self.delta_r == 0.0):
                raise ValueError("delta_r contains an exact tie")

    def swapped(self) -> "PreferencePair":
        return replace(
            self,
            x0_w=self.x0_l,
            x0_l=self.x0_w,
            delta_r=None if self.delta_r is None else -self.delta_r,
        )


@dataclass
class GradDecomposition:
    """Per-pair gradient split: full gradient is -f * delta_phi."""

    f: float
    delta_phi: GradVector
    z: float
    t: int


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def log_sigmoid(z):
    """log sigmoid(z) = -softplus(-z), stable for large |z|."""
    return -np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))


def stack_pairs(pairs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(C, XW, XL) row-stacked arrays for a list of pairs."""
    C = np.stack([p.c for p in pairs])
    XW = np.stack([p.x0_w for p in pairs])
    XL = np.stack([p.x0_l for p in pairs])
    return C, XW, XL


def _sq_err_rows(eps_hat: np.ndarray, eps: np.ndarray) -> np.ndarray:
    r = eps_hat - eps
    return np.sum(r * r, axis=1)


def margin_logits_arrays(params, ref_params, C, XW, XL, t, EPS, beta_dpo,
                         sched) -> np.ndarray:
    """Batched margin logits; t scalar or per-row array, EPS (B, d)."""
    xt_w = q_sample(XW, t, EPS, sched)
    xt_l = q_sample(XL, t, EPS, sched)
    ew_t = _sq_err_rows(forward(params, xt_w, t, C), EPS)
    ew_r = _sq_err_rows(forward(ref_params, xt_w, t, C), EPS)
    el_t = _sq_err_rows(forward(params, xt_l, t, C), EPS)
    el_r = _sq_err_rows(forward(ref_params, xt_l, t, C), EPS)
    return -beta_dpo * ((ew_t - ew_r) - (el_t - el_r))


def margin_logit(params: DenoiserParams, ref_params: DenoiserParams,
                 pair: PreferencePair, t: int, eps, beta_dpo: float,
                 sched: NoiseSchedule) -> float:
    """Implicit-classifier logit for one pair at a shared (t, eps)."""
    if beta_dpo <= 0:
        raise ValueError(f"beta_dpo must be > 0, got {beta_dpo}")
    eps_a = np.asarray(eps, dtype=np.float64)
    if eps_a.shape != (params.arch.d,):
        raise ValueError(f"eps has shape {eps_a.shape}, expected ({params.arch.d},)")
    z = margin_logits_arrays(
        params, ref_params, pair.c[None, :], pair.x0_w[None, :], pair.x0_l[None, :],
        int(t), eps_a[None, :], beta_dpo, sched,
    )
    return float(z[0])


def dpo_loss(params, ref_params, batch, beta_dpo, sched) -> float:
    """Mean of -log sigmoid(z) over a batch of (pair, t, eps) items."""
    loss, _ = _dpo_loss_impl(params, ref_params, batch, beta_dpo, sched, want_grad=False)
    return loss


def dpo_loss_and_grad(params, ref_params, batch, beta_dpo, sched):
    """(loss, flat gradient); the end-to-end analytic path that folds the
    sigmoid weight into the backward upstream before any VJP runs."""
    return _dpo_loss_impl(params, ref_params, batch, beta_dpo, sched, want_grad=True)


def _dpo_loss_impl(params, ref_params, batch, beta_dpo, sched, want_grad):
    if not batch:
        raise ValueError("dpo_loss needs a non-empty batch")
    pairs = [b[0] for b in batch]
    t = np.asarray([int(b[1]) for b in batch])
    EPS = np.stack([np.asarray(b[2], dtype=np.float64) for b in batch])
    C, XW, XL = stack_pairs(pairs)
    return dpo_loss_and_grad_arrays(params, ref_params, C, XW, XL, t, EPS,
                                    beta_dpo, sched, want_grad)


def dpo_loss_and_grad_arrays(params, ref_params, C, XW, XL, t, EPS, beta_dpo,
                             sched, want_grad=True):
    xt_w = q_sample(XW, t, EPS, sched)
    xt_l = q_sample(XL, t, EPS, sched)
    resid_w = forward(params, xt_w, t, C) - EPS
    resid_l = forward(params, xt_l, t, C) - EPS
    ew_t = np.sum(resid_w * resid_w, axis=1)
    el_t = np.sum(resid_l * resid_l, axis=1)
    ew_r = _sq_err_rows(forward(ref_params, xt_w, t, C), EPS)
    el_r = _sq_err_rows(forward(ref_params, xt_l, t, C), EPS)
    z = -beta_dpo * ((ew_t - ew_r) - (el_t - el_r))
    loss = float(np.mean(-log_sigmoid(z)))
    if not want_grad:
        return loss, None
    b = z.shape[0]
    f = (1.0 - sigmoid(z)) * beta_dpo
    # d(-log sigmoid(z))/dtheta = f * (grad ew_t - grad el_t), averaged over rows
    uw = (2.0 * f / b)[:, None] * resid_w
    ul = (-2.0 * f / b)[:, None] * resid_l
    grad = backward_batch(params, xt_w, t, C, uw) + backward_batch(params, xt_l, t, C, ul)
    return loss, grad


def grad_decompose(params, ref_params, pair, t, eps, beta_dpo,
                   sched) -> GradDecomposition:
    """Split the per-pair gradient into the scalar weight f = (1-sigmoid(z))*beta
    and the feature difference delta_phi; -f * delta_phi equals the end-to-end
    gradient of -log sigmoid(z)."""
    z = margin_logit(params, ref_params, pair, t, eps, beta_dpo, sched)
    eps_a = np.asarray(eps, dtype=np.float64)
    t_i = int(t)
    xt_w = q_sample(pair.x0_w, t_i, eps_a, sched)
    xt_l = q_sample(pair.x0_l, t_i, eps_a, sched)
    resid_w = forward(params, xt_w, t_i, pair.c) - eps_a
    resid_l = forward(params, xt_l, t_i, pair.c) - eps_a
    g_ew = backward_batch(params, xt_w[None, :], t_i, pair.c[None, :], 2.0 * resid_w[None, :])
    g_el = backward_batch(params, xt_l[None, :], t_i, pair.c[None, :], 2.0 * resid_l[None, :])
    delta_phi = -(g_ew - g_el)
    f = float((1.0 - sigmoid(z)) * beta_dpo)
    return GradDecomposition(f=f, delta_phi=GradVector(delta_phi), z=z, t=t_i)


def full_gradient(decomp: GradDecomposition) -> np.ndarray:
    return -decomp.f * decomp.delta_phi.g


def oracle_inner_product(decomp: GradDecomposition, delta_r_k: float) -> float:
    """xi = <-g, sign(delta_r_k) * delta_phi> = f * sign * ||delta_phi||^2."""
    if delta_r_k == 0.0:
        raise ValueError("delta_r_k is zero: a tie has no oracle direction")
    sign = 1.0 if delta_r_k > 0 else -1.0
    dp = decomp.delta_phi.g
    return decomp.f * sign * float(dp @ dp)


def variance_lower_bound(p_a: float, p_c: float, m_a: float, m_c: float) -> float:
    """p_a * p_c * (m_a + m_c)^2."""
    if p_a < 0 or p_c < 0:
        raise ValueError("probabilities must be non-negative")
    if abs(p_a + p_c - 1.0) > 1e-12:
        raise ValueError(f"p_a + p_c must equal 1, got {p_a + p_c}")
    if m_a < 0 or m_c < 0:
        raise ValueError("conditional magnitudes must be non-negative")
    return p_a * p_c * (m_a + m_c) ** 2


@dataclass
class VarianceReport:
    var_xi: float
    p_a: float
    p_c: float
    m_a: float
    m_c: float
    bound: float
    intra: float
    inter: float

    def as_dict(self) -> dict:
        return {
            "var_xi": self.var_xi,
            "p_a": self.p_a,
            "p_c": self.p_c,
            "m_a": self.m_a,
            "m_c": self.m_c,
            "bound": self.bound,
            "intra": self.intra,
            "inter": self.inter,
        }


def variance_report(params, ref_params, dataset, k: int, t: int, eps_draws,
                    beta_dpo: float, sched: NoiseSchedule) -> VarianceReport:
    """Treat the dataset (fixed t, one fixed noise draw per pair) as a uniform
    population and verify the variance split around the agree/conflict bound.

    Pairs with delta_r[k] == 0 are excluded from the population; at least two
    pairs with a nonzero difference on dimension k are required.
    """
    eps_arr = np.asarray(eps_draws, dtype=np.float64)
    if eps_arr.shape != (len(dataset), params.arch.d):
        raise ValueError(
            f"eps_draws must have shape ({len(dataset)}, {params.arch.d}), got {eps_arr.shape}"
        )
    xis = []
    sides = []
    for pair, eps in zip(dataset, eps_arr):
        if pair.delta_r is None:
            raise ValueError("variance_report needs pairs with stored delta_r")
        dr = float(pair.delta_r[k])
        if dr == 0.0:
            continue
        decomp = grad_decompose(params, ref_params, pair, t, eps, beta_dpo, sched)
        xis.append(oracle_inner_product(decomp, dr))
        sides.append(dr > 0)
    if len(xis) < 2:
        raise ValueError(
            f"need >= 2 pairs with nonzero delta_r on dimension {k}, got {len(xis)}"
        )
    xs = np.asarray(xis)
    a = np.asarray(sides)
    n = xs.shape[0]
    p_a = float(np.count_nonzero(a)) / n
    p_c = 1.0 - p_a
    var_xi = float(np.var(xs))
    mu = float(np.mean(xs))
    xa = xs[a]
    xc = xs[~a]
    m_a = float(np.mean(xa)) if xa.size else 0.0
    m_c = float(-np.mean(xc)) if xc.size else 0.0
    intra = 0.0
    inter = 0.0
    if xa.size:
        intra += p_a * float(np.var(xa))
        inter += p_a * (m_a - mu) ** 2
    if xc.size:
        intra += p_c * float(np.var(xc))
        inter += p_c * (-m_c - mu) ** 2
    bound = variance_lower_bound(p_a, p_c, m_a, m_c)
    return VarianceReport(var_xi=var_xi, p_a=p_a, p_c=p_c, m_a=m_a, m_c=m_c,
                          bound=bound, intra=intra, inter=inter)
