"""Spatio-temporal aggregation loss over predicted and ground-truth center tubes.

Both tubes are lifted into (x, y, t * zeta) space. Four averaged terms are
computed over adjacent frame pairs:

* cross cosine between G_t -> P_{t+1} and P_t -> G_{t+1}
* self cosine between P_t -> P_{t+1} and G_t -> G_{t+1}
* pre ratio  |P_t G_t| / |P_t G_{t+1}|
* next ratio |P_{t+1} G_{t+1}| / |P_{t+1} G_t|

and combined as ``lam * (1 - mean_cos) + (1 - lam) * mean_sin``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

DEFAULT_ZETA = 4.0
DEFAULT_LAMBDA = 0.5


@dataclass(frozen=True)
class STAConfig:
    zeta: float = DEFAULT_ZETA
    lam: float = DEFAULT_LAMBDA
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.zeta > 0:
            raise ValueError(f"zeta must be positive, got {self.zeta}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")


@dataclass(frozen=True)
class STAEmbedding:
    """Raw predicted centers, their offsets and the GT centers, all (T, 2)."""

    pred_raw: np.ndarray
    gt_xy: np.ndarray
    offsets: np.ndarray
    zeta: float

    @property
    def T(self) -> int:
        return len(self.gt_xy)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.T, dtype=float) * self.zeta

    @property
    def pred_xy(self) -> np.ndarray:
        return self.pred_raw + self.offsets

    @property
    def pred(self) -> np.ndarray:
        return np.column_stack([self.pred_xy, self.times])

    @property
    def gt(self) -> np.ndarray:
        return np.column_stack([self.gt_xy, self.times])

    def with_offsets(self, offsets) -> "STAEmbedding":
        offsets = np.array(offsets, dtype=float).reshape(self.T, 2)
        offsets.setflags(write=False)
        return replace(self, offsets=offsets)


@dataclass(frozen=True)
class STATerms:
    cos_theta_cross: float
    cos_theta_self: float
    sin_beta_pre: float
    sin_beta_next: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cos_theta_cross, self.cos_theta_self, self.sin_beta_pre, self.sin_beta_next)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def embed_tube(pred_centers, gt_centers, cfg: STAConfig, offsets=None) -> STAEmbedding:
    pred = np.asarray(pred_centers, dtype=float)
    gt = np.asarray(gt_centers, dtype=float)
    if pred.ndim != 2 or pred.shape[1] != 2 or gt.shape != pred.shape:
        raise ValueError(f"center tubes must both be (T, 2); got {pred.shape} and {gt.shape}")
    if len(pred) < 2:
        raise ValueError("a tube needs at least two frames")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise ValueError("non-finite center")
    off = np.zeros_like(pred) if offsets is None else np.asarray(offsets, dtype=float)
    if off.shape != pred.shape:
        raise ValueError(f"offsets shape {off.shape} != {pred.shape}")
    return STAEmbedding(_frozen(pred), _frozen(gt), _frozen(off), float(cfg.zeta))


def _pair_vectors(e: STAEmbedding):
    P, G = e.pred, e.gt
    return dict(
        cross_a=P[1:] - G[:-1],  # G_t -> P_{t+1}
        cross_b=G[1:] - P[:-1],  # P_t -> G_{t+1}
        self_p=P[1:] - P[:-1],
        self_g=G[1:] - G[:-1],
        same_pre=G[:-1] - P[:-1],  # P_t -> G_t
        same_next=G[1:] - P[1:],  # P_{t+1} -> G_{t+1}
    )


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", v, v))


def _cos(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    c = np.einsum("ij,ij->i", a, b) / (_norm(a) * _norm(b))
    return np.clip(c, -1.0, 1.0)


def sta_terms(e: STAEmbedding) -> STATerms:
    v = _pair_vectors(e)
    return STATerms(
        float(np.mean(_cos(v["cross_a"], v["cross_b"]))),
        float(np.mean(_cos(v["self_p"], v["self_g"]))),
        float(np.mean(_norm(v["same_pre"]) / _norm(v["cross_b"]))),
        float(np.mean(_norm(v["same_next"]) / _norm(v["cross_a"]))),
    )


def sta_loss(terms: STATerms, cfg: STAConfig) -> float:
    cos_part = 0.5 * (terms.cos_theta_cross + terms.cos_theta_self)
    sin_part = 0.5 * (terms.sin_beta_pre + terms.sin_beta_next)
    return cfg.lam * (1.0 - cos_part) + (1.0 - cfg.lam) * sin_part


def sta_value(e: STAEmbedding, cfg: STAConfig) -> float:
    return sta_loss(sta_terms(e), cfg)


def _dcos(a: np.ndarray, b: np.ndarray):
    """Gradients of cos(a, b) with respect to a and b, row-wise."""
    na, nb = _norm(a)[:, None], _norm(b)[:, None]
    c = np.einsum("ij,ij->i", a, b)[:, None] / (na * nb)
    return b / (na * nb) - c * a / na**2, a / (na * nb) - c * b / nb**2


def _dratio(same: np.ndarray, cross: np.ndarray, eps: float):
    """Gradients of |same| / |cross| with respect to both vectors.

    The numerator norm is smoothed as sqrt(d^2 + eps^2) - eps, whose
    gradient vanishes at d = 0.
    """
    d = _norm(same)[:, None]
    q = _norm(cross)[:, None]
    soft = np.sqrt(d**2 + eps**2)
    with np.errstate(invalid="ignore", divide="ignore"):
        g_same = np.where(soft > 0, same / soft, 0.0) / q
    g_cross = -(soft - eps) * cross / q**3
    return g_same, g_cross


def sta_grad(e: STAEmbedding, cfg: STAConfig) -> np.ndarray:
    """d L_STA / d offsets, shape (T, 2)."""
    v = _pair_vectors(e)
    n = e.T - 1
    w_cos = -cfg.lam * 0.5 / n
    w_sin = (1.0 - cfg.lam) * 0.5 / n
    gP = np.zeros((e.T, 3))

    ga, gb = _dcos(v["cross_a"], v["cross_b"])
    gP[1:] += w_cos * ga
    gP[:-1] -= w_cos * gb

    gp, _ = _dcos(v["self_p"], v["self_g"])
    gP[1:] += w_cos * gp
    gP[:-1] -= w_cos * gp

    g_same, g_cross = _dratio(v["same_pre"], v["cross_b"], cfg.epsilon)
    gP[:-1] -= w_sin * (g_same + g_cross)

    g_same, g_cross = _dratio(v["same_next"], v["cross_a"], cfg.epsilon)
    gP[1:] -= w_sin * g_same
    gP[1:] += w_sin * g_cross

    return gP[:, :2]


def sta_value_and_grad_xy(pred_xy, gt_xy, cfg: STAConfig) -> tuple[float, np.ndarray]:
    """Loss and gradient with respect to adjusted predicted centers."""
    e = embed_tube(pred_xy, gt_xy, cfg)
    return sta_value(e, cfg), sta_grad(e, cfg)


def optimize_offsets(
    e: STAEmbedding, cfg: STAConfig, steps: int = 500, step_size: float = 0.1
) -> tuple[STAEmbedding, list[float]]:
    """Gradient descent on the offsets with step halving on loss increase.

    Returns the refined embedding and the loss after every step (entry 0 is
    the starting loss), which is non-increasing by construction.
    """
    if steps < 1 or not step_size > 0:
        raise ValueError("steps must be >= 1 and step_size > 0")
    loss = sta_value(e, cfg)
    trace = [loss]
    lr = step_size
    for _ in range(steps):
        g = sta_grad(e, cfg)
        if not np.any(g):
            trace.append(loss)
            continue
        while True:
            cand = e.with_offsets(e.offsets - lr * g)
            cand_loss = sta_value(cand, cfg)
            if cand_loss <= loss:
                e, loss = cand, cand_loss
                break
            lr *= 0.5
            if lr < 1e-15:
                break
        trace.append(loss)
    return e, trace


def random_tube(rng: np.random.Generator, T: int, offset_range: float = 10.0):
    """GT centers on a random walk and predictions scattered around them."""
    gt = np.cumsum(rng.normal(0.0, 2.0, (T, 2)), axis=0) + rng.uniform(0, 100, 2)
    pred = gt + rng.uniform(-offset_range, offset_range, (T, 2))
    return pred, gt


def numeric_grad(pred_xy, gt_xy, cfg: STAConfig, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of the loss with respect to predicted centers."""
    pred = np.array(pred_xy, dtype=float)
    out = np.zeros_like(pred)
    for idx in np.ndindex(pred.shape):
        hi, lo = pred.copy(), pred.copy()
        hi[idx] += step
        lo[idx] -= step
        out[idx] = (sta_value(embed_tube(hi, gt_xy, cfg), cfg) - sta_value(embed_tube(lo, gt_xy, cfg), cfg)) / (2 * step)
    return out


def gradcheck(trials: int = 100, seed: int = 0, cfg: STAConfig = STAConfig(), step: float = 1e-6) -> float:
    """Worst relative error of the analytic gradient over random tubes with T in 2..8."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        pred, gt = random_tube(rng, int(rng.integers(2, 9)))
        a = sta_value_and_grad_xy(pred, gt, cfg)[1]
        n = numeric_grad(pred, gt, cfg, step)
        worst = max(worst, float(np.max(np.abs(a - n)) / max(np.max(np.abs(n)), 1e-12)))
    return worst
