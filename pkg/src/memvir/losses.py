"""Softmax-family and proxy-based losses with closed-form gradients.

Every loss takes embeddings ``X`` (B x D), integer labels ``y`` and class
weights / proxies ``W`` (D x C) and returns the mean loss together with the
exact gradients w.r.t. ``X`` and ``W``. Normalized variants normalize rows of
``X`` and columns of ``W`` internally, so callers pass raw parameters.

The returned value is the negated mean log-likelihood, i.e. a quantity to
minimize (non-negative for the softmax variants).
"""

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import logsumexp, normalize_backward, normalize_rows, stable_log_softmax

ARCFACE_CLAMP = 1e-7


class LabelOutOfRange(ValueError):
    pass


class LossVariant(str, enum.Enum):
    SOFTMAX = "Softmax"
    NORM_SOFTMAX = "NormSoftmax"
    COSFACE = "CosFace"
    ARCFACE = "ArcFace"
    CURRICULARFACE = "CurricularFace"
    PROXY_NCA = "ProxyNCA"
    PROXY_ANCHOR = "ProxyAnchor"


# Margins from the original CosFace / ArcFace / CurricularFace publications.
DEFAULT_MARGINS = {
    LossVariant.COSFACE: 0.35,
    LossVariant.ARCFACE: 0.5,
    LossVariant.CURRICULARFACE: 0.5,
}


@dataclass(frozen=True)
class LossConfig:
    """Loss hyper-parameters.

    Attributes:
        variant: which loss to evaluate.
        gamma: logit scale for the normalized variants (also the temperature
            of ProxyNCA's scaled distance).
        margin: additive margin. ``None`` picks the variant's published
            default (CosFace 0.35, ArcFace / CurricularFace 0.5 rad).
        curricular_t: running hard-negative statistic of CurricularFace. It is
            read as-is and the updated value is returned in
            ``LossOutput.curricular_t``; feed it back on the next call.
        curricular_momentum: EMA momentum for the ``t`` update.
        proxy_anchor_alpha: Proxy-Anchor scale.
        proxy_anchor_delta: Proxy-Anchor margin.
    """

    variant: LossVariant = LossVariant.NORM_SOFTMAX
    gamma: float = 16.0
    margin: Optional[float] = None
    curricular_t: float = 0.0
    curricular_momentum: float = 0.99
    proxy_anchor_alpha: float = 32.0
    proxy_anchor_delta: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "variant", LossVariant(self.variant))
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.proxy_anchor_alpha > 0:
            raise ValueError("proxy_anchor_alpha must be positive")
        if not 0.0 <= self.curricular_momentum < 1.0:
            raise ValueError("curricular_momentum must lie in [0, 1)")
        m = self.effective_margin
        if m < 0:
            raise ValueError(f"margin must be >= 0, got {m}")
        if self.variant is LossVariant.COSFACE and m >= 1.0:
            raise ValueError("CosFace margin must lie in [0, 1)")
        if self.variant in (LossVariant.ARCFACE, LossVariant.CURRICULARFACE) and m >= math.pi / 2:
            raise ValueError("angular margin must lie in [0, pi/2)")

    @property
    def effective_margin(self) -> float:
        if self.margin is not None:
            return float(self.margin)
        return DEFAULT_MARGINS.get(self.variant, 0.0)

    def with_t(self, t):
        return replace(self, curricular_t=float(t))


@dataclass
class LossOutput:
    value: float
    d_embeddings: np.ndarray
    d_weights: np.ndarray
    curricular_t: Optional[float] = None


@dataclass
class GradDecomposition:
    """Coefficients of the target / virtual-target weights in the softmax gradient."""

    tau0: float
    tau_virtual: list = field(default_factory=list)
    target_weight_index: int = 0


def _as_inputs(X, y, W):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if X.shape[1] != W.shape[0]:
        raise ValueError(f"embedding dim {X.shape[1]} != weight rows {W.shape[0]}")
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"{y.shape[0]} labels for {X.shape[0]} embeddings")
    C = W.shape[1]
    if y.size and (y.min() < 0 or y.max() >= C):
        bad = y[(y < 0) | (y >= C)][0]
        raise LabelOutOfRange(f"label {bad} outside [0, {C})")
    return X, y, W


def softmax_cross_entropy(logits, y, exclude_target=False):
    """Mean cross-entropy over rows and its gradient w.r.t. the logits.

    With ``exclude_target`` the target logit is dropped from the normalizer,
    which gives the NCA form ``-z_y + logsumexp_{j != y} z_j``.
    """
    B, C = logits.shape
    rows = np.arange(B)
    target = logits[rows, y]
    if exclude_target:
        masked = logits.copy()
        masked[rows, y] = -np.inf
        log_p = stable_log_softmax(masked)
        per_row = -target + logsumexp(masked)
        grad = np.exp(log_p)
        grad[rows, y] = -1.0
    else:
        log_p = stable_log_softmax(logits)
        per_row = -log_p[rows, y]
        grad = np.exp(log_p)
        grad[rows, y] -= 1.0
    return float(np.mean(per_row)), grad / B


def _softmax(X, y, W):
    value, g = softmax_cross_entropy(X @ W, y)
    return LossOutput(value, g @ W.T, X.T @ g)


def _arc_target(cos_y, m):
    """cos(theta + m) and its derivative w.r.t. cos(theta), with clamping."""
    c = np.clip(cos_y, -1.0 + ARCFACE_CLAMP, 1.0 - ARCFACE_CLAMP)
    theta = np.arccos(c)
    phi = np.cos(theta + m)
    dphi = np.sin(theta + m) / np.sin(theta)
    dphi = np.where(c == cos_y, dphi, 0.0)
    return phi, dphi


def _normalized(cfg: LossConfig, X, y, W):
    x_hat, x_norm = normalize_rows(X, "embedding")
    w_hat, w_norm = normalize_rows(W.T, "weight column")
    cos = x_hat @ w_hat.T
    B = cos.shape[0]
    rows = np.arange(B)
    gamma = cfg.gamma
    m = cfg.effective_margin
    variant = cfg.variant
    new_t = None

    if variant is LossVariant.PROXY_ANCHOR:
        value, d_cos = _proxy_anchor_cos(cfg, cos, y)
    else:
        # per-entry derivative of the logit w.r.t. cos
        slope = np.full_like(cos, gamma)
        logits = gamma * cos
        if variant is LossVariant.COSFACE:
            logits[rows, y] -= gamma * m
        elif variant is LossVariant.ARCFACE:
            phi, dphi = _arc_target(cos[rows, y], m)
            logits[rows, y] = gamma * phi
            slope[rows, y] = gamma * dphi
        elif variant is LossVariant.CURRICULARFACE:
            cos_y = cos[rows, y]
            phi, dphi = _arc_target(cos_y, m)
            # fall back to a linear penalty once theta + m passes pi
            th = math.cos(math.pi - m)
            mm = math.sin(math.pi - m) * m
            t = cfg.curricular_t
            hard = cos > phi[:, None]
            keep = cos_y > th
            phi = np.where(keep, phi, cos_y - mm)
            dphi = np.where(keep, dphi, 1.0)
            hard[rows, y] = False
            logits = np.where(hard, gamma * cos * (t + cos), logits)
            slope = np.where(hard, gamma * (t + 2.0 * cos), slope)
            logits[rows, y] = gamma * phi
            slope[rows, y] = gamma * dphi
            new_t = cfg.curricular_momentum * t + (1.0 - cfg.curricular_momentum) * float(np.mean(cos_y))
        value, g = softmax_cross_entropy(logits, y, exclude_target=variant is LossVariant.PROXY_NCA)
        d_cos = g * slope

    dx = normalize_backward(d_cos @ w_hat, x_hat, x_norm)
    dw = normalize_backward(d_cos.T @ x_hat, w_hat, w_norm).T
    return LossOutput(value, dx, dw, new_t)


def _softplus_sum(args, mask):
    """log(1 + sum over masked entries of exp(args)) per column, plus d/d args."""
    a = np.where(mask, args, -np.inf)
    zeros = np.zeros((1, a.shape[1]))
    stacked = np.vstack([zeros, a])
    term = logsumexp(stacked, axis=0)
    weights = np.where(mask, np.exp(a - term[None, :]), 0.0)
    return term, weights


def _proxy_anchor_cos(cfg, cos, y):
    B, C = cos.shape
    alpha, delta = cfg.proxy_anchor_alpha, cfg.proxy_anchor_delta
    pos = np.zeros((B, C), dtype=bool)
    pos[np.arange(B), y] = True
    with_pos = pos.any(axis=0)
    n_pos = int(with_pos.sum())

    pos_term, pos_w = _softplus_sum(-alpha * (cos - delta), pos)
    neg_term, neg_w = _softplus_sum(alpha * (cos + delta), ~pos)
    value = float(pos_term[with_pos].sum() / n_pos + neg_term.sum() / C)
    d_cos = -alpha * pos_w / n_pos + alpha * neg_w / C
    return value, d_cos


def loss_forward(cfg: LossConfig, X, y, W) -> LossOutput:
    """Evaluate ``cfg.variant`` on (X, y, W) with exact gradients.

    Args:
        cfg: loss configuration.
        X: embeddings, shape (B, D).
        y: integer labels in [0, C).
        W: class weights / proxies, shape (D, C).

    Returns:
        LossOutput with ``d_embeddings`` shaped like X and ``d_weights``
        shaped like W. For CurricularFace ``curricular_t`` carries the updated
        running statistic.

    Raises:
        LabelOutOfRange: a label is outside [0, C).
        ZeroNorm: a normalized variant met a zero embedding or weight column.
    """
    X, y, W = _as_inputs(X, y, W)
    if cfg.variant is LossVariant.SOFTMAX:
        return _softmax(X, y, W)
    if cfg.variant is LossVariant.PROXY_NCA and W.shape[1] < 2:
        raise ValueError("ProxyNCA needs at least two proxies")
    return _normalized(cfg, X, y, W)


def _softmax_probs(x, W):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    W = np.asarray(W, dtype=np.float64)
    return np.exp(stable_log_softmax(W.T @ x))


def grad_decompose_memvir(x, y, W_ext, N, C) -> GradDecomposition:
    """Split the softmax gradient into target and virtual-target coefficients.

    ``W_ext`` holds the actual weights in columns [0, C) followed by N
    snapshots; class ``y`` of snapshot n sits at column ``y + n*C``. Logits
    are the raw inner products ``W_j^T x``.
    """
    W_ext = np.atleast_2d(np.asarray(W_ext, dtype=np.float64))
    if W_ext.shape[1] != (N + 1) * C:
        raise ValueError(f"W_ext has {W_ext.shape[1]} columns, expected (N+1)C = {(N + 1) * C}")
    if not 0 <= y < C:
        raise LabelOutOfRange(f"label {y} outside [0, {C})")
    p = _softmax_probs(x, W_ext)
    others = np.ones(p.shape[0], dtype=bool)
    others[y] = False
    tau0 = float(np.sum(p[others]))  # == 1 - p_y, without cancellation
    tau_virtual = [-float(p[y + n * C]) for n in range(1, N + 1)]
    return GradDecomposition(tau0, tau_virtual, int(y))


def grad_decompose_baseline(x, y, W) -> GradDecomposition:
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    return grad_decompose_memvir(x, y, W, 0, W.shape[1])


def softmax_log_likelihood_grad(x, y, W):
    """Exact d/dx of log softmax_y(W^T x): W_y - sum_j p_j W_j."""
    W = np.asarray(W, dtype=np.float64)
    p = _softmax_probs(x, W)
    return W[:, y] - W @ p


def approximate_gradient(dec: GradDecomposition, W, C=None):
    """tau0 * W_y + sum_n tau_n * W_{y + nC}; the dominant-term approximation."""
    W = np.asarray(W, dtype=np.float64)
    y = dec.target_weight_index
    if C is None:
        C = W.shape[1] // (len(dec.tau_virtual) + 1)
    g = dec.tau0 * W[:, y]
    for n, tau in enumerate(dec.tau_virtual, start=1):
        g = g + tau * W[:, y + n * C]
    return g
