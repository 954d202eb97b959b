"""Rating heads (FM and linear regression), dynamic/static fusion and the loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError

FUSION_MODES = ("dynamic", "static", "review", "interaction")
HEAD_KINDS = ("fm", "lr")


@dataclass
class FmHead:
    bias: ad.DiffArray  # m0, shape [1]
    linear: ad.DiffArray  # m, shape [d]
    factors: ad.DiffArray  # V, shape [d, v]

    def parameters(self, prefix):
        return {f"{prefix}_bias": self.bias, f"{prefix}_linear": self.linear, f"{prefix}_factors": self.factors}


@dataclass
class LrHead:
    bias: ad.DiffArray  # [1]
    weights: ad.DiffArray  # [d]

    def parameters(self, prefix):
        return {f"{prefix}_bias": self.bias, f"{prefix}_weights": self.weights}


@dataclass
class BiasTables:
    users: ad.DiffArray
    items: ad.DiffArray

    def parameters(self):
        return {"user_bias": self.users, "item_bias": self.items}


@dataclass
class FusionConfig:
    mode: str = "dynamic"
    alpha: float = 0.5
    head: str = "fm"
    eps: float = 1e-8

    def __post_init__(self):
        errors = []
        if self.mode not in FUSION_MODES:
            errors.append(f"fusion mode must be one of {FUSION_MODES}, got {self.mode!r}")
        if self.head not in HEAD_KINDS:
            errors.append(f"head must be one of {HEAD_KINDS}, got {self.head!r}")
        if not 0.0 <= self.alpha <= 1.0:
            errors.append(f"static alpha must lie in [0, 1], got {self.alpha}")
        if self.eps < 0:
            errors.append("eps must be nonnegative")
        if errors:
            raise ConfigError("; ".join(errors))


def init_fm_head(rng, dim, factors=50, bias=0.0):
    return FmHead(
        bias=ad.parameter(np.array([bias])),
        linear=ad.parameter(ad.glorot_uniform(rng, (dim,), fan_in=dim, fan_out=1)),
        factors=ad.parameter(ad.glorot_uniform(rng, (dim, factors))),
    )


def init_lr_head(rng, dim, bias=0.0):
    return LrHead(
        bias=ad.parameter(np.array([bias])),
        weights=ad.parameter(ad.glorot_uniform(rng, (dim,), fan_in=dim, fan_out=1)),
    )


def init_bias_tables(num_users, num_items):
    return BiasTables(ad.parameter(np.zeros(num_users)), ad.parameter(np.zeros(num_items)))


def fm_score(z, head):
    """Second-order factorization machine.

    ``m0 + m.z + sum_{j<k} <v_j, v_k> z_j z_k`` with the pairwise sum done as
    ``0.5 * sum_a [(sum_j V_ja z_j)^2 - sum_j V_ja^2 z_j^2]`` (no diagonal).
    ``z`` is ``[d]`` (returns ``[1]``) or ``[B, d]`` (returns ``[B]``).
    """
    z = ad.as_array(z)
    d = head.linear.shape[0]
    if z.shape[-1] != d or head.factors.shape[0] != d:
        raise ShapeError("fm_score", z.shape, head.factors.shape)
    zb = z if z.ndim == 2 else ad.reshape(z, (1, d))
    linear = ad.sum_(ad.mul(zb, head.linear), axis=-1)
    summed = ad.matmul(zb, head.factors)
    squares = ad.matmul(ad.square(zb), ad.square(head.factors))
    pairwise = ad.mul(0.5, ad.sum_(ad.sub(ad.square(summed), squares), axis=-1))
    return ad.add(ad.add(head.bias, linear), pairwise)


def lr_score(z, weights, bias):
    z = ad.as_array(z)
    weights = ad.as_array(weights)
    if z.shape[-1] != weights.shape[-1]:
        raise ShapeError("lr_score", z.shape, weights.shape)
    zb = z if z.ndim == 2 else ad.reshape(z, (1, z.shape[-1]))
    return ad.add(ad.sum_(ad.mul(zb, weights), axis=-1), bias)


def head_score(z, head):
    if isinstance(head, FmHead):
        return fm_score(z, head)
    return lr_score(z, head.weights, head.bias)


def _guarded_total(y_rev, y_int, eps):
    """``y_rev + y_int`` pushed out to +-eps where it is closer to zero; also the mask of those entries."""
    total = ad.add(y_rev, y_int)
    small = np.abs(total.data) < eps
    if not small.any():
        return total, small
    target = np.where(total.data >= 0, eps, -eps)
    return ad.add(total, np.where(small, target - total.data, 0.0)), small


def dynamic_alpha(y_rev, y_int, eps=1e-8):
    """``y_rev / (y_rev + y_int)`` clamped to [0, 1]; the denominator is kept away from 0."""
    y_rev, y_int = ad.as_array(y_rev), ad.as_array(y_int)
    total, _ = _guarded_total(y_rev, y_int, eps)
    return ad.clip(ad.div(y_rev, total), 0.0, 1.0)


def _dynamic_mix(y_rev, y_int, eps):
    """``alpha*y_rev + (1-alpha)*y_int`` for the dynamic alpha.

    Inside the clamp range, and with an unguarded denominator, this equals
    ``(y_rev**2 + y_int**2) / (y_rev + y_int)``, which needs a single
    rounding. Outside the clamp range the nearer endpoint is taken.
    """
    total, small = _guarded_total(y_rev, y_int, eps)
    raw = ad.div(y_rev, total)
    alpha = ad.clip(raw, 0.0, 1.0)
    mixed = ad.div(ad.add(ad.square(y_rev), ad.square(y_int)), total)
    if small.any():
        explicit = ad.add(ad.mul(alpha, y_rev), ad.mul(ad.sub(1.0, alpha), y_int))
        mixed = ad.where(small, explicit, mixed)
    mixed = ad.where(raw.data > 1.0, y_rev, ad.where(raw.data < 0.0, y_int, mixed))
    return mixed, alpha


def fuse(y_rev, y_int, b_user, b_item, cfg=None):
    """Combine component scores; returns ``(prediction, alpha)``.

    In single-component modes ``alpha`` is 1 (review) or 0 (interaction)
    and the missing score may be ``None``.
    """
    cfg = cfg or FusionConfig()
    biases = ad.add(b_user, b_item)
    if cfg.mode == "review":
        return ad.add(y_rev, biases), ad.DiffArray(np.ones(np.shape(ad.as_array(y_rev).data)))
    if cfg.mode == "interaction":
        return ad.add(y_int, biases), ad.DiffArray(np.zeros(np.shape(ad.as_array(y_int).data)))
    y_rev, y_int = ad.as_array(y_rev), ad.as_array(y_int)
    if cfg.mode == "static":
        alpha = ad.DiffArray(np.full(y_rev.shape, cfg.alpha))
        mixed = ad.add(ad.mul(alpha, y_rev), ad.mul(ad.sub(1.0, alpha), y_int))
    else:
        mixed, alpha = _dynamic_mix(y_rev, y_int, cfg.eps)
    return ad.add(mixed, biases), alpha


def loss(predictions, targets, params=(), reg=0.0):
    """Summed squared error plus ``reg`` times the squared norm of ``params``."""
    if reg < 0:
        raise ConfigError("regularisation weight must be nonnegative")
    predictions = ad.as_array(predictions)
    targets = ad.as_array(targets)
    if predictions.shape != targets.shape:
        raise ShapeError("loss", predictions.shape, targets.shape)
    total = ad.sum_(ad.square(ad.sub(targets, predictions)))
    if reg and params:
        penalty = None
        for p in params:
            term = ad.sum_(ad.square(p))
            penalty = term if penalty is None else ad.add(penalty, term)
        total = ad.add(total, ad.mul(reg, penalty))
    return total
