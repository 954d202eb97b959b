"""Interaction-based feature learning from user/item identities."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ColdStartError, ShapeError


@dataclass
class InteractionTower:
    users: ad.DiffArray  # P: [l, num_users], column u is user u
    items: ad.DiffArray  # Q: [l, num_items]

    def parameters(self):
        return {"user_factors": self.users, "item_factors": self.items}


def init_interaction_tower(rng, num_users, num_items, latent=15, scale=0.05):
    return InteractionTower(
        users=ad.parameter(rng.uniform(-scale, scale, (latent, num_users)), "user_factors"),
        items=ad.parameter(rng.uniform(-scale, scale, (latent, num_items)), "item_factors"),
    )


def _columns(matrix, idx, kind):
    idx = np.asarray(idx, dtype=np.int64)
    extent = matrix.shape[1]
    if idx.size and (idx.min() < 0 or idx.max() >= extent):
        bad = idx[(idx < 0) | (idx >= extent)].ravel()[0]
        raise ColdStartError(f"{kind} index {bad} has no latent vector (only {extent} known)")
    cols = ad.take(matrix, idx, axis=1)  # [l] or [l, B]
    return cols if idx.ndim == 0 else ad.transpose(cols)


def lookup(user, item, tower):
    """Latent vectors for ids (scalars -> ``[l]``, arrays -> ``[B, l]``)."""
    return _columns(tower.users, user, "user"), _columns(tower.items, item, "item")


def pair_vector_int(p_user, q_item, interaction=True):
    if p_user.shape != q_item.shape:
        raise ShapeError("pair_vector_int", p_user.shape, q_item.shape)
    parts = [p_user, q_item]
    if interaction:
        parts.insert(0, ad.mul(p_user, q_item))
    return ad.concat(parts, axis=-1)
