"""The full rating model: both feature towers, their heads, biases and fusion."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .fusion import (
    FusionConfig,
    fuse,
    head_score,
    init_bias_tables,
    init_fm_head,
    init_lr_head,
)
from .interaction_net import init_interaction_tower, lookup, pair_vector_int
from .review_net import ReviewMode, forward_review, init_review_tower


@dataclass
class ModelConfig:
    latent: int = 15
    filters: int = 50
    window: int = 3
    emb_dim: int = 300
    fm_factors: int = 50
    fusion: str = "dynamic"
    alpha: float = 0.5
    head: str = "fm"
    attention: bool = True
    pooling: str = "mean"
    review_interaction: bool = True
    rating_interaction: bool = True
    fusion_eps: float = 1e-8
    factor_init_scale: float = 0.05
    reg_embeddings: bool = False
    clamp_predictions: bool = False

    def __post_init__(self):
        errors = []
        for name in ("latent", "filters", "window", "emb_dim", "fm_factors"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if self.pooling not in ("mean", "max"):
            errors.append(f"pooling must be 'mean' or 'max', got {self.pooling!r}")
        try:
            self.fusion_config()
        except ConfigError as exc:
            errors.append(str(exc))
        if errors:
            raise ConfigError("; ".join(errors))

    @property
    def uses_review(self):
        return self.fusion != "interaction"

    @property
    def uses_interaction(self):
        return self.fusion != "review"

    def fusion_config(self):
        return FusionConfig(self.fusion, self.alpha, self.head, self.fusion_eps)

    def review_mode(self):
        return ReviewMode(self.attention, self.pooling, self.review_interaction)

    def to_dict(self):
        return asdict(self)


# Single-component variants use l=30 so the FM input width matches CARL at l=15.
_VARIANTS = {
    "CARL": {},
    "CARL+LR": {"head": "lr"},
    "Review": {"fusion": "review", "latent": 30},
    "Review-avg": {"fusion": "review", "latent": 30},
    "Rating": {"fusion": "interaction", "latent": 30},
    "Review-int": {"fusion": "review", "latent": 30, "review_interaction": False},
    "Rating-int": {"fusion": "interaction", "latent": 30, "rating_interaction": False},
    "Review-att": {"fusion": "review", "latent": 30, "attention": False},
    "Review-max": {"fusion": "review", "latent": 30, "pooling": "max"},
}
VARIANT_NAMES = tuple(_VARIANTS) + ("static-<alpha>",)


def variant_config(name, base=None):
    """Model configuration for a named ablation variant, derived from ``base``."""
    base = base or ModelConfig()
    if name in _VARIANTS:
        return replace(base, **_VARIANTS[name])
    if name.startswith("static-"):
        try:
            alpha = float(name[len("static-"):])
        except ValueError:
            alpha = None
        if alpha is not None and 0.0 <= alpha <= 1.0:
            return replace(base, fusion="static", alpha=alpha)
    raise ConfigError(f"unknown variant {name!r}; valid names: {', '.join(VARIANT_NAMES)}")


@dataclass
class ForwardResult:
    prediction: ad.DiffArray
    review_score: ad.DiffArray | None
    interaction_score: ad.DiffArray | None
    alpha: ad.DiffArray
    trace: object = None
    user_bias: ad.DiffArray | None = None
    item_bias: ad.DiffArray | None = None


@dataclass
class CarlModel:
    config: ModelConfig
    num_users: int
    num_items: int
    vocab_size: int
    params: dict = field(default_factory=dict)
    review_tower: object = None
    interaction_tower: object = None
    review_head: object = None
    interaction_head: object = None
    biases: object = None

    @classmethod
    def initialise(cls, config, num_users, num_items, vocab_size, rng, global_mean=0.0):
        """Build all parameters. Each head's global bias starts at ``global_mean``
        so the two component scores begin positive and comparable."""
        model = cls(config, num_users, num_items, vocab_size)
        width = 3 * config.latent
        head_init = init_fm_head if config.head == "fm" else init_lr_head
        if config.uses_review:
            model.review_tower = init_review_tower(
                rng, vocab_size, config.emb_dim, config.filters, config.window, config.latent
            )
            dim = width if config.review_interaction else 2 * config.latent
            model.review_head = _make_head(head_init, rng, dim, config, global_mean)
        if config.uses_interaction:
            model.interaction_tower = init_interaction_tower(
                rng, num_users, num_items, config.latent, config.factor_init_scale
            )
            dim = width if config.rating_interaction else 2 * config.latent
            model.interaction_head = _make_head(head_init, rng, dim, config, global_mean)
        model.biases = init_bias_tables(num_users, num_items)
        model._collect()
        return model

    def _collect(self):
        params = {}
        if self.review_tower is not None:
            params.update(self.review_tower.parameters())
            params.update(self.review_head.parameters("review_head"))
        if self.interaction_tower is not None:
            params.update(self.interaction_tower.parameters())
            params.update(self.interaction_head.parameters("interaction_head"))
        params.update(self.biases.parameters())
        for name, p in params.items():
            p.name = name
        self.params = params

    def regularized(self):
        """Weight and factor tensors that the squared-norm penalty covers."""
        skip = {"mlp_bias", "user_bias", "item_bias", "review_head_bias", "interaction_head_bias"}
        if not self.config.reg_embeddings:
            skip.add("embeddings")
        return [p for name, p in self.params.items() if name not in skip]

    def state(self):
        return {name: p.data for name, p in self.params.items()}

    def load_state(self, tensors):
        missing = set(self.params) - set(tensors)
        if missing:
            raise ConfigError(f"checkpoint lacks tensors: {sorted(missing)}")
        for name, p in self.params.items():
            if tensors[name].shape != p.shape:
                raise ConfigError(f"tensor {name}: checkpoint shape {tensors[name].shape} != model {p.shape}")
            p.data = np.array(tensors[name], dtype=np.float64, copy=True)

    def forward(self, users, items, user_docs=None, item_docs=None, training=False, rng=None,
                dropout=0.0, keep_trace=False):
        """Predict ratings for index arrays ``users``/``items``.

        ``user_docs``/``item_docs`` are the full document tables of the
        dataset (``[num_users, doc_len]`` token ids).
        """
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        cfg = self.config
        y_rev = y_int = trace = None
        if self.review_tower is not None:
            if user_docs is None or item_docs is None:
                raise ConfigError("the review component needs document tables")
            uu, urows = np.unique(users, return_inverse=True)
            ii, irows = np.unique(items, return_inverse=True)
            z_rev, trace = forward_review(
                np.asarray(user_docs)[uu], np.asarray(item_docs)[ii], self.review_tower,
                cfg.review_mode(), training, rng, dropout, urows.ravel(), irows.ravel(),
                keep_relatedness=keep_trace,
            )
            y_rev = head_score(z_rev, self.review_head)
        if self.interaction_tower is not None:
            p_u, q_i = lookup(users, items, self.interaction_tower)
            z_int = pair_vector_int(p_u, q_i, cfg.rating_interaction)
            y_int = head_score(z_int, self.interaction_head)
        b_u = ad.take(self.biases.users, users)
        b_i = ad.take(self.biases.items, items)
        pred, alpha = fuse(y_rev, y_int, b_u, b_i, cfg.fusion_config())
        if cfg.clamp_predictions and not training:
            pred = ad.clip(pred, 1.0, 5.0)
        return ForwardResult(pred, y_rev, y_int, alpha, trace if keep_trace else None, b_u, b_i)

    def predict(self, dataset, users, items, batch_size=256):
        """Inference-mode predictions as a plain array (no tape, no dropout)."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        out = np.empty(len(users))
        for start in range(0, len(users), batch_size):
            sl = slice(start, start + batch_size)
            res = self.forward(users[sl], items[sl], dataset.user_docs, dataset.item_docs)
            out[sl] = res.prediction.data
        return out


def _make_head(head_init, rng, dim, config, global_mean):
    if head_init is init_fm_head:
        return init_fm_head(rng, dim, config.fm_factors, global_mean)
    return init_lr_head(rng, dim, global_mean)
