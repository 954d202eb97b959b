"""Mini-batch training with RMSprop, dropout and validation-based selection."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .corpus import PAD
from .errors import ConfigError, DataError, DivergenceError
from .fusion import loss as square_loss
from .model import CarlModel, ModelConfig
from .optim import RmspropState, rmsprop_step

logger = logging.getLogger(__name__)

REG_GRID = (0.05, 0.01, 0.005, 0.001)


@dataclass
class TrainConfig:
    batch_size: int = 100
    lr: float = 0.001
    reg: float = 0.001
    dropout: float = 0.2
    epochs: int = 60
    seed: int = 0
    eval_every: int = 1
    patience: int = 10
    select: str = "best-val"
    rho: float = 0.9
    eps: float = 1e-8
    eval_batch_size: int = 256

    def __post_init__(self):
        errors = []
        for name in ("batch_size", "epochs", "eval_every", "eval_batch_size"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if self.lr <= 0:
            errors.append("lr must be positive")
        if self.reg < 0:
            errors.append("reg must be nonnegative")
        if not 0.0 <= self.dropout < 1.0:
            errors.append("dropout must lie in [0, 1)")
        if self.patience < 0:
            errors.append("patience must be nonnegative")
        if self.select not in ("best-val", "final"):
            errors.append("select must be 'best-val' or 'final'")
        if errors:
            raise ConfigError("; ".join(errors))


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mse: float = float("nan")
    final_train_mse: float = float("nan")
    test_mse: float = float("nan")
    untouched: list = field(default_factory=list)
    stopped_early: bool = False

    def to_dict(self):
        return asdict(self)

    def write(self, out_dir):
        """``report.json`` plus a per-epoch ``curve.csv``.

        Wall times are left out so reruns produce identical files; the CLI
        records them in the run manifest instead.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        body = {k: v for k, v in self.to_dict().items() if k != "wall_time"}
        (out / "report.json").write_text(json.dumps(body, indent=2) + "\n")
        with open(out / "curve.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "train_mse", "val_mse"])
            for k, (tl, tm) in enumerate(zip(self.train_loss, self.train_mse)):
                vm = self.val_mse[k] if k < len(self.val_mse) else None
                writer.writerow([k + 1, repr(tl), repr(tm), "" if vm is None else repr(vm)])


def batch_iter(pairs, batch_size, epoch_seed):
    """Index arrays covering ``pairs`` once in a seeded order; the last batch may be short."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    n = len(pairs)
    order = np.random.default_rng(epoch_seed).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def evaluate_mse(model, dataset, pairs, batch_size=256):
    """Mean squared error with dropout off; touches neither parameters nor RNGs."""
    if len(pairs) == 0:
        raise DataError("cannot compute MSE over an empty pair set")
    total = 0.0
    for start in range(0, len(pairs), batch_size):
        sl = slice(start, start + batch_size)
        res = model.forward(pairs.users[sl], pairs.items[sl], dataset.user_docs, dataset.item_docs)
        diff = pairs.ratings[sl] - res.prediction.data
        total += float(np.dot(diff, diff))
    return total / len(pairs)


def _seeds(seed):
    init, shuffle, drop = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), shuffle, np.random.default_rng(drop)


def train_step(model, dataset, idx, cfg, opt, rng, touched=None):
    """One forward/backward/update on the training pairs at ``idx``; returns (loss, sse)."""
    pairs = dataset.train
    users, items, targets = pairs.users[idx], pairs.items[idx], pairs.ratings[idx]
    for p in model.params.values():
        p._grad = None
    with ad.Tape() as tape:
        res = model.forward(
            users, items, dataset.user_docs, dataset.item_docs,
            training=True, rng=rng, dropout=cfg.dropout,
        )
        objective = square_loss(res.prediction, targets, model.regularized(), cfg.reg)
        tape.backward(objective)
    grads = {}
    for name, p in model.params.items():
        if p._grad is None:
            continue
        if name == "embeddings":
            p._grad[PAD] = 0.0
        grads[name] = p._grad
        if touched is not None and name not in touched and np.any(p._grad != 0):
            touched.add(name)
    rmsprop_step({n: p.data for n, p in model.params.items()}, grads, opt)
    diff = targets - res.prediction.data
    return float(objective.data), float(np.dot(diff, diff))


def train(dataset, model_config=None, train_config=None, out_dir=None, progress=None):
    """Fit a model on ``dataset.train``; returns ``(model, report)``.

    The returned model carries the selected parameters (best validation
    epoch by default). With ``out_dir`` the checkpoint, report and curve
    files are written there. ``progress(epoch, report, model)`` is called
    after every epoch.
    """
    mcfg = model_config or ModelConfig()
    cfg = train_config or TrainConfig()
    if len(dataset.train) == 0:
        raise DataError("training split is empty")
    init_rng, shuffle_seq, drop_rng = _seeds(cfg.seed)
    model = CarlModel.initialise(
        mcfg, dataset.num_users, dataset.num_items, len(dataset.vocab), init_rng,
        global_mean=float(dataset.train.ratings.mean()),
    )
    opt = RmspropState(cfg.lr, cfg.rho, cfg.eps)
    report = TrainReport()
    has_val = len(dataset.val) > 0
    best_state, best_val, since_best = None, np.inf, 0
    first_loss, bad_epochs = None, 0
    touched = set()

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        epoch_seed = shuffle_seq.spawn(1)[0]
        total_loss = total_sse = 0.0
        for idx in batch_iter(dataset.train, cfg.batch_size, epoch_seed):
            lval, sse = train_step(model, dataset, idx, cfg, opt, drop_rng, touched if epoch == 0 else None)
            total_loss += lval
            total_sse += sse
        n = len(dataset.train)
        report.train_loss.append(total_loss / n)
        report.train_mse.append(total_sse / n)
        if epoch == 0:
            report.untouched = sorted(set(model.params) - touched)
            first_loss = report.train_loss[0]
        elif report.train_loss[-1] > 10 * first_loss:
            bad_epochs += 1
            if bad_epochs >= 3:
                raise DivergenceError(
                    f"epoch loss {report.train_loss[-1]:.4g} exceeded 10x the first epoch's "
                    f"{first_loss:.4g} for 3 epochs"
                )
        else:
            bad_epochs = 0

        if has_val and (epoch + 1) % cfg.eval_every == 0:
            vm = evaluate_mse(model, dataset, dataset.val, cfg.eval_batch_size)
            report.val_mse.append(vm)
            if vm < best_val:
                best_val, since_best = vm, 0
                report.best_epoch = epoch
                best_state = {k: v.copy() for k, v in model.state().items()}
            else:
                since_best += cfg.eval_every
        elif has_val:
            report.val_mse.append(None)
        report.wall_time.append(time.perf_counter() - t0)
        if progress is not None:
            progress(epoch, report, model)
        logger.info(
            "epoch %d loss %.5f train-mse %.5f val-mse %s",
            epoch + 1, report.train_loss[-1], report.train_mse[-1],
            f"{report.val_mse[-1]:.5f}" if report.val_mse and report.val_mse[-1] is not None else "n/a",
        )
        if has_val and cfg.patience and since_best >= cfg.patience:
            report.stopped_early = True
            break

    if cfg.select == "best-val" and best_state is not None:
        model.load_state(best_state)
    else:
        report.best_epoch = len(report.train_loss) - 1
    report.best_val_mse = float(best_val) if has_val else float("nan")
    if cfg.select == "final" and has_val:
        report.best_val_mse = evaluate_mse(model, dataset, dataset.val, cfg.eval_batch_size)
    report.final_train_mse = evaluate_mse(model, dataset, dataset.train, cfg.eval_batch_size)
    if len(dataset.test):
        report.test_mse = evaluate_mse(model, dataset, dataset.test, cfg.eval_batch_size)
    model.optimizer_step = opt.step

    if out_dir is not None:
        write_run(model, report, cfg, out_dir)
    return model, report


def checkpoint_meta(model, train_config=None):
    meta = {
        "model_config": model.config.to_dict(),
        "num_users": model.num_users,
        "num_items": model.num_items,
        "vocab_size": model.vocab_size,
    }
    if train_config is not None:
        meta["train_config"] = asdict(train_config)
    return meta


def write_run(model, report, cfg, out_dir):
    out = Path(out_dir)
    save_checkpoint(
        out / "model.ckpt", model.state(), cfg.seed, getattr(model, "optimizer_step", 0),
        checkpoint_meta(model, cfg),
    )
    report.write(out)
    return out


def model_from_checkpoint(tensors, header):
    meta = header.get("meta", {})
    try:
        mcfg = ModelConfig(**meta["model_config"])
        model = CarlModel.initialise(
            mcfg, meta["num_users"], meta["num_items"], meta["vocab_size"], np.random.default_rng(0)
        )
    except KeyError as exc:
        raise DataError(f"checkpoint metadata lacks {exc}") from None
    model.load_state(tensors)
    return model

