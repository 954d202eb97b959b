"""Test-set MSE, ablation variants over several seeds, significance and result tables."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .model import ModelConfig, variant_config
from .trainer import TrainConfig, evaluate_mse, train

logger = logging.getLogger(__name__)


def mse(pairs, model, dataset, batch_size=256):
    """Mean squared error of ``model`` over ``pairs`` (inference mode)."""
    return evaluate_mse(model, dataset, pairs, batch_size)


@dataclass
class EvalResult:
    dataset: str
    variant: str
    per_seed: list
    seeds: list = field(default_factory=list)
    reference: str | None = None
    mean_diff: float = float("nan")
    p_value: float = float("nan")

    @property
    def min(self):
        return float(np.min(self.per_seed))

    @property
    def median(self):
        return float(np.median(self.per_seed))

    @property
    def mean(self):
        return float(np.mean(self.per_seed))

    def to_dict(self):
        d = asdict(self)
        d.update(min=self.min, median=self.median, mean=self.mean)
        return d


def paired_ttest(values, reference):
    """Two-sided paired t-test; returns ``(mean(values - reference), p)``.

    Needs at least two pairs; identical samples give p = 1.
    """
    a = np.asarray(values, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired t-test needs equally many observations")
    diff = a - b
    if len(diff) < 2:
        return float(diff.mean()) if len(diff) else float("nan"), float("nan")
    if np.all(diff == diff[0]):
        return float(diff.mean()), 1.0 if diff[0] == 0 else 0.0
    res = stats.ttest_rel(a, b)
    return float(diff.mean()), float(res.pvalue)


def run_variant(variant, dataset, seeds, train_config=None, base_model=None, dataset_name="", out_dir=None):
    """Train ``variant`` once per seed and collect test MSEs."""
    mcfg = variant_config(variant, base_model or ModelConfig())
    tcfg = train_config or TrainConfig()
    per_seed = []
    for seed in seeds:
        run_dir = None if out_dir is None else Path(out_dir) / variant / f"seed{seed}"
        _, report = train(dataset, mcfg, replace(tcfg, seed=int(seed)), run_dir)
        per_seed.append(report.test_mse)
        logger.info("%s seed %s: test MSE %.5f", variant, seed, report.test_mse)
    return EvalResult(dataset_name, variant, per_seed, [int(s) for s in seeds])


def attach_significance(results, reference):
    """Fill mean difference and p-value of each result against the ``reference`` variant."""
    ref = next((r for r in results if r.variant == reference), None)
    if ref is None:
        return results
    for r in results:
        if r is ref:
            continue
        r.reference = reference
        r.mean_diff, r.p_value = paired_ttest(r.per_seed, ref.per_seed)
    return results


def run_grid(variants, dataset, seeds, train_config=None, base_model=None, dataset_name="",
             reference=None, out_dir=None):
    results = [
        run_variant(v, dataset, seeds, train_config, base_model, dataset_name, out_dir) for v in variants
    ]
    return attach_significance(results, reference or variants[0])


_COLUMNS = ("dataset", "variant", "n_seeds", "min", "median", "mean", "reference", "mean_diff", "p_value", "per_seed")


def _row(r):
    return {
        "dataset": r.dataset,
        "variant": r.variant,
        "n_seeds": len(r.per_seed),
        "min": f"{r.min:.6f}",
        "median": f"{r.median:.6f}",
        "mean": f"{r.mean:.6f}",
        "reference": r.reference or "",
        "mean_diff": "" if math.isnan(r.mean_diff) else f"{r.mean_diff:+.6f}",
        "p_value": "" if math.isnan(r.p_value) else f"{r.p_value:.4g}",
        "per_seed": " ".join(f"{v:.6f}" for v in r.per_seed),
    }


def results_csv(results):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in results:
        writer.writerow(_row(r))
    return buf.getvalue()


def results_markdown(results):
    cols = _COLUMNS[:-1]
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in results:
        row = _row(r)
        lines.append("| " + " | ".join(str(row[c]) for c in cols) + " |")
    return "\n".join(lines) + "\n"


def write_results(results, out_dir, stem="results"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.csv").write_text(results_csv(results))
    (out / f"{stem}.md").write_text(results_markdown(results))
    return out
