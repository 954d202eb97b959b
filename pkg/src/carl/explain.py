"""Per-pair attention heat maps over the user and item review documents."""

from __future__ import annotations

import html
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .corpus import PAD
from .errors import ConfigError

logger = logging.getLogger(__name__)

BANDS = 5
_HTML_ALPHA = (0.0, 0.15, 0.35, 0.6, 0.9)
_ANSI_BG = (None, 224, 217, 210, 203)


@dataclass
class DocumentHeat:
    tokens: list
    positions: list  # index of each token in the padded document
    raw_weights: list  # attention values exactly as computed
    weights: list  # raw weights renormalised over non-pad positions
    bands: list  # 0 (weakest) .. BANDS-1 (strongest)


@dataclass
class HeatmapReport:
    user_id: str
    item_id: str
    true_rating: float | None
    predicted_rating: float
    alpha: float
    user: DocumentHeat
    item: DocumentHeat
    renormalized: bool = True
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def percentile_bands(weights, bands=BANDS):
    """Bucket weights by percentile rank; equal weights always share a band."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        return []
    ranks = rankdata(w, method="average") / w.size
    return [int(b) for b in np.minimum((ranks * bands - 1e-9).astype(int), bands - 1)]


def _heat(doc, raw, vocab):
    doc = np.asarray(doc)
    raw = np.asarray(raw, dtype=np.float64)
    keep = np.flatnonzero(doc != PAD)
    kept = raw[keep]
    total = kept.sum()
    weights = kept / total if keep.size and total > 0 else kept
    return DocumentHeat(
        tokens=vocab.decode(doc[keep].tolist()),
        positions=keep.tolist(),
        raw_weights=kept.tolist(),
        weights=weights.tolist(),
        bands=percentile_bands(kept),
    )


def _true_rating(dataset, u, i):
    for pairs in (dataset.train, dataset.val, dataset.test):
        hit = np.flatnonzero((pairs.users == u) & (pairs.items == i))
        if hit.size:
            return float(pairs.ratings[hit[0]])
    return None


def explain(user_id, item_id, model, dataset):
    """Run the review path for one pair with trace retention and map weights to words."""
    if model.review_tower is None:
        raise ConfigError("this model has no review component to explain")
    u, i = dataset.encode_pair(user_id, item_id)
    res = model.forward([u], [i], dataset.user_docs, dataset.item_docs, keep_trace=True)
    trace = res.trace
    user_heat = _heat(dataset.user_docs[u], trace.user_weights.data[0], dataset.vocab)
    item_heat = _heat(dataset.item_docs[i], trace.item_weights.data[0], dataset.vocab)
    warnings = []
    for kind, heat in (("user", user_heat), ("item", item_heat)):
        if not heat.tokens:
            msg = f"{kind} document is all padding; nothing to highlight"
            warnings.append(msg)
            logger.warning(msg)
    return HeatmapReport(
        user_id=user_id,
        item_id=item_id,
        true_rating=_true_rating(dataset, u, i),
        predicted_rating=float(res.prediction.data[0]),
        alpha=float(res.alpha.data[0]),
        user=user_heat,
        item=item_heat,
        warnings=warnings,
    )


def _html_doc(title, heat):
    spans = []
    for tok, band, w in zip(heat.tokens, heat.bands, heat.weights):
        spans.append(
            f'<span title="{w:.4g}" style="background-color: rgba(220, 40, 40, {_HTML_ALPHA[band]}); '
            f'padding: 0 1px;">{html.escape(tok)}</span>'
        )
    body = " ".join(spans) if spans else "<em>(empty document)</em>"
    return f'<h2 style="font-size: 1.1em;">{html.escape(title)}</h2>\n<p style="line-height: 1.8;">{body}</p>'


def render_html(report):
    """Self-contained page (inline styles only)."""
    true = "n/a" if report.true_rating is None else f"{report.true_rating:g}"
    head = (
        f"user {html.escape(report.user_id)} / item {html.escape(report.item_id)}: "
        f"true {true}, predicted {report.predicted_rating:.3f}, alpha {report.alpha:.3f}"
    )
    notes = "".join(f"<p style=\"color: #a60;\">{html.escape(w)}</p>" for w in report.warnings)
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>attention heat map</title></head>\n"
        "<body style=\"font-family: sans-serif; max-width: 60em; margin: 2em auto;\">\n"
        f"<h1 style=\"font-size: 1.3em;\">{head}</h1>\n{notes}"
        f"<p style=\"color: #666;\">Weights renormalised over non-pad tokens; "
        f"shading shows {BANDS} percentile bands.</p>\n"
        f"{_html_doc('User review document', report.user)}\n"
        f"{_html_doc('Item review document', report.item)}\n"
        "</body></html>\n"
    )


def _ansi_doc(heat):
    out = []
    for tok, band in zip(heat.tokens, heat.bands):
        color = _ANSI_BG[band]
        out.append(tok if color is None else f"\x1b[48;5;{color}m{tok}\x1b[0m")
    return " ".join(out) if out else "(empty document)"


def render_ansi(report):
    true = "n/a" if report.true_rating is None else f"{report.true_rating:g}"
    lines = [
        f"user {report.user_id} / item {report.item_id}: true {true}, "
        f"predicted {report.predicted_rating:.3f}, alpha {report.alpha:.3f}",
        *(f"warning: {w}" for w in report.warnings),
        "",
        "[user document]",
        _ansi_doc(report.user),
        "",
        "[item document]",
        _ansi_doc(report.item),
    ]
    return "\n".join(lines) + "\n"
