"""Exact cosine retrieval, Recall@K / P@1 / RP / MAP@R and training diagnostics."""

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import normalize_rows


class NoRelevant(ValueError):
    pass


class EmptyLog(ValueError):
    pass


def retrieve(queries, refs=None, same_set=None):
    """Rank references by descending cosine similarity for every query.

    Ties keep ascending reference order. With ``same_set`` (the default when
    ``refs`` is omitted) each query's own index is removed from its ranking,
    so rows have ``n_refs - 1`` entries.

    Returns:
        int array (n_queries, n_ranked) of reference indices.
    """
    if refs is None:
        refs = queries
        same_set = True if same_set is None else same_set
    q, _ = normalize_rows(np.asarray(queries, dtype=np.float64), "query")
    r, _ = normalize_rows(np.asarray(refs, dtype=np.float64), "reference")
    sim = q @ r.T
    order = np.argsort(-sim, axis=1, kind="stable")
    if not same_set:
        return order
    if q.shape[0] != r.shape[0]:
        raise ValueError("same_set retrieval needs as many queries as references")
    keep = order != np.arange(q.shape[0])[:, None]
    return order[keep].reshape(q.shape[0], r.shape[0] - 1)


def compute_metrics(ranking, query_labels, ref_labels, ks=(1, 2, 4, 8)):
    """Recall@K, P@1, R-Precision and MAP@R from a full ranking.

    R is the number of references sharing the query's label; only the top-R
    ranks count for RP and MAP@R.
    """
    ranking = np.asarray(ranking)
    query_labels = np.asarray(query_labels)
    ref_labels = np.asarray(ref_labels)
    rel = ref_labels[ranking] == query_labels[:, None]
    R = rel.sum(axis=1)
    if np.any(R == 0):
        raise NoRelevant(f"query {int(np.flatnonzero(R == 0)[0])} has no relevant reference")
    hits = np.cumsum(rel, axis=1)
    rows = np.arange(rel.shape[0])
    rp = hits[rows, R - 1] / R
    ranks = np.arange(1, rel.shape[1] + 1)
    within_r = ranks[None, :] <= R[:, None]
    ap = np.sum(np.where(rel & within_r, hits / ranks, 0.0), axis=1) / R
    return {
        "recall_at": {int(k): float(np.mean(rel[:, :k].any(axis=1))) for k in ks},
        "p_at_1": float(np.mean(rel[:, 0])),
        "r_precision": float(np.mean(rp)),
        "map_at_r": float(np.mean(ap)),
    }


def mean_cos_to_weight(embeddings, labels, W):
    """Mean cosine between each embedding and the weight column of its label."""
    x_hat, _ = normalize_rows(np.asarray(embeddings, dtype=np.float64), "embedding")
    w_hat, _ = normalize_rows(np.asarray(W, dtype=np.float64).T, "weight column")
    labels = np.asarray(labels, dtype=np.int64)
    return float(np.mean(np.einsum("ij,ij->i", x_hat, w_hat[labels])))


def mean_cos_to_nearest_weight(embeddings, W):
    """Mean over samples of the largest cosine to any weight column."""
    x_hat, _ = normalize_rows(np.asarray(embeddings, dtype=np.float64), "embedding")
    w_hat, _ = normalize_rows(np.asarray(W, dtype=np.float64).T, "weight column")
    return float(np.mean(np.max(x_hat @ w_hat.T, axis=1)))


@dataclass
class EvalReport:
    recall_at: Dict[int, float]
    p_at_1: float
    r_precision: float
    map_at_r: float
    mean_cos_to_weight: Optional[float] = None
    loss_series: List[Tuple[int, float]] = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d["recall_at"] = {str(k): v for k, v in self.recall_at.items()}
        d["loss_series"] = [list(p) for p in self.loss_series]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["recall_at"] = {int(k): v for k, v in d["recall_at"].items()}
        d["loss_series"] = [tuple(p) for p in d.get("loss_series", [])]
        return cls(**d)


def evaluate_embeddings(embeddings, labels, ks=(1, 2, 4, 8), gallery=None, gallery_labels=None):
    """Self-excluded retrieval on ``embeddings``, or query-vs-gallery when given."""
    if gallery is None:
        ranking = retrieve(embeddings)
        metrics = compute_metrics(ranking, labels, labels, ks)
    else:
        ranking = retrieve(embeddings, gallery, same_set=False)
        metrics = compute_metrics(ranking, labels, gallery_labels, ks)
    return EvalReport(**metrics)


def difficulty_series(log):
    """(step, loss) pairs from a training log, sorted by step.

    ``log`` is an iterable of mappings with ``step`` and ``loss`` keys or of
    (step, loss) pairs.
    """
    pairs = []
    for entry in log:
        if isinstance(entry, dict):
            pairs.append((int(entry["step"]), float(entry["loss"])))
        else:
            step, loss = entry
            pairs.append((int(step), float(loss)))
    if not pairs:
        raise EmptyLog("training log has no loss entries")
    return sorted(pairs, key=lambda p: p[0])


def max_single_step_increase(series, start_step=0):
    """Largest loss(i) - loss(i-1) for consecutive entries at or after ``start_step``."""
    losses = [loss for step, loss in series if step >= start_step]
    if len(losses) < 2:
        return 0.0
    return float(np.max(np.diff(losses)))
