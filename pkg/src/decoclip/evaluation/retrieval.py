"""Image-to-text retrieval with Precision@K and the per-class score histogram."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_KS = (1, 2, 5, 10)
HIST_TOP = 10


@dataclass
class RetrievalResult:
    ks: tuple[int, ...]
    precision: dict[int, float]
    query_ids: list[str]
    query_classes: np.ndarray
    ranked_ids: list[list[str]]
    ranked_scores: np.ndarray
    ranked_hits: np.ndarray
    meta: dict = field(default_factory=dict)

    def records(self) -> list[tuple[str, object]]:
        out = [(f"precision@{k}", f"{self.precision[k]:.6f}") for k in self.ks]
        out.append(("queries", len(self.query_ids)))
        out += [(f"meta.{k}", v) for k, v in self.meta.items()]
        return out


def precision_at_k(query_emb, query_classes, cand_emb, cand_classes, cand_ids=None,
                   ks: Sequence[int] = DEFAULT_KS, query_ids=None, keep: int | None = None) -> RetrievalResult:
    """Rank candidates by cosine score per query; ties go to the smaller candidate id."""
    q = np.asarray(query_emb, dtype=np.float64)
    c = np.asarray(cand_emb, dtype=np.float64)
    qc = np.asarray(query_classes)
    cc = np.asarray(cand_classes)
    n_cand = c.shape[0]
    ks = tuple(int(k) for k in ks)
    for k in ks:
        if k < 1 or k > n_cand:
            raise ValueError(f"K={k} outside 1..{n_cand} (candidate count)")
    cand_ids = [str(i) for i in (cand_ids if cand_ids is not None else range(n_cand))]
    query_ids = [str(i) for i in (query_ids if query_ids is not None else range(len(q)))]
    keep = max(max(ks), HIST_TOP) if keep is None else keep
    keep = min(keep, n_cand)

    qn = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
    cn = c / np.maximum(np.linalg.norm(c, axis=1, keepdims=True), 1e-12)
    scores = qn @ cn.T
    id_rank = np.argsort(np.argsort(np.asarray(cand_ids, dtype=object), kind="stable"), kind="stable")
    # lexsort: last key is primary
    order = np.stack([np.lexsort((id_rank, -row)) for row in scores]) if len(q) else np.zeros((0, n_cand), int)
    hits = cc[order] == qc[:, None] if len(q) else np.zeros((0, n_cand), bool)
    precision = {k: float(hits[:, :k].mean()) if len(q) else 0.0 for k in ks}
    top = order[:, :keep]
    return RetrievalResult(
        ks=ks, precision=precision, query_ids=query_ids, query_classes=qc,
        ranked_ids=[[cand_ids[j] for j in row] for row in top],
        ranked_scores=np.take_along_axis(scores, top, axis=1) if len(q) else np.zeros((0, keep)),
        ranked_hits=hits[:, :keep],
    )


def similarity_histogram(query_class, result: RetrievalResult | None, bins=10,
                         value_range=(-1.0, 1.0), top: int = HIST_TOP) -> tuple[np.ndarray, np.ndarray]:
    """Counts of same-class texts among each query's top ``top`` hits, by cosine score.

    Returns ``(counts, edges)``.
    """
    if result is None or not len(result.query_ids):
        edges = np.histogram_bin_edges([], bins=bins, range=value_range)
        return np.zeros(len(edges) - 1, dtype=np.int64), edges
    mask = result.query_classes == query_class
    scores = result.ranked_scores[mask, :top]
    hits = result.ranked_hits[mask, :top]
    counts, edges = np.histogram(scores[hits], bins=bins, range=value_range)
    return counts.astype(np.int64), edges
