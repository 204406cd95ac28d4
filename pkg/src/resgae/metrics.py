"""Ranking metrics for link prediction: ROC AUC and average precision."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScoredLabels:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).ravel()
        y = np.asarray(self.labels).ravel()
        if s.shape != y.shape:
            raise ValueError(f"{len(s)} scores but {len(y)} labels")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        y = y.astype(np.int8)
        n_pos = int(y.sum())
        if n_pos == 0 or n_pos == len(y):
            raise ValueError("need at least one positive and one negative label")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)


def _as_scored(scores, labels) -> ScoredLabels:
    if isinstance(scores, ScoredLabels):
        return scores
    return ScoredLabels(scores, labels)


def auc(scores, labels=None) -> float:
    """Mann-Whitney estimate of P(positive outranks negative), ties count half."""
    sl = _as_scored(scores, labels)
    s, y = sl.scores, sl.labels
    order = np.argsort(s, kind="mergesort")
    s_sorted = s[order]
    # 1-based average ranks over tie groups, kept as doubled integers to stay exact
    starts = np.r_[0, np.flatnonzero(np.diff(s_sorted)) + 1]
    ends = np.r_[starts[1:], len(s)]
    twice_rank = np.repeat(starts + ends + 1, ends - starts)
    pos = y[order] == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    # 2U = sum(2*rank over positives) - n_pos*(n_pos+1)
    twice_u = int(twice_rank[pos].sum()) - n_pos * (n_pos + 1)
    return (twice_u / 2) / (n_pos * n_neg)


def average_precision(scores, labels=None) -> float:
    """Non-interpolated AP: mean precision at each positive in the ranking.

    Ranking is by descending score; equal scores keep their input order.
    """
    sl = _as_scored(scores, labels)
    order = np.argsort(-sl.scores, kind="mergesort")
    y = sl.labels[order]
    hits = np.cumsum(y)
    ranks = np.flatnonzero(y) + 1
    return math.fsum((hits[ranks - 1] / ranks).tolist()) / int(hits[-1])


def evaluate_split(z, split, which: str = "test") -> tuple[float, float]:
    """``(auc, ap)`` of decoder scores on the split's held-out positives vs negatives."""
    from .models import decode_pairs

    if which not in ("val", "test"):
        raise ValueError("which must be 'val' or 'test'")
    pos = getattr(split, f"{which}_pos")
    neg = getattr(split, f"{which}_neg")
    scores = decode_pairs(z, np.vstack([pos, neg]))
    labels = np.r_[np.ones(len(pos), dtype=np.int8), np.zeros(len(neg), dtype=np.int8)]
    sl = ScoredLabels(scores, labels)
    return auc(sl), average_precision(sl)


# ------------------------------------------------------ definitional oracles


def auc_bruteforce(scores, labels) -> float:
    """O(n^2) pairwise count, for cross-checking :func:`auc`."""
    s = [float(v) for v in scores]
    y = [int(v) for v in labels]
    pos = [a for a, t in zip(s, y) if t == 1]
    neg = [b for b, t in zip(s, y) if t == 0]
    wins = ties = 0
    for a in pos:
        for b in neg:
            if a > b:
                wins += 1
            elif a == b:
                ties += 1
    return ((2 * wins + ties) / 2) / (len(pos) * len(neg))


def average_precision_bruteforce(scores, labels) -> float:
    """O(n^2): for each positive, count positives ranked at or above it."""
    s = [float(v) for v in scores]
    y = [int(v) for v in labels]
    n = len(s)

    def above(i, j):
        # j is ranked at or above i: higher score, or equal score and earlier index
        return s[j] > s[i] or (s[j] == s[i] and j <= i)

    terms = []
    for i in range(n):
        if y[i] != 1:
            continue
        rank = sum(1 for j in range(n) if above(i, j))
        hits = sum(1 for j in range(n) if y[j] == 1 and above(i, j))
        terms.append(hits / rank)
    return math.fsum(terms) / sum(y)
