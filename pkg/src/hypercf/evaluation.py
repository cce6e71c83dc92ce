"""All-rank evaluation: mask training items, rank everything else, score the
top-N lists with Recall and NDCG.

Every user is scored against every item they have not interacted with in
training; no sampled candidate sets. Ties break by ascending item index so
runs are reproducible across platforms. Users without test interactions are
excluded from metric averages (the denominator is the evaluated-user count).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import InteractionDataset


class EvaluationError(ValueError):
    """Raised when inputs cannot produce a meaningful metric."""


@dataclass
class RankingResult:
    """Per-user top-N item lists; rows padded with -1 past each user's
    valid length min(N, items - training items of the user)."""

    items: np.ndarray  # (num_users, n) int64
    n: int

    @property
    def num_users(self) -> int:
        return self.items.shape[0]

    def user_list(self, u: int) -> np.ndarray:
        row = self.items[u]
        return row[row >= 0]


def score_matrix(user_emb: np.ndarray, item_emb: np.ndarray) -> np.ndarray:
    """Dot-product preference scores, users by items."""
    return np.asarray(user_emb, dtype=np.float64) @ np.asarray(
        item_emb, dtype=np.float64).T


def rank_all(scores: np.ndarray, train: InteractionDataset,
             n: int) -> RankingResult:
    """Top-n items per user by score, training items removed.

    A stable sort on negated scores gives descending order with ascending
    item index on ties. Slots past a user's candidate count hold -1.
    """
    if n < 1:
        raise EvaluationError(f"cutoff must be >= 1, got {n}")
    scores = np.array(scores, dtype=np.float64)
    if scores.shape != (train.num_users, train.num_items):
        raise EvaluationError(
            f"score matrix {scores.shape} does not match dataset "
            f"({train.num_users}, {train.num_items})")
    if not np.all(np.isfinite(scores)):
        raise EvaluationError("scores contain non-finite values")
    scores[train.edges[:, 0], train.edges[:, 1]] = -np.inf

    order = np.argsort(-scores, axis=1, kind="stable")[:, :n]
    top = np.take_along_axis(scores, order, axis=1)
    ranked = np.where(np.isneginf(top), -1, order)

    # fewer items than the cutoff: pad every row out to n
    if ranked.shape[1] < n:
        full = np.full((ranked.shape[0], n), -1, dtype=np.int64)
        full[:, :ranked.shape[1]] = ranked
        ranked = full
    return RankingResult(ranked.astype(np.int64), n)


def _check_cutoff(result: RankingResult, n) -> int:
    if n is None:
        return result.n
    if not 1 <= n <= result.n:
        raise EvaluationError(
            f"cutoff {n} outside the ranked depth {result.n}")
    return n


def recall_at_n(result: RankingResult, test: InteractionDataset,
                n: int = None) -> float:
    """Mean over evaluated users of |top-n hits| / |test items|."""
    n = _check_cutoff(result, n)
    total, evaluated = 0.0, 0
    for u in range(result.num_users):
        relevant = test.items_of(u)
        if not len(relevant):
            continue
        evaluated += 1
        hits = np.isin(result.items[u, :n], relevant).sum()
        total += hits / len(relevant)
    if evaluated == 0:
        raise EvaluationError("no users with test interactions")
    return total / evaluated


def ndcg_at_n(result: RankingResult, test: InteractionDataset,
              n: int = None) -> float:
    """Binary-relevance NDCG: gain 1/log2(rank+1), ideal list of length
    min(n, |test items|), averaged over evaluated users."""
    n = _check_cutoff(result, n)
    discounts = 1.0 / np.log2(np.arange(2, n + 2))
    total, evaluated = 0.0, 0
    for u in range(result.num_users):
        relevant = test.items_of(u)
        if not len(relevant):
            continue
        evaluated += 1
        hit = np.isin(result.items[u, :n], relevant)
        dcg = discounts[hit].sum()
        idcg = discounts[:min(n, len(relevant))].sum()
        total += dcg / idcg
    if evaluated == 0:
        raise EvaluationError("no users with test interactions")
    return total / evaluated


def evaluate_scores(scores: np.ndarray, train: InteractionDataset,
                    test: InteractionDataset, cutoffs=(20,)) -> dict:
    """Recall and NDCG at each cutoff, ranking once at the deepest one."""
    cutoffs = sorted(set(int(c) for c in cutoffs))
    result = rank_all(scores, train, max(cutoffs))
    out = {}
    for c in cutoffs:
        out[f"recall@{c}"] = recall_at_n(result, test, c)
        out[f"ndcg@{c}"] = ndcg_at_n(result, test, c)
    return out


def evaluate_model(model, adj, train: InteractionDataset,
                   test: InteractionDataset, cutoffs=(20,)) -> dict:
    """Convenience wrapper: embed, score, rank, report."""
    user_emb, item_emb = model.embedding_tables(adj)
    return evaluate_scores(score_matrix(user_emb, item_emb), train, test,
                           cutoffs)


def subset_by_group(test: InteractionDataset, assignment: np.ndarray,
                    group: int, axis: str) -> InteractionDataset:
    """Test edges whose user (or item) falls in the given bucket."""
    col = 0 if axis == "user" else 1
    keep = assignment[test.edges[:, col]] == group
    return InteractionDataset.from_edges(test.edges[keep], test.num_users,
                                         test.num_items)


def group_metrics(result: RankingResult, test: InteractionDataset,
                  assignment: np.ndarray, axis: str,
                  n: int = None) -> list:
    """Per-bucket Recall/NDCG rows; empty buckets report nan metrics."""
    rows = []
    for g in range(int(assignment.max()) + 1):
        sub = subset_by_group(test, assignment, g, axis)
        row = {"group": g, "axis": axis, "test_edges": sub.num_edges}
        try:
            row["recall"] = recall_at_n(result, sub, n)
            row["ndcg"] = ndcg_at_n(result, sub, n)
            row["users"] = sum(1 for u in range(sub.num_users)
                               if len(sub.items_of(u)))
        except EvaluationError:
            row["recall"] = float("nan")
            row["ndcg"] = float("nan")
            row["users"] = 0
        rows.append(row)
    return rows


def write_csv(path: str, rows: list, fieldnames=None) -> None:
    """CSV with unix line endings; float formatting is str()'s shortest
    round-trip form, so equal runs give byte-equal files."""
    if not rows:
        raise EvaluationError("refusing to write an empty report")
    fieldnames = fieldnames or list(rows[0].keys())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames,
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_csv(path: str) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
