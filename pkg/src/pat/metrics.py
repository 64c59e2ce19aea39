"""ROC AUC as a rank statistic."""

import numpy as np

from .tensor import ContractError


def auc(scores, labels):
    """Area under the ROC curve via midranks (Mann-Whitney U / (n_pos * n_neg)).

    Ties between a positive and a negative count one half.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ContractError(f"{len(scores)} scores but {len(labels)} labels")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUC needs both classes present")

    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    # midranks: tied runs share the mean of their 1-based positions
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    ends = np.r_[starts[1:], len(scores)]
    run_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(len(scores))
    ranks[order] = np.repeat(run_rank, ends - starts)

    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
