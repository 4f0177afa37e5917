"""Edit-distance based character and word error rates."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class EditCounts:
    substitutions: int
    insertions: int
    deletions: int
    reference_length: int

    @property
    def distance(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def levenshtein_counts(predicted: Sequence, truth: Sequence) -> EditCounts:
    """Unit-cost edit operations turning ``truth`` into ``predicted``.

    Deletions are truth units missing from the prediction, insertions are
    extra predicted units. Backtrace prefers substitution (or match), then
    deletion, then insertion.
    """
    if len(truth) == 0:
        raise ValueError("reference must be nonempty")
    n, m = len(truth), len(predicted)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = truth[i - 1] != predicted[j - 1]
            d[i][j] = min(d[i - 1][j - 1] + cost, d[i - 1][j] + 1, d[i][j - 1] + 1)

    s = ins = dele = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (truth[i - 1] != predicted[j - 1]):
            s += truth[i - 1] != predicted[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(s, ins, dele, n)


def cer(predicted: str, truth: str) -> float:
    return levenshtein_counts(predicted, truth).distance / len(truth)


def wer(predicted: str, truth: str) -> float:
    ref = truth.split()
    if not ref:
        raise ValueError("reference must contain at least one word")
    return levenshtein_counts(predicted.split(), ref).distance / len(ref)


def corpus_cer(predictions: Sequence[str], truths: Sequence[str]) -> float:
    """Total edits over total reference characters."""
    edits = sum(levenshtein_counts(p, t).distance for p, t in zip(predictions, truths))
    return edits / sum(len(t) for t in truths)
