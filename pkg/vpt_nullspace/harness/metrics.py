# -*- coding: utf-8 -*-

from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractViolation


class AccuracyMatrix:
    """
    Lower-triangular matrix of accuracies: entry (j, i) is the accuracy of the model after task j
    on the test set of task i (0-based, i <= j). Entries above the diagonal are NaN.
    """

    def __init__(self, tasks: int) -> None:
        if tasks < 1:
            raise ContractViolation(f"An accuracy matrix needs at least one task, got {tasks}.")
        self.tasks = tasks
        self.values = np.full((tasks, tasks), np.nan)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "AccuracyMatrix":
        A = cls(len(rows))
        for j, row in enumerate(rows):
            A.set_row(j, row)
        return A

    def set_row(self, after_task: int, accuracies: Sequence[float]) -> None:
        if not 0 <= after_task < self.tasks:
            raise ContractViolation(f"Task {after_task} is outside of 0..{self.tasks - 1}.")
        if len(accuracies) != after_task + 1:
            raise ContractViolation(
                f"The row after task {after_task} needs {after_task + 1} accuracies, got {len(accuracies)}."
            )
        row = np.asarray(accuracies, dtype=np.float64)
        if np.any(~np.isfinite(row)) or np.any(row < 0) or np.any(row > 1):
            raise ContractViolation(f"Accuracies must be in [0, 1], got {row.tolist()}.")
        self.values[after_task, : after_task + 1] = row

    def row(self, after_task: int) -> List[float]:
        return self.values[after_task, : after_task + 1].tolist()

    def filled(self) -> int:
        """
        Number of leading rows that are complete.
        """
        n = 0
        for j in range(self.tasks):
            if np.any(np.isnan(self.values[j, : j + 1])):
                break
            n += 1
        return n

    def is_complete(self) -> bool:
        return self.filled() == self.tasks

    def rows(self) -> List[List[Optional[float]]]:
        return [[None if np.isnan(v) else float(v) for v in row] for row in self.values]

    def __getitem__(self, index: Tuple[int, int]) -> float:
        return float(self.values[index])


def final_metrics(A: AccuracyMatrix) -> Tuple[float, Optional[float]]:
    """
    Final average accuracy over all tasks, and final average forgetting: for every task before the
    last one, the largest drop from any earlier evaluation (after its own task or later) to the
    final one. Forgetting is None for a single task.
    """
    if not A.is_complete():
        raise ContractViolation(f"The accuracy matrix is filled through task {A.filled()} of {A.tasks}.")
    a = A.values
    last = A.tasks - 1
    accuracy = float(np.mean(a[last]))
    if A.tasks == 1:
        return accuracy, None
    drops = [np.max(a[i:last, i]) - a[last, i] for i in range(last)]
    return accuracy, float(np.mean(drops))


def seed_statistics(values: Sequence[Optional[float]]) -> Tuple[Optional[float], Optional[float]]:
    """
    Mean and population standard deviation of the defined values.
    """
    defined = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if defined.size == 0:
        return None, None
    return float(defined.mean()), float(defined.std())
