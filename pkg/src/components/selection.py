"""
Parent selection over per-case correctness.

Lexicase filters the pool through a shuffled case sequence, keeping only
the candidates that classify each case correctly. Tournament picks the
best average accuracy; random picks uniformly.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from src.core.errors import ContractError
from src.components.network import predict


class SelectionMode(str, Enum):
    """How lexicase handles a case that every survivor gets wrong"""
    MODIFIED = "modified"
    ORIGINAL = "original"


class Termination(str, Enum):
    SINGLE_SURVIVOR = "single-survivor"
    ALL_FAIL_RANDOM = "all-fail-random"
    EXHAUSTED_RANDOM = "exhausted-random"


@dataclass(frozen=True)
class SelectionOutcome:
    selected: int
    cases_consumed: int
    termination: Termination
    trace: tuple = ()

    def to_dict(self):
        return {
            "selected": self.selected,
            "cases_consumed": self.cases_consumed,
            "termination": self.termination.value,
            "survivor_trace": list(self.trace),
        }


class CorrectnessProvider:
    """
    Lazily evaluated, cached (candidate, case) -> correct table.

    A pair is computed at most once for the provider's lifetime, which is
    one selection event. Subclasses implement ``_compute``.
    """
    def __init__(self, num_candidates, num_cases):
        self.num_candidates = num_candidates
        self.num_cases = num_cases
        self._known = np.zeros((num_candidates, num_cases), dtype=bool)
        self._value = np.zeros((num_candidates, num_cases), dtype=bool)
        self.evaluations = 0

    def _compute(self, candidates, cases):
        raise NotImplementedError

    def evaluate(self, candidates, cases):
        """Boolean block [len(candidates), len(cases)]"""
        candidates = list(candidates)
        cases = np.asarray(cases, dtype=np.int64)
        # candidates missing the same cases are evaluated together
        groups = {}
        for candidate in candidates:
            missing = cases[~self._known[candidate, cases]]
            if missing.size:
                groups.setdefault(missing.tobytes(), (missing, []))[1].append(candidate)
        for missing, members in groups.values():
            block = np.asarray(self._compute(members, missing), dtype=bool)
            rows = np.ix_(members, missing)
            self._value[rows] = block
            self._known[rows] = True
            self.evaluations += block.size
        return self._value[np.ix_(candidates, cases)]

    def accuracies(self, candidates, cases):
        """Fraction of ``cases`` each candidate gets right"""
        return self.evaluate(candidates, cases).mean(axis=1)


class MatrixCorrectness(CorrectnessProvider):
    """Provider backed by a precomputed [candidates, cases] table"""
    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=bool)
        super().__init__(*matrix.shape)
        self.matrix = matrix

    def _compute(self, candidates, cases):
        return self.matrix[np.ix_(candidates, cases)]


class ModelCorrectness(CorrectnessProvider):
    """Provider that runs candidate models on normalized, un-augmented training cases"""
    def __init__(self, models, dataset, executor=None):
        super().__init__(len(models), len(dataset))
        self.models = list(models)
        self.dataset = dataset
        self.executor = executor

    def _compute(self, candidates, cases):
        return batched_correctness([self.models[c] for c in candidates], cases,
                                   self.dataset, self.executor)


def batched_correctness(candidates, cases, dataset, executor=None):
    """
    Correctness block [len(candidates), len(cases)] from one forward pass
    per candidate over the case window. Rows come back in candidate order
    whether or not an executor fans the work out.
    """
    cases = np.asarray(cases, dtype=np.int64)
    if cases.size < 1:
        raise ContractError("correctness window must hold at least one case")
    batch = dataset.normalized(cases)
    labels = dataset.labels[cases]

    def row(model):
        return predict(model, batch) == labels

    rows = executor.map(row, candidates) if executor is not None else map(row, candidates)
    return np.array(list(rows), dtype=bool).reshape(len(candidates), len(cases))


def _order_of(seq):
    return np.asarray(getattr(seq, "order", seq), dtype=np.int64)


def lexicase_select(provider, pool, seq, rng, mode=SelectionMode.MODIFIED, window=1, trace_cap=None):
    """
    Walk the case sequence, keeping only survivors that are correct on each
    case. Stops with one survivor, on an all-fail case in modified mode, or
    when the sequence runs out; the last two pick uniformly among survivors.

    Cases are evaluated ``window`` at a time; eliminations are still applied
    case by case, so the outcome does not depend on the window size.
    """
    survivors = sorted(set(pool))
    if not survivors:
        raise ContractError("lexicase selection needs a non-empty pool")
    order = _order_of(seq)
    if order.size < 1:
        raise ContractError("lexicase selection needs a non-empty case sequence")
    if window < 1:
        raise ContractError(f"window must be >= 1, got {window}")
    mode = SelectionMode(mode)
    if len(survivors) == 1:
        return SelectionOutcome(survivors[0], 0, Termination.SINGLE_SURVIVOR)

    trace = []

    def note(count):
        if trace_cap is None or len(trace) < trace_cap:
            trace.append(count)

    consumed = 0
    for start in range(0, order.size, window):
        chunk = order[start:start + window]
        block = provider.evaluate(survivors, chunk)
        rows = {candidate: block[i] for i, candidate in enumerate(survivors)}
        for j in range(chunk.size):
            consumed += 1
            correct = [candidate for candidate in survivors if rows[candidate][j]]
            if correct:
                survivors = correct
            elif mode is SelectionMode.MODIFIED:
                note(len(survivors))
                pick = survivors[int(rng.integers(len(survivors)))]
                return SelectionOutcome(pick, consumed, Termination.ALL_FAIL_RANDOM, tuple(trace))
            note(len(survivors))
            if len(survivors) == 1:
                return SelectionOutcome(survivors[0], consumed, Termination.SINGLE_SURVIVOR, tuple(trace))

    pick = survivors[int(rng.integers(len(survivors)))]
    return SelectionOutcome(pick, consumed, Termination.EXHAUSTED_RANDOM, tuple(trace))


def tournament_select(accuracies, rng):
    """Index of the best accuracy; ties broken uniformly at random"""
    accuracies = np.asarray(accuracies, dtype=np.float64)
    if accuracies.size < 1:
        raise ContractError("tournament selection needs at least one candidate")
    best = np.flatnonzero(accuracies == accuracies.max())
    return int(best[rng.integers(len(best))])


def random_select(pool_size, rng):
    if pool_size < 1:
        raise ContractError(f"pool size must be >= 1, got {pool_size}")
    return int(rng.integers(pool_size))
