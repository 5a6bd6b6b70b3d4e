"""Moving target defense: a pool of classifiers over disjoint counter groups,
with per-iteration classifier selection driven by a 16-bit maximal-length
LFSR (uniform or best-classifier-priority policy)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EmptyEvaluationError
from .models import (
    FeatureView,
    compute_metrics,
    confusion_from_predictions,
    train_decision_tree,
    train_neural_network,
)

LFSR_WIDTH = 16
LFSR_TAPS = (16, 15, 13, 4)  # maximal length: period 2^16 - 1
LFSR_PERIOD = (1 << LFSR_WIDTH) - 1


@dataclass(frozen=True)
class Lfsr:
    state: int

    def __post_init__(self):
        if not 0 < self.state < (1 << LFSR_WIDTH):
            raise ConfigurationError("LFSR state must be a nonzero 16-bit value")

    def next(self):
        """One Fibonacci step: feedback = XOR of tap bits, shift left.

        Returns (new Lfsr, 16-bit output = new state).
        """
        fb = 0
        for tap in LFSR_TAPS:
            fb ^= (self.state >> (tap - 1)) & 1
        new_state = ((self.state << 1) | fb) & LFSR_PERIOD
        return Lfsr(new_state), new_state


def lfsr_from_seed(seed):
    """Map an arbitrary integer seed to a valid LFSR state (0 remaps to 1)."""
    state = seed & LFSR_PERIOD
    return Lfsr(state if state else 1)


class ClassifierSelector:
    """Stateful selection stream over a pool; owns a private LFSR copy."""

    def __init__(self, pool):
        self.n = len(pool.classifiers)
        self.policy = pool.policy
        self.best_index = pool.best_index
        self.lfsr = lfsr_from_seed(pool.seed)

    def _uniform(self, n, skip=None):
        """Exactly uniform draw over n choices (optionally skipping one pool
        index) by rejection sampling on the LFSR output."""
        choices = n if skip is None else n - 1
        limit = choices * (LFSR_PERIOD // choices)
        while True:
            self.lfsr, out = self.lfsr.next()
            u = out - 1  # uniform over 0 .. 2^16 - 2
            if u < limit:
                idx = u % choices
                if skip is not None and idx >= skip:
                    idx += 1
                return idx

    def select(self, tick):
        if self.policy == "uniform":
            return self._uniform(self.n)
        # priority: best classifier every other run, uniform over the rest
        if tick % 2 == 0:
            return self.best_index
        return self._uniform(self.n, skip=self.best_index)


@dataclass(frozen=True)
class MtdPool:
    classifiers: tuple
    policy: str  # "uniform" | "priority"
    seed: int
    best_index: int = 0

    def __post_init__(self):
        if len(self.classifiers) < 2:
            raise ConfigurationError("an MTD pool requires at least 2 classifiers")
        if self.policy not in ("uniform", "priority"):
            raise ConfigurationError(f"unknown policy {self.policy!r}")
        if not 0 <= self.best_index < len(self.classifiers):
            raise ConfigurationError("best_index out of range")
        seen = set()
        for c in self.classifiers:
            overlap = seen.intersection(c.view.counters)
            if overlap:
                raise ConfigurationError(
                    f"classifier views overlap on {sorted(overlap)}"
                )
            seen.update(c.view.counters)

    def selector(self):
        return ClassifierSelector(self)


@dataclass(frozen=True)
class MtdRunReport:
    chosen: np.ndarray  # classifier index per iteration
    predicted: np.ndarray  # 0/1 per iteration
    truth: np.ndarray  # 0/1 per iteration
    selection_histogram: tuple
    pass_count: int
    fail_count: int
    confusion: object
    metrics: object

    @property
    def accuracy(self):
        return self.pass_count / (self.pass_count + self.fail_count)

    def to_json(self, include_records=False):
        obj = {
            "pass": self.pass_count,
            "fail": self.fail_count,
            "accuracy": self.accuracy,
            "selection_histogram": list(self.selection_histogram),
            "confusion": {
                "tp": self.confusion.tp,
                "tn": self.confusion.tn,
                "fp": self.confusion.fp,
                "fn": self.confusion.fn,
            },
            "metrics": {
                "accuracy": self.metrics.accuracy,
                "precision": self.metrics.precision,
                "recall": self.metrics.recall,
            },
        }
        if include_records:
            obj["records"] = [
                {"classifier": int(c), "predicted": int(p), "truth": int(t)}
                for c, p, t in zip(self.chosen, self.predicted, self.truth)
            ]
        return json.dumps(obj)


def _standalone_accuracy(classifier, X, counters, y):
    return float((classifier.predict_labels(X, counters) == y).mean())


def design_pool(
    train,
    grouping,
    algos,
    policy="uniform",
    seed=0,
    best_index=None,
    tree_params=None,
    network_params=None,
):
    """Train one classifier per disjoint counter group.

    `grouping` is an HpcGrouping or a plain list of counter lists. For the
    priority policy, `best_index` defaults to the member with the highest
    training accuracy (ties to the lower index).
    """
    groups = getattr(grouping, "groups", grouping)
    if len(groups) != len(algos):
        raise ConfigurationError("one algorithm per group is required")
    if len(groups) < 2:
        raise ConfigurationError("an MTD pool requires at least 2 classifiers")
    tree_params = tree_params or {}
    network_params = network_params or {}
    members = []
    for i, (group, algo) in enumerate(zip(groups, algos)):
        view = FeatureView.fit(train, group)
        member_seed = seed + 1009 * (i + 1)
        if algo == "decision_tree":
            members.append(
                train_decision_tree(train, view, seed=member_seed, **tree_params)
            )
        elif algo == "neural_network":
            members.append(
                train_neural_network(train, view, seed=member_seed, **network_params)
            )
        else:
            raise ConfigurationError(f"unknown algorithm {algo!r}")
    if best_index is None:
        counters = train.traces[0].counters
        X, y = train.stack(counters)
        accs = [_standalone_accuracy(m, X, counters, y) for m in members]
        best_index = int(np.argmax(accs))
    return MtdPool(
        classifiers=tuple(members),
        policy=policy,
        seed=seed,
        best_index=best_index,
    )


def select_classifier(selector, tick):
    """Classifier index for one iteration tick; advances the selector."""
    return selector.select(tick)


def classify_stream(pool, test):
    """Route every iteration row through a randomly selected pool member and
    account pass/fail against the true labels."""
    if not test.traces:
        raise EmptyEvaluationError("empty test dataset")
    counters = test.traces[0].counters
    X, y = test.stack(counters)
    if len(y) == 0:
        raise EmptyEvaluationError("no iterations to classify")
    member_labels = np.vstack(
        [m.predict_labels(X, counters) for m in pool.classifiers]
    )
    selector = pool.selector()
    chosen = np.array([selector.select(t) for t in range(len(y))])
    predicted = member_labels[chosen, np.arange(len(y))]
    histogram = tuple(
        int((chosen == i).sum()) for i in range(len(pool.classifiers))
    )
    passes = int((predicted == y).sum())
    cc = confusion_from_predictions(predicted, y)
    return MtdRunReport(
        chosen=chosen,
        predicted=predicted,
        truth=y,
        selection_histogram=histogram,
        pass_count=passes,
        fail_count=len(y) - passes,
        confusion=cc,
        metrics=compute_metrics(cc),
    )


def evaluate_pool_sweep(
    train,
    test,
    grouping,
    algo,
    policy,
    sizes,
    seeds,
    tree_params=None,
    network_params=None,
):
    """Mean MTD accuracy per pool size, growing the pool through the
    quality-ordered groups."""
    groups = list(getattr(grouping, "groups", grouping))
    if max(sizes) > len(groups):
        raise ConfigurationError("pool size exceeds the number of groups")
    if min(sizes) < 2:
        raise ConfigurationError("pool sizes must be >= 2")
    table = []
    for size in sizes:
        accs = []
        for seed in seeds:
            pool = design_pool(
                train,
                groups[:size],
                [algo] * size,
                policy=policy,
                seed=seed,
                tree_params=tree_params,
                network_params=network_params,
            )
            accs.append(classify_stream(pool, test).accuracy)
        table.append(
            {
                "size": size,
                "mean_accuracy": float(np.mean(accs)),
                "per_seed": accs,
            }
        )
    return table
