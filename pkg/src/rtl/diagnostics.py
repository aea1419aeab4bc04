"""Term-distribution Wasserstein analysis of a selector's final choices.

Terms are placed on the real line at their rank in the lexicographically
sorted union vocabulary (unit spacing), which makes W1 the L1 distance
between the two CDFs over that ordering.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .data import ALIGNED, MISALIGNED

GROUND_METRIC = "lexicographic-rank, unit spacing"

TokenPair = tuple[Sequence[Hashable], Sequence[Hashable], int]


@dataclass(frozen=True)
class TermDistribution:
    support: tuple
    probs: np.ndarray


def term_counts(pairs: Iterable[TokenPair]) -> Counter:
    counts: Counter = Counter()
    for t1, t2, *_ in pairs:
        counts.update(t1)
        counts.update(t2)
    return counts


def shared_support(*counters: Mapping) -> tuple:
    terms = set()
    for c in counters:
        terms.update(c)
    return tuple(sorted(terms))


def term_distribution(pairs: Sequence[TokenPair], support: Sequence | None = None) -> TermDistribution:
    """Normalized frequency of every token occurrence in both sentences.

    Terms of ``support`` absent from ``pairs`` get probability zero.
    """
    if not pairs:
        raise ValueError("term distribution of an empty pair list")
    counts = term_counts(pairs)
    support = tuple(sorted(counts)) if support is None else tuple(support)
    missing = set(counts) - set(support)
    if missing:
        raise ValueError(f"{len(missing)} terms fall outside the given support")
    raw = np.array([counts.get(t, 0) for t in support], dtype=np.float64)
    return TermDistribution(support, raw / raw.sum())


def wasserstein_1(u: TermDistribution, v: TermDistribution) -> float:
    if u.support != v.support:
        raise ValueError("distributions must share the same ordered support")
    return float(kernels.cdf_l1(u.probs, v.probs))


@dataclass
class DistanceReport:
    d_origin: float
    d_select: float
    d_drop: float | None
    d_rand: float
    n_origin: int
    n_select: int
    n_drop: int
    n_rand: int

    @property
    def dropped_empty(self) -> bool:
        return self.n_drop == 0

    def lines(self) -> list[str]:
        rows = [
            ("D_origin", "Target <-> Source", self.d_origin, self.n_origin),
            ("D_select", "Target <-> Source (Selected)", self.d_select, self.n_select),
            ("D_drop", "Target <-> Source (Dropped)", self.d_drop, self.n_drop),
            ("D_rand", "Target <-> Source (Random)", self.d_rand, self.n_rand),
        ]
        out = [f"{'Name':<9} {'Domains in Comparison':<30} {'Distance':>12} {'Pairs':>7}"]
        for name, label, d, n in rows:
            shown = "n/a (empty)" if d is None else f"{d:.3E}"
            out.append(f"{name:<9} {label:<30} {shown:>12} {n:>7}")
        out.append(f"ground metric: {GROUND_METRIC}")
        return out

    def machine_lines(self) -> list[str]:
        def fmt(x):
            return "nan" if x is None else repr(float(x))

        return [
            f"d_origin={fmt(self.d_origin)}",
            f"d_select={fmt(self.d_select)}",
            f"d_drop={fmt(self.d_drop)}",
            f"d_rand={fmt(self.d_rand)}",
            f"n_origin={self.n_origin}",
            f"n_select={self.n_select}",
            f"n_drop={self.n_drop}",
            f"n_rand={self.n_rand}",
            f"dropped_empty={str(self.dropped_empty).lower()}",
            f"ground_metric={GROUND_METRIC}",
        ]


def selection_report(
    final_actions: Mapping[int, int],
    source: Sequence[TokenPair],
    target: Sequence[TokenPair],
    seed: int | np.random.Generator = 0,
) -> DistanceReport:
    """Distances from the target term distribution to the source pairs seen
    in the final episode (origin), the kept and dropped ones, and a random
    subset of the origin pool as large as the kept set."""
    pool = sorted(final_actions)
    if not pool:
        raise ValueError("selection log has no final-episode actions")
    if pool[-1] >= len(source) or pool[0] < 0:
        raise ValueError("selection log refers to pairs outside the source corpus")
    selected = [i for i in pool if final_actions[i] == 1]
    dropped = [i for i in pool if final_actions[i] != 1]
    if not selected:
        raise ValueError("selected set is empty")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    rand = sorted(rng.choice(pool, size=len(selected), replace=False).tolist())

    subsets = {"origin": pool, "select": selected, "drop": dropped, "rand": rand}
    tgt_counts = term_counts(target)
    support = shared_support(tgt_counts, term_counts(source[i] for i in pool))
    tgt = term_distribution(target, support)

    def dist(idx):
        if not idx:
            return None
        return wasserstein_1(tgt, term_distribution([source[i] for i in idx], support))

    d = {k: dist(v) for k, v in subsets.items()}
    return DistanceReport(
        d["origin"], d["select"], d["drop"], d["rand"],
        len(pool), len(selected), len(dropped), len(rand),
    )


def planted_shift_score(final_actions: Mapping[int, int], tags: Sequence[str]) -> tuple[float | None, float | None]:
    """``(misaligned_drop_rate, aligned_drop_rate)`` over final-episode pairs;
    a rate is ``None`` when no pair of that kind was seen."""
    if not tags:
        raise ValueError("origin tags are required")
    drops = {ALIGNED: [0, 0], MISALIGNED: [0, 0]}
    for i, a in final_actions.items():
        if i >= len(tags):
            raise ValueError(f"no origin tag for source pair {i}")
        tag = tags[i]
        if tag not in drops:
            raise ValueError(f"unknown origin tag {tag!r}")
        drops[tag][0] += int(a != 1)
        drops[tag][1] += 1

    def rate(k):
        dropped, total = drops[k]
        return dropped / total if total else None

    return rate(MISALIGNED), rate(ALIGNED)
