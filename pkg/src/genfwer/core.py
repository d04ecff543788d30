"""Domain types shared by every other module.

P-value vectors, their stable ordering, truth labels, rejection sets, and
the two per-replicate error metrics (false rejections and FDP).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import IdentifierMismatchError, ParameterError

__all__ = [
    "PValueVector",
    "OrderedPValues",
    "TruthAssignment",
    "RejectionSet",
    "order_pvalues",
    "false_rejection_count",
    "fdp",
    "as_rational",
    "default_ids",
]


def default_ids(s: int) -> tuple[str, ...]:
    return tuple(f"H{i}" for i in range(1, s + 1))


def as_rational(x, name: str = "value") -> Fraction:
    """Convert a level-like number to an exact rational.

    Strings are parsed as decimals (``"0.05"``) or fractions (``"1/10"``).
    Floats are read through their shortest round-trip decimal, so ``0.29``
    becomes ``29/100`` rather than its binary expansion.
    """
    if isinstance(x, bool):
        raise ParameterError(f"{name} must be a number, got {x!r}")
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        if not np.isfinite(x):
            raise ParameterError(f"{name} must be finite, got {x!r}")
        return Fraction(repr(x))
    if isinstance(x, str):
        try:
            return Fraction(x.strip())
        except (ValueError, ZeroDivisionError):
            raise ParameterError(f"cannot parse {name} {x!r} as a decimal or fraction") from None
    if isinstance(x, np.floating):
        return as_rational(float(x), name)
    if isinstance(x, np.integer):
        return Fraction(int(x))
    raise ParameterError(f"{name} must be a number or numeric string, got {type(x).__name__}")


@dataclass(frozen=True)
class PValueVector:
    """``s`` p-values with unique, opaque string identifiers.

    Construct from parallel sequences; ``PValueVector.from_values`` supplies
    ids ``H1..Hs`` when none are given.
    """

    ids: tuple[str, ...]
    p: np.ndarray = field(repr=False)

    def __post_init__(self):
        ids = tuple(self.ids)
        p = np.array(self.p, dtype=float).reshape(-1)
        if len(ids) == 0:
            raise ParameterError("a p-value vector needs at least one entry")
        if len(ids) != p.shape[0]:
            raise ParameterError(f"{len(ids)} ids but {p.shape[0]} p-values")
        for i in ids:
            if not isinstance(i, str) or not i:
                raise ParameterError(f"ids must be nonempty strings, got {i!r}")
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise ParameterError(f"duplicate id {dup!r}")
        bad = ~((p >= 0.0) & (p <= 1.0))
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise ParameterError(f"p-value for {ids[j]!r} is {p[j]!r}, outside [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "p", p)

    @classmethod
    def from_values(cls, p: Sequence[float], ids: Sequence[str] | None = None) -> "PValueVector":
        p = np.asarray(p, dtype=float).reshape(-1)
        return cls(tuple(ids) if ids is not None else default_ids(p.shape[0]), p)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, float]]) -> "PValueVector":
        pairs = list(pairs)
        return cls(tuple(i for i, _ in pairs), np.array([v for _, v in pairs], dtype=float))

    @property
    def s(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return self.s

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.ids, self.p.tolist()))


@dataclass(frozen=True)
class OrderedPValues:
    """Stable nondecreasing ordering of a :class:`PValueVector`.

    ``order[r]`` is the input position of the hypothesis at rank ``r + 1``.
    """

    source: PValueVector
    order: np.ndarray = field(repr=False)

    @property
    def s(self) -> int:
        return self.source.s

    @property
    def sorted_p(self) -> np.ndarray:
        return self.source.p[self.order]

    @property
    def sorted_ids(self) -> tuple[str, ...]:
        ids = self.source.ids
        return tuple(ids[j] for j in self.order)

    @property
    def sorted(self) -> list[tuple[str, float]]:
        return list(zip(self.sorted_ids, self.sorted_p.tolist()))

    @property
    def rank_of(self) -> dict[str, int]:
        return {i: r for r, i in enumerate(self.sorted_ids, start=1)}

    @property
    def tie_groups(self) -> list[tuple[str, ...]]:
        """Maximal runs of equal p-values, each in input order."""
        groups: list[tuple[str, ...]] = []
        ids = self.sorted_ids
        p = self.sorted_p
        start = 0
        for r in range(1, self.s + 1):
            if r == self.s or p[r] != p[start]:
                groups.append(ids[start:r])
                start = r
        return groups

    def ids_at_ranks(self, r: int) -> frozenset[str]:
        """Ids of the hypotheses at ranks ``1..r``."""
        return frozenset(self.sorted_ids[:r])


def order_pvalues(pv: PValueVector) -> OrderedPValues:
    order = np.argsort(pv.p, kind="stable")
    order.setflags(write=False)
    return OrderedPValues(pv, order)


@dataclass(frozen=True)
class TruthAssignment:
    """Which hypotheses are true nulls. Only known inside simulations."""

    true_nulls: frozenset[str]
    false_nulls: frozenset[str]

    def __post_init__(self):
        t = frozenset(self.true_nulls)
        f = frozenset(self.false_nulls)
        both = t & f
        if both:
            raise ParameterError(f"ids labelled both true and false null: {sorted(both)[:5]}")
        object.__setattr__(self, "true_nulls", t)
        object.__setattr__(self, "false_nulls", f)

    @classmethod
    def from_mask(cls, ids: Sequence[str], null_mask: Sequence[bool]) -> "TruthAssignment":
        null_mask = np.asarray(null_mask, dtype=bool)
        if len(ids) != null_mask.shape[0]:
            raise ParameterError(f"{len(ids)} ids but {null_mask.shape[0]} truth labels")
        return cls(
            frozenset(i for i, m in zip(ids, null_mask) if m),
            frozenset(i for i, m in zip(ids, null_mask) if not m),
        )

    @classmethod
    def all_null(cls, ids: Iterable[str]) -> "TruthAssignment":
        return cls(frozenset(ids), frozenset())

    @property
    def ids(self) -> frozenset[str]:
        return self.true_nulls | self.false_nulls


@dataclass(frozen=True)
class RejectionSet:
    rejected: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "rejected", frozenset(self.rejected))

    @property
    def count(self) -> int:
        return len(self.rejected)

    def __contains__(self, item) -> bool:
        return item in self.rejected

    def __len__(self) -> int:
        return self.count

    def union(self, other: "RejectionSet | Iterable[str]") -> "RejectionSet":
        extra = other.rejected if isinstance(other, RejectionSet) else frozenset(other)
        return RejectionSet(self.rejected | extra)


def _check_ids(rej: RejectionSet, truth: TruthAssignment) -> None:
    unknown = rej.rejected - truth.ids
    if unknown:
        raise IdentifierMismatchError(f"rejected ids not in truth assignment: {sorted(unknown)[:5]}")


def false_rejection_count(rej: RejectionSet, truth: TruthAssignment) -> int:
    _check_ids(rej, truth)
    return len(rej.rejected & truth.true_nulls)


def fdp(rej: RejectionSet, truth: TruthAssignment) -> float:
    """False discovery proportion; 0 when nothing is rejected."""
    v = false_rejection_count(rej, truth)
    if rej.count == 0:
        return 0.0
    return v / rej.count


def truth_from_mapping(labels: Mapping[str, bool]) -> TruthAssignment:
    return TruthAssignment(
        frozenset(i for i, null in labels.items() if null),
        frozenset(i for i, null in labels.items() if not null),
    )
