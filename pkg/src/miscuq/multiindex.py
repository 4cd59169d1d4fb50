"""Downward-closed extended multi-index sets and combination coefficients.

An extended index pairs a fidelity level ``alpha`` with a grid-level
multi-index ``beta``; sets of them are value objects kept in canonical
(lexicographic) order so iteration and serialization are deterministic.
"""

from __future__ import annotations

from itertools import product
from typing import Iterable, NamedTuple

__all__ = [
    "ExtIndex",
    "MultiIndexSet",
    "is_downward_closed",
    "combination_coefficients",
    "reduced_margin",
]


class ExtIndex(NamedTuple):
    alpha: int
    beta: tuple[int, ...]

    def as_vector(self) -> tuple[int, ...]:
        return (self.alpha, *self.beta)

    def shifted(self, offsets: tuple[int, ...]) -> "ExtIndex":
        """Componentwise shift by (d_alpha, d_beta_1, ...)."""
        return ExtIndex(self.alpha + offsets[0],
                        tuple(b + o for b, o in zip(self.beta, offsets[1:])))


def _backward_neighbors(e: ExtIndex):
    vec = e.as_vector()
    for n, c in enumerate(vec):
        if c > 1:
            nb = list(vec)
            nb[n] -= 1
            yield ExtIndex(nb[0], tuple(nb[1:]))


def _forward_neighbors(e: ExtIndex):
    vec = e.as_vector()
    for n in range(len(vec)):
        nb = list(vec)
        nb[n] += 1
        yield ExtIndex(nb[0], tuple(nb[1:]))


def is_downward_closed(entries: Iterable[ExtIndex]) -> bool:
    """True iff every backward neighbor of every entry is in the set."""
    s = set(entries)
    return all(nb in s for e in s for nb in _backward_neighbors(e))


class MultiIndexSet:
    """Finite downward-closed set of extended indices; immutable value type."""

    __slots__ = ("entries", "dim")

    def __init__(self, entries: Iterable[ExtIndex], dim: int | None = None):
        normalized = []
        for e in entries:
            e = ExtIndex(int(e[0]), tuple(int(b) for b in e[1]))
            if e.alpha < 1 or any(b < 1 for b in e.beta):
                raise ValueError(f"extended index components must be >= 1, got {e}")
            normalized.append(e)
        entries = tuple(sorted(set(normalized)))
        dims = {len(e.beta) for e in entries}
        if len(dims) > 1:
            raise ValueError(f"inconsistent beta dimensions: {sorted(dims)}")
        if dims:
            dim = dims.pop()
        elif dim is None:
            raise ValueError("empty set needs an explicit dim")
        if not is_downward_closed(entries):
            raise ValueError("entries do not form a downward-closed set")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "dim", int(dim))

    def __setattr__(self, *_):
        raise AttributeError("MultiIndexSet is immutable")

    @property
    def max_alpha(self) -> int:
        return max((e.alpha for e in self.entries), default=0)

    def with_entry(self, e: ExtIndex) -> "MultiIndexSet":
        return MultiIndexSet(self.entries + (e,), dim=self.dim)

    def __contains__(self, e) -> bool:
        return e in set(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, MultiIndexSet) and self.entries == other.entries

    def __hash__(self) -> int:
        return hash(self.entries)

    def __repr__(self) -> str:
        return f"MultiIndexSet({list(self.entries)!r})"


def _as_index_set(entries) -> MultiIndexSet:
    if isinstance(entries, MultiIndexSet):
        return entries
    return MultiIndexSet(entries)


def combination_coefficients(index_set) -> dict[ExtIndex, int]:
    """Integer combination weights; zero-weight entries are omitted.

    The weight of [alpha, beta] sums (-1)^(i + |j|_1) over the unit shifts
    (i, j) in {0,1}^(1+N) for which [alpha+i, beta+j] is in the set.  The
    sign includes the fidelity shift i, which is what makes the weighted sum
    of tensor interpolants telescope over both the fidelity and the grid
    levels (verified against a difference-operator expansion in the tests).
    """
    index_set = _as_index_set(index_set)
    members = set(index_set.entries)
    coeffs: dict[ExtIndex, int] = {}
    shifts = list(product((0, 1), repeat=1 + index_set.dim))
    for e in index_set:
        c = 0
        for offsets in shifts:
            if e.shifted(offsets) in members:
                c += -1 if sum(offsets) % 2 else 1
        if c != 0:
            coeffs[e] = c
    return coeffs


def reduced_margin(index_set) -> tuple[ExtIndex, ...]:
    """Indices outside the set whose every backward neighbor is inside.

    Adding any returned index keeps the set downward closed.  Returned in
    canonical sorted order.
    """
    index_set = _as_index_set(index_set)
    members = set(index_set.entries)
    candidates = {nb for e in index_set for nb in _forward_neighbors(e)} - members
    margin = [c for c in candidates if all(nb in members for nb in _backward_neighbors(c))]
    return tuple(sorted(margin))
