"""Finite modular lattices, polarizations, Harder-Narasimhan and weight
filtrations.

Lattice elements are plain ``int`` ids into a concrete lattice. Two concrete
lattices exist: :class:`SubsetLattice` enumerates the closed vertex subsets of
a directed graph and works on bitmasks, :class:`TableLattice` stores meet and
join tables for arbitrary (small) modular lattices such as sublattices and
projector lattices.

All stability arithmetic is exact: central charges are pairs of
:class:`fractions.Fraction` and phases are compared through slopes
``Im Z / Re Z``.
"""

from __future__ import annotations

import abc
import enum
import functools
import itertools
import logging
import math
import typing
from dataclasses import dataclass
from fractions import Fraction

import networkx as nx
import numpy as np
import numpy.typing as npt
from scipy import optimize

from ._errors import (
    ConsistencyError,
    DomainError,
    LatticeTooLargeError,
    NotALatticeError,
)

logger = logging.getLogger(__name__)

#: Enumeration cap for :class:`SubsetLattice`.
SUBSET_LIMIT = 2**14
#: Cap for :class:`TableLattice`, whose tables are quadratic in size.
TABLE_LIMIT = 2**12
#: Guard for the recursion of :func:`iterated_weight_filtration`.
MAX_ITERATION_DEPTH = 16

Number = typing.Union[int, float, Fraction]


def exact(value: Number | str) -> Fraction:
    """Convert a number to a Fraction through its decimal text, so 0.1 is 1/10."""
    if isinstance(value, (Fraction, int)):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise DomainError(f"non-finite value {value!r}")
        return Fraction(repr(value))
    return Fraction(value)


def rationalize(value: float, max_denominator: int = 10**6) -> Fraction:
    """Snap a floating point result of numerical linear algebra to a nearby rational."""
    return Fraction(value).limit_denominator(max_denominator)


# ---------------------------------------------------------------------------
# K-classes and polarizations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KClass:
    """Multiplicities of simple composition factors of an interval."""

    coordinates: tuple[int, ...]

    def __add__(self, other: KClass) -> KClass:
        if len(self.coordinates) != len(other.coordinates):
            raise DomainError("K-classes of different lattices cannot be added")
        return KClass(tuple(a + b for a, b in zip(self.coordinates, other.coordinates)))

    def is_zero(self) -> bool:
        return not any(self.coordinates)

    def is_nonnegative(self) -> bool:
        return all(c >= 0 for c in self.coordinates)


@dataclass(frozen=True)
class Polarization:
    """Additive central charge ``Z`` given by its values on simple classes."""

    real: tuple[Fraction, ...]
    imag: tuple[Fraction, ...]

    def __post_init__(self) -> None:
        if len(self.real) != len(self.imag):
            raise DomainError("real and imaginary parts have different lengths")
        # Positivity on simple classes is enough by additivity.
        for index, value in enumerate(self.real):
            if value <= 0:
                raise DomainError(
                    f"Re Z of simple class {index} is {value}, must be positive"
                )

    @classmethod
    def real_valued(cls, values: typing.Iterable[Number]) -> Polarization:
        real = tuple(exact(v) for v in values)
        return cls(real, tuple(Fraction(0) for _ in real))

    @classmethod
    def from_interval_function(
        cls,
        lattice: FiniteLattice,
        function: typing.Callable[[int, int], complex | tuple[Number, Number]],
        *,
        snap: bool = False,
    ) -> Polarization:
        """Evaluate an additive interval function on one cover per K-class."""
        real: list[Fraction] = []
        imag: list[Fraction] = []
        for lower, upper in lattice.class_representatives():
            value = function(lower, upper)
            if isinstance(value, complex):
                re, im = value.real, value.imag
            else:
                re, im = value  # type: ignore[misc]
            if snap:
                real.append(rationalize(float(re)))
                imag.append(rationalize(float(im)))
            else:
                real.append(exact(re))
                imag.append(exact(im))
        return cls(tuple(real), tuple(imag))

    @property
    def is_real(self) -> bool:
        return not any(self.imag)

    def __call__(self, c: KClass) -> tuple[Fraction, Fraction]:
        if len(c.coordinates) != len(self.real):
            raise DomainError("K-class does not belong to this polarization")
        re = sum((n * x for n, x in zip(c.coordinates, self.real)), Fraction(0))
        im = sum((n * x for n, x in zip(c.coordinates, self.imag)), Fraction(0))
        return re, im

    def realified(self) -> Polarization:
        return Polarization(self.real, tuple(Fraction(0) for _ in self.real))


def phase(z: Polarization, c: KClass) -> float:
    """Arg Z(c) in (-pi/2, pi/2)."""
    if c.is_zero():
        raise DomainError("the phase of the zero class is undefined")
    if not c.is_nonnegative():
        raise DomainError("phases are only defined on nonnegative classes")
    re, im = z(c)
    return math.atan2(float(im), float(re))


# ---------------------------------------------------------------------------
# Lattices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Birkhoff:
    """Join-irreducible description of a distributive lattice.

    ``relations`` holds covering pairs ``(upper, lower)`` of irreducibles:
    every element above ``upper`` is above ``lower``.
    """

    irreducibles: tuple[int, ...]
    classes: tuple[int, ...]
    relations: tuple[tuple[int, int], ...]
    element_from: typing.Callable[[typing.Iterable[int]], int]


class FiniteLattice(abc.ABC):
    """A finite modular lattice with elements ``0 .. size - 1``."""

    def __init__(self) -> None:
        self._complemented: dict[tuple[int, int], bool] = {}

    @property
    @abc.abstractmethod
    def size(self) -> int: ...

    @property
    def elements(self) -> range:
        return range(self.size)

    @property
    @abc.abstractmethod
    def bottom(self) -> int: ...

    @property
    @abc.abstractmethod
    def top(self) -> int: ...

    @abc.abstractmethod
    def leq(self, a: int, b: int) -> bool: ...

    @abc.abstractmethod
    def meet(self, a: int, b: int) -> int: ...

    @abc.abstractmethod
    def join(self, a: int, b: int) -> int: ...

    @abc.abstractmethod
    def upper_covers(self, a: int) -> tuple[int, ...]: ...

    @abc.abstractmethod
    def lower_covers(self, a: int) -> tuple[int, ...]: ...

    @property
    @abc.abstractmethod
    def class_count(self) -> int: ...

    @abc.abstractmethod
    def cover_class(self, lower: int, upper: int) -> int:
        """K-class index of the simple interval ``[lower, upper]``."""

    @abc.abstractmethod
    def class_representatives(self) -> list[tuple[int, int]]:
        """One cover per K-class, in class order."""

    @abc.abstractmethod
    def birkhoff(self) -> Birkhoff | None:
        """Join-irreducible data, or None when the lattice is not distributive."""

    def label(self, a: int) -> str:
        return str(a)

    def check_element(self, a: int) -> None:
        if not 0 <= a < self.size:
            raise DomainError(f"{a!r} is not an element of this lattice")

    def interval(self, a: int, b: int) -> list[int]:
        return [x for x in self.elements if self.leq(a, x) and self.leq(x, b)]

    def kclass(self, a: int, b: int) -> KClass:
        """Composition-factor multiplicities of ``[a, b]``, read off any maximal chain."""
        self.check_element(a)
        self.check_element(b)
        if not self.leq(a, b):
            raise DomainError(f"{self.label(a)} is not below {self.label(b)}")
        counts = [0] * self.class_count
        current = a
        while current != b:
            step = next(c for c in self.upper_covers(current) if self.leq(c, b))
            counts[self.cover_class(current, step)] += 1
            current = step
        return KClass(tuple(counts))

    def length(self) -> int:
        return sum(self.kclass(self.bottom, self.top).coordinates)

    def is_complemented(self, a: int | None = None, b: int | None = None) -> bool:
        """Whether every element of ``[a, b]`` has a complement in ``[a, b]``."""
        lo = self.bottom if a is None else a
        hi = self.top if b is None else b
        if not self.leq(lo, hi):
            raise DomainError(f"{self.label(lo)} is not below {self.label(hi)}")
        key = (lo, hi)
        if key not in self._complemented:
            self._complemented[key] = self._interval_complemented(lo, hi)
        return self._complemented[key]

    def _interval_complemented(self, a: int, b: int) -> bool:
        members = self.interval(a, b)
        return all(
            any(self.meet(x, y) == a and self.join(x, y) == b for y in members)
            for x in members
        )

    def complement_exists(self, x: int) -> bool:
        return any(
            self.meet(x, y) == self.bottom and self.join(x, y) == self.top
            for y in self.elements
        )

    def is_modular(self) -> bool:
        for x, a, b in itertools.product(self.elements, repeat=3):
            xb = self.meet(x, b)
            if self.join(xb, self.meet(a, b)) != self.meet(self.join(xb, a), b):
                return False
        return True


class SubsetLattice(FiniteLattice):
    """Closed vertex subsets (no arrow leaves the subset) of a directed graph.

    Strongly connected components are added as a whole, so K-classes are
    indexed by components.
    """

    def __init__(self, graph: nx.DiGraph, *, limit: int = SUBSET_LIMIT) -> None:
        super().__init__()
        self.graph = graph
        order = {node: i for i, node in enumerate(graph.nodes)}
        condensed = nx.condensation(graph)
        components = sorted(
            condensed.nodes,
            key=lambda c: min(order[v] for v in condensed.nodes[c]["members"]),
        )
        renumber = {c: i for i, c in enumerate(components)}
        self.components: tuple[tuple[typing.Any, ...], ...] = tuple(
            tuple(sorted(condensed.nodes[c]["members"], key=order.__getitem__))
            for c in components
        )
        self.dag = nx.relabel_nodes(condensed, renumber)
        k = len(components)
        self._succ = [0] * k
        self._pred = [0] * k
        for u, v in self.dag.edges:
            self._succ[u] |= 1 << v
            self._pred[v] |= 1 << u

        seen = {0}
        frontier = [0]
        while frontier:
            mask = frontier.pop()
            for c in range(k):
                bit = 1 << c
                if mask & bit or self._succ[c] & ~mask:
                    continue
                grown = mask | bit
                if grown not in seen:
                    seen.add(grown)
                    if len(seen) > limit:
                        raise LatticeTooLargeError(len(seen), limit)
                    frontier.append(grown)
        self.masks = sorted(seen, key=lambda m: (bin(m).count("1"), m))
        self._index = {m: i for i, m in enumerate(self.masks)}
        logger.debug("enumerated %d closed subsets over %d components", len(seen), k)

    @property
    def size(self) -> int:
        return len(self.masks)

    @property
    def bottom(self) -> int:
        return 0

    @property
    def top(self) -> int:
        return len(self.masks) - 1

    def leq(self, a: int, b: int) -> bool:
        return self.masks[a] & ~self.masks[b] == 0

    def meet(self, a: int, b: int) -> int:
        return self._index[self.masks[a] & self.masks[b]]

    def join(self, a: int, b: int) -> int:
        return self._index[self.masks[a] | self.masks[b]]

    def element(self, vertices: typing.Iterable[typing.Any]) -> int:
        """Element id of a closed vertex subset."""
        wanted = set(vertices)
        mask = 0
        for c, members in enumerate(self.components):
            inside = wanted.intersection(members)
            if inside and len(inside) != len(members):
                raise DomainError(f"{sorted(map(str, wanted))} splits a cycle")
            if inside:
                mask |= 1 << c
        if mask not in self._index:
            raise DomainError(f"{sorted(map(str, wanted))} is not closed")
        return self._index[mask]

    def vertices(self, a: int) -> list[typing.Any]:
        mask = self.masks[a]
        return [v for c, members in enumerate(self.components) if mask >> c & 1 for v in members]

    def label(self, a: int) -> str:
        return "{" + ",".join(str(v) for v in self.vertices(a)) + "}"

    def upper_covers(self, a: int) -> tuple[int, ...]:
        mask = self.masks[a]
        return tuple(
            self._index[mask | 1 << c]
            for c in range(len(self.components))
            if not mask >> c & 1 and not self._succ[c] & ~mask
        )

    def lower_covers(self, a: int) -> tuple[int, ...]:
        mask = self.masks[a]
        return tuple(
            self._index[mask & ~(1 << c)]
            for c in range(len(self.components))
            if mask >> c & 1 and not self._pred[c] & mask
        )

    @property
    def class_count(self) -> int:
        return len(self.components)

    def cover_class(self, lower: int, upper: int) -> int:
        diff = self.masks[upper] & ~self.masks[lower]
        if diff == 0 or diff & (diff - 1):
            raise DomainError(f"{self.label(lower)} < {self.label(upper)} is not a cover")
        return diff.bit_length() - 1

    def kclass(self, a: int, b: int) -> KClass:
        self.check_element(a)
        self.check_element(b)
        if not self.leq(a, b):
            raise DomainError(f"{self.label(a)} is not below {self.label(b)}")
        diff = self.masks[b] & ~self.masks[a]
        return KClass(tuple(diff >> c & 1 for c in range(len(self.components))))

    def class_representatives(self) -> list[tuple[int, int]]:
        representatives = []
        for c in range(len(self.components)):
            below = self._index[self._closure(self._succ[c])]
            representatives.append((below, self._index[self.masks[below] | 1 << c]))
        return representatives

    def _closure(self, mask: int) -> int:
        # smallest closed set containing mask
        closed = mask
        while True:
            grown = closed
            for c in range(len(self.components)):
                if closed >> c & 1:
                    grown |= self._succ[c]
            if grown == closed:
                return closed
            closed = grown

    def _interval_complemented(self, a: int, b: int) -> bool:
        diff = self.masks[b] & ~self.masks[a]
        return all(not (self._succ[c] & diff) for c in range(len(self.components)) if diff >> c & 1)

    def birkhoff(self) -> Birkhoff:
        def element_from(components: typing.Iterable[int]) -> int:
            mask = 0
            for c in components:
                mask |= 1 << c
            return self._index[mask]

        k = len(self.components)
        return Birkhoff(
            irreducibles=tuple(range(k)),
            classes=tuple(range(k)),
            relations=tuple((u, v) for u, v in self.dag.edges),
            element_from=element_from,
        )


class TableLattice(FiniteLattice):
    """A lattice given by its order relation, with meet and join tables."""

    def __init__(
        self,
        leq: npt.NDArray[np.bool_],
        *,
        labels: typing.Sequence[str] | None = None,
        payloads: typing.Sequence[typing.Any] | None = None,
        check_modular: bool = True,
    ) -> None:
        super().__init__()
        n = leq.shape[0]
        if leq.shape != (n, n) or leq.dtype != np.bool_:
            raise DomainError("leq must be a square boolean matrix")
        if n > TABLE_LIMIT:
            raise LatticeTooLargeError(n, TABLE_LIMIT)
        if n == 0:
            raise DomainError("a lattice has at least one element")
        self._leq = leq.copy()
        self._leq.flags.writeable = False
        self._labels = list(labels) if labels is not None else None
        self.payloads = list(payloads) if payloads is not None else list(range(n))
        self._join = self._bound_table(self._leq, "join")
        self._meet = self._bound_table(self._leq.T, "meet")
        sizes = self._leq.sum(axis=0)
        self._bottom = int(np.argmin(sizes))
        self._top = int(np.argmax(sizes))
        strict = self._leq & ~np.eye(n, dtype=bool)
        between = (strict.astype(np.int32) @ strict.astype(np.int32)) > 0
        self._cover = strict & ~between
        self._classes, self._representatives = self._union_covers()
        if check_modular and not self._check_modular():
            raise DomainError("the order does not define a modular lattice")

    @classmethod
    def from_elements(
        cls, lattice: FiniteLattice, elements: typing.Sequence[int]
    ) -> TableLattice:
        """The sublattice on ``elements`` (closed under meet and join of ``lattice``)."""
        elements = list(elements)
        leq = np.array(
            [[lattice.leq(a, b) for b in elements] for a in elements], dtype=bool
        )
        return cls(
            leq,
            labels=[lattice.label(a) for a in elements],
            payloads=elements,
        )

    @staticmethod
    def _bound_table(up: npt.NDArray[np.bool_], what: str) -> npt.NDArray[np.int32]:
        n = up.shape[0]
        index = {up[i].tobytes(): i for i in range(n)}
        table = np.zeros((n, n), dtype=np.int32)
        for i in range(n):
            common = up[i] & up
            for j in range(i, n):
                key = common[j].tobytes()
                if key not in index:
                    raise NotALatticeError(f"no {what} for elements {i} and {j}", (i, j))
                table[i, j] = table[j, i] = index[key]
        table.flags.writeable = False
        return table

    def _union_covers(self) -> tuple[dict[tuple[int, int], int], list[tuple[int, int]]]:
        covers = [tuple(map(int, pair)) for pair in np.argwhere(self._cover)]
        parent = {pair: pair for pair in covers}

        def find(x: tuple[int, int]) -> tuple[int, int]:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for lower, upper in covers:
            for z in range(self.size):
                if z != lower and self._meet[z, upper] == lower:
                    partner = (z, int(self._join[z, upper]))
                    if partner in parent:
                        ra, rb = find((lower, upper)), find(partner)
                        if ra != rb:
                            parent[ra] = rb
        roots: dict[tuple[int, int], int] = {}
        classes = {}
        representatives: list[tuple[int, int]] = []
        for pair in covers:
            root = find(pair)
            if root not in roots:
                roots[root] = len(roots)
                representatives.append(pair)
            classes[pair] = roots[root]
        return classes, representatives

    def _check_modular(self) -> bool:
        # (x ^ b) v (a ^ b) == ((x ^ b) v a) ^ b, arrays indexed [a, b]
        meet, join = self._meet, self._join
        ids = np.arange(self.size)
        for x in range(self.size):
            xb = meet[x][None, :]
            left = join[xb, meet]
            right = meet[join[xb, ids[:, None]], ids[None, :]]
            if not np.array_equal(left, right):
                return False
        return True

    @property
    def size(self) -> int:
        return int(self._leq.shape[0])

    @property
    def bottom(self) -> int:
        return self._bottom

    @property
    def top(self) -> int:
        return self._top

    def leq(self, a: int, b: int) -> bool:
        return bool(self._leq[a, b])

    def meet(self, a: int, b: int) -> int:
        return int(self._meet[a, b])

    def join(self, a: int, b: int) -> int:
        return int(self._join[a, b])

    def label(self, a: int) -> str:
        return self._labels[a] if self._labels is not None else str(a)

    def upper_covers(self, a: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self._cover[a]))

    def lower_covers(self, a: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self._cover[:, a]))

    def interval(self, a: int, b: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self._leq[a] & self._leq[:, b])]

    @property
    def class_count(self) -> int:
        return len(self._representatives)

    def cover_class(self, lower: int, upper: int) -> int:
        try:
            return self._classes[(lower, upper)]
        except KeyError:
            raise DomainError(f"{lower} < {upper} is not a cover") from None

    def class_representatives(self) -> list[tuple[int, int]]:
        return list(self._representatives)

    def is_distributive(self) -> bool:
        meet, join = self._meet, self._join
        for x in range(self.size):
            left = meet[x][join]
            right = join[meet[x][:, None], meet[x][None, :]]
            if not np.array_equal(left, right):
                return False
        return True

    def is_modular(self) -> bool:
        return self._check_modular()

    @functools.cached_property
    def _birkhoff(self) -> Birkhoff | None:
        if not self.is_distributive():
            return None
        irreducibles = tuple(a for a in self.elements if len(self.lower_covers(a)) == 1)
        classes = tuple(self.cover_class(self.lower_covers(j)[0], j) for j in irreducibles)
        position = {j: i for i, j in enumerate(irreducibles)}
        relations = []
        for i, j in itertools.permutations(irreducibles, 2):
            if j != i and self.leq(j, i):
                if not any(
                    k not in (i, j) and self.leq(j, k) and self.leq(k, i)
                    for k in irreducibles
                ):
                    relations.append((position[i], position[j]))

        def element_from(indices: typing.Iterable[int]) -> int:
            return functools.reduce(
                self.join, (irreducibles[i] for i in indices), self.bottom
            )

        return Birkhoff(
            irreducibles=tuple(range(len(irreducibles))),
            classes=classes,
            relations=tuple(relations),
            element_from=element_from,
        )

    def birkhoff(self) -> Birkhoff | None:
        return self._birkhoff


# ---------------------------------------------------------------------------
# Polarized lattices and stability
# ---------------------------------------------------------------------------


class PolarizedLattice:
    """A finite lattice together with a polarization of its K-group."""

    def __init__(self, lattice: FiniteLattice, polarization: Polarization) -> None:
        if len(polarization.real) != lattice.class_count:
            raise DomainError(
                f"polarization has {len(polarization.real)} classes, "
                f"lattice has {lattice.class_count}"
            )
        self.lattice = lattice
        self.polarization = polarization
        self._charges: dict[int, tuple[Fraction, Fraction]] = {}

    def charge_from_bottom(self, x: int) -> tuple[Fraction, Fraction]:
        if x not in self._charges:
            self._charges[x] = self.polarization(self.lattice.kclass(self.lattice.bottom, x))
        return self._charges[x]

    def charge(self, a: int, b: int) -> tuple[Fraction, Fraction]:
        """Z([a, b]) as an exact (real, imaginary) pair."""
        if not self.lattice.leq(a, b):
            raise DomainError(f"{self.lattice.label(a)} is not below {self.lattice.label(b)}")
        ra, ia = self.charge_from_bottom(a)
        rb, ib = self.charge_from_bottom(b)
        return rb - ra, ib - ia

    def slope(self, a: int, b: int) -> Fraction:
        """tan of the phase of ``[a, b]``; orders phases exactly."""
        if a == b:
            raise DomainError("the phase of an empty interval is undefined")
        re, im = self.charge(a, b)
        return im / re

    def phase(self, a: int, b: int) -> float:
        return math.atan(self.slope(a, b))

    def real_part(self) -> PolarizedLattice:
        return PolarizedLattice(self.lattice, self.polarization.realified())

    def restricted(self, elements: typing.Sequence[int]) -> PolarizedLattice:
        """Restriction to a sublattice; the sublattice payloads are the old ids."""
        sub = TableLattice.from_elements(self.lattice, elements)

        def interval(lo: int, hi: int) -> tuple[Fraction, Fraction]:
            return self.charge(sub.payloads[lo], sub.payloads[hi])

        return PolarizedLattice(sub, Polarization.from_interval_function(sub, interval))


def is_semistable(pl: PolarizedLattice, a: int | None = None, b: int | None = None) -> bool:
    """phi([a, x]) <= phi([a, b]) for every x in (a, b]."""
    lattice = pl.lattice
    lo = lattice.bottom if a is None else a
    hi = lattice.top if b is None else b
    if lo == hi:
        return True
    whole = pl.slope(lo, hi)
    return all(pl.slope(lo, x) <= whole for x in lattice.interval(lo, hi) if x != lo)


def phase_sublattice(pl: PolarizedLattice, a: int | None = None, b: int | None = None) -> list[int]:
    """Elements x of ``[a, b]`` with x = a or phi([a, x]) = phi([a, b])."""
    lattice = pl.lattice
    lo = lattice.bottom if a is None else a
    hi = lattice.top if b is None else b
    if lo == hi:
        return [lo]
    whole = pl.slope(lo, hi)
    return [x for x in lattice.interval(lo, hi) if x == lo or pl.slope(lo, x) == whole]


def is_polystable(pl: PolarizedLattice) -> bool:
    if not is_semistable(pl):
        return False
    maximal = phase_sublattice(pl)
    sub = TableLattice.from_elements(pl.lattice, maximal)
    return sub.is_complemented()


# ---------------------------------------------------------------------------
# Filtrations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RFiltration:
    """A chain ``0 = a_0 < ... < a_n = 1`` with one real label per step."""

    chain: tuple[int, ...]
    labels: tuple[typing.Any, ...]
    descending: bool = False

    def __post_init__(self) -> None:
        if len(self.chain) != len(self.labels) + 1:
            raise DomainError("a filtration has one label per step")
        pairs = list(zip(self.labels, self.labels[1:]))
        if self.descending:
            ok = all(x > y for x, y in pairs)
        else:
            ok = all(x < y for x, y in pairs)
        if not ok:
            raise DomainError(f"labels {self.labels} are not strictly monotone")

    def __len__(self) -> int:
        return len(self.labels)

    def steps(self) -> typing.Iterator[tuple[int, int, typing.Any]]:
        for k, label in enumerate(self.labels):
            yield self.chain[k], self.chain[k + 1], label


@functools.total_ordering
@dataclass(frozen=True)
class IteratedLabel:
    """Coefficients on ``log t, log log t, ...`` plus an optional leading ``t`` term.

    Compared by growth as t tends to infinity; trailing zeros carry no
    information and are dropped.
    """

    coeffs: tuple[Fraction, ...] = ()
    t: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        coeffs = [Fraction(c) for c in self.coeffs]
        while coeffs and coeffs[-1] == 0:
            coeffs.pop()
        object.__setattr__(self, "coeffs", tuple(coeffs))
        object.__setattr__(self, "t", Fraction(self.t))

    def _key(self, width: int) -> tuple[Fraction, ...]:
        return (self.t, *self.coeffs, *([Fraction(0)] * (width - len(self.coeffs))))

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, IteratedLabel):
            return NotImplemented
        width = max(len(self.coeffs), len(other.coeffs))
        return self._key(width) < other._key(width)

    def coefficient(self, depth: int) -> Fraction:
        """Coefficient of the ``depth``-fold iterated logarithm (1 is log t)."""
        return self.coeffs[depth - 1] if depth <= len(self.coeffs) else Fraction(0)

    def as_dict(self) -> dict[str, float]:
        names = ["log t"] + [f"log^{k} t" for k in range(2, len(self.coeffs) + 1)]
        out = {"t": float(self.t)}
        out.update({name: float(c) for name, c in zip(names, self.coeffs)})
        return out

    def __str__(self) -> str:
        parts = []
        if self.t:
            parts.append(f"{self.t} t")
        for depth, c in enumerate(self.coeffs, start=1):
            if c:
                parts.append(f"{c} " + "log " * depth + "t")
        return " + ".join(parts) or "0"


@dataclass(frozen=True)
class IteratedFiltration:
    chain: tuple[int, ...]
    labels: tuple[IteratedLabel, ...]
    depth: int

    def __post_init__(self) -> None:
        if len(self.chain) != len(self.labels) + 1:
            raise DomainError("a filtration has one label per step")
        if any(x >= y for x, y in zip(self.labels, self.labels[1:])):
            raise ConsistencyError(f"iterated labels {self.labels} are not increasing")


def harder_narasimhan(pl: PolarizedLattice) -> RFiltration:
    """Take the largest maximal-phase element of [a, 1] until reaching 1."""
    lattice = pl.lattice
    chain = [lattice.bottom]
    labels: list[float] = []
    current = lattice.bottom
    while current != lattice.top:
        best: Fraction | None = None
        winners: list[int] = []
        for x in lattice.interval(current, lattice.top):
            if x == current:
                continue
            s = pl.slope(current, x)
            if best is None or s > best:
                best, winners = s, [x]
            elif s == best:
                winners.append(x)
        assert best is not None
        current = functools.reduce(lattice.join, winners)
        chain.append(current)
        labels.append(math.atan(best))
    return RFiltration(tuple(chain), tuple(labels), descending=True)


def is_paracomplemented(lattice: FiniteLattice, f: RFiltration) -> bool:
    n = len(f.labels)
    for k in range(1, n + 1):
        for j in range(k, n + 1):
            if f.labels[j - 1] - f.labels[k - 1] < 1:
                if not lattice.is_complemented(f.chain[k - 1], f.chain[j]):
                    return False
    return True


def _step_charges(pl: PolarizedLattice, chain: typing.Sequence[int]) -> list[Fraction]:
    return [pl.charge(lo, hi)[0] for lo, hi in zip(chain, chain[1:])]


def associated_tuples(
    pl: PolarizedLattice, f: RFiltration
) -> tuple[list[tuple[int, ...]], list[Fraction]]:
    """Enumerate the elements of M(a, lambda) with their imaginary charges.

    Tuples ``b_k`` in ``[a_{k-1}, a_k]`` with ``[b_k, b_l]`` complemented
    whenever ``k < l`` and ``lambda_l - lambda_k <= 1``; the charge is
    ``sum_k lambda_k X([a_{k-1}, b_k])``.
    """
    lattice = pl.lattice
    chain, labels = f.chain, f.labels
    n = len(labels)
    choices = [lattice.interval(chain[k], chain[k + 1]) for k in range(n)]
    tuples: list[tuple[int, ...]] = []
    charges: list[Fraction] = []

    def extend(prefix: list[int], total: Fraction) -> None:
        k = len(prefix)
        if k == n:
            tuples.append(tuple(prefix))
            charges.append(total)
            return
        for b in choices[k]:
            if all(
                lattice.is_complemented(prefix[j], b)
                for j in range(k)
                if labels[k] - labels[j] <= 1
            ):
                x = pl.charge(chain[k], b)[0]
                extend(prefix + [b], total + Fraction(labels[k]) * x)

    extend([], Fraction(0))
    return tuples, charges


def certify_weight_filtration(pl: PolarizedLattice, f: RFiltration) -> bool:
    """Check the defining properties: paracomplemented, M(a, lambda) semistable of phase 0."""
    if not pl.polarization.is_real:
        raise DomainError("weight filtrations need a real polarization")
    if f.chain[0] != pl.lattice.bottom or f.chain[-1] != pl.lattice.top:
        return False
    if not is_paracomplemented(pl.lattice, f):
        return False
    steps = _step_charges(pl, f.chain)
    if sum((Fraction(lam) * x for lam, x in zip(f.labels, steps)), Fraction(0)) != 0:
        return False
    _, charges = associated_tuples(pl, f)
    return all(c <= 0 for c in charges)


def _solve_difference_program(
    masses: typing.Sequence[Fraction],
    relations: typing.Sequence[tuple[int, int, int]],
    *,
    threshold: float = 1e-6,
) -> list[Fraction] | None:
    """Minimize sum m_i r_i^2 subject to r_u - r_w >= gap for (u, w, gap).

    The numerical optimum only identifies the tight constraints; the
    returned values are the exact solution of the tight system, each
    connected group centred to weighted mean zero. Returns None when a tight
    gap-0 constraint merges two entries or when the exact system is
    inconsistent.
    """
    n = len(masses)
    if n == 0:
        return []
    weights = np.array([float(m) for m in masses])
    if relations:
        a = np.zeros((len(relations), n))
        gaps = np.array([float(g) for _, _, g in relations])
        for row, (u, w, _) in enumerate(relations):
            a[row, u] += 1.0
            a[row, w] -= 1.0
        dag = nx.DiGraph()
        dag.add_nodes_from(range(n))
        dag.add_edges_from((w, u, {"gap": g}) for u, w, g in relations)
        if not nx.is_directed_acyclic_graph(dag):
            return None
        start = np.zeros(n)
        for node in nx.topological_sort(dag):
            for _, u, data in dag.out_edges(node, data=True):
                start[u] = max(start[u], start[node] + max(data["gap"], 0.5))
        start -= weights @ start / weights.sum()
        result = optimize.minimize(
            lambda x: float(weights @ (x * x)),
            start,
            jac=lambda x: 2.0 * weights * x,
            constraints=[
                {
                    "type": "ineq",
                    "fun": lambda x: a @ x - gaps,
                    "jac": lambda x: a,
                }
            ],
            method="SLSQP",
            options={"ftol": 1e-15, "maxiter": 1000},
        )
        slack = a @ result.x - gaps
        tight = [rel for rel, s in zip(relations, slack) if s < threshold]
    else:
        tight = []

    if any(gap == 0 for _, _, gap in tight):
        return None
    graph = nx.Graph()
    graph.add_nodes_from(range(n))
    for u, w, gap in tight:
        graph.add_edge(u, w, diff=(u, Fraction(gap)))
    values: list[Fraction | None] = [None] * n
    for component in nx.connected_components(graph):
        root = min(component)
        offsets = {root: Fraction(0)}
        for parent, child in nx.bfs_edges(graph, root):
            upper, gap = graph.edges[parent, child]["diff"]
            offsets[child] = offsets[parent] + (gap if child == upper else -gap)
        for u, v, data in graph.subgraph(component).edges(data=True):
            upper, gap = data["diff"]
            lower = v if upper == u else u
            if offsets[upper] - offsets[lower] != gap:
                return None
        total = sum((masses[i] for i in component), Fraction(0))
        shift = -sum((masses[i] * offsets[i] for i in component), Fraction(0)) / total
        for i in component:
            values[i] = offsets[i] + shift
    solution = typing.cast(list[Fraction], values)
    if any(solution[u] - solution[w] < gap for u, w, gap in relations):
        return None
    return solution


def _birkhoff_candidate(pl: PolarizedLattice, data: Birkhoff, threshold: float) -> RFiltration | None:
    real = pl.polarization.real
    masses = [real[c] for c in data.classes]
    grading = _solve_difference_program(
        masses, [(u, w, 1) for u, w in data.relations], threshold=threshold
    )
    if grading is None:
        return None
    levels = sorted(set(grading))
    chain = [pl.lattice.bottom]
    for level in levels:
        chain.append(data.element_from(i for i, r in enumerate(grading) if r <= level))
    return RFiltration(tuple(chain), tuple(levels))


def _complemented_chains(lattice: FiniteLattice) -> typing.Iterator[tuple[int, ...]]:
    def walk(prefix: list[int]) -> typing.Iterator[tuple[int, ...]]:
        current = prefix[-1]
        if current == lattice.top:
            yield tuple(prefix)
            return
        for x in lattice.interval(current, lattice.top):
            if x != current and lattice.is_complemented(current, x):
                yield from walk(prefix + [x])

    yield from walk([lattice.bottom])


def _chain_candidate(pl: PolarizedLattice, chain: tuple[int, ...]) -> RFiltration | None:
    lattice = pl.lattice
    n = len(chain) - 1
    masses = _step_charges(pl, chain)
    relations = []
    for k in range(1, n + 1):
        for j in range(k + 1, n + 1):
            if not lattice.is_complemented(chain[k - 1], chain[j]):
                relations.append((j - 1, k - 1, 1))
            elif j == k + 1:
                relations.append((j - 1, k - 1, 0))
    labels = _solve_difference_program(masses, relations)
    if labels is None or any(x >= y for x, y in zip(labels, labels[1:])):
        return None
    return RFiltration(chain, tuple(labels))


def weight_filtration(pl: PolarizedLattice) -> RFiltration:
    """The unique paracomplemented R-filtration with M(a, lambda) semistable of phase 0.

    Distributive lattices are handled through their join-irreducibles, where
    the labels solve a small quadratic program; other lattices fall back to
    enumerating chains with complemented steps. Every result is certified
    against the definition before it is returned.
    """
    if not pl.polarization.is_real:
        raise DomainError("weight filtrations need a real polarization")
    lattice = pl.lattice
    if lattice.is_complemented():
        return RFiltration((lattice.bottom, lattice.top), (Fraction(0),))

    data = lattice.birkhoff()
    if data is not None:
        for threshold in (1e-6, 1e-8, 1e-4):
            candidate = _birkhoff_candidate(pl, data, threshold)
            if candidate is not None and certify_weight_filtration(pl, candidate):
                return candidate
        logger.debug("quadratic program did not certify, enumerating chains")

    tried = 0
    for chain in _complemented_chains(lattice):
        tried += 1
        candidate = _chain_candidate(pl, chain)
        if candidate is not None and certify_weight_filtration(pl, candidate):
            logger.debug("weight filtration found after %d chains", tried)
            return candidate
    raise ConsistencyError(f"no weight filtration among {tried} candidate chains")


def _phase_zero_lattice(
    pl: PolarizedLattice, f: RFiltration
) -> tuple[PolarizedLattice, list[tuple[int, ...]]]:
    tuples, charges = associated_tuples(pl, f)
    zero = [t for t, c in zip(tuples, charges) if c == 0]
    lattice = pl.lattice
    leq = np.array(
        [[all(lattice.leq(x, y) for x, y in zip(s, t)) for t in zero] for s in zero],
        dtype=bool,
    )
    labels = ["(" + ",".join(lattice.label(b) for b in t) + ")" for t in zero]
    sub = TableLattice(leq, labels=labels, payloads=zero)

    def interval(lo: int, hi: int) -> tuple[Fraction, Fraction]:
        total = sum(
            (pl.charge(x, y)[0] for x, y in zip(zero[lo], zero[hi])), Fraction(0)
        )
        return total, Fraction(0)

    return PolarizedLattice(sub, Polarization.from_interval_function(sub, interval)), zero


def iterated_weight_filtration(pl: PolarizedLattice, *, _level: int = 0) -> IteratedFiltration:
    """Refine the weight filtration by the weight filtration of M(a, lambda)^0, recursively."""
    if _level > MAX_ITERATION_DEPTH:
        raise ConsistencyError("iterated weight filtration did not terminate")
    if not pl.polarization.is_real:
        raise DomainError("weight filtrations need a real polarization")
    lattice = pl.lattice
    if lattice.is_complemented():
        return IteratedFiltration((lattice.bottom, lattice.top), (IteratedLabel(),), 0)

    f = weight_filtration(pl)
    m0, tuples = _phase_zero_lattice(pl, f)
    inner = iterated_weight_filtration(m0, _level=_level + 1)
    chain = [lattice.bottom]
    labels: list[IteratedLabel] = []
    for k, lam in enumerate(f.labels):
        for j, mu in enumerate(inner.labels):
            lo = tuples[inner.chain[j]][k]
            hi = tuples[inner.chain[j + 1]][k]
            if lo != hi:
                chain.append(hi)
                labels.append(IteratedLabel((Fraction(lam), *mu.coeffs)))
    logger.debug("iterated weight filtration level %d has %d steps", _level, len(labels))
    return IteratedFiltration(tuple(chain), tuple(labels), inner.depth + 1)


def total_filtration(pl: PolarizedLattice) -> IteratedFiltration:
    """Harder-Narasimhan chain refined by iterated weight filtrations.

    Each HN factor of slope ``s_k`` contributes the iterated weight filtration
    of its maximal-phase sublattice; labels carry the leading coefficient
    ``-2 (s_k - s(L))`` on ``t``.
    """
    lattice = pl.lattice
    hn = harder_narasimhan(pl)
    total_slope = pl.slope(lattice.bottom, lattice.top)
    chain = [lattice.bottom]
    labels: list[IteratedLabel] = []
    depth = 0
    for lo, hi, _ in hn.steps():
        t_coefficient = -2 * (pl.slope(lo, hi) - total_slope)
        factor = pl.restricted(phase_sublattice(pl, lo, hi)).real_part()
        inner = iterated_weight_filtration(factor)
        depth = max(depth, inner.depth)
        payloads = typing.cast(TableLattice, factor.lattice).payloads
        for x, label in zip(inner.chain[1:], inner.labels):
            chain.append(payloads[x])
            labels.append(IteratedLabel(label.coeffs, t=t_coefficient))
    return IteratedFiltration(tuple(chain), tuple(labels), depth)


# ---------------------------------------------------------------------------
# Graph lattices and the oriented cycle
# ---------------------------------------------------------------------------


def build_ideal_lattice(graph: nx.DiGraph, *, mass: str = "mass") -> PolarizedLattice:
    """Closed vertex subsets of ``graph`` polarized by total vertex mass."""
    for node, value in graph.nodes(data=mass):
        if value is None:
            raise DomainError(f"vertex {node!r} has no {mass!r} attribute")
        if exact(value) <= 0:
            raise DomainError(f"vertex {node!r} has non-positive mass {value!r}")
    lattice = SubsetLattice(graph)
    real = [
        sum((exact(graph.nodes[v][mass]) for v in members), Fraction(0))
        for members in lattice.components
    ]
    return PolarizedLattice(lattice, Polarization.real_valued(real))


@dataclass(frozen=True)
class WeightGrading:
    """Per-vertex weights of a graph lattice and the arrow gaps they leave."""

    weights: dict[typing.Any, Fraction]
    gaps: dict[tuple[typing.Any, typing.Any], Fraction]

    @property
    def tight(self) -> set[tuple[typing.Any, typing.Any]]:
        return {edge for edge, gap in self.gaps.items() if gap == 1}


def weight_grading(graph: nx.DiGraph, *, mass: str = "mass") -> WeightGrading:
    pl = build_ideal_lattice(graph, mass=mass)
    lattice = typing.cast(SubsetLattice, pl.lattice)
    f = weight_filtration(pl)
    weights: dict[typing.Any, Fraction] = {}
    for lo, hi, label in f.steps():
        added = set(lattice.vertices(hi)) - set(lattice.vertices(lo))
        weights.update({v: Fraction(label) for v in added})
    gaps = {(s, t): weights[s] - weights[t] for s, t in graph.edges}
    return WeightGrading(weights, gaps)


@dataclass(frozen=True)
class OrientedCycleGraph:
    """Segment masses and puncture signs of a curve on the punctured cylinder.

    ``masses[k]`` is the length of segment ``k`` and ``signs[k]`` the sign of
    the curve at the puncture between segments ``k`` and ``k + 1``. With
    ``periodic=False`` the curve is a path pinned at both ends, so there are
    ``len(masses) - 1`` interior punctures.
    """

    masses: tuple[Fraction, ...]
    signs: tuple[int, ...]
    periodic: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "masses", tuple(exact(m) for m in self.masses))
        object.__setattr__(self, "signs", tuple(int(s) for s in self.signs))
        if any(m <= 0 for m in self.masses):
            raise DomainError("segment masses must be positive")
        if any(s not in (1, -1) for s in self.signs):
            raise DomainError("signs must be +1 or -1")
        expected = len(self.masses) if self.periodic else len(self.masses) - 1
        if len(self.signs) != expected:
            raise DomainError(f"expected {expected} signs, got {len(self.signs)}")
        if self.periodic:
            if len(self.masses) < 2:
                raise DomainError("the cycle needs at least two punctures")
            if len(set(self.signs)) < 2:
                raise DomainError("the curve must pass both over and under punctures")
        elif not self.signs:
            raise DomainError("the path needs at least one interior puncture")

    @property
    def n(self) -> int:
        return len(self.signs)

    def neighbours(self, k: int) -> tuple[int, int]:
        """Segments on the left and right of puncture ``k``."""
        return k, (k + 1) % len(self.masses)

    def digraph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        for k, m in enumerate(self.masses, start=1):
            graph.add_node(k, mass=m)
        for k, sign in enumerate(self.signs):
            left, right = self.neighbours(k)
            if sign > 0:
                graph.add_edge(left + 1, right + 1, puncture=k)
            else:
                graph.add_edge(right + 1, left + 1, puncture=k)
        return graph

    def arrow(self, k: int) -> tuple[int, int]:
        """The (source, target) vertex pair of the arrow at puncture ``k``."""
        left, right = self.neighbours(k)
        if self.signs[k] > 0:
            return left + 1, right + 1
        return right + 1, left + 1


def cycle_graph_digraph(graph: OrientedCycleGraph) -> nx.DiGraph:
    """Vertices ``1..n`` are segments carrying ``mass``; arrows sit at punctures."""
    return graph.digraph()


class Chamber(enum.Enum):
    LEFT = "LEFT"
    MIDDLE = "MIDDLE"
    RIGHT = "RIGHT"
    WALL1 = "WALL1"
    WALL2 = "WALL2"


@dataclass(frozen=True)
class WallReport:
    d1: float
    d2: float
    chamber: Chamber


def _walls(m: typing.Sequence[typing.Any]) -> tuple[typing.Any, typing.Any]:
    m1, m2, m3, m4, m5 = m
    d1 = m1 * m4 + m3 * m5 + 2 * m4 * m5 - m1 * m2
    d2 = m2 * m5 + m1 * m3 + 2 * m1 * m2 - m4 * m5
    return d1, d2


#: Relative width of the band around a wall that counts as on-wall.
WALL_TOLERANCE = 1e-9


def walls_5cycle(m: typing.Sequence[Number]) -> WallReport:
    """Evaluate D1, D2 and classify the chamber of the five-segment cycle."""
    if len(m) != 5:
        raise DomainError("the wall formulas are for five segments")
    masses = [exact(x) for x in m]
    if any(x <= 0 for x in masses):
        raise DomainError("segment masses must be positive")
    d1, d2 = (float(d) for d in _walls(masses))
    band = WALL_TOLERANCE * float(sum(x * x for x in masses))
    if abs(d1) < band:
        chamber = Chamber.WALL1
    elif abs(d2) < band:
        chamber = Chamber.WALL2
    elif d1 < 0:
        chamber = Chamber.LEFT
    elif d2 < 0:
        chamber = Chamber.RIGHT
    else:
        chamber = Chamber.MIDDLE
    return WallReport(d1, d2, chamber)


def find_wall_point(
    m: typing.Sequence[Number], wall: int, coordinate: int
) -> tuple[Fraction, ...]:
    """Move one mass coordinate so that D1 (wall=1) or D2 (wall=2) vanishes.

    Each D is affine in any single coordinate, so the root is exact.
    """
    masses = [exact(x) for x in m]
    if wall not in (1, 2):
        raise DomainError("wall must be 1 or 2")
    at = _walls(masses)[wall - 1]
    bumped = list(masses)
    bumped[coordinate] += 1
    slope = _walls(bumped)[wall - 1] - at
    if slope == 0:
        raise DomainError(f"D{wall} does not depend on coordinate {coordinate}")
    masses[coordinate] -= at / slope
    if masses[coordinate] <= 0:
        raise DomainError(f"D{wall} vanishes only at a non-positive mass")
    return tuple(masses)


#: Segment signs of the five-puncture curve with three arrows one way, two the other.
FIVE_CYCLE_SIGNS = (1, -1, -1, 1, -1)


def five_cycle(m: typing.Sequence[Number]) -> OrientedCycleGraph:
    return OrientedCycleGraph(tuple(exact(x) for x in m), FIVE_CYCLE_SIGNS)


def filtration_to_json(pl: PolarizedLattice, f: RFiltration | IteratedFiltration) -> dict[str, typing.Any]:
    labels: list[typing.Any]
    if isinstance(f, IteratedFiltration):
        labels = [[str(c) for c in label.coeffs] for label in f.labels]
    else:
        labels = [str(label) if isinstance(label, Fraction) else label for label in f.labels]
    out: dict[str, typing.Any] = {
        "chain": [pl.lattice.label(a) for a in f.chain],
        "labels": labels,
    }
    if isinstance(f, IteratedFiltration):
        out["depth"] = f.depth
    return out

