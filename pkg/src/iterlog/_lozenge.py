"""Finite-dimensional lozenge algebras.

An algebra is stored as one complex coordinate vector space split into the
components ``"0"``, ``"10"``, ``"01"`` and ``"2"``. Operators (the
differential, Lefschetz maps, Laplacians, Green's operator) are dense
matrices acting on that space; the three positive forms are collected in one
block-diagonal Gram matrix so adjoints are ``gram^-1 T^H gram``.

:class:`QuiverAlgebra` builds the algebra of a quiver with Hermitian vertex
spaces; :class:`SubLozengeAlgebra` restricts an algebra to graded subspaces
(harmonic parts and the graded algebras used in the asymptotic
construction), with the product projected back.
"""

from __future__ import annotations

import abc
import copy
import itertools
import logging
import typing
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from scipy import linalg, stats

from ._errors import AxiomError, ConsistencyError, DomainError

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.complex128]
Matrix = npt.NDArray[np.complex128]

COMPONENTS = ("0", "10", "01", "2")
BIDEGREE = {"0": (0, 0), "10": (1, 0), "01": (0, 1), "2": (1, 1)}
_FROM_BIDEGREE = {v: k for k, v in BIDEGREE.items()}
DEGREE = {c: sum(b) for c, b in BIDEGREE.items()}

#: Tolerance for identities that hold by construction.
EXACT_TOLERANCE = 1e-12
#: Tolerance for identities that go through a linear solve or eigensolver.
TOLERANCE = 1e-10


def _hermitian(m: Matrix) -> Matrix:
    return typing.cast(Matrix, 0.5 * (m + m.conj().T))


def _norm(x: npt.NDArray[typing.Any]) -> float:
    return float(np.max(np.abs(x))) if x.size else 0.0


def gram_orthonormal(gram: Matrix, vectors: Matrix) -> Matrix:
    """Orthonormalize the columns of ``vectors`` for the inner product ``gram``."""
    if vectors.shape[1] == 0:
        return vectors
    inner = _hermitian(vectors.conj().T @ gram @ vectors)
    w, v = linalg.eigh(inner)
    keep = w > EXACT_TOLERANCE * max(1.0, float(w.max()))
    return typing.cast(Matrix, vectors @ v[:, keep] / np.sqrt(w[keep]))


# ---------------------------------------------------------------------------
# Quiver data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Arrow:
    source: int
    target: int
    #: alpha'' on this arrow, a ``dims[target] x dims[source]`` matrix.
    matrix: Matrix


@dataclass(frozen=True, eq=False)
class QuiverData:
    """Hermitian vertex spaces, trace masses, arrow maps and curvature scalars.

    ``rho`` entries may be real scalars or Hermitian ``d_v x d_v`` matrices;
    they are stored as matrices.
    """

    dims: tuple[int, ...]
    masses: tuple[float, ...]
    arrows: tuple[Arrow, ...]
    rho: tuple[Matrix, ...] = field(default=())

    def __post_init__(self) -> None:
        n = len(self.dims)
        if n == 0:
            raise DomainError("a quiver needs at least one vertex")
        if len(self.masses) != n:
            raise DomainError("one mass per vertex is required")
        if any(d < 1 for d in self.dims):
            raise DomainError("vertex dimensions must be at least 1")
        if any(not m > 0 for m in self.masses):
            raise DomainError("vertex masses must be positive")
        rho = self.rho or tuple(0.0 for _ in self.dims)
        if len(rho) != n:
            raise DomainError("one rho per vertex is required")
        matrices = []
        for v, (d, value) in enumerate(zip(self.dims, rho)):
            block = np.asarray(value, dtype=complex)
            if block.ndim == 0:
                block = complex(block) * np.eye(d, dtype=complex)
            if block.shape != (d, d):
                raise DomainError(f"rho at vertex {v} has shape {block.shape}")
            if _norm(block - block.conj().T) > EXACT_TOLERANCE:
                raise DomainError(f"rho at vertex {v} is not Hermitian")
            matrices.append(block)
        object.__setattr__(self, "rho", tuple(matrices))
        arrows = []
        for arrow in self.arrows:
            if not (0 <= arrow.source < n and 0 <= arrow.target < n):
                raise DomainError(f"arrow {arrow.source}->{arrow.target} leaves the quiver")
            block = np.asarray(arrow.matrix, dtype=complex)
            if block.ndim == 0:
                block = block.reshape(1, 1)
            shape = (self.dims[arrow.target], self.dims[arrow.source])
            if block.shape != shape:
                raise DomainError(
                    f"arrow {arrow.source}->{arrow.target} has shape {block.shape}, expected {shape}"
                )
            arrows.append(Arrow(arrow.source, arrow.target, block))
        object.__setattr__(self, "arrows", tuple(arrows))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))

    @property
    def n_vertices(self) -> int:
        return len(self.dims)

    @property
    def is_thin(self) -> bool:
        return all(d == 1 for d in self.dims)

    def total_slope(self) -> float:
        """rho-bar: the mass-weighted mean of rho, equal to tan of the total phase."""
        num = sum(m * np.trace(r).real for m, r in zip(self.masses, self.rho))
        den = sum(m * d for m, d in zip(self.masses, self.dims))
        return float(num / den)

    def replace(self, **changes: typing.Any) -> QuiverData:
        values = {
            "dims": self.dims,
            "masses": self.masses,
            "arrows": self.arrows,
            "rho": self.rho,
        }
        values.update(changes)
        return QuiverData(**values)

    def with_matrices(self, matrices: typing.Sequence[Matrix]) -> QuiverData:
        return self.replace(
            arrows=tuple(Arrow(a.source, a.target, m) for a, m in zip(self.arrows, matrices))
        )


def moment_map(q: QuiverData, matrices: typing.Sequence[Matrix] | None = None) -> list[Matrix]:
    """mu_v = sum_out a^H a / m_v - sum_in a a^H / m_v at the identity metric."""
    matrices = [a.matrix for a in q.arrows] if matrices is None else list(matrices)
    mu = [np.zeros((d, d), dtype=complex) for d in q.dims]
    for arrow, a in zip(q.arrows, matrices):
        mu[arrow.source] += a.conj().T @ a / q.masses[arrow.source]
        mu[arrow.target] -= a @ a.conj().T / q.masses[arrow.target]
    return mu


def rho_from_slopes(
    q: QuiverData, slopes: typing.Sequence[float], total: float | None = None
) -> QuiverData:
    """Set rho_v to the slope of the simple representation at v.

    With ``total`` the slopes are shifted by a common constant so the total
    slope of the quiver equals ``total``.
    """
    if len(slopes) != q.n_vertices:
        raise DomainError("one slope per vertex is required")
    values = [float(s) for s in slopes]
    if total is not None:
        current = sum(m * d * s for m, d, s in zip(q.masses, q.dims, values))
        current /= sum(m * d for m, d in zip(q.masses, q.dims))
        values = [s + total - current for s in values]
    return q.replace(rho=tuple(values))


def balanced_rho(q: QuiverData, level: float = 0.0) -> QuiverData:
    """rho = mu(alpha) + level, which puts the identity metric at a critical point."""
    mu = moment_map(q)
    return q.replace(
        rho=tuple(_hermitian(m) + level * np.eye(d) for m, d in zip(mu, q.dims))
    )


def random_quiver(
    rng: np.random.Generator,
    *,
    max_vertices: int = 4,
    max_dim: int = 3,
    arrow_probability: float = 0.5,
    zero_probability: float = 0.0,
) -> QuiverData:
    """A random quiver whose twists are flat and Yang-Mills.

    Arrow maps are scalar multiples of unitaries and dimensions are constant
    on connected components, so mu(alpha) is scalar on every vertex; rho is
    then balanced against mu.
    """
    n = int(rng.integers(1, max_vertices + 1))
    pairs = [(s, t) for s, t in itertools.permutations(range(n), 2) if s < t or rng.random() < 0.3]
    edges = [(s, t) for s, t in pairs if rng.random() < arrow_probability]
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            x = parent[x]
        return x

    for s, t in edges:
        parent[find(s)] = find(t)
    component_dim = {root: int(rng.integers(1, max_dim + 1)) for root in set(map(find, range(n)))}
    dims = tuple(component_dim[find(v)] for v in range(n))
    masses = tuple(float(rng.uniform(0.5, 2.0)) for _ in range(n))
    arrows = []
    for s, t in edges:
        d = dims[s]
        if rng.random() < zero_probability:
            scale = 0.0
        else:
            scale = float(rng.uniform(0.3, 1.5))
        if d > 1:
            unitary = np.asarray(stats.unitary_group.rvs(d, random_state=rng), dtype=complex)
        else:
            unitary = np.exp(2j * np.pi * rng.random()) * np.eye(1, dtype=complex)
        arrows.append(Arrow(s, t, scale * unitary))
    q = QuiverData(dims, masses, tuple(arrows))
    return balanced_rho(q, level=float(rng.normal()))


# ---------------------------------------------------------------------------
# Algebras
# ---------------------------------------------------------------------------


class LozengeAlgebra(abc.ABC):
    """Coordinates, product, star, trace, omega, theta and the differential."""

    def __init__(
        self,
        sizes: dict[str, int],
        omega: Vector,
        theta: Vector,
        d: Matrix | None = None,
    ) -> None:
        self.sizes = {c: int(sizes[c]) for c in COMPONENTS}
        self.slices: dict[str, slice] = {}
        start = 0
        for c in COMPONENTS:
            self.slices[c] = slice(start, start + self.sizes[c])
            start += self.sizes[c]
        self.dim = start
        self.omega = np.asarray(omega, dtype=complex)
        self.theta = np.asarray(theta, dtype=complex)
        self.d: Matrix = (
            np.zeros((start, start), dtype=complex) if d is None else np.asarray(d, dtype=complex)
        )
        self._cache: dict[str, typing.Any] = {}

    # -- primitives ---------------------------------------------------------

    @abc.abstractmethod
    def mul(self, x: Vector, y: Vector) -> Vector: ...

    @abc.abstractmethod
    def star(self, x: Vector) -> Vector: ...

    @abc.abstractmethod
    def trace(self, x: Vector) -> complex:
        """tau, reading only the degree-2 part of ``x``."""

    @property
    @abc.abstractmethod
    def unit(self) -> Vector: ...

    @abc.abstractmethod
    def embed_root(self, x: Vector) -> Vector:
        """Coordinates of ``x`` in the underlying quiver algebra."""

    @abc.abstractmethod
    def from_root(self, v: Vector) -> Vector:
        """Orthogonal projection of a quiver-algebra vector into this algebra."""

    @property
    @abc.abstractmethod
    def root(self) -> QuiverAlgebra: ...

    # -- bookkeeping --------------------------------------------------------

    def zeros(self) -> Vector:
        return np.zeros(self.dim, dtype=complex)

    def basis_vector(self, i: int) -> Vector:
        e = self.zeros()
        e[i] = 1.0
        return e

    def component_of(self, i: int) -> str:
        for c in COMPONENTS:
            s = self.slices[c]
            if s.start <= i < s.stop:
                return c
        raise IndexError(i)

    def part(self, x: Vector, *components: str) -> Vector:
        out = self.zeros()
        for c in components:
            out[self.slices[c]] = x[self.slices[c]]
        return out

    def projector(self, *components: str) -> Matrix:
        p = np.zeros((self.dim, self.dim), dtype=complex)
        for c in components:
            s = self.slices[c]
            p[s, s] = np.eye(self.sizes[c])
        return p

    def matrix_of(self, operator: typing.Callable[[Vector], Vector]) -> Matrix:
        columns = [operator(self.basis_vector(i)) for i in range(self.dim)]
        if not columns:
            return np.zeros((0, 0), dtype=complex)
        return np.column_stack(columns)

    def replace(self, **changes: typing.Any) -> LozengeAlgebra:
        """Copy with ``theta`` and/or ``d`` swapped; cached operators are dropped."""
        new = copy.copy(self)
        new._cache = {}
        for key, value in changes.items():
            if key not in ("theta", "d"):
                raise TypeError(f"cannot replace {key!r}")
            setattr(new, key, np.asarray(value, dtype=complex))
        return new

    def _cached(self, key: str, build: typing.Callable[[], typing.Any]) -> typing.Any:
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    # -- derived structure --------------------------------------------------

    def supercommutator(self, x: Vector, y: Vector) -> Vector:
        """[x, y] = xy - (-1)^{|x||y|} yx, extended bilinearly over degrees."""
        out = self.zeros()
        for cx in COMPONENTS:
            xc = self.part(x, cx)
            if not xc.any():
                continue
            for cy in COMPONENTS:
                yc = self.part(y, cy)
                if not yc.any():
                    continue
                sign = -1.0 if DEGREE[cx] * DEGREE[cy] % 2 else 1.0
                out += self.mul(xc, yc) - sign * self.mul(yc, xc)
        return out

    def ad(self, x: Vector) -> Matrix:
        return self.matrix_of(lambda y: self.supercommutator(x, y))

    def inverse(self, g: Vector) -> Vector:
        """Inverse of a degree-0 element."""
        s = self.slices["0"]
        left = self.matrix_of(lambda y: self.mul(g, self.part(y, "0")))[s, s]
        try:
            if np.linalg.cond(left) > 1e12:
                raise np.linalg.LinAlgError
            solution = np.linalg.solve(left, self.unit[s])
        except np.linalg.LinAlgError:
            raise DomainError("gauge element is not invertible") from None
        out = self.zeros()
        out[s] = solution
        return out

    @property
    def lefschetz(self) -> Matrix:
        """L: A^0 -> A^2, a -> omega a, as a full-space matrix."""

        def build() -> Matrix:
            return self.matrix_of(lambda y: self.mul(self.omega, self.part(y, "0")))

        return typing.cast(Matrix, self._cached("L", build))

    @property
    def lambda_operator(self) -> Matrix:
        """Lambda = L^-1: A^2 -> A^0, zero on the other components."""

        def build() -> Matrix:
            s0, s2 = self.slices["0"], self.slices["2"]
            block = self.lefschetz[s2, s0]
            if block.shape[0] != block.shape[1] or (
                block.size and np.linalg.cond(block) > 1e12
            ):
                raise AxiomError("L invertible", float("inf"))
            out = np.zeros((self.dim, self.dim), dtype=complex)
            if block.size:
                out[s0, s2] = np.linalg.inv(block)
            return out

        return typing.cast(Matrix, self._cached("Lambda", build))

    def lam(self, x: Vector) -> Vector:
        return typing.cast(Vector, self.lambda_operator @ x)

    def forms(self) -> dict[str, Matrix]:
        """The three defining sesquilinear forms, plus the induced one on A^2."""

        def build() -> dict[str, Matrix]:
            out: dict[str, Matrix] = {}
            for c, weight in (("0", None), ("10", -1j), ("01", 1j)):
                s = self.slices[c]
                k = self.sizes[c]
                g = np.zeros((k, k), dtype=complex)
                for i in range(k):
                    ei_star = self.star(self.basis_vector(s.start + i))
                    if weight is None:
                        ei_star = self.mul(self.omega, ei_star)
                    for j in range(k):
                        value = self.trace(self.mul(ei_star, self.basis_vector(s.start + j)))
                        g[i, j] = value if weight is None else weight * value
                out[c] = g
            s0, s2 = self.slices["0"], self.slices["2"]
            lam = self.lambda_operator[s0, s2]
            out["2"] = lam.conj().T @ out["0"] @ lam
            return out

        return typing.cast(dict[str, Matrix], self._cached("forms", build))

    @property
    def gram(self) -> Matrix:
        def build() -> Matrix:
            forms = self.forms()
            return linalg.block_diag(*[_hermitian(forms[c]) for c in COMPONENTS]).astype(complex)

        return typing.cast(Matrix, self._cached("gram", build))

    def inner(self, x: Vector, y: Vector) -> complex:
        return complex(x.conj() @ self.gram @ y)

    def adjoint(self, operator: Matrix) -> Matrix:
        """Adjoint for the Gram inner product, the oracle for the Kahler formulas."""
        return typing.cast(Matrix, np.linalg.solve(self.gram, operator.conj().T @ self.gram))

    def partials(self) -> tuple[Matrix, Matrix]:
        """(del, delbar): the bidegree (1,0) and (0,1) parts of d."""

        def build() -> tuple[Matrix, Matrix]:
            p = {c: self.projector(c) for c in COMPONENTS}
            d = self.d
            delta = p["10"] @ d @ p["0"] + p["2"] @ d @ p["01"]
            delta_bar = p["01"] @ d @ p["0"] + p["2"] @ d @ p["10"]
            return delta, delta_bar

        return typing.cast(tuple[Matrix, Matrix], self._cached("partials", build))

    def a0_blocks(self, x: Vector) -> list[Matrix]:
        return self.root.split(self.embed_root(x))[0]

    def a0_from_blocks(self, blocks: typing.Sequence[Matrix]) -> Vector:
        root = self.root
        return self.from_root(root.assemble(blocks, "0"))

    def a01_blocks(self, x: Vector) -> list[Matrix]:
        return self.root.split(self.embed_root(x))[2]


class QuiverAlgebra(LozengeAlgebra):
    """The lozenge algebra of a quiver with Hermitian vertex spaces.

    A^0 = sum End(E_v), A^{0,1} = sum over arrows v->w of Hom(E_v, E_w),
    A^{1,0} its star image and A^2 = omega A^0. Mixed degree-one products
    land in A^2: ``a b = i omega a b / m_w`` at the target for a in A^{0,1},
    and ``-i omega a b / m_v`` at the source for a in A^{1,0}.
    """

    def __init__(self, quiver: QuiverData) -> None:
        self.quiver = quiver
        dims = quiver.dims
        # (offset, rows, cols) of every block, per component
        self._layout: dict[str, list[tuple[int, int, int]]] = {}
        sizes: dict[str, int] = {}
        offset = 0
        for c in COMPONENTS:
            if c in ("0", "2"):
                shapes = [(d, d) for d in dims]
            elif c == "10":
                shapes = [(dims[a.source], dims[a.target]) for a in quiver.arrows]
            else:
                shapes = [(dims[a.target], dims[a.source]) for a in quiver.arrows]
            blocks = []
            for rows, cols in shapes:
                blocks.append((offset, rows, cols))
                offset += rows * cols
            self._layout[c] = blocks
            sizes[c] = sum(r * k for _, r, k in blocks)
        self._n = len(dims)
        empty = np.zeros(offset, dtype=complex)
        super().__init__(sizes, empty, empty)
        self.omega = self.assemble([np.eye(d, dtype=complex) for d in dims], "2")
        self.theta = self.assemble([-1j * r for r in quiver.rho], "2")

    def split(self, x: Vector) -> tuple[list[Matrix], list[Matrix], list[Matrix], list[Matrix]]:
        parts = []
        for c in COMPONENTS:
            parts.append(
                [x[o : o + r * k].reshape(r, k) for o, r, k in self._layout[c]]
            )
        return parts[0], parts[1], parts[2], parts[3]

    def assemble(self, blocks: typing.Sequence[Matrix], component: str) -> Vector:
        out = self.zeros()
        for (o, r, k), block in zip(self._layout[component], blocks):
            out[o : o + r * k] = np.asarray(block, dtype=complex).reshape(r * k)
        return out

    def assemble_all(
        self,
        a0: typing.Sequence[Matrix],
        a10: typing.Sequence[Matrix],
        a01: typing.Sequence[Matrix],
        a2: typing.Sequence[Matrix],
    ) -> Vector:
        return (
            self.assemble(a0, "0")
            + self.assemble(a10, "10")
            + self.assemble(a01, "01")
            + self.assemble(a2, "2")
        )

    def mul(self, x: Vector, y: Vector) -> Vector:
        x0, x10, x01, x2 = self.split(x)
        y0, y10, y01, y2 = self.split(y)
        arrows = self.quiver.arrows
        masses = self.quiver.masses
        z0 = [a @ b for a, b in zip(x0, y0)]
        z10 = [
            x0[a.source] @ y10[i] + x10[i] @ y0[a.target] for i, a in enumerate(arrows)
        ]
        z01 = [
            x0[a.target] @ y01[i] + x01[i] @ y0[a.source] for i, a in enumerate(arrows)
        ]
        z2 = [x0[v] @ y2[v] + x2[v] @ y0[v] for v in range(self._n)]
        for i, a in enumerate(arrows):
            z2[a.target] = z2[a.target] + (1j / masses[a.target]) * (x01[i] @ y10[i])
            z2[a.source] = z2[a.source] - (1j / masses[a.source]) * (x10[i] @ y01[i])
        return self.assemble_all(z0, z10, z01, z2)

    def star(self, x: Vector) -> Vector:
        x0, x10, x01, x2 = self.split(x)
        return self.assemble_all(
            [b.conj().T for b in x0],
            [b.conj().T for b in x01],
            [b.conj().T for b in x10],
            [b.conj().T for b in x2],
        )

    def trace(self, x: Vector) -> complex:
        x2 = self.split(x)[3]
        return complex(sum(m * np.trace(b) for m, b in zip(self.quiver.masses, x2)))

    @property
    def unit(self) -> Vector:
        return self.assemble([np.eye(d, dtype=complex) for d in self.quiver.dims], "0")

    @property
    def root(self) -> QuiverAlgebra:
        return self

    def embed_root(self, x: Vector) -> Vector:
        return x

    def from_root(self, v: Vector) -> Vector:
        return v

    def inverse(self, g: Vector) -> Vector:
        try:
            blocks = [np.linalg.inv(b) for b in self.split(g)[0]]
        except np.linalg.LinAlgError:
            raise DomainError("gauge element is not invertible") from None
        if any(np.linalg.cond(b) > 1e12 for b in self.split(g)[0]):
            raise DomainError("gauge element is not invertible")
        return self.assemble(blocks, "0")

    @property
    def gram(self) -> Matrix:
        def build() -> Matrix:
            weights = np.ones(self.dim)
            for c in ("0", "2"):
                for (o, r, k), m in zip(self._layout[c], self.quiver.masses):
                    weights[o : o + r * k] = m
            return np.diag(weights).astype(complex)

        return typing.cast(Matrix, self._cached("gram", build))

    @property
    def lambda_operator(self) -> Matrix:
        def build() -> Matrix:
            out = np.zeros((self.dim, self.dim), dtype=complex)
            s0, s2 = self.slices["0"], self.slices["2"]
            out[s0, s2] = np.eye(self.sizes["0"])
            return out

        return typing.cast(Matrix, self._cached("Lambda", build))

    def alpha_double_prime(self, matrices: typing.Sequence[Matrix] | None = None) -> Vector:
        """alpha'' in A^{0,1}, from the quiver's arrow maps unless given."""
        if matrices is None:
            matrices = [a.matrix for a in self.quiver.arrows]
        return self.assemble(matrices, "01")

    def alpha(self, matrices: typing.Sequence[Matrix] | None = None) -> Vector:
        """alpha = alpha'' - alpha''^*, skew for the star."""
        a = self.alpha_double_prime(matrices)
        return a - self.star(a)


class SubLozengeAlgebra(LozengeAlgebra):
    """A graded subspace of ``parent`` with the product projected back.

    ``bases`` maps each component to parent coordinates of a basis that is
    orthonormal for the parent's Gram matrix.
    """

    def __init__(
        self,
        parent: LozengeAlgebra,
        bases: dict[str, Matrix],
        *,
        theta: Vector | None = None,
        d: Matrix | None = None,
    ) -> None:
        self.parent = parent
        self.bases = {c: gram_orthonormal(parent.gram, bases[c]) for c in COMPONENTS}
        sizes = {c: self.bases[c].shape[1] for c in COMPONENTS}
        self._embed = np.zeros((parent.dim, sum(sizes.values())), dtype=complex)
        self._coords = np.zeros((sum(sizes.values()), parent.dim), dtype=complex)
        start = 0
        for c in COMPONENTS:
            basis = self.bases[c]
            k = basis.shape[1]
            self._embed[:, start : start + k] = basis
            self._coords[start : start + k, :] = basis.conj().T @ parent.gram
            start += k
        omega = self.coords(parent.omega)
        super().__init__(
            sizes,
            omega,
            self.coords(parent.theta if theta is None else theta),
            d,
        )

    def embed(self, x: Vector) -> Vector:
        return typing.cast(Vector, self._embed @ x)

    def coords(self, v: Vector) -> Vector:
        return typing.cast(Vector, self._coords @ v)

    def mul(self, x: Vector, y: Vector) -> Vector:
        return self.coords(self.parent.mul(self.embed(x), self.embed(y)))

    def star(self, x: Vector) -> Vector:
        return self.coords(self.parent.star(self.embed(x)))

    def trace(self, x: Vector) -> complex:
        return self.parent.trace(self.embed(self.part(x, "2")))

    @property
    def unit(self) -> Vector:
        return self.coords(self.parent.unit)

    @property
    def root(self) -> QuiverAlgebra:
        return self.parent.root

    def embed_root(self, x: Vector) -> Vector:
        return self.parent.embed_root(self.embed(x))

    def from_root(self, v: Vector) -> Vector:
        return self.coords(self.parent.from_root(v))

    def residual(self, v: Vector) -> float:
        """Distance from a parent vector to this subspace, in max norm."""
        return _norm(v - self.embed(self.coords(v)))


# ---------------------------------------------------------------------------
# Construction and axioms
# ---------------------------------------------------------------------------


@dataclass
class AxiomReport:
    violations: dict[str, float]

    def failed(self, tolerance: float = TOLERANCE) -> list[str]:
        return [name for name, value in self.violations.items() if not value < tolerance]

    def ok(self, tolerance: float = TOLERANCE) -> bool:
        return not self.failed(tolerance)

    def raise_for_violation(self, tolerance: float = TOLERANCE) -> None:
        failed = self.failed(tolerance)
        if failed:
            raise AxiomError(failed[0], self.violations[failed[0]], self)

    def to_json(self) -> dict[str, float]:
        return dict(self.violations)


def _positivity(form: Matrix) -> float:
    if form.size == 0:
        return 0.0
    defect = _norm(form - form.conj().T)
    smallest = float(linalg.eigvalsh(_hermitian(form))[0])
    if smallest > EXACT_TOLERANCE:
        return defect
    return max(defect, 1.0 - min(smallest, 0.0))


def check_axioms(a: LozengeAlgebra) -> AxiomReport:
    """Evaluate every defining identity on basis elements; report max violations."""
    v: dict[str, float] = {
        name: 0.0
        for name in (
            "grading",
            "A10 A10 = 0",
            "star(A10) = A01",
            "tau([a,b]) = 0",
            "tau(da) = 0",
            "tau(a*) = conj tau(a)",
            "omega* = omega",
            "[omega,a] = 0",
            "theta* = -theta",
            "theta central",
            "L invertible",
            "positivity A0",
            "positivity A10",
            "positivity A01",
            "d^2 = 0",
            "Yang-Mills",
            "(da)* = d(a*)",
        )
    }

    def bump(name: str, value: float) -> None:
        v[name] = max(v[name], value)

    basis = [a.basis_vector(i) for i in range(a.dim)]
    comp = [a.component_of(i) for i in range(a.dim)]
    for i, j in itertools.combinations_with_replacement(range(a.dim), 2):
        for x, y, cx, cy in ((basis[i], basis[j], comp[i], comp[j]), (basis[j], basis[i], comp[j], comp[i])):
            xy = a.mul(x, y)
            bx, by = BIDEGREE[cx], BIDEGREE[cy]
            target = _FROM_BIDEGREE.get((bx[0] + by[0], bx[1] + by[1]))
            outside = xy if target is None else xy - a.part(xy, target)
            if cx == cy == "10":
                bump("A10 A10 = 0", _norm(xy))
            else:
                bump("grading", _norm(outside))
            if i == j:
                break
        sign = -1.0 if DEGREE[comp[i]] * DEGREE[comp[j]] % 2 else 1.0
        commutator = a.mul(basis[i], basis[j]) - sign * a.mul(basis[j], basis[i])
        bump("tau([a,b]) = 0", abs(a.trace(commutator)))

    omega_star = a.star(a.omega)
    bump("omega* = omega", _norm(omega_star - a.omega))
    bump("theta* = -theta", _norm(a.star(a.theta) + a.theta))
    d = a.d
    for i, x in enumerate(basis):
        x_star = a.star(x)
        if comp[i] == "10":
            bump("star(A10) = A01", _norm(x_star - a.part(x_star, "01")))
        bump("tau(a*) = conj tau(a)", abs(a.trace(x_star) - np.conj(a.trace(x))))
        bump("tau(da) = 0", abs(a.trace(d @ x)))
        bump("[omega,a] = 0", _norm(a.supercommutator(a.omega, x)))
        bump("theta central", _norm(a.supercommutator(a.theta, x)))
        bump("(da)* = d(a*)", _norm(a.star(d @ x) - d @ x_star))

    try:
        lam = a.lambda_operator
    except AxiomError:
        v["L invertible"] = float("inf")
    else:
        bump("Yang-Mills", _norm(d @ (lam @ a.theta)))
        forms = a.forms()
        bump("positivity A0", _positivity(forms["0"]))
        bump("positivity A10", _positivity(forms["10"]))
        bump("positivity A01", _positivity(forms["01"]))
    bump("d^2 = 0", _norm(d @ d))
    return AxiomReport(v)


def build_from_quiver(q: QuiverData, *, check: bool = True) -> QuiverAlgebra:
    """The base algebra of ``q``; the representation itself enters later as alpha."""
    algebra = QuiverAlgebra(q)
    if check:
        check_axioms(algebra).raise_for_violation(EXACT_TOLERANCE)
    logger.debug("built quiver algebra of dimension %s", algebra.sizes)
    return algebra


def twist(a: LozengeAlgebra, alpha: Vector, *, check: bool = False) -> LozengeAlgebra:
    """Deform d to d + [alpha, -] and theta to theta + d alpha + alpha^2."""
    twisted = a.replace(
        d=a.d + a.ad(alpha),
        theta=a.theta + a.d @ alpha + a.mul(alpha, alpha),
    )
    if check:
        check_axioms(twisted).raise_for_violation()
    return twisted


# ---------------------------------------------------------------------------
# Kahler identities, Laplacians, Hodge theory
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Adjoints:
    del_star: Matrix
    delbar_star: Matrix
    d_star: Matrix


def adjoint_operators(a: LozengeAlgebra, *, verify: bool = True) -> Adjoints:
    """del* = i[Lambda, delbar], delbar* = -i[Lambda, del], d* = i[Lambda, delbar - del]."""
    lam = a.lambda_operator
    delta, delta_bar = a.partials()
    result = Adjoints(
        del_star=1j * (lam @ delta_bar - delta_bar @ lam),
        delbar_star=-1j * (lam @ delta - delta @ lam),
        d_star=1j * (lam @ (delta_bar - delta) - (delta_bar - delta) @ lam),
    )
    if verify:
        scale = max(1.0, _norm(a.d))
        for name, formula, operator in (
            ("del*", result.del_star, delta),
            ("delbar*", result.delbar_star, delta_bar),
        ):
            gap = _norm(formula - a.adjoint(operator))
            if gap > 1e-8 * scale:
                raise ConsistencyError(f"Kahler identity for {name} fails by {gap:.3e}")
    return result


@dataclass(frozen=True, eq=False)
class Laplacians:
    full: Matrix
    del_: Matrix
    delbar: Matrix


def _check_flat(a: LozengeAlgebra) -> None:
    defect = _norm(a.d @ a.d)
    if defect > TOLERANCE * max(1.0, _norm(a.d)) ** 2:
        raise DomainError(f"d^2 = 0 fails by {defect:.3e}")


def laplacians(a: LozengeAlgebra) -> Laplacians:
    _check_flat(a)
    adj = adjoint_operators(a)
    delta, delta_bar = a.partials()
    return Laplacians(
        full=a.d @ adj.d_star + adj.d_star @ a.d,
        del_=delta @ adj.del_star + adj.del_star @ delta,
        delbar=delta_bar @ adj.delbar_star + adj.delbar_star @ delta_bar,
    )


@dataclass(frozen=True, eq=False)
class Hodge:
    projection: Matrix
    greens: Matrix
    harmonic: dict[str, Matrix]
    spectrum: dict[str, npt.NDArray[np.float64]]


def hodge_decomposition(a: LozengeAlgebra) -> Hodge:
    """Diagonalize the Laplacian per bidegree with the generalized Hermitian eigensolver."""

    def build() -> Hodge:
        delta = laplacians(a).full
        gram = a.gram
        projection = np.zeros((a.dim, a.dim), dtype=complex)
        greens = np.zeros((a.dim, a.dim), dtype=complex)
        harmonic: dict[str, Matrix] = {}
        spectrum: dict[str, npt.NDArray[np.float64]] = {}
        for c in COMPONENTS:
            s = a.slices[c]
            k = a.sizes[c]
            if k == 0:
                harmonic[c] = np.zeros((a.dim, 0), dtype=complex)
                spectrum[c] = np.zeros(0)
                continue
            g = _hermitian(gram[s, s])
            w, vecs = linalg.eigh(_hermitian(g @ delta[s, s]), g)
            spectrum[c] = w
            cutoff = 1e-9 * max(1.0, float(np.abs(w).max()))
            kernel = np.abs(w) < cutoff
            full = np.zeros((a.dim, k), dtype=complex)
            full[s, :] = vecs
            kv = full[:, kernel]
            harmonic[c] = kv
            projection += kv @ kv.conj().T @ gram
            rest = full[:, ~kernel]
            greens += rest @ np.diag(1.0 / w[~kernel]) @ rest.conj().T @ gram
        return Hodge(projection, greens, harmonic, spectrum)

    return typing.cast(Hodge, a._cached("hodge", build))


def harmonic_projection(a: LozengeAlgebra) -> Matrix:
    return hodge_decomposition(a).projection


def greens_operator(a: LozengeAlgebra) -> Matrix:
    return hodge_decomposition(a).greens


def betti_numbers(a: LozengeAlgebra) -> dict[str, int]:
    return {c: int(b.shape[1]) for c, b in hodge_decomposition(a).harmonic.items()}


def harmonic_algebra(a: LozengeAlgebra) -> LozengeAlgebra:
    if not a.d.any():
        return a
    h = hodge_decomposition(a)
    sub = SubLozengeAlgebra(a, h.harmonic, theta=h.projection @ a.theta)
    check_axioms(sub).raise_for_violation(1e-8)
    return sub


def diamond_algebra(a: LozengeAlgebra, r: Vector) -> SubLozengeAlgebra:
    """Harmonic elements graded by ad r, with theta replaced by -i omega r.

    Degree-0 and degree-2 parts commute with r; A^{1,0} has [r, a] = a and
    A^{0,1} has [r, a] = -a.
    """
    if _norm(r - a.star(r)) > 1e-9:
        raise DomainError("the grading element must be self-adjoint")
    h = hodge_decomposition(a) if a.d.any() else None
    ad_r = a.ad(r)
    eigenvalue = {"0": 0.0, "10": 1.0, "01": -1.0, "2": 0.0}
    bases: dict[str, Matrix] = {}
    for c in COMPONENTS:
        if h is not None:
            candidates = h.harmonic[c]
        else:
            candidates = np.eye(a.dim, dtype=complex)[:, a.slices[c]]
        if candidates.shape[1] == 0:
            bases[c] = candidates
            continue
        shifted = (ad_r - eigenvalue[c] * np.eye(a.dim)) @ candidates
        kernel = linalg.null_space(shifted, rcond=1e-9)
        bases[c] = candidates @ kernel
    theta = -1j * a.mul(a.omega, r)
    sub = SubLozengeAlgebra(a, bases, theta=theta)
    logger.debug("graded algebra has dimensions %s", sub.sizes)
    return sub


# ---------------------------------------------------------------------------
# Gauge action and curvature
# ---------------------------------------------------------------------------


def gauge_act(a: LozengeAlgebra, g: Vector, alpha: Vector) -> Vector:
    """g.alpha = g*^-1 alpha' g* + g*^-1 del g* + g alpha'' g^-1 - (delbar g) g^-1."""
    g_inv = a.inverse(g)
    g_star = a.star(g)
    g_star_inv = a.inverse(g_star)
    delta, delta_bar = a.partials()
    alpha_1 = a.part(alpha, "10")
    alpha_2 = a.part(alpha, "01")
    return (
        a.mul(a.mul(g_star_inv, alpha_1), g_star)
        + a.mul(g_star_inv, delta @ g_star)
        + a.mul(a.mul(g, alpha_2), g_inv)
        - a.mul(delta_bar @ g, g_inv)
    )


def curvature(a: LozengeAlgebra, alpha: Vector) -> Vector:
    f = a.theta + a.d @ alpha + a.mul(alpha, alpha)
    if _norm(a.star(alpha) + alpha) < 1e-9 and _norm(a.star(f) + f) > 1e-8 * max(1.0, _norm(f)):
        raise ConsistencyError("curvature of a skew connection is not skew")
    return f


def chern_connection(a: LozengeAlgebra, alpha: Vector, h: Vector) -> Vector:
    """A_{alpha,h} = alpha'' + h^-1 alpha' h + h^-1 del h."""
    h_inv = a.inverse(h)
    delta, _ = a.partials()
    return (
        a.part(alpha, "01")
        + a.mul(a.mul(h_inv, a.part(alpha, "10")), h)
        + a.mul(h_inv, delta @ h)
    )
