"""Metric gradient flow on lozenge algebras.

The flow ``h^-1 dh/dt = -2i (Lambda F_h - lambda)`` is integrated in log
coordinates ``u = log h`` so every state stays positive. King's criterion is
checked from both sides (projector lattice and long-time flow behaviour) and
the asymptotic solution of semistable, non-polystable problems is built from
the weight grading and certified by its measured residual.
"""

from __future__ import annotations

import enum
import itertools
import logging
import math
import typing
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
import numpy.typing as npt
from scipy import linalg

from ._errors import ConsistencyError, DomainError, LatticeTooLargeError, StiffnessError
from ._lattice import (
    TABLE_LIMIT,
    IteratedLabel,
    Polarization,
    PolarizedLattice,
    SubsetLattice,
    TableLattice,
    harder_narasimhan,
    is_polystable,
    is_semistable,
    phase_sublattice,
    total_filtration,
    weight_filtration,
)
from ._lozenge import (
    LozengeAlgebra,
    Matrix,
    QuiverAlgebra,
    Vector,
    chern_connection,
    curvature,
    diamond_algebra,
    gauge_act,
    greens_operator,
    twist,
)

logger = logging.getLogger(__name__)

RealArray = npt.NDArray[np.float64]


def _block_function(blocks: typing.Sequence[Matrix], fn: typing.Callable[[RealArray], RealArray]) -> list[Matrix]:
    out = []
    for b in blocks:
        w, v = linalg.eigh(0.5 * (b + b.conj().T))
        out.append((v * fn(w)) @ v.conj().T)
    return out


def a0_function(a: LozengeAlgebra, x: Vector, fn: typing.Callable[[RealArray], RealArray]) -> Vector:
    """Apply ``fn`` to a self-adjoint degree-0 element through its spectrum."""
    return a.a0_from_blocks(_block_function(a.a0_blocks(x), fn))


def hermitian_norm(a: LozengeAlgebra, x: Vector) -> float:
    """Largest singular value over the vertex blocks of a degree-0 element."""
    blocks = a.a0_blocks(x)
    return max((float(np.linalg.norm(b, 2)) for b in blocks if b.size), default=0.0)


def slope_constant(a: LozengeAlgebra) -> complex:
    """lambda = tau(theta) / tau(omega)."""
    return a.trace(a.theta) / a.trace(a.omega)


# ---------------------------------------------------------------------------
# The flow
# ---------------------------------------------------------------------------


class MetricFlow:
    """Right-hand side of the metric flow for one algebra and connection.

    Quiver algebras with vanishing differential use the moment map directly;
    every other algebra goes through the Chern connection and its curvature.
    """

    def __init__(self, a: LozengeAlgebra, alpha: Vector) -> None:
        self.algebra = a
        self.alpha = alpha
        self.lam = slope_constant(a)
        self._fast = isinstance(a, QuiverAlgebra) and not a.d.any()
        s = a.slices["0"]
        candidates = []
        for i in range(s.start, s.stop):
            e = a.basis_vector(i)
            e_star = a.star(e)
            candidates.append(0.5 * (e + e_star))
            candidates.append(0.5j * (e - e_star))
        stacked = np.vstack([np.real(np.column_stack(candidates)), np.imag(np.column_stack(candidates))])
        real_basis = linalg.orth(stacked)
        self.hermitian_basis: Matrix = real_basis[: a.dim] + 1j * real_basis[a.dim :]
        self._pinv = np.linalg.pinv(real_basis)
        self.asymmetry = 0.0

    @property
    def size(self) -> int:
        return int(self.hermitian_basis.shape[1])

    def element(self, u: RealArray) -> Vector:
        return typing.cast(Vector, self.hermitian_basis @ u)

    def coordinates(self, x: Vector) -> RealArray:
        return typing.cast(RealArray, self._pinv @ np.concatenate([x.real, x.imag]))

    def metric(self, u: RealArray) -> Vector:
        return a0_function(self.algebra, self.element(u), np.exp)

    def log_coordinates(self, h: Vector) -> RealArray:
        blocks = self.algebra.a0_blocks(h)
        for b in blocks:
            if float(linalg.eigvalsh(0.5 * (b + b.conj().T))[0]) <= 0:
                raise DomainError("metric is not positive definite")
        return self.coordinates(a0_function(self.algebra, h, np.log))

    def generator(self, h: Vector) -> Vector:
        """R(h) = h^-1 dh/dt."""
        a = self.algebra
        if self._fast:
            q = typing.cast(QuiverAlgebra, a).quiver
            hb = a.a0_blocks(h)
            hinv = [np.linalg.inv(b) for b in hb]
            ab = a.a01_blocks(self.alpha)
            rho_bar = (1j * self.lam).real
            mu = [-r + rho_bar * np.eye(d) for r, d in zip(q.rho, q.dims)]
            for arrow, m in zip(q.arrows, ab):
                s, t = arrow.source, arrow.target
                mu[s] = mu[s] + hinv[s] @ m.conj().T @ hb[t] @ m / q.masses[s]
                mu[t] = mu[t] - m @ hinv[s] @ m.conj().T @ hb[t] / q.masses[t]
            return a.a0_from_blocks([2.0 * b for b in mu])
        f = curvature(a, chern_connection(a, self.alpha, h))
        return -2j * (a.lam(f) - self.lam * a.unit)

    def residual(self, h: Vector) -> float:
        """max |eig(-i (Lambda F_h - lambda))| over vertex blocks."""
        blocks = self.algebra.a0_blocks(self.generator(h))
        return max(
            (float(np.max(np.abs(np.linalg.eigvals(0.5 * b)))) for b in blocks if b.size),
            default=0.0,
        )

    def velocity(self, u: RealArray) -> RealArray:
        """du/dt through the Daleckii-Krein formula for the derivative of log."""
        a = self.algebra
        u_blocks = a.a0_blocks(self.element(u))
        h = self.metric(u)
        r_blocks = a.a0_blocks(self.generator(h))
        out = []
        for ub, rb in zip(u_blocks, r_blocks):
            w, v = linalg.eigh(0.5 * (ub + ub.conj().T))
            hdot = (v * np.exp(w)) @ v.conj().T @ rb
            self.asymmetry = max(self.asymmetry, float(np.max(np.abs(hdot - hdot.conj().T), initial=0.0)))
            hdot = 0.5 * (hdot + hdot.conj().T)
            diff = w[:, None] - w[None, :]
            expdiff = np.exp(w)[:, None] - np.exp(w)[None, :]
            with np.errstate(invalid="ignore", divide="ignore"):
                kernel = np.where(np.abs(diff) > 1e-12, diff / np.where(expdiff == 0, 1.0, expdiff), 0.0)
            same = np.abs(diff) <= 1e-12
            kernel = np.where(same, np.exp(-0.5 * (w[:, None] + w[None, :])), kernel)
            out.append(v @ ((v.conj().T @ hdot @ v) * kernel) @ v.conj().T)
        return self.coordinates(a.a0_from_blocks(out))


@dataclass
class MetricTrajectory:
    times: RealArray
    logs: RealArray
    residuals: RealArray
    steps: RealArray
    flow: MetricFlow = field(repr=False)
    asymmetry: float = 0.0

    def __post_init__(self) -> None:
        if np.any(np.diff(self.times) <= 0):
            raise ConsistencyError("trajectory times are not increasing")

    def __len__(self) -> int:
        return len(self.times)

    def state(self, i: int) -> Vector:
        return self.flow.metric(self.logs[i])

    @property
    def final(self) -> Vector:
        return self.state(len(self.times) - 1)

    def log_norm(self, i: int) -> float:
        """max |eig(log h)| at sample ``i``."""
        return hermitian_norm(self.flow.algebra, self.flow.element(self.logs[i]))

    def log_eigenvalues(self, i: int) -> RealArray:
        blocks = self.flow.algebra.a0_blocks(self.flow.element(self.logs[i]))
        return np.concatenate([linalg.eigvalsh(0.5 * (b + b.conj().T)) for b in blocks])


#: Absolute error per step in log coordinates.
FLOW_TOLERANCE = 1e-8


def _implicit_midpoint(
    f: typing.Callable[[RealArray], RealArray],
    u: RealArray,
    dt: float,
    jacobian: RealArray,
) -> RealArray | None:
    n = len(u)
    lhs = np.eye(n) - 0.5 * dt * jacobian
    try:
        lu = linalg.lu_factor(lhs)
    except (linalg.LinAlgError, ValueError):
        return None
    w = u + dt * f(u)
    for _ in range(25):
        g = w - u - dt * f(0.5 * (u + w))
        delta = linalg.lu_solve(lu, g)
        w = w - delta
        if not np.all(np.isfinite(w)):
            return None
        if np.max(np.abs(delta), initial=0.0) <= 1e-12 * (1.0 + np.max(np.abs(w), initial=0.0)):
            return w
    return None


def _jacobian(f: typing.Callable[[RealArray], RealArray], u: RealArray) -> RealArray:
    base = f(u)
    jac = np.zeros((len(u), len(u)))
    for i in range(len(u)):
        eps = 1e-7 * (1.0 + abs(u[i]))
        shifted = u.copy()
        shifted[i] += eps
        jac[:, i] = (f(shifted) - base) / eps
    return jac


def integrate_metric_flow(
    a: LozengeAlgebra,
    alpha: Vector,
    h0: Vector | None = None,
    t_end: float = 50.0,
    *,
    t_eval: typing.Sequence[float] | None = None,
    tolerance: float = FLOW_TOLERANCE,
    flow: MetricFlow | None = None,
) -> MetricTrajectory:
    """Adaptive implicit midpoint with step doubling on ``u = log h``."""
    flow = MetricFlow(a, alpha) if flow is None else flow
    h0 = a.unit if h0 is None else h0
    u = flow.log_coordinates(h0)
    f = flow.velocity
    stops = sorted(float(x) for x in t_eval) if t_eval is not None else [t_end]
    if stops[-1] > t_end or stops[0] < 0:
        raise DomainError("sample times must lie in [0, t_end]")
    times = [0.0]
    logs = [u.copy()]
    residuals = [flow.residual(h0)]
    steps = [0.0]
    if stops and stops[0] == 0.0:
        stops.pop(0)
    t = 0.0
    dt = min(1e-3, t_end) if t_end > 0 else 0.0
    rejected = 0
    while stops:
        target = stops[0]
        step = min(dt, target - t)
        jac = _jacobian(f, u)
        full = _implicit_midpoint(f, u, step, jac)
        half = _implicit_midpoint(f, u, 0.5 * step, jac)
        if half is not None:
            half = _implicit_midpoint(f, half, 0.5 * step, jac)
        if full is None or half is None:
            rejected += 1
            dt = 0.25 * step
        else:
            error = float(np.max(np.abs(full - half), initial=0.0)) / 3.0
            factor = 4.0 if error == 0 else min(4.0, max(0.2, 0.9 * (tolerance / error) ** (1 / 3)))
            if error <= tolerance:
                t += step
                u = half
                if math.isclose(t, target, rel_tol=1e-13, abs_tol=1e-15) or t >= target:
                    t = target
                    stops.pop(0)
                    times.append(t)
                    logs.append(u.copy())
                    residuals.append(flow.residual(flow.metric(u)))
                    steps.append(step)
                elif t_eval is None:
                    times.append(t)
                    logs.append(u.copy())
                    residuals.append(flow.residual(flow.metric(u)))
                    steps.append(step)
                dt = step * factor if step == dt else max(dt, step * factor)
            else:
                rejected += 1
                dt = step * factor
        if dt < 1e-12 * max(1.0, t):
            raise StiffnessError("step size underflow in metric flow", t, dt)
    logger.debug(
        "metric flow reached t=%g in %d samples, %d rejected steps", t, len(times), rejected
    )
    return MetricTrajectory(
        np.array(times),
        np.array(logs),
        np.array(residuals),
        np.array(steps),
        flow,
        asymmetry=flow.asymmetry,
    )


def _psd_gap(a: LozengeAlgebra, upper: Vector, lower: Vector) -> float:
    """Smallest eigenvalue of ``upper - lower`` over vertex blocks."""
    blocks = a.a0_blocks(upper - lower)
    return min(float(linalg.eigvalsh(0.5 * (b + b.conj().T))[0]) for b in blocks if b.size)


def compare_trajectories(g: MetricTrajectory, h: MetricTrajectory) -> RealArray:
    """Smallest C >= 1 with C^-1 g <= h <= C g at every shared sample."""
    if len(g) != len(h) or not np.allclose(g.times, h.times):
        raise DomainError("trajectories must share their sample times")
    a = g.flow.algebra
    out = []
    for i in range(len(g)):
        worst = 1.0
        for gb, hb in zip(a.a0_blocks(g.state(i)), a.a0_blocks(h.state(i))):
            w = linalg.eigvalsh(0.5 * (hb + hb.conj().T), 0.5 * (gb + gb.conj().T))
            worst = max(worst, float(w.max()), 1.0 / float(w.min()))
        out.append(worst)
    return np.array(out)


def check_monotonicity(
    a: LozengeAlgebra,
    alpha: Vector,
    g0: Vector,
    h0: Vector,
    t_end: float,
    *,
    samples: int = 50,
) -> bool:
    """Whether g0 <= h0 persists as g_t <= h_t, up to 1e-8 slack."""
    if _psd_gap(a, h0, g0) < -1e-12:
        raise DomainError("monotonicity needs g0 <= h0")
    grid = np.linspace(0.0, t_end, samples + 1)[1:]
    flow = MetricFlow(a, alpha)
    g = integrate_metric_flow(a, alpha, g0, t_end, t_eval=grid, flow=flow)
    h = integrate_metric_flow(a, alpha, h0, t_end, t_eval=grid, flow=flow)
    worst = min(_psd_gap(a, h.state(i), g.state(i)) for i in range(len(g)))
    logger.debug("smallest eigenvalue of h_t - g_t: %.3e", worst)
    return worst >= -1e-8


def king_fixed_point(
    a: LozengeAlgebra, alpha: Vector, *, tolerance: float = 1e-10, t_max: float = 1e4
) -> Vector:
    """Run the flow until the residual drops below ``tolerance``."""
    flow = MetricFlow(a, alpha)
    h = a.unit
    t_end = 10.0
    while True:
        traj = integrate_metric_flow(a, alpha, h, t_end, flow=flow, tolerance=1e-10)
        h = traj.final
        if traj.residuals[-1] < tolerance:
            return h
        if t_end >= t_max:
            raise ConsistencyError(
                f"flow did not reach a fixed point (residual {traj.residuals[-1]:.3e})"
            )
        t_end *= 10


# ---------------------------------------------------------------------------
# Projector lattices and King's criterion
# ---------------------------------------------------------------------------


class ProjectorLattice(PolarizedLattice):
    """Subrepresentation projectors with Z([p, q]) = tau((omega - theta)(q - p))."""

    def __init__(
        self,
        lattice: SubsetLattice | TableLattice,
        algebra: LozengeAlgebra,
        projectors: list[Vector],
    ) -> None:
        self.algebra = algebra
        self.projectors = projectors

        def charge(lo: int, hi: int) -> complex:
            diff = projectors[hi] - projectors[lo]
            return algebra.trace(algebra.mul(algebra.omega - algebra.theta, diff))

        super().__init__(lattice, Polarization.from_interval_function(lattice, charge, snap=True))


def _orth(m: Matrix) -> Matrix:
    if m.size == 0 or m.shape[1] == 0:
        return np.zeros((m.shape[0], 0), dtype=complex)
    return typing.cast(Matrix, linalg.orth(m, rcond=1e-9))


def _generated(
    spaces: list[Matrix], arrows: list[tuple[int, int, Matrix]]
) -> list[Matrix]:
    spaces = [_orth(s) for s in spaces]
    changed = True
    while changed:
        changed = False
        for s, t, m in arrows:
            if spaces[s].shape[1] == 0:
                continue
            grown = _orth(np.hstack([spaces[t], m @ spaces[s]]))
            if grown.shape[1] > spaces[t].shape[1]:
                spaces[t] = grown
                changed = True
    return spaces


def _intersection(u: Matrix, w: Matrix) -> Matrix:
    if u.shape[1] == 0 or w.shape[1] == 0:
        return np.zeros((u.shape[0], 0), dtype=complex)
    kernel = linalg.null_space(np.hstack([u, -w]), rcond=1e-9)
    return _orth(u @ kernel[: u.shape[1]])


def _key(spaces: list[Matrix]) -> bytes:
    return b"".join(np.round(s @ s.conj().T, 7).tobytes() for s in spaces)


def _word_generators(
    dims: typing.Sequence[int], arrows: list[tuple[int, int, Matrix]], max_length: int = 6
) -> typing.Iterator[tuple[int, Matrix]]:
    for v, d in enumerate(dims):
        for i in range(d):
            yield v, np.eye(d, dtype=complex)[:, i : i + 1]
    frontier = [(v, v, np.eye(d, dtype=complex)) for v, d in enumerate(dims)]
    for _ in range(max_length):
        grown = []
        for start, end, word in frontier:
            for s, t, m in arrows:
                if s == end:
                    grown.append((start, t, m @ word))
        for start, end, word in grown:
            kernel = linalg.null_space(word, rcond=1e-9)
            if kernel.shape[1]:
                yield start, kernel
            image = _orth(word)
            if image.shape[1]:
                yield end, image
            if start == end:
                w, vecs = np.linalg.eig(word)
                for value in np.unique(np.round(w, 8)):
                    eigen = linalg.null_space(word - value * np.eye(word.shape[0]), rcond=1e-7)
                    if eigen.shape[1]:
                        yield start, eigen
        frontier = grown


def projector_lattice(a: LozengeAlgebra, alpha_pp: Vector) -> ProjectorLattice:
    """Projectors p in A^0 with p^2 = p = p*, dp = 0 and (1 - p) alpha'' p = 0."""
    root = a.root
    q = root.quiver
    mats = a.a01_blocks(alpha_pp)
    arrows = [
        (arrow.source, arrow.target, m)
        for arrow, m in zip(q.arrows, mats)
        if np.max(np.abs(m), initial=0.0) > 1e-12
    ]

    def projector(spaces: list[Matrix]) -> Vector:
        return a.a0_from_blocks([s @ s.conj().T for s in spaces])

    if isinstance(a, QuiverAlgebra) and q.is_thin:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(q.n_vertices))
        graph.add_edges_from((s, t) for s, t, _ in arrows)
        lattice = SubsetLattice(graph)
        projectors = []
        for element in lattice.elements:
            inside = set(lattice.vertices(element))
            projectors.append(
                a.a0_from_blocks([np.eye(1) if v in inside else np.zeros((1, 1)) for v in range(q.n_vertices)])
            )
        return ProjectorLattice(lattice, a, projectors)

    found: dict[bytes, list[Matrix]] = {}

    def add(spaces: list[Matrix]) -> None:
        key = _key(spaces)
        if key not in found:
            found[key] = spaces
            if len(found) > TABLE_LIMIT:
                raise LatticeTooLargeError(len(found), TABLE_LIMIT)

    empty = [np.zeros((d, 0), dtype=complex) for d in q.dims]
    add(empty)
    add([np.eye(d, dtype=complex) for d in q.dims])
    seeds: list[list[Matrix]] = []
    for v, vectors in _word_generators(q.dims, arrows):
        seed = [e.copy() for e in empty]
        seed[v] = vectors
        seeds.append(seed)
    for herm in MetricFlow(a, a.zeros()).hermitian_basis.T:
        blocks = a.a0_blocks(herm)
        for v, b in enumerate(blocks):
            w, vecs = linalg.eigh(0.5 * (b + b.conj().T))
            for value in np.unique(np.round(w, 8)):
                seed = [x.copy() for x in empty]
                seed[v] = vecs[:, np.abs(w - value) < 1e-7]
                seeds.append(seed)
    for seed in seeds:
        add(_generated(seed, arrows))

    changed = True
    while changed:
        changed = False
        current = list(found.values())
        for x, y in itertools.combinations(current, 2):
            before = len(found)
            add([_orth(np.hstack([p, r])) for p, r in zip(x, y)])
            add([_intersection(p, r) for p, r in zip(x, y)])
            changed = changed or len(found) > before

    members = []
    for spaces in found.values():
        p = projector(spaces)
        root_p = root.assemble([s @ s.conj().T for s in spaces], "0")
        inside = np.max(np.abs(a.embed_root(p) - root_p), initial=0.0) < 1e-8
        closed = np.max(np.abs(a.d @ p), initial=0.0) < 1e-8
        if inside and closed:
            members.append(spaces)
    members.sort(key=lambda sp: sum(s.shape[1] for s in sp))
    n = len(members)
    leq = np.zeros((n, n), dtype=bool)
    for i, x in enumerate(members):
        for j, y in enumerate(members):
            leq[i, j] = all(
                np.max(np.abs(ys @ ys.conj().T @ xs - xs), initial=0.0) < 1e-8
                for xs, ys in zip(x, y)
            )
    labels = ["(" + ",".join(str(s.shape[1]) for s in sp) + ")" for sp in members]
    lattice = TableLattice(leq, labels=labels)
    logger.debug("projector lattice has %d elements", n)
    return ProjectorLattice(lattice, a, [projector(sp) for sp in members])


class Verdict(enum.Enum):
    POLYSTABLE = "POLYSTABLE"
    SEMISTABLE_NOT_POLY = "SEMISTABLE_NOT_POLY"
    UNSTABLE = "UNSTABLE"


@dataclass(frozen=True, eq=False)
class StabilityVerdict:
    classification: Verdict
    lattice_verdict: Verdict
    flow_verdict: Verdict
    residual: float
    horizon: float
    witness: Vector | None = None

    def to_json(self) -> dict[str, typing.Any]:
        out: dict[str, typing.Any] = {
            "classification": self.classification.value,
            "lattice": self.lattice_verdict.value,
            "flow": self.flow_verdict.value,
            "residual": self.residual,
            "horizon": self.horizon,
        }
        if self.witness is not None:
            out["witness"] = [[x.real, x.imag] for x in self.witness]
        return out


def lattice_verdict(pl: PolarizedLattice) -> Verdict:
    if not is_semistable(pl):
        return Verdict.UNSTABLE
    if is_polystable(pl):
        return Verdict.POLYSTABLE
    return Verdict.SEMISTABLE_NOT_POLY


def king_test(a: LozengeAlgebra, alpha_pp: Vector, *, horizon: float = 1e5) -> StabilityVerdict:
    """Classify through the projector lattice and through the flow; both must agree.

    The flow is checked once per decade of t: a residual below 1e-6 means a
    fixed point, ``|log h| > 10 log t`` means divergence. Runs that reach
    ``horizon`` without either are reported as SEMISTABLE_NOT_POLY.
    """
    pl = projector_lattice(a, alpha_pp)
    from_lattice = lattice_verdict(pl)
    witness = None
    if from_lattice is Verdict.UNSTABLE:
        witness = pl.projectors[harder_narasimhan(pl).chain[1]]

    alpha = alpha_pp - a.star(alpha_pp)
    flow = MetricFlow(a, alpha)
    h = a.unit
    t = 0.0
    t_end = min(10.0, horizon)
    while True:
        grid = np.geomspace(max(t, 1e-2), t_end, 8)
        traj = integrate_metric_flow(a, alpha, h, t_end - t, t_eval=grid - t, flow=flow)
        h = traj.final
        t = t_end
        residual = float(traj.residuals[-1])
        growth = traj.log_norm(len(traj) - 1)
        if residual < 1e-6:
            from_flow = Verdict.POLYSTABLE
            break
        if growth > 10.0 * math.log(t):
            from_flow = Verdict.UNSTABLE
            break
        if t_end >= horizon:
            logger.warning(
                "flow neither converged nor diverged by t=%g (residual %.2e); "
                "reporting SEMISTABLE_NOT_POLY",
                t,
                residual,
            )
            from_flow = Verdict.SEMISTABLE_NOT_POLY
            break
        t_end = min(10.0 * t_end, horizon)
    if from_flow is not from_lattice:
        raise ConsistencyError(
            f"lattice says {from_lattice.value} but the flow says {from_flow.value}"
        )
    return StabilityVerdict(from_lattice, from_lattice, from_flow, residual, t, witness)


def total_asymptotics(a: LozengeAlgebra, alpha_pp: Vector) -> list[tuple[Vector, IteratedLabel]]:
    """Predicted growth of log h on each step of the total filtration."""
    pl = projector_lattice(a, alpha_pp)
    f = total_filtration(pl)
    out = []
    for lo, hi, label in zip(f.chain, f.chain[1:], f.labels):
        out.append((pl.projectors[hi] - pl.projectors[lo], label))
    return out


# ---------------------------------------------------------------------------
# Asymptotic solutions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaugeTrajectory:
    times: RealArray
    states: list[Vector]
    check: float = 0.0


def rescale_time(
    a: LozengeAlgebra, x: GaugeTrajectory, r: Vector, *, derivative: list[Vector] | None = None
) -> GaugeTrajectory:
    """y(t) = (2t)^{r/2} x(log(2t) / 2), sampled at t = exp(2s) / 2.

    The returned ``check`` is the largest deviation from
    ``y' y^-1 = (r + x' x^-1) / 2t`` measured by finite differences.
    """
    for state in x.states:
        if np.max(np.abs(a.supercommutator(state, r)), initial=0.0) > 1e-9:
            raise DomainError("x does not commute with the grading")
    s = np.asarray(x.times, dtype=float)
    times = 0.5 * np.exp(2.0 * s)
    states = [a.mul(a0_function(a, r, lambda w, si=si: np.exp(w * si)), xs) for si, xs in zip(s, x.states)]
    worst = 0.0
    if len(s) >= 3:
        for i in range(1, len(s) - 1):
            dy = (states[i + 1] - states[i - 1]) / (times[i + 1] - times[i - 1])
            dx = (x.states[i + 1] - x.states[i - 1]) / (s[i + 1] - s[i - 1])
            lhs = a.mul(dy, a.inverse(states[i]))
            rhs = (r + a.mul(dx, a.inverse(x.states[i]))) / (2.0 * times[i])
            worst = max(worst, float(np.max(np.abs(lhs - rhs))) * times[i])
    return GaugeTrajectory(times, states, worst)


def greens_correction(
    y: GaugeTrajectory, a: LozengeAlgebra, alpha_minus_one: Vector
) -> GaugeTrajectory:
    """z = y (1 + G(y^-1 w y)) with w = -i Lambda((y . alpha_-1)^2)."""
    g = greens_operator(a) if a.d.any() else None
    states = []
    for state in y.states:
        if g is None or not alpha_minus_one.any():
            states.append(state)
            continue
        moved = gauge_act(a, state, alpha_minus_one)
        w = -1j * a.lam(a.mul(moved, moved))
        inner = a.mul(a.mul(a.inverse(state), w), state)
        states.append(a.mul(state, a.unit + g @ inner))
    return GaugeTrajectory(y.times, states, y.check)


def _graded_parts(a: LozengeAlgebra, r: Vector, component: str) -> list[tuple[float, Matrix]]:
    """Eigenspaces of ad r on one component, as (degree, parent-coordinate basis)."""
    s = a.slices[component]
    if a.sizes[component] == 0:
        return []
    ad = a.ad(r)[s, s]
    g = 0.5 * (a.gram[s, s] + a.gram[s, s].conj().T)
    w, v = linalg.eigh(0.5 * (g @ ad + (g @ ad).conj().T), g)
    out: list[tuple[float, Matrix]] = []
    for value in sorted(set(np.round(w, 8)), reverse=True):
        mask = np.abs(w - value) < 1e-7
        basis = np.zeros((a.dim, int(mask.sum())), dtype=complex)
        basis[s, :] = v[:, mask]
        out.append((float(value), basis))
    return out


def _degree_split(a: LozengeAlgebra, r: Vector, x: Vector, component: str) -> dict[float, Vector]:
    parts = {}
    g = a.gram
    for degree, basis in _graded_parts(a, r, component):
        piece = basis @ (basis.conj().T @ g @ x)
        if np.max(np.abs(piece), initial=0.0) > 1e-12:
            parts[degree] = piece
    return parts


@dataclass(frozen=True, eq=False)
class Certificate:
    exponent: float
    log_exponent: float
    integrable: bool
    residual_max: float
    times: RealArray
    residuals: RealArray


@dataclass(frozen=True, eq=False)
class AsymptoticSolution:
    gauges: GaugeTrajectory
    grading: Vector
    depth: int
    certificate: Certificate


@dataclass(frozen=True, eq=False)
class _Stage:
    """One level of the iterative construction."""

    algebra: LozengeAlgebra
    grading: Vector
    normalization: Vector
    alpha_minus_one: Vector
    inner: typing.Callable[[float], Vector]
    depth: int

    def __call__(self, t: float) -> Vector:
        a = self.algebra
        s = 0.5 * math.log(2.0 * t)
        x = self.inner(s)
        y = a.mul(a0_function(a, self.grading, lambda w: np.exp(w * s)), x)
        z = greens_correction(GaugeTrajectory(np.array([t]), [y]), a, self.alpha_minus_one).states[0]
        return a.mul(z, self.normalization)


def _weight_grading_element(a: LozengeAlgebra, alpha_pp: Vector) -> tuple[Vector, ProjectorLattice]:
    pl = projector_lattice(a, alpha_pp)
    if not is_semistable(pl):
        raise DomainError("not semistable; split along the Harder-Narasimhan filtration first")
    sub = pl.restricted(phase_sublattice(pl)).real_part()
    f = weight_filtration(sub)
    payloads = typing.cast(TableLattice, sub.lattice).payloads
    r = a.zeros()
    for lo, hi, label in f.steps():
        r = r + float(label) * (pl.projectors[payloads[hi]] - pl.projectors[payloads[lo]])
    return r, pl


def _build_stage(a: LozengeAlgebra, alpha_pp: Vector, depth: int, max_depth: int) -> _Stage:
    if depth > max_depth:
        logger.warning("asymptotic construction reached the depth cap %d", max_depth)
        raise ConsistencyError(f"iterative construction did not close within depth {max_depth}")
    lam = slope_constant(a)
    if abs(lam) > 1e-14:
        a = a.replace(theta=a.theta - lam * a.omega)
    r, pl = _weight_grading_element(a, alpha_pp)
    if is_polystable(pl):
        fixed = king_fixed_point(a, alpha_pp - a.star(alpha_pp))
        root = a0_function(a, fixed, np.sqrt)
        return _Stage(a, a.zeros(), a.unit, a.zeros(), lambda s: root, depth - 1)

    parts = _degree_split(a, r, alpha_pp, "01")
    positive = [d for d in parts if d > 1e-8]
    if positive:
        raise ConsistencyError(f"alpha'' has components of positive degree {positive}")

    # King-normalize the degree-0 part and twist by it.
    normalization = a.unit
    alpha0 = parts.get(0.0, a.zeros())
    base = a
    if alpha0.any():
        h0 = king_fixed_point(a, alpha0 - a.star(alpha0))
        g0 = a0_function(a, h0, np.sqrt)
        alpha_pp = a.part(gauge_act(a, g0, alpha_pp), "01")
        normalization = a.mul(g0, normalization)
        parts = _degree_split(a, r, alpha_pp, "01")
        alpha0 = parts.get(0.0, a.zeros())
        base = twist(a, alpha0 - a.star(alpha0)).replace(theta=a.zeros())

    # Remove delbar-exact parts of negative degree, closest to zero first.
    _, delbar = base.partials()
    a0_parts = dict(_graded_parts(a, r, "0"))
    for degree in sorted((d for d in parts if d < -1e-8), reverse=True):
        piece = _degree_split(a, r, alpha_pp, "01").get(degree)
        basis = a0_parts.get(degree)
        if piece is None or basis is None or not delbar.any():
            continue
        system = delbar @ basis
        coeffs, *_ = np.linalg.lstsq(system, piece, rcond=None)
        x = basis @ coeffs
        if np.max(np.abs(x), initial=0.0) < 1e-12:
            continue
        g = a.unit + x
        alpha_pp = a.part(gauge_act(a, g, alpha_pp), "01")
        normalization = a.mul(g, normalization)

    parts = _degree_split(a, r, alpha_pp, "01")
    stuck = sorted(d for d in parts if -1 + 1e-7 < d < -1e-8)
    if stuck:
        raise ConsistencyError(f"alpha'' keeps parts of degree {stuck} that cannot be gauged away")
    alpha_m1 = next((v for d, v in parts.items() if abs(d + 1) < 1e-7), a.zeros())
    diamond = diamond_algebra(base, r)
    inner_alpha = diamond.coords(alpha_m1)
    if diamond.residual(alpha_m1) > 1e-8:
        raise ConsistencyError("degree -1 part of alpha'' is not harmonic")
    inner = _build_stage(diamond, inner_alpha, depth + 1, max_depth)

    def x_of_s(s: float) -> Vector:
        return diamond.embed(inner(s))

    return _Stage(
        base,
        r,
        normalization,
        alpha_m1 - base.star(alpha_m1),
        x_of_s,
        inner.depth,
    )


def gauge_residual(a: LozengeAlgebra, alpha: Vector, gauge: typing.Callable[[float], Vector], t: float) -> float:
    """|Herm(g' g^-1) + i (Lambda F(g . alpha) - lambda)| at time ``t``."""
    lam = slope_constant(a)
    dt = 1e-4 * t
    g = gauge(t)
    dg = (gauge(t + dt) - gauge(t - dt)) / (2 * dt)
    velocity = a.mul(dg, a.inverse(g))
    herm = 0.5 * (velocity + a.star(velocity))
    moved = gauge_act(a, g, alpha)
    f = a.theta + a.d @ moved + a.mul(moved, moved)
    return hermitian_norm(a, herm + 1j * (a.lam(f) - lam * a.unit))


def _power_fit(x: RealArray, y: RealArray) -> float:
    mask = y > 1e-300
    if mask.sum() < 2:
        return -math.inf
    slope, _ = np.polyfit(np.log(x[mask]), np.log(y[mask]), 1)
    return float(slope)


def construct_asymptotic_solution(
    a: LozengeAlgebra,
    alpha_pp: Vector,
    *,
    times: typing.Sequence[float] | None = None,
    max_depth: int = 5,
) -> AsymptoticSolution:
    """Build g(t) with log g(t) = r log(2t) / 2 + O(1) and certify its residual.

    The residual ``s(t)`` is fitted to a power law on the last decade of
    ``times``; it is declared integrable when the exponent is below -1.05, or
    for iterated constructions when ``t s(t)`` decays faster than
    ``(log t)^-1.05``.
    """
    grid = np.geomspace(1.0, 1e4, 81) if times is None else np.asarray(times, dtype=float)
    lam = slope_constant(a)
    shifted = a.replace(theta=a.theta - lam * a.omega) if abs(lam) > 1e-14 else a
    stage = _build_stage(shifted, alpha_pp, 1, max_depth)
    depth = stage.depth
    gauges = [stage(float(t)) for t in grid]
    alpha = alpha_pp - shifted.star(alpha_pp)
    residuals = np.array([gauge_residual(shifted, alpha, stage, float(t)) for t in grid])
    last = grid >= grid[-1] / 10.0
    exponent = _power_fit(grid[last], residuals[last])
    log_exponent = _power_fit(np.log(grid[last]), grid[last] * residuals[last])
    integrable = exponent < -1.05 or (depth >= 2 and log_exponent < -1.05)
    if not integrable:
        logger.warning("residual exponent %.3f does not certify integrability", exponent)
    certificate = Certificate(
        exponent,
        log_exponent,
        integrable,
        float(residuals.max(initial=0.0)),
        grid,
        residuals,
    )
    return AsymptoticSolution(GaugeTrajectory(grid, gauges), stage.grading, depth, certificate)


# ---------------------------------------------------------------------------
# Fitting iterated logarithms
# ---------------------------------------------------------------------------

BASIS: dict[str, typing.Callable[[RealArray], RealArray]] = {
    "t": lambda t: t,
    "log t": np.log,
    "log log t": lambda t: np.log(np.log(t)),
    "1": np.ones_like,
}


@dataclass(frozen=True)
class AsymptoticFit:
    coefficients: list[dict[str, float]]
    residual: float
    window: tuple[float, float]
    drift: float


def _step_series(traj: MetricTrajectory, projector: Vector, mask: npt.NDArray[np.bool_]) -> RealArray:
    a = traj.flow.algebra
    pblocks = a.a0_blocks(projector)
    values = []
    for i in np.flatnonzero(mask):
        ublocks = a.a0_blocks(traj.flow.element(traj.logs[i]))
        total = 0.0
        rank = 0.0
        for p, u in zip(pblocks, ublocks):
            total += float(np.trace(p @ u @ p).real)
            rank += float(np.trace(p).real)
        values.append(total / rank)
    return np.array(values)


def asymptotic_fit(
    traj: MetricTrajectory,
    projectors: typing.Sequence[Vector],
    *,
    basis: typing.Sequence[str] = ("t", "log t", "log log t", "1"),
    t_min: float = math.e,
) -> AsymptoticFit:
    """Least-squares fit of the mean log-eigenvalue of h on each step."""
    mask = traj.times >= max(t_min, math.e * 1.0001)
    t = traj.times[mask]
    if len(t) < len(basis) + 2 or t[-1] < 100.0 * t[0]:
        raise DomainError("the fit window must span at least two decades of t")
    design = np.column_stack([BASIS[name](t) for name in basis])
    late = t >= t[-1] / 10.0
    coefficients = []
    residual = 0.0
    drift = 0.0
    for p in projectors:
        series = _step_series(traj, p, mask)
        full, *_ = np.linalg.lstsq(design, series, rcond=None)
        tail, *_ = np.linalg.lstsq(design[late], series[late], rcond=None)
        residual = max(residual, float(np.max(np.abs(design @ full - series))))
        drift = max(drift, float(np.max(np.abs(full - tail))))
        coefficients.append({name: float(c) for name, c in zip(basis, full)})
    return AsymptoticFit(coefficients, residual, (float(t[0]), float(t[-1])), drift)


def predicted_coefficients(label: IteratedLabel) -> dict[str, float]:
    out = {"t": float(label.t)}
    names = ["log t", "log log t"]
    for depth, name in enumerate(names, start=1):
        out[name] = float(label.coefficient(depth))
    return out

